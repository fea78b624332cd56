// Copyright 2026 The glyphflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cli.hpp"

#include <cctype>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "glyphflow/common/error.hpp"
#include "glyphflow/common/image.hpp"
#include "glyphflow/flow/checkpoint.hpp"
#include "glyphflow/service/service.hpp"
#include "run_config.hpp"

namespace gf::cli {

namespace fs = std::filesystem;

namespace {

bool is_validation(Errc c) {
  switch (c) {
    case Errc::kConfigError:
    case Errc::kInvalidLayout:
    case Errc::kOutOfCanvas:
    case Errc::kBelowMinSize:
    case Errc::kPaletteExhausted:
    case Errc::kInvalidTarget:
    case Errc::kUnknownGlyph:
    case Errc::kLengthOverflow:
    case Errc::kInvalidArgument:
    case Errc::kDimensionMismatch:
    case Errc::kConfigMismatch:
    case Errc::kShapeMismatch:
    case Errc::kCapacityExceeded:
    case Errc::kBadHeadDim:
      return true;
    default:
      return false;
  }
}

std::string read_text(const std::string& path) {
  const auto b = read_file_bytes(path);
  return {b.begin(), b.end()};
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path.string(),
                   std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<int> parse_glyphs(const std::string& text) {
  std::string t = text;
  for (char& c : t)
    if (c == ',') c = ' ';
  std::istringstream in(t);
  std::vector<int> out;
  std::string tok;
  while (in >> tok) out.push_back(static_cast<int>(parse_int(tok, "--prompt")));
  require(!out.empty(), Errc::kInvalidArgument, "--prompt: need at least one glyph id");
  return out;
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, Errc::kIoFailure, "cannot create " + dir);
}

// Options shared by every subcommand that reads the run config.
struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;

  void add(CLI::App* app) {
    app->add_option("--config", file, "key=value run config file");
    app->add_option("--set", sets, "override one config key, key=value (repeatable)")
        ->default_str("");
  }
  RunConfig load() const { return load_run_config(file, sets); }
};

struct Loaded {
  flow::Checkpoint ck;
  backbone::Model<float> model;
  corpus::GlyphAtlas atlas = corpus::GlyphAtlas::procedural();
};

std::unique_ptr<Loaded> load_model(const std::string& path) {
  flow::Checkpoint ck = flow::load_checkpoint(path);
  backbone::Model<float> m = ck.instantiate();
  return std::unique_ptr<Loaded>(new Loaded{std::move(ck), std::move(m)});
}

// ---- subcommands ------------------------------------------------------------------

int cmd_corpus_make(const ConfigFlags& cf, const std::string& out_dir, std::ostream& out) {
  const RunConfig rc = cf.load();
  const auto atlas = corpus::GlyphAtlas::procedural();
  const auto triplets =
      corpus::generate_corpus(atlas, rc.corpus, static_cast<std::size_t>(rc.corpus_count), rc.corpus_threads);
  corpus::write_corpus(out_dir, rc.corpus, triplets);
  write_text(fs::path(out_dir) / "config.txt", rc.to_kv().str());
  out << "wrote " << triplets.size() << " triplets to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const ConfigFlags& cf, const std::string& corpus_dir, const std::string& out_dir,
              const std::string& resume, std::ostream& out) {
  const RunConfig rc = cf.load();
  const corpus::Corpus data = corpus::read_corpus(corpus_dir);
  require(data.config.canvas == rc.model.canvas, Errc::kConfigError,
          "corpus canvas " + std::to_string(data.config.canvas) + " != model.canvas " +
              std::to_string(rc.model.canvas));
  const auto atlas = corpus::GlyphAtlas::procedural();
  require(atlas.vocab_size() == rc.model.vocab, Errc::kConfigError,
          "model.vocab must be " + std::to_string(atlas.vocab_size()));
  make_dir(out_dir);

  KeyValues train_kv;
  rc.train.write(train_kv);
  // A constant-rate run may be extended on resume; a decaying schedule is tied to its horizon.
  if (rc.train.lr_schedule == "constant") train_kv.set("steps", std::string("*"));
  train_kv.set("threads", std::string("*"));  // never affects results

  backbone::Model<float> model(rc.model, backbone::Init::kAdaLnZero, rc.train.seed);
  flow::Trainer trainer(model, rc.train, atlas.null_token());
  if (!resume.empty()) {
    const flow::Checkpoint ck = flow::load_checkpoint(resume);
    require(ck.model == rc.model, Errc::kConfigMismatch, "checkpoint model config differs from the run config");
    require(ck.has_optimizer, Errc::kConfigMismatch, "checkpoint carries no optimizer state");
    for (const auto& [k, v] : train_kv.entries())
      require(ck.meta.get_or("train." + k, v) == v, Errc::kConfigMismatch,
              "checkpoint was trained with train." + k + "=" + ck.meta.get_or("train." + k, "") +
                  ", run config says " + v);
    std::copy(ck.params.begin(), ck.params.end(), model.params().begin());
    trainer.adam() = ck.adam;
  }

  KeyValues meta;
  for (const auto& [k, v] : train_kv.entries()) meta.set("train." + k, v);
  meta.set("corpus_seed", data.config.seed);
  meta.set("corpus_count", static_cast<std::uint64_t>(data.triplets.size()));
  write_text(fs::path(out_dir) / "config.txt", rc.to_kv().str());

  const fs::path log_path = fs::path(out_dir) / "train_log.tsv";
  const bool append = !resume.empty() && fs::exists(log_path);
  if (append) {
    // Drop log rows past the checkpoint so a crashed run resumes without duplicates.
    std::istringstream in(read_text(log_path.string()));
    std::string line, kept;
    while (std::getline(in, line)) {
      const auto tab = line.find('\t');
      const std::string first = line.substr(0, tab);
      const bool header = first.empty() || !std::isdigit(static_cast<unsigned char>(first[0]));
      if (header || std::stoll(first) <= static_cast<long long>(trainer.steps_done())) kept += line + "\n";
    }
    write_text(log_path, kept);
  }
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  require(static_cast<bool>(log), Errc::kIoFailure, "cannot write " + log_path.string());
  if (!append) log << flow::log_header() << "\n";
  const std::string ckpt = (fs::path(out_dir) / "checkpoint.bin").string();
  const auto t0 = std::chrono::steady_clock::now();
  while (trainer.steps_done() < rc.train.steps) {
    const flow::StepRecord r = trainer.step(data.triplets);
    log << flow::format_log_line(r) << "\n";
    if (r.step % rc.checkpoint_every == 0 || r.step == rc.train.steps) {
      log.flush();
      flow::save_checkpoint(ckpt, model, &trainer.adam(), meta);
      const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out << "step " << r.step << "/" << rc.train.steps << " loss " << r.loss.total << " ("
          << static_cast<int>(sec) << " s)\n";
    }
  }
  if (trainer.steps_done() == 0 || !fs::exists(ckpt)) flow::save_checkpoint(ckpt, model, &trainer.adam(), meta);
  out << "checkpoint " << ckpt << "\n";
  return kExitOk;
}

void write_generation(const fs::path& dir, const infer::GenerationResult& r) {
  write_png((dir / "target.png").string(), r.target);
  write_png((dir / "condition.png").string(), r.condition);
  write_png((dir / "boxmap.png").string(), r.boxmap);
  write_text(dir / "layout.json", layout::to_json(r.layout) + "\n");
  if (r.predicted_boxes) write_png((dir / "planned.png").string(), r.planned);
}

void write_session(const fs::path& dir, const std::string& ckpt, int style, std::uint64_t seed) {
  KeyValues s;
  s.set("ckpt", fs::absolute(ckpt).string());
  s.set("style", style);
  s.set("seed", seed);
  write_text(dir / "session.txt", s.str());
}

int cmd_gen(const ConfigFlags& cf, const std::string& ckpt, const std::string& prompt_text, int style,
            const std::string& boxes, const std::string& condition, const std::string& out_dir,
            std::ostream& out) {
  const RunConfig rc = cf.load();
  const auto m = load_model(ckpt);
  const infer::Sampler sampler(m->model, m->atlas);
  const std::vector<int> glyphs = parse_glyphs(prompt_text);
  const std::vector<int> prompt = infer::make_prompt(m->atlas, style, glyphs);
  infer::GenerationResult r;
  if (!boxes.empty()) {
    const layout::LayoutSpec l = layout::from_json(read_text(boxes));
    require(l.boxes.size() == glyphs.size(), Errc::kInvalidLayout,
            "--boxes has " + std::to_string(l.boxes.size()) + " boxes for " +
                std::to_string(glyphs.size()) + " prompt glyphs");
    layout::LayoutSpec with_glyphs = l;
    for (std::size_t i = 0; i < glyphs.size(); ++i) with_glyphs.boxes[i].glyph = glyphs[i];
    r = sampler.generate_given_box(prompt, with_glyphs, rc.infer);
  } else {
    GrayImage c;
    if (!condition.empty()) {
      c = read_png_gray(condition);
    } else {
      corpus::CorpusConfig sc = rc.corpus;
      sc.canvas = m->model.config().canvas;
      c = corpus::render_condition(m->atlas, infer::scaffold_layout(sc, glyphs, rc.infer.seed));
    }
    r = sampler.generate_cascaded(prompt, c, rc.infer);
  }
  make_dir(out_dir);
  write_generation(out_dir, r);
  write_session(out_dir, ckpt, style, rc.infer.seed);
  write_text(fs::path(out_dir) / "config.txt", rc.to_kv().str());
  out << "boxes " << (r.predicted_boxes ? "predicted" : "given") << ", " << r.layout.boxes.size()
      << " placed\n";
  if (r.decode_empty) out << "warning: decode-empty: Stage 1 produced no decodable boxes\n";
  out << "wrote " << out_dir << "\n";
  return kExitOk;
}

int cmd_edit(const ConfigFlags& cf, const std::string& session_dir, const std::string& layout_path,
             std::string ckpt, std::string out_dir, std::ostream& out) {
  const RunConfig rc = cf.load();
  const KeyValues s = KeyValues::parse(read_text((fs::path(session_dir) / "session.txt").string()));
  if (ckpt.empty()) ckpt = s.get("ckpt");
  if (out_dir.empty()) out_dir = session_dir;
  const auto m = load_model(ckpt);
  const infer::Sampler sampler(m->model, m->atlas);
  const layout::LayoutSpec edited = layout::from_json(read_text(layout_path));
  std::vector<int> glyphs;
  for (const auto& b : edited.boxes) glyphs.push_back(b.glyph);
  const int style = static_cast<int>(s.get_int("style"));
  infer::IntegratorConfig ic = rc.infer;
  ic.seed = s.get_u64("seed");
  const auto prompt = infer::make_prompt(m->atlas, style, glyphs);
  infer::GenerationResult r;
  r.layout = edited;
  r.target = sampler.edit_regenerate(prompt, edited, ic);
  r.boxmap = layout::render_box_map(edited, layout::Palette());
  r.condition = corpus::render_condition(m->atlas, edited);
  make_dir(out_dir);
  write_generation(out_dir, r);
  write_session(out_dir, ckpt, style, ic.seed);
  write_text(fs::path(out_dir) / "config.txt", rc.to_kv().str());
  out << "wrote " << out_dir << "\n";
  return kExitOk;
}

int cmd_inpaint(const ConfigFlags& cf, const std::string& ckpt, const std::string& image,
                const std::string& mask, const std::string& prompt_text, int style,
                const std::string& boxes, const std::string& out_dir, std::ostream& out) {
  const RunConfig rc = cf.load();
  const auto m = load_model(ckpt);
  const infer::Sampler sampler(m->model, m->atlas);
  infer::InpaintTask task;
  task.image = read_png_gray(image);
  task.mask = read_png_gray(mask);
  task.prompt = infer::make_prompt(m->atlas, style, parse_glyphs(prompt_text));
  layout::LayoutSpec l;
  if (!boxes.empty()) {
    l = layout::from_json(read_text(boxes));
    task.layout = &l;
  }
  const infer::InpaintResult r = sampler.inpaint(task, rc.infer);
  make_dir(out_dir);
  write_png((fs::path(out_dir) / "restored.png").string(), r.image);
  write_png((fs::path(out_dir) / "restored_boxmap.png").string(), r.boxmap);
  write_text(fs::path(out_dir) / "config.txt", rc.to_kv().str());
  out << "wrote " << out_dir << "\n";
  return kExitOk;
}

int cmd_drs(const ConfigFlags& cf, const std::string& ckpt, const std::string& image,
            const std::string& prompt_text, int style, const std::string& boxes,
            const std::string& out_dir, const std::string& curve, std::ostream& out) {
  const RunConfig rc = cf.load();
  const auto m = load_model(ckpt);
  const infer::Sampler sampler(m->model, m->atlas);
  const auto prompt = infer::make_prompt(m->atlas, style, parse_glyphs(prompt_text));
  layout::LayoutSpec l;
  if (!boxes.empty()) l = layout::from_json(read_text(boxes));
  infer::IntegratorConfig ic = rc.infer;
  const forensics::DRSReport r = forensics::score_image(
      sampler, m->atlas, read_png_gray(image), prompt, boxes.empty() ? nullptr : &l, rc.drs, ic);
  const std::string js = r.to_json();
  out << js << "\n";
  if (!out_dir.empty()) {
    make_dir(out_dir);
    write_text(fs::path(out_dir) / "drs.json", js + "\n");
    write_text(fs::path(out_dir) / "config.txt", rc.to_kv().str());
  }
  if (!curve.empty()) write_text(curve, r.curve_csv());
  return kExitOk;
}

service::Service* g_serving = nullptr;

void on_signal(int) {
  if (g_serving) g_serving->stop();
}

int cmd_serve(const ConfigFlags& cf, service::ServiceConfig sc, const std::string& host,
              std::ostream& out) {
  const RunConfig rc = cf.load();
  sc.integrator = rc.infer;
  sc.drs = rc.drs;
  service::Service svc(sc);
  out << "serving on http://" << host << ":" << sc.port << " (checkpoint: "
      << (svc.has_model() ? sc.ckpt : "none") << ")\n";
  out.flush();
  g_serving = &svc;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  svc.listen(host);
  g_serving = nullptr;
  return kExitOk;
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Layout-guided glyph page synthesis: corpus, training, sampling, editing, forensics."};
  app.name("glyphflow");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", "glyphflow 0.1.0");

  ConfigFlags cf;
  std::function<int()> action;

  CLI::App* corpus_cmd = app.add_subcommand("corpus", "Synthetic corpus tools");
  corpus_cmd->require_subcommand(1);
  CLI::App* make = corpus_cmd->add_subcommand("make", "Generate a corpus directory");
  std::string make_out;
  make->add_option("--out", make_out, "output directory")->required();
  cf.add(make);
  make->callback([&] { action = [&] { return cmd_corpus_make(cf, make_out, out); }; });

  CLI::App* train = app.add_subcommand("train", "Train a model on a corpus");
  std::string corpus_dir, resume, train_out;
  train->add_option("--corpus", corpus_dir, "corpus directory")->required();
  train->add_option("--out", train_out, "run directory: checkpoint.bin, train_log.tsv")->required();
  train->add_option("--resume", resume, "continue from this checkpoint");
  cf.add(train);
  train->callback([&] { action = [&] { return cmd_train(cf, corpus_dir, train_out, resume, out); }; });

  std::string ckpt = env_or("GLYPHFLOW_CKPT", ""), prompt, boxes, image, mask, condition, curve;
  int style = 0;

  CLI::App* gen = app.add_subcommand("gen", "Generate a page from a prompt");
  gen->add_option("--ckpt", ckpt, "checkpoint file")->required();
  gen->add_option("--prompt", prompt, "glyph ids, space or comma separated")->required();
  gen->add_option("--style", style, "style id");
  gen->add_option("--boxes", boxes, "layout JSON; skips Stage-1 planning");
  gen->add_option("--condition", condition, "condition image PNG for planning");
  std::string gen_out = "gen";
  gen->add_option("--out", gen_out, "output directory");
  cf.add(gen);
  gen->callback([&] {
    action = [&] { return cmd_gen(cf, ckpt, prompt, style, boxes, condition, gen_out, out); };
  });

  CLI::App* edit = app.add_subcommand("edit", "Regenerate a gen/edit output for an edited layout");
  std::string session, layout_path, edit_out;
  edit->add_option("--session", session, "directory written by gen or edit")->required();
  edit->add_option("--layout", layout_path, "edited layout JSON")->required();
  edit->add_option("--ckpt", ckpt, "checkpoint (default: the session's)");
  edit->add_option("--out", edit_out, "output directory (default: the session directory)");
  cf.add(edit);
  edit->callback([&] {
    action = [&] { return cmd_edit(cf, session, layout_path, ckpt, edit_out, out); };
  });

  CLI::App* inp = app.add_subcommand("inpaint", "Restore masked regions of an image");
  inp->add_option("--ckpt", ckpt, "checkpoint file")->required();
  inp->add_option("--image", image, "grayscale PNG")->required();
  inp->add_option("--mask", mask, "PNG, 255 = missing, 0 = known")->required();
  inp->add_option("--prompt", prompt, "glyph ids, space or comma separated")->required();
  inp->add_option("--style", style, "style id");
  inp->add_option("--boxes", boxes, "layout JSON of the known page");
  std::string inp_out = "inpaint";
  inp->add_option("--out", inp_out, "output directory");
  cf.add(inp);
  inp->callback([&] {
    action = [&] { return cmd_inpaint(cf, ckpt, image, mask, prompt, style, boxes, inp_out, out); };
  });

  CLI::App* drs = app.add_subcommand("drs", "Diffusion reconstruction score of an image");
  drs->add_option("--ckpt", ckpt, "checkpoint file")->required();
  drs->add_option("--image", image, "grayscale PNG")->required();
  drs->add_option("--prompt", prompt, "glyph ids, space or comma separated")->required();
  drs->add_option("--style", style, "style id");
  drs->add_option("--boxes", boxes, "layout JSON; planned by Stage 1 when omitted");
  std::string drs_out;
  drs->add_option("--out", drs_out, "directory for drs.json");
  drs->add_option("--curve", curve, "write the per-level curve as CSV");
  cf.add(drs);
  drs->callback([&] {
    action = [&] { return cmd_drs(cf, ckpt, image, prompt, style, boxes, drs_out, curve, out); };
  });

  CLI::App* serve = app.add_subcommand("serve", "Run the HTTP service");
  service::ServiceConfig sc;
  sc.ckpt = ckpt;
  sc.port = std::atoi(env_or("GLYPHFLOW_PORT", "8787").c_str());
  sc.workers = std::atoi(env_or("GLYPHFLOW_WORKERS", "2").c_str());
  sc.store_dir = env_or("GLYPHFLOW_STORE_DIR", "sessions");
  std::string host = "127.0.0.1";
  serve->add_option("--ckpt", sc.ckpt, "checkpoint file (env GLYPHFLOW_CKPT)");
  serve->add_option("--port", sc.port, "TCP port (env GLYPHFLOW_PORT)");
  serve->add_option("--workers", sc.workers, "inference worker threads (env GLYPHFLOW_WORKERS)");
  serve->add_option("--store-dir", sc.store_dir, "session store directory (env GLYPHFLOW_STORE_DIR)");
  serve->add_option("--host", host, "bind address");
  serve->add_option("--ui-dir", sc.ui_dir, "static web UI directory served at /");
  cf.add(serve);
  serve->callback([&] { action = [&] { return cmd_serve(cf, sc, host, out); }; });

  CLI::App* show = app.add_subcommand("config", "Print the resolved run config");
  cf.add(show);
  show->callback([&] {
    action = [&] {
      out << cf.load().to_kv().str();
      return kExitOk;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    return action();
  } catch (const Error& e) {
    err << "error: " << gf::to_string(e.code()) << ": " << e.what() << "\n";
    return is_validation(e.code()) ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace gf::cli
