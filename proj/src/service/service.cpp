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

#include "glyphflow/service/service.hpp"

#include <ctime>
#include <random>
#include <regex>

#include "glyphflow/common/error.hpp"
#include "glyphflow/flow/checkpoint.hpp"
#include "httplib.h"
#include "json.hpp"

namespace gf::service {

using nlohmann::json;
using nlohmann::ordered_json;

int http_status(Errc code) {
  switch (code) {
    case Errc::kInvalidLayout:
    case Errc::kOutOfCanvas:
    case Errc::kBelowMinSize:
    case Errc::kPaletteExhausted:
    case Errc::kInvalidTarget:
      return 422;
    case Errc::kUnknownGlyph:
    case Errc::kDimensionMismatch:
    case Errc::kShapeMismatch:
    case Errc::kLengthOverflow:
    case Errc::kCapacityExceeded:
    case Errc::kInvalidArgument:
    case Errc::kConfigError:
      return 400;
    default:
      return 500;
  }
}

namespace {

Response reply(int status, const ordered_json& j) { return {status, j.dump()}; }

Response error_reply(int status, std::string_view code, const std::string& message) {
  ordered_json j;
  j["error"] = code;
  j["message"] = message;
  return reply(status, j);
}

std::int64_t now() { return static_cast<std::int64_t>(std::time(nullptr)); }

json parse_body(const std::string& body) {
  try {
    json j = json::parse(body);
    require(j.is_object(), Errc::kInvalidArgument, "request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    fail(Errc::kInvalidArgument, std::string("malformed JSON: ") + e.what());
  }
}

std::string png_b64(const GrayImage& im) { return base64_encode(encode_png(im)); }
std::string png_b64(const RgbImage& im) { return base64_encode(encode_png(im)); }

GrayImage gray_field(const json& j, const char* name) {
  require(j.contains(name) && j[name].is_string(), Errc::kInvalidArgument,
          std::string("'") + name + "' must be a base64 PNG string");
  try {
    return decode_png_gray(base64_decode(j[name].get<std::string>()));
  } catch (const Error& e) {
    fail(Errc::kInvalidArgument, std::string("'") + name + "' does not decode as PNG: " + e.what());
  }
}

std::vector<int> glyph_field(const json& j) {
  require(j.contains("prompt") && j["prompt"].is_array(), Errc::kInvalidArgument,
          "'prompt' must be an array of glyph ids");
  std::vector<int> out;
  for (std::size_t i = 0; i < j["prompt"].size(); ++i) {
    require(j["prompt"][i].is_number_integer(), Errc::kInvalidArgument,
            "prompt[" + std::to_string(i) + "]: expected an integer glyph id");
    out.push_back(j["prompt"][i].get<int>());
  }
  return out;
}

int style_field(const json& j) {
  if (!j.contains("style")) return 0;
  require(j["style"].is_number_integer(), Errc::kInvalidArgument, "'style' must be an integer");
  return j["style"].get<int>();
}

std::uint64_t seed_field(const json& j) {
  if (j.contains("seed") && !j["seed"].is_null()) {
    require(j["seed"].is_number_unsigned() || (j["seed"].is_number_integer() && j["seed"].get<std::int64_t>() >= 0),
            Errc::kInvalidArgument, "'seed' must be a nonnegative integer");
    return j["seed"].get<std::uint64_t>();
  }
  std::random_device rd;
  return (std::uint64_t(rd()) << 32 | rd()) & ((std::uint64_t(1) << 53) - 1);
}

ordered_json layout_json(const layout::LayoutSpec& l) {
  return ordered_json::parse(layout::to_json(l));
}

}  // namespace

Service::Service(const ServiceConfig& cfg)
    : Service(cfg, cfg.ckpt.empty() ? nullptr
                                    : std::make_shared<const backbone::Model<float>>(
                                          flow::load_checkpoint(cfg.ckpt).instantiate())) {}

Service::Service(const ServiceConfig& cfg, std::shared_ptr<const backbone::Model<float>> model)
    : cfg_(cfg),
      atlas_(corpus::GlyphAtlas::procedural()),
      model_(std::move(model)),
      store_(cfg.store_dir),
      jobs_(cfg.workers) {
  cfg_.integrator.validate();
  cfg_.drs.validate();
  if (model_) sampler_ = std::make_unique<infer::Sampler>(*model_, atlas_);
}

Service::~Service() { stop(); }

corpus::CorpusConfig Service::scaffold_config() const {
  corpus::CorpusConfig c;
  c.canvas = model_->config().canvas;
  c.font_size = std::max(4, c.canvas / 4);
  return c;
}

std::shared_ptr<std::mutex> Service::session_lock(const std::string& id) {
  std::lock_guard lock(locks_mu_);
  auto& m = locks_[id];
  if (!m) m = std::make_shared<std::mutex>();
  return m;
}

Response Service::handle(const std::string& method, const std::string& path,
                         const std::string& body) {
  static const std::regex session_re("^/sessions/([A-Za-z0-9-]+)$");
  static const std::regex layout_re("^/sessions/([A-Za-z0-9-]+)/layout$");
  static const std::regex job_re("^/jobs/([A-Za-z0-9-]+)$");
  std::smatch m;
  try {
    if (path == "/healthz" && method == "GET") return healthz();
    if (path == "/sessions" && method == "POST") return create_session(body);
    if (path == "/inpaint" && method == "POST") return inpaint(body);
    if (path == "/drs" && method == "POST") return drs(body);
    if (std::regex_match(path, m, session_re) && method == "GET") return get_session(m[1]);
    if (std::regex_match(path, m, layout_re) && method == "PUT") return put_layout(m[1], body);
    if (std::regex_match(path, m, job_re) && method == "GET") return get_job(m[1]);
    return error_reply(404, "not-found", method + " " + path + " is not an endpoint");
  } catch (const Error& e) {
    return error_reply(http_status(e.code()), gf::to_string(e.code()), e.what());
  } catch (const std::exception& e) {
    return error_reply(500, "internal", e.what());
  }
}

Response Service::healthz() {
  ordered_json j;
  j["status"] = "ok";
  j["checkpoint"] = has_model();
  j["workers"] = jobs_.workers();
  if (model_) j["canvas"] = model_->config().canvas;
  return reply(200, j);
}

Response Service::create_session(const std::string& body) {
  if (!model_) return error_reply(503, "no-checkpoint", "no checkpoint loaded");
  const json j = parse_body(body);
  Session s;
  s.glyphs = glyph_field(j);
  s.style = style_field(j);
  s.seed = seed_field(j);
  const std::vector<int> prompt = infer::make_prompt(atlas_, s.style, s.glyphs);
  require(!s.glyphs.empty(), Errc::kInvalidArgument, "prompt: need at least one glyph");
  require(static_cast<int>(prompt.size()) <= model_->config().max_text, Errc::kLengthOverflow,
          "prompt: " + std::to_string(s.glyphs.size()) + " glyphs exceed the model's text capacity");
  // Intended positions for the condition image; fails fast if they do not fit.
  const layout::LayoutSpec scaffold = infer::scaffold_layout(scaffold_config(), s.glyphs, s.seed);
  s.id = store_.new_id();
  s.created = s.updated = now();
  store_.put(s, {});

  const std::string job = jobs_.submit([this, s, prompt, scaffold]() mutable {
    auto lock = session_lock(s.id);
    std::lock_guard guard(*lock);
    infer::IntegratorConfig ic = cfg_.integrator;
    ic.seed = s.seed;
    const GrayImage condition = corpus::render_condition(atlas_, scaffold);
    const infer::GenerationResult r = sampler_->generate_cascaded(prompt, condition, ic);
    s.layout = r.layout;
    s.glyphs.clear();
    for (const auto& b : r.layout.boxes) s.glyphs.push_back(b.glyph);
    s.decode_empty = r.decode_empty;
    s.boxes = "predicted";
    s.revision = 1;
    s.updated = now();
    store_.put(s, {r.target, r.boxmap, r.condition});
    ordered_json out;
    out["session_id"] = s.id;
    out["revision"] = s.revision;
    out["decode_empty"] = s.decode_empty;
    return out.dump();
  });
  ordered_json out;
  out["session_id"] = s.id;
  out["job_id"] = job;
  return reply(202, out);
}

Response Service::get_session(const std::string& id) {
  const auto s = store_.get(id);
  if (!s) return error_reply(404, "not-found", "unknown session " + id);
  ordered_json j;
  j["session_id"] = s->id;
  j["style"] = s->style;
  j["prompt"] = s->glyphs;
  j["seed"] = s->seed;
  j["revision"] = s->revision;
  j["boxes"] = s->boxes;
  j["decode_empty"] = s->decode_empty;
  j["created"] = s->created;
  j["updated"] = s->updated;
  if (s->revision > 0) {
    j["layout"] = layout_json(s->layout);
    const SessionImages im = store_.images(*s);
    j["images"] = {{"target", png_b64(im.target)},
                   {"boxmap", png_b64(im.boxmap)},
                   {"condition", png_b64(im.condition)}};
  } else {
    j["layout"] = nullptr;
    j["images"] = nullptr;
  }
  return reply(200, j);
}

Response Service::put_layout(const std::string& id, const std::string& body) {
  const auto s = store_.get(id);
  if (!s) return error_reply(404, "not-found", "unknown session " + id);
  if (!model_) return error_reply(503, "no-checkpoint", "no checkpoint loaded");
  if (s->revision == 0)
    return error_reply(409, "not-ready", "session " + id + " has not finished generating");
  const layout::LayoutSpec edited = layout::from_json(body);
  require(edited.canvas == model_->config().canvas, Errc::kInvalidLayout,
          "layout canvas " + std::to_string(edited.canvas) + " != model canvas " +
              std::to_string(model_->config().canvas));
  layout::validate(edited);
  for (std::size_t i = 0; i < edited.boxes.size(); ++i)
    require(edited.boxes[i].glyph < atlas_.glyph_count(), Errc::kInvalidLayout,
            "box " + std::to_string(i) + ": unknown glyph id " + std::to_string(edited.boxes[i].glyph));
  std::vector<int> glyphs;
  for (const auto& b : edited.boxes) glyphs.push_back(b.glyph);
  require(static_cast<int>(glyphs.size()) + 1 <= model_->config().max_text,
          Errc::kInvalidLayout, "layout has more boxes than the model's text capacity");

  const std::string job = jobs_.submit([this, id, edited, glyphs] {
    auto lock = session_lock(id);
    std::lock_guard guard(*lock);
    Session cur = *store_.get(id);
    infer::IntegratorConfig ic = cfg_.integrator;
    ic.seed = cur.seed;
    const std::vector<int> prompt = infer::make_prompt(atlas_, cur.style, glyphs);
    const GrayImage target = sampler_->edit_regenerate(prompt, edited, ic);
    cur.layout = edited;
    cur.glyphs = glyphs;
    cur.boxes = "edited";
    cur.decode_empty = edited.boxes.empty();
    cur.revision += 1;
    cur.updated = now();
    store_.put(cur, {target, layout::render_box_map(edited, layout::Palette()),
                     corpus::render_condition(atlas_, edited)});
    ordered_json out;
    out["session_id"] = id;
    out["revision"] = cur.revision;
    return out.dump();
  });
  ordered_json out;
  out["session_id"] = id;
  out["job_id"] = job;
  return reply(202, out);
}

Response Service::inpaint(const std::string& body) {
  if (!model_) return error_reply(503, "no-checkpoint", "no checkpoint loaded");
  const json j = parse_body(body);
  infer::InpaintTask task;
  task.image = gray_field(j, "image");
  task.mask = gray_field(j, "mask");
  const int canvas = model_->config().canvas;
  require(task.image.width == canvas && task.image.height == canvas, Errc::kDimensionMismatch,
          "image is " + std::to_string(task.image.width) + "x" + std::to_string(task.image.height) +
              ", model canvas is " + std::to_string(canvas));
  require(task.mask.width == canvas && task.mask.height == canvas, Errc::kDimensionMismatch,
          "mask dimensions differ from the model canvas");
  for (std::uint8_t v : task.mask.pixels)
    if (v != 0 && v != 255)
      return error_reply(422, "mask-not-binary", "mask pixels must be 0 (known) or 255 (missing)");
  task.prompt = infer::make_prompt(atlas_, style_field(j), glyph_field(j));
  std::shared_ptr<layout::LayoutSpec> known;
  if (j.contains("layout") && !j["layout"].is_null()) {
    known = std::make_shared<layout::LayoutSpec>(layout::from_json(j["layout"].dump()));
    layout::validate(*known);
  }
  infer::IntegratorConfig ic = cfg_.integrator;
  ic.seed = seed_field(j);
  const std::string job = jobs_.submit([this, task, known, ic]() mutable {
    task.layout = known.get();
    const infer::InpaintResult r = sampler_->inpaint(task, ic);
    ordered_json out;
    out["image"] = png_b64(r.image);
    out["boxmap"] = png_b64(r.boxmap);
    out["seed"] = ic.seed;
    return out.dump();
  });
  ordered_json out;
  out["job_id"] = job;
  return reply(202, out);
}

Response Service::drs(const std::string& body) {
  if (!model_) return error_reply(503, "no-checkpoint", "no checkpoint loaded");
  const json j = parse_body(body);
  const GrayImage image = gray_field(j, "image");
  const int canvas = model_->config().canvas;
  require(image.width == canvas && image.height == canvas, Errc::kDimensionMismatch,
          "image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
              ", model canvas is " + std::to_string(canvas));
  const std::vector<int> prompt = infer::make_prompt(atlas_, style_field(j), glyph_field(j));
  std::optional<layout::LayoutSpec> boxes;
  if (j.contains("boxes") && !j["boxes"].is_null()) {
    boxes = layout::from_json(j["boxes"].dump());
    layout::validate(*boxes);
  }
  forensics::DRSConfig dc = cfg_.drs;
  if (j.contains("seed")) dc.seed = seed_field(j);
  infer::IntegratorConfig ic = cfg_.integrator;
  ic.seed = dc.seed;
  const std::string job = jobs_.submit([this, image, prompt, boxes, dc, ic] {
    return forensics::score_image(*sampler_, atlas_, image, prompt, boxes ? &*boxes : nullptr, dc, ic)
        .to_json();
  });
  const JobStatus st = jobs_.wait(job);
  if (st.state == JobState::kFailed) {
    return error_reply(500, st.error_code, st.error);
  }
  return {200, st.result};
}

Response Service::get_job(const std::string& id) {
  const auto st = jobs_.status(id);
  if (!st) return error_reply(404, "not-found", "unknown job " + id);
  ordered_json j;
  j["job_id"] = st->id;
  j["state"] = to_string(st->state);
  if (st->state == JobState::kDone) j["result"] = ordered_json::parse(st->result);
  if (st->state == JobState::kFailed) {
    j["error"] = st->error_code;
    j["message"] = st->error;
  }
  return reply(200, j);
}

void Service::bind(httplib::Server& server) {
  server_ = &server;
  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    const Response r = handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  // Static files are tried first; any path without a file falls through to the API.
  if (!cfg_.ui_dir.empty())
    require(server.set_mount_point("/", cfg_.ui_dir), Errc::kIoFailure, "cannot serve " + cfg_.ui_dir);
  server.Get(".*", route);
  server.Post(".*", route);
  server.Put(".*", route);
}

void Service::listen(const std::string& host) {
  owned_server_ = std::make_unique<httplib::Server>();
  bind(*owned_server_);
  require(owned_server_->listen(host, cfg_.port), Errc::kIoFailure,
          "cannot listen on " + host + ":" + std::to_string(cfg_.port));
}

void Service::stop() {
  if (server_) server_->stop();
}

}  // namespace gf::service
