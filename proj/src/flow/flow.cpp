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

#include "glyphflow/flow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <thread>

#include "glyphflow/common/error.hpp"
#include "glyphflow/kernels/reference.hpp"
#include "glyphflow/sequence/sequence.hpp"

namespace gf::flow {

std::string to_string(Regime r) {
  switch (r) {
    case Regime::kS1: return "S1";
    case Regime::kS2: return "S2";
    case Regime::kJoint: return "joint";
    case Regime::kUncond: return "uncond";
  }
  return "?";
}

Regime parse_regime(const std::string& s) {
  for (int i = 0; i < kRegimeCount; ++i)
    if (to_string(static_cast<Regime>(i)) == s) return static_cast<Regime>(i);
  fail(Errc::kConfigError, "unknown regime '" + s + "'");
}

double RegimeProbs::at(Regime r) const {
  switch (r) {
    case Regime::kS1: return s1;
    case Regime::kS2: return s2;
    case Regime::kJoint: return joint;
    case Regime::kUncond: return uncond;
  }
  return 0.0;
}

void RegimeProbs::validate() const {
  for (double p : {s1, s2, joint, uncond})
    require(p >= 0.0, Errc::kConfigError, "regime probabilities must be nonnegative");
  require(std::abs(s1 + s2 + joint + uncond - 1.0) <= 1e-9, Errc::kConfigError,
          "regime probabilities must sum to 1");
}

template <class T>
std::vector<T> interpolate(std::span<const T> clean, std::span<const T> noise, double t) {
  require(clean.size() == noise.size(), Errc::kShapeMismatch, "interpolate: shape mismatch");
  std::vector<T> out(clean.size());
  const T a = static_cast<T>(1.0 - t), b = static_cast<T>(t);
  // Exact endpoints: at t = 0 and t = 1 one term vanishes identically.
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * clean[i] + b * noise[i];
  return out;
}

template <class T>
std::vector<T> velocity_target(std::span<const T> clean, std::span<const T> noise) {
  require(clean.size() == noise.size(), Errc::kShapeMismatch, "velocity_target: shape mismatch");
  std::vector<T> out(clean.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = noise[i] - clean[i];
  return out;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double sample_t_logitnormal(Rng& rng) { return sigmoid(rng.normal()); }

RegimeDraw sample_regime(const RegimeProbs& probs, double delta_max, Rng& rng) {
  probs.validate();
  require(delta_max >= 0.0 && delta_max <= 1.0, Errc::kConfigError, "delta_max outside [0, 1]");
  const double u = rng.uniform();
  double acc = 0.0;
  Regime r = Regime::kUncond;
  for (int i = 0; i < kRegimeCount; ++i) {
    const double p = probs.at(static_cast<Regime>(i));
    acc += p;
    if (p > 0.0 && u < acc) {
      r = static_cast<Regime>(i);
      break;
    }
  }
  if (probs.at(r) == 0.0)  // rounding pushed u past the last nonzero regime
    for (int i = kRegimeCount - 1; i >= 0; --i)
      if (probs.at(static_cast<Regime>(i)) > 0.0) {
        r = static_cast<Regime>(i);
        break;
      }
  RegimeDraw d;
  d.regime = r;
  const double t = sample_t_logitnormal(rng);
  switch (r) {
    case Regime::kS1: d.t = {1.0, t, 0.0}; break;
    case Regime::kS2:
      d.t = {t, 0.0, 0.0};
      d.delta = rng.uniform(0.0, delta_max);
      break;
    case Regime::kJoint: d.t = {t, t, t}; break;
    case Regime::kUncond: d.t = {t, 1.0, 1.0}; break;
  }
  return d;
}

template <class T>
std::vector<T> perturb_box_latent(std::span<const T> b0, double delta, Rng& rng) {
  require(delta >= 0.0 && delta <= 1.0, Errc::kInvalidArgument, "delta outside [0, 1]");
  std::vector<T> out(b0.begin(), b0.end());
  if (delta == 0.0) return out;
  const T a = static_cast<T>(1.0 - delta), b = static_cast<T>(delta);
  for (auto& v : out) v = a * v + b * static_cast<T>(rng.normal());
  return out;
}

StreamWeights regime_weights(Regime r, double lambda_aux) {
  switch (r) {
    case Regime::kS1: return {lambda_aux, 1.0, lambda_aux};
    case Regime::kS2: return {1.0, lambda_aux, lambda_aux};
    case Regime::kJoint: return {1.0, 1.0, 1.0};
    case Regime::kUncond: return {1.0, lambda_aux, lambda_aux};
  }
  return {};
}

template <class T>
LossRecord compute_loss(const Outputs<T>& pred, const Outputs<T>& target, Regime regime,
                        double lambda_aux, Outputs<T>* grad, double grad_scale) {
  const StreamWeights w = regime_weights(regime, lambda_aux);
  auto stream = [&](const std::vector<T>& p, const std::vector<T>& t, double weight,
                    std::vector<T>* g) {
    require(p.size() == t.size() && !p.empty(), Errc::kShapeMismatch,
            "prediction and target shapes differ");
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double e = double(p[i]) - double(t[i]);
      sum += e * e;
    }
    if (g) {
      g->resize(p.size());
      const double k = grad_scale * weight * 2.0 / static_cast<double>(p.size());
      for (std::size_t i = 0; i < p.size(); ++i)
        (*g)[i] = static_cast<T>(k * (double(p[i]) - double(t[i])));
    }
    return sum / static_cast<double>(p.size());
  };
  LossRecord r;
  r.img = stream(pred.img, target.img, w.img, grad ? &grad->img : nullptr);
  r.box = stream(pred.box, target.box, w.box, grad ? &grad->box : nullptr);
  r.cond = stream(pred.cond, target.cond, w.cond, grad ? &grad->cond : nullptr);
  r.total = w.img * r.img + w.box * r.box + w.cond * r.cond;
  return r;
}

// ---- latents --------------------------------------------------------------------

std::vector<float> encode_gray(const GrayImage& img, const backbone::ModelConfig& cfg) {
  require(img.width == cfg.canvas && img.height == cfg.canvas, Errc::kShapeMismatch,
          "image does not match the model canvas");
  const auto planes = to_planar(img);
  return sequence::patchify<float>(planes, {cfg.canvas, cfg.patch, 1});
}

std::vector<float> encode_rgb(const RgbImage& img, const backbone::ModelConfig& cfg) {
  require(img.width == cfg.canvas && img.height == cfg.canvas, Errc::kShapeMismatch,
          "box map does not match the model canvas");
  const auto planes = to_planar(img);
  return sequence::patchify<float>(planes, {cfg.canvas, cfg.patch, 3});
}

GrayImage decode_gray(std::span<const float> patches, const backbone::ModelConfig& cfg) {
  const auto planes = sequence::unpatchify<float>(patches, {cfg.canvas, cfg.patch, 1});
  return gray_from_planar(planes, cfg.canvas, cfg.canvas);
}

RgbImage decode_rgb(std::span<const float> patches, const backbone::ModelConfig& cfg) {
  const auto planes = sequence::unpatchify<float>(patches, {cfg.canvas, cfg.patch, 3});
  return rgb_from_planar(planes, cfg.canvas, cfg.canvas);
}

std::vector<float> gaussian(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

RgbImage jittered_box_map(const layout::LayoutSpec& layout, int amplitude, Rng& rng) {
  layout::Palette palette;
  std::vector<Rgb> colors(palette.colors().begin(), palette.colors().end());
  for (auto& c : colors)
    for (auto& ch : c)
      ch = static_cast<std::uint8_t>(
          std::clamp<int>(ch + static_cast<int>(rng.uniform_int(-amplitude, amplitude)), 0, 255));
  return layout::render_box_map(layout, colors);
}

// ---- training ---------------------------------------------------------------------

void TrainConfig::validate() const {
  probs.validate();
  require(lambda_aux >= 0.0, Errc::kConfigError, "lambda_aux must be nonnegative");
  require(delta_max >= 0.0 && delta_max <= 1.0, Errc::kConfigError, "delta_max outside [0, 1]");
  require(lr >= 0.0 && weight_decay >= 0.0, Errc::kConfigError, "negative learning rate or decay");
  require(batch >= 1 && steps >= 0, Errc::kConfigError, "batch must be positive");
  require(color_jitter >= 0 && color_jitter <= 64, Errc::kConfigError,
          "color_jitter outside [0, 64]");
  require(p_synth >= 0.0 && p_synth <= 1.0, Errc::kConfigError, "p_synth outside [0, 1]");
  require(lr_schedule == "constant" || lr_schedule == "cosine", Errc::kConfigError,
          "lr_schedule must be constant or cosine, got '" + lr_schedule + "'");
  require(threads >= 0, Errc::kConfigError, "threads must be nonnegative");
  require(warmup >= 0 && lr_final >= 0.0 && lr_final <= 1.0, Errc::kConfigError,
          "warmup must be nonnegative and lr_final in [0, 1]");
}

double TrainConfig::lr_at(std::int64_t done) const {
  if (lr_schedule == "constant") return lr;
  if (done < warmup) return lr * double(done + 1) / double(warmup);
  const double span = double(std::max<std::int64_t>(steps - warmup, 1));
  const double frac = std::min(1.0, double(done - warmup) / span);
  return lr * (lr_final + (1.0 - lr_final) * 0.5 * (1.0 + std::cos(M_PI * frac)));
}

void TrainConfig::write(KeyValues& kv) const {
  kv.set("p_s1", probs.s1);
  kv.set("p_s2", probs.s2);
  kv.set("p_joint", probs.joint);
  kv.set("p_uncond", probs.uncond);
  kv.set("lambda_aux", lambda_aux);
  kv.set("delta_max", delta_max);
  kv.set("lr", lr);
  kv.set("weight_decay", weight_decay);
  kv.set("beta1", beta1);
  kv.set("beta2", beta2);
  kv.set("eps", eps);
  kv.set("batch", batch);
  kv.set("steps", steps);
  kv.set("seed", seed);
  kv.set("color_jitter", color_jitter);
  kv.set("p_synth", p_synth);
  kv.set("lr_schedule", lr_schedule);
  kv.set("warmup", warmup);
  kv.set("lr_final", lr_final);
  kv.set("threads", threads);
}

TrainConfig TrainConfig::read(const KeyValues& kv) {
  TrainConfig c;
  auto dbl = [&](const char* k, double& v) {
    if (kv.has(k)) v = kv.get_double(k);
  };
  dbl("p_s1", c.probs.s1);
  dbl("p_s2", c.probs.s2);
  dbl("p_joint", c.probs.joint);
  dbl("p_uncond", c.probs.uncond);
  dbl("lambda_aux", c.lambda_aux);
  dbl("delta_max", c.delta_max);
  dbl("lr", c.lr);
  dbl("weight_decay", c.weight_decay);
  dbl("beta1", c.beta1);
  dbl("beta2", c.beta2);
  dbl("eps", c.eps);
  dbl("p_synth", c.p_synth);
  dbl("lr_final", c.lr_final);
  if (kv.has("lr_schedule")) c.lr_schedule = kv.get("lr_schedule");
  if (kv.has("warmup")) c.warmup = kv.get_int("warmup");
  if (kv.has("threads")) c.threads = static_cast<int>(kv.get_int("threads"));
  if (kv.has("batch")) c.batch = static_cast<int>(kv.get_int("batch"));
  if (kv.has("steps")) c.steps = kv.get_int("steps");
  if (kv.has("seed")) c.seed = kv.get_u64("seed");
  if (kv.has("color_jitter")) c.color_jitter = static_cast<int>(kv.get_int("color_jitter"));
  c.validate();
  return c;
}

std::string log_header() { return "step\ttotal\tL_img\tL_box\tL_cond\tregime\tt_img\tt_box\tt_cond"; }

std::string format_log_line(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld\t%.6g\t%.6g\t%.6g\t%.6g\t%s\t%.4f\t%.4f\t%.4f",
                static_cast<long long>(r.step), r.loss.total, r.loss.img, r.loss.box, r.loss.cond,
                to_string(r.draw.regime).c_str(), r.draw.t.img, r.draw.t.box, r.draw.t.cond);
  return buf;
}

TrainingSample make_training_sample(const corpus::Triplet& t, const backbone::ModelConfig& cfg,
                                    int color_jitter, Rng& rng) {
  TrainingSample s;
  s.prompt = t.prompt;
  s.img0 = encode_gray(t.target, cfg);
  s.cond0 = encode_gray(t.condition, cfg);
  s.box0 = color_jitter > 0 ? encode_rgb(jittered_box_map(t.layout, color_jitter, rng), cfg)
                            : encode_rgb(t.boxmap, cfg);
  return s;
}

Trainer::Trainer(backbone::Model<float>& model, const TrainConfig& cfg, int null_token)
    : model_(model), cfg_(cfg), null_token_(null_token) {
  cfg_.validate();
  adam_.m.assign(model.params().size(), 0.0f);
  adam_.v.assign(model.params().size(), 0.0f);
  grad_.assign(model.params().size(), 0.0f);
}

StepRecord Trainer::step(std::span<const corpus::Triplet> pool,
                         std::span<const corpus::Triplet> pool_b) {
  require(!pool.empty(), Errc::kEmptyPool, "training pool is empty");
  require(adam_.m.size() == model_.params().size() && adam_.v.size() == adam_.m.size(),
          Errc::kConfigMismatch, "optimizer state does not match the model");
  const std::int64_t s = adam_.step;
  Rng regime_rng = Rng::keyed(cfg_.seed, {static_cast<std::uint64_t>(s), 0});
  StepRecord rec;
  rec.draw = sample_regime(cfg_.probs, cfg_.delta_max, regime_rng);
  const RegimeDraw& d = rec.draw;
  const backbone::ModelConfig& mc = model_.config();
  const double scale = 1.0 / cfg_.batch;
  sample_grads_.resize(static_cast<std::size_t>(cfg_.batch));
  std::vector<LossRecord> losses(static_cast<std::size_t>(cfg_.batch));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg_.batch));

  // Each sample draws from its own keyed stream and writes its own gradient
  // buffer, so the step is identical for any thread count.
  auto run_sample = [&](int b, backbone::Cache<float>& cache) {
    Rng rng = Rng::keyed(cfg_.seed, {static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(b) + 1});
    const corpus::Triplet& tr =
        pool_b.empty()
            ? pool[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(pool.size()) - 1))]
            : corpus::mix_pools(pool, pool_b, cfg_.p_synth, rng);
    TrainingSample smp = make_training_sample(tr, mc, cfg_.color_jitter, rng);
    const std::vector<int> prompt =
        d.regime == Regime::kUncond ? std::vector<int>{null_token_} : smp.prompt;
    const auto ex = gaussian(smp.img0.size(), rng);
    const auto eb = gaussian(smp.box0.size(), rng);
    const auto ec = gaussian(smp.cond0.size(), rng);
    const auto box_clean =
        d.regime == Regime::kS2 ? perturb_box_latent<float>(smp.box0, d.delta, rng) : smp.box0;
    const auto img_in = interpolate<float>(smp.img0, ex, d.t.img);
    const auto box_in = interpolate<float>(box_clean, eb, d.t.box);
    const auto cond_in = interpolate<float>(smp.cond0, ec, d.t.cond);
    Outputs<float> target{velocity_target<float>(smp.img0, ex), velocity_target<float>(smp.box0, eb),
                          velocity_target<float>(smp.cond0, ec)};
    backbone::Inputs<float> in{prompt, img_in, box_in, cond_in, d.t};
    const Outputs<float> pred = model_.forward(in, &cache);
    Outputs<float> dpred;
    const LossRecord l = compute_loss(pred, target, d.regime, cfg_.lambda_aux, &dpred, scale);
    losses[static_cast<std::size_t>(b)] = l;
    if (!std::isfinite(l.total)) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "step %lld sample %d regime %s: loss %g (img %g box %g cond %g)",
                    static_cast<long long>(s + 1), b, to_string(d.regime).c_str(), l.total, l.img,
                    l.box, l.cond);
      fail(Errc::kNonFiniteLoss, buf);
    }
    std::vector<float>& g = sample_grads_[static_cast<std::size_t>(b)];
    g.assign(grad_.size(), 0.0f);
    model_.backward(cache, dpred, g);
  };

  int workers = cfg_.threads > 0 ? cfg_.threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, cfg_.batch);
  auto worker = [&](int first) {
    backbone::Cache<float> cache;
    for (int b = first; b < cfg_.batch; b += workers) {
      try {
        run_sample(b, cache);
      } catch (...) {
        errors[static_cast<std::size_t>(b)] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool_threads;
    for (int w = 0; w < workers; ++w) pool_threads.emplace_back(worker, w);
    for (auto& t : pool_threads) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::fill(grad_.begin(), grad_.end(), 0.0f);
  for (int b = 0; b < cfg_.batch; ++b) {
    const LossRecord& l = losses[static_cast<std::size_t>(b)];
    rec.loss.total += scale * l.total;
    rec.loss.img += scale * l.img;
    rec.loss.box += scale * l.box;
    rec.loss.cond += scale * l.cond;
    const std::vector<float>& g = sample_grads_[static_cast<std::size_t>(b)];
    for (std::size_t i = 0; i < grad_.size(); ++i) grad_[i] += g[i];
  }
  for (float g : grad_)
    require(std::isfinite(g), Errc::kNonFiniteLoss,
            "non-finite gradient at step " + std::to_string(s + 1));

  kernels::AdamWParams ap;
  ap.lr = cfg_.lr_at(s);
  ap.beta1 = cfg_.beta1;
  ap.beta2 = cfg_.beta2;
  ap.eps = cfg_.eps;
  ap.weight_decay = cfg_.weight_decay;
  ap.bias_corr1 = 1.0 - std::pow(cfg_.beta1, double(s + 1));
  ap.bias_corr2 = 1.0 - std::pow(cfg_.beta2, double(s + 1));
  auto params = model_.params();
  kernels::adamw<float>(params.data(), grad_.data(), adam_.m.data(), adam_.v.data(), params.size(), ap);
  adam_.step = s + 1;
  rec.step = adam_.step;
  return rec;
}

#define GF_INSTANTIATE(T)                                                                    \
  template std::vector<T> interpolate<T>(std::span<const T>, std::span<const T>, double);   \
  template std::vector<T> velocity_target<T>(std::span<const T>, std::span<const T>);       \
  template std::vector<T> perturb_box_latent<T>(std::span<const T>, double, Rng&);          \
  template LossRecord compute_loss<T>(const Outputs<T>&, const Outputs<T>&, Regime, double, \
                                      Outputs<T>*, double);
GF_INSTANTIATE(float)
GF_INSTANTIATE(double)
#undef GF_INSTANTIATE

}  // namespace gf::flow
