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

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "glyphflow/backbone/model.hpp"
#include "glyphflow/common/rng.hpp"
#include "glyphflow/corpus/corpus.hpp"

namespace gf::flow {

using backbone::Outputs;
using backbone::TimestepTriplet;

enum class Regime { kS1 = 0, kS2 = 1, kJoint = 2, kUncond = 3 };
inline constexpr int kRegimeCount = 4;
std::string to_string(Regime r);
Regime parse_regime(const std::string& s);

struct RegimeProbs {
  double s1 = 0.35;
  double s2 = 0.35;
  double joint = 0.25;
  double uncond = 0.05;

  double at(Regime r) const;
  void validate() const;
};

struct RegimeDraw {
  Regime regime = Regime::kJoint;
  TimestepTriplet t;
  double delta = 0.0;  // box perturbation level, S2 only
};

// x_t = (1 - t) x0 + t eps
template <class T>
std::vector<T> interpolate(std::span<const T> clean, std::span<const T> noise, double t);
// u = eps - x0
template <class T>
std::vector<T> velocity_target(std::span<const T> clean, std::span<const T> noise);

double sigmoid(double z);
double sample_t_logitnormal(Rng& rng);
RegimeDraw sample_regime(const RegimeProbs& probs, double delta_max, Rng& rng);

// b~ = (1 - delta) b0 + delta eps' with fresh Gaussian eps'.
template <class T>
std::vector<T> perturb_box_latent(std::span<const T> b0, double delta, Rng& rng);

struct StreamWeights {
  double img = 1.0;
  double box = 1.0;
  double cond = 1.0;
};
StreamWeights regime_weights(Regime r, double lambda_aux);

struct LossRecord {
  double total = 0.0;
  double img = 0.0;
  double box = 0.0;
  double cond = 0.0;
};

// Per-stream mean squared error, combined with the regime weights. When grad
// is given it receives d total / d prediction scaled by grad_scale.
template <class T>
LossRecord compute_loss(const Outputs<T>& pred, const Outputs<T>& target, Regime regime,
                        double lambda_aux, Outputs<T>* grad = nullptr, double grad_scale = 1.0);

// ---- latent encoding ----------------------------------------------------------

std::vector<float> encode_gray(const GrayImage& img, const backbone::ModelConfig& cfg);
std::vector<float> encode_rgb(const RgbImage& img, const backbone::ModelConfig& cfg);
GrayImage decode_gray(std::span<const float> patches, const backbone::ModelConfig& cfg);
RgbImage decode_rgb(std::span<const float> patches, const backbone::ModelConfig& cfg);
std::vector<float> gaussian(std::size_t n, Rng& rng);

// Box map with every box color shifted per channel by up to +-amplitude.
RgbImage jittered_box_map(const layout::LayoutSpec& layout, int amplitude, Rng& rng);

// ---- training -------------------------------------------------------------------

struct TrainConfig {
  RegimeProbs probs;
  double lambda_aux = 0.01;
  double delta_max = 0.1;
  double lr = 3e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch = 2;
  std::int64_t steps = 1000;
  std::uint64_t seed = 1;
  int color_jitter = 16;
  double p_synth = 0.5;  // used only when a second pool is supplied
  // "constant", or "cosine": linear warmup over `warmup` steps, then cosine
  // decay to lr * lr_final at `steps`.
  std::string lr_schedule = "constant";
  std::int64_t warmup = 0;
  double lr_final = 0.0;
  // Worker threads for the per-sample passes of one step; 0 = all cores.
  // Results do not depend on it.
  int threads = 0;

  // Learning rate applied by the optimizer step that follows `done` steps.
  double lr_at(std::int64_t done) const;
  void validate() const;
  void write(KeyValues& kv) const;
  // Starts from the defaults and overrides every key present.
  static TrainConfig read(const KeyValues& kv);
};

struct AdamState {
  std::vector<float> m, v;
  std::int64_t step = 0;
};

struct StepRecord {
  std::int64_t step = 0;
  LossRecord loss;
  RegimeDraw draw;
};

// `step total L_img L_box L_cond regime t_img t_box t_cond`, tab separated.
std::string log_header();
std::string format_log_line(const StepRecord& r);

struct TrainingSample {
  std::vector<int> prompt;
  std::vector<float> img0, box0, cond0;  // clean latents
};
TrainingSample make_training_sample(const corpus::Triplet& t, const backbone::ModelConfig& cfg,
                                    int color_jitter, Rng& rng);

class Trainer {
 public:
  Trainer(backbone::Model<float>& model, const TrainConfig& cfg, int null_token);

  // One optimizer step on a batch drawn from pool (or mixed with pool_b).
  StepRecord step(std::span<const corpus::Triplet> pool,
                  std::span<const corpus::Triplet> pool_b = {});

  AdamState& adam() { return adam_; }
  const AdamState& adam() const { return adam_; }
  std::int64_t steps_done() const { return adam_.step; }
  const TrainConfig& config() const { return cfg_; }

 private:
  backbone::Model<float>& model_;
  TrainConfig cfg_;
  int null_token_;
  AdamState adam_;
  std::vector<float> grad_;
  std::vector<std::vector<float>> sample_grads_;
};

}  // namespace gf::flow
