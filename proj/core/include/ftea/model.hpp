#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ftea/alignment.hpp"
#include "ftea/config.hpp"
#include "ftea/data.hpp"
#include "ftea/encoders.hpp"
#include "ftea/losses.hpp"
#include "ftea/metrics.hpp"
#include "ftea/stacked_decoder.hpp"

namespace ftea {

/// Every intermediate of one forward pass.
struct Prediction {
  VisualPyramid pyramid;
  JointFeature joint;
  Tensor x_prime;
  HiddenFeature hidden;
  DynamicKernels kernels;
  MaskOutput masks;   // [T, K, H, W]
  Tensor ref_logits;  // [T, K]
};

/// The assembled network plus the learnable diversity metric W_div.
class FteaModel {
 public:
  /// Parameters are drawn from an Rng seeded with config.seed.
  explicit FteaModel(const Config& config);

  FteaModel(const FteaModel&) = delete;
  FteaModel& operator=(const FteaModel&) = delete;
  FteaModel(FteaModel&&) = default;
  FteaModel& operator=(FteaModel&&) = default;

  /// clip [T, H, W, 3] in [0, 1] at the configured size.
  Prediction forward(const Tensor& clip, const std::vector<std::string>& tokens, const ForwardContext& ctx) const;

  const Config& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  VisualEncoder visual;
  FuseProjection fuse;
  CrossModalAlignment alignment;
  MaskDecoder decoder;
  Tensor w_div;  // [C0, C0], identity at initialisation

 private:
  Config config_;
  ParamSet params_;
};

/// k* = argmax_k sum_t scores[t, k]; the smallest index wins ties.
std::size_t select_target(const Tensor& scores);

struct InferenceResult {
  std::size_t candidate = 0;
  double confidence = 0.0;  // mean referring score of the selected candidate
  std::vector<Mask> masks;  // one binary mask per frame, threshold 0.5
};

/// Forward pass with dropout disabled; the clip is resized to the configured size first.
InferenceResult infer(const FteaModel& model, const ClipSample& clip);

/// Per-(clip, frame) samples paired with their ground truth.
std::vector<SamplePrediction> predict_samples(const FteaModel& model, const std::vector<ClipSample>& clips);

MetricsReport evaluate_dataset(const FteaModel& model, const std::vector<ClipSample>& clips);

/// Mean pairwise |cosine| among the rows of each Z3[t], averaged over frames.
double mean_abs_cosine(const Tensor& z);

}  // namespace ftea
