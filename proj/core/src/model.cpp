#include "ftea/model.hpp"

#include <cmath>

namespace ftea {

namespace {

Tensor identity_matrix(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor({n, n}, std::move(v), true);
}

}  // namespace

FteaModel::FteaModel(const Config& config) : config_(config) {
  config_.validate();
  Rng rng(config.seed);
  visual = VisualEncoder(config.encoder_dims(), rng);
  fuse = FuseProjection(config.encoder_dims(), rng);
  alignment = CrossModalAlignment(config.alignment_dims(), rng);
  decoder = MaskDecoder(config.decoder_dims(), rng);
  w_div = identity_matrix(config.dims.kernel_width);

  visual.collect(params_, "visual");
  fuse.collect(params_, "fuse");
  alignment.collect(params_, "align");
  decoder.collect(params_, "decoder");
  params_.add("loss.w_div", w_div, ParamGroup::kMain);
}

Prediction FteaModel::forward(const Tensor& clip, const std::vector<std::string>& tokens,
                              const ForwardContext& ctx) const {
  const auto& d = config_.dims;
  if (clip.dim() != 4 || clip.size(1) != d.height || clip.size(2) != d.width_px) {
    throw ShapeError("model expects clips of " + std::to_string(d.height) + "x" + std::to_string(d.width_px) +
                     ", got " + to_string(clip.shape()));
  }
  Prediction p;
  p.pyramid = visual(clip);
  const TextFeature text = encode_text(tokens, d.text_width, d.max_tokens);
  p.joint = fuse(p.pyramid, text);
  p.x_prime = alignment.encode(p.joint, ctx);
  const Tensor pos = CrossModalAlignment::joint_position(p.joint, d.width);
  p.hidden = alignment.decode(alignment.candidate_queries(clip.size(0)), p.x_prime, pos, ctx);
  p.kernels = alignment.kernel_heads(p.hidden);
  p.masks = decoder(p.pyramid, p.x_prime, p.joint.visual_tokens, p.kernels, d.height, d.width_px);
  p.ref_logits = alignment.referring_logits(p.hidden);
  return p;
}

std::size_t select_target(const Tensor& scores) {
  if (scores.dim() != 2 || scores.size(1) == 0) {
    throw ShapeError("select_target expects [T, K] scores, got " + to_string(scores.shape()));
  }
  const std::size_t t = scores.size(0), k = scores.size(1);
  const auto s = scores.data();
  std::size_t best = 0;
  double best_sum = -INFINITY;
  for (std::size_t c = 0; c < k; ++c) {
    double total = 0.0;
    for (std::size_t f = 0; f < t; ++f) total += s[f * k + c];
    if (total > best_sum) {
      best_sum = total;
      best = c;
    }
  }
  return best;
}

InferenceResult infer(const FteaModel& model, const ClipSample& clip) {
  const auto& d = model.config().dims;
  const ClipSample sized = resize_clip(clip, d.height, d.width_px);
  if (sized.frames != d.frames) {
    throw ShapeError("clip has " + std::to_string(sized.frames) + " frames, model expects " + std::to_string(d.frames));
  }
  const Prediction p = model.forward(sized.frames_tensor(), tokenize(sized.query), ForwardContext{});
  const Tensor scores = referring_scores(p.ref_logits);
  InferenceResult r;
  r.candidate = select_target(scores);
  const std::size_t t = scores.size(0), k = scores.size(1), px = d.height * d.width_px;
  double total = 0.0;
  for (std::size_t f = 0; f < t; ++f) total += scores.data()[f * k + r.candidate];
  r.confidence = total / static_cast<double>(t);
  const auto probs = p.masks.probs.data();
  for (std::size_t f = 0; f < t; ++f) {
    Mask m(d.height, d.width_px);
    const double* src = probs.data() + (f * k + r.candidate) * px;
    for (std::size_t i = 0; i < px; ++i) m.data[i] = src[i] > 0.5 ? 1 : 0;
    r.masks.push_back(std::move(m));
  }
  return r;
}

std::vector<SamplePrediction> predict_samples(const FteaModel& model, const std::vector<ClipSample>& clips) {
  const auto& d = model.config().dims;
  std::vector<SamplePrediction> out;
  for (const auto& clip : clips) {
    const InferenceResult r = infer(model, clip);
    for (std::size_t f = 0; f < r.masks.size(); ++f) {
      out.push_back({r.masks[f], resize_nearest(clip.masks.at(f), d.height, d.width_px), r.confidence});
    }
  }
  return out;
}

MetricsReport evaluate_dataset(const FteaModel& model, const std::vector<ClipSample>& clips) {
  const auto samples = predict_samples(model, clips);
  return evaluate(samples);
}

double mean_abs_cosine(const Tensor& z) {
  if (z.dim() != 3) throw ShapeError("mean_abs_cosine expects [T, K, C], got " + to_string(z.shape()));
  const std::size_t t = z.size(0), k = z.size(1), c = z.size(2);
  const auto v = z.data();
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t f = 0; f < t; ++f) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = i + 1; j < k; ++j) {
        const double* a = v.data() + (f * k + i) * c;
        const double* b = v.data() + (f * k + j) * c;
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t x = 0; x < c; ++x) {
          dot += a[x] * b[x];
          na += a[x] * a[x];
          nb += b[x] * b[x];
        }
        total += na > 0.0 && nb > 0.0 ? std::abs(dot) / std::sqrt(na * nb) : 0.0;
        ++pairs;
      }
    }
  }
  return pairs == 0 ? 0.0 : total / static_cast<double>(pairs);
}

}  // namespace ftea
