#include "ftea/alignment.hpp"

#include <cmath>

namespace ftea {

Tensor sine_pos_2d(std::size_t h, std::size_t w, std::size_t c) {
  if (c == 0 || c % 4 != 0) throw ContractError("sine_pos_2d: channel count " + std::to_string(c) + " not divisible by 4");
  const std::size_t half = c / 2;
  constexpr double kTemperature = 10000.0;
  std::vector<double> freq(half);
  for (std::size_t i = 0; i < half; ++i) {
    freq[i] = std::pow(kTemperature, 2.0 * static_cast<double>(i / 2) / static_cast<double>(half));
  }
  std::vector<double> out(h * w * c);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double* row = out.data() + (y * w + x) * c;
      for (std::size_t i = 0; i < half; ++i) {
        const double ay = static_cast<double>(y) / freq[i];
        const double ax = static_cast<double>(x) / freq[i];
        row[i] = i % 2 == 0 ? std::sin(ay) : std::cos(ay);
        row[half + i] = i % 2 == 0 ? std::sin(ax) : std::cos(ax);
      }
    }
  }
  return Tensor({h * w, c}, std::move(out));
}

MultiHeadAttention::MultiHeadAttention(std::size_t width, std::size_t heads, Rng& rng)
    : q(width, width, rng), k(width, width, rng), v(width, width, rng), o(width, width, rng), heads_(heads) {
  if (heads == 0 || width % heads != 0) {
    throw ContractError("attention width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                        " heads");
  }
}

Tensor MultiHeadAttention::split_heads(const Tensor& x) const {
  const std::size_t b = x.size(0), l = x.size(1), c = x.size(2);
  return permute(reshape(x, {b, l, heads_, c / heads_}), {0, 2, 1, 3});
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& key, const Tensor& value,
                                      Tensor* probs) const {
  if (query.dim() != 3 || key.dim() != 3 || value.dim() != 3 || key.shape() != value.shape() ||
      query.size(0) != key.size(0)) {
    throw ShapeError("attention inputs " + to_string(query.shape()) + ", " + to_string(key.shape()) + ", " +
                     to_string(value.shape()) + " are inconsistent");
  }
  const std::size_t b = query.size(0), lq = query.size(1), c = query.size(2);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(c / heads_));
  Tensor qh = split_heads(q(query));
  Tensor kh = split_heads(k(key));
  Tensor vh = split_heads(v(value));
  Tensor p = softmax_last(scale(matmul(qh, transpose_last2(kh)), inv_sqrt));
  if (probs != nullptr) *probs = p;
  Tensor out = permute(matmul(p, vh), {0, 2, 1, 3});
  return o(reshape(out, {b, lq, c}));
}

void MultiHeadAttention::collect(ParamSet& set, const std::string& prefix) const {
  q.collect(set, prefix + ".query", ParamGroup::kMain);
  k.collect(set, prefix + ".key", ParamGroup::kMain);
  v.collect(set, prefix + ".value", ParamGroup::kMain);
  o.collect(set, prefix + ".out", ParamGroup::kMain);
}

CrossModalAlignment::CrossModalAlignment(const AlignmentDims& dims, Rng& rng) : dims_(dims) {
  const std::size_t c = dims.width;
  for (std::size_t i = 0; i < dims.layers; ++i) {
    encoders.push_back({MultiHeadAttention(c, dims.heads, rng), LayerNormParams(c),
                        FeedForward(c, dims.ffn_hidden, c, rng), LayerNormParams(c)});
  }
  for (std::size_t i = 0; i < dims.layers; ++i) {
    decoders.push_back({MultiHeadAttention(c, dims.heads, rng), LayerNormParams(c),
                        MultiHeadAttention(c, dims.heads, rng), LayerNormParams(c),
                        FeedForward(c, dims.ffn_hidden, c, rng), LayerNormParams(c)});
  }
  query_embed = xavier_uniform({dims.candidates, c}, rng);
  for (auto& head : kernel_head) head = FeedForward(c, c, dims.kernel_width, rng);
  referring = Linear(c, 1, rng);
}

Tensor CrossModalAlignment::joint_position(const JointFeature& x, std::size_t width) {
  Tensor pos = sine_pos_2d(x.grid_height, x.grid_width, width);
  return concat({pos, Tensor({x.text_tokens, width})}, 0);
}

Tensor CrossModalAlignment::encode(const JointFeature& joint, const ForwardContext& ctx) const {
  const Tensor pos = joint_position(joint, dims_.width);
  Tensor x = joint.x;
  for (const auto& layer : encoders) {
    Tensor qk = add(x, pos);
    x = layer.norm1(add(x, apply_dropout(layer.attn(qk, qk, x), dims_.dropout, ctx)));
    x = layer.norm2(add(x, apply_dropout(layer.ffn(x), dims_.dropout, ctx)));
  }
  return x;
}

Tensor CrossModalAlignment::candidate_queries(std::size_t frames) const {
  return broadcast_to(query_embed, {frames, dims_.candidates, dims_.width});
}

HiddenFeature CrossModalAlignment::decode(const Tensor& queries, const Tensor& x_prime, const Tensor& position,
                                          const ForwardContext& ctx) const {
  HiddenFeature h;
  Tensor o = queries;
  const Tensor keys = add(x_prime, position);
  for (const auto& layer : decoders) {
    o = layer.norm1(add(o, apply_dropout(layer.self_attn(o, o, o), dims_.dropout, ctx)));
    o = layer.norm2(add(o, apply_dropout(layer.cross_attn(o, keys, x_prime), dims_.dropout, ctx)));
    o = layer.norm3(add(o, apply_dropout(layer.ffn(o), dims_.dropout, ctx)));
    h.levels.push_back(o);
  }
  return h;
}

DynamicKernels CrossModalAlignment::kernel_heads(const HiddenFeature& h) const {
  if (h.levels.size() != 3) throw ContractError("kernel_heads expects three hidden levels");
  DynamicKernels z;
  for (std::size_t j = 0; j < 3; ++j) z.z[j] = kernel_head[j](h.levels[j]);
  return z;
}

Tensor CrossModalAlignment::referring_logits(const HiddenFeature& h) const {
  const Tensor& last = h.levels.back();
  Tensor logits = referring(last);
  return reshape(logits, {last.size(0), last.size(1)});
}

void CrossModalAlignment::collect(ParamSet& set, const std::string& prefix) const {
  for (std::size_t i = 0; i < encoders.size(); ++i) {
    const std::string p = prefix + ".encoder" + std::to_string(i);
    encoders[i].attn.collect(set, p + ".attn");
    encoders[i].norm1.collect(set, p + ".norm1", ParamGroup::kMain);
    encoders[i].ffn.collect(set, p + ".ffn", ParamGroup::kMain);
    encoders[i].norm2.collect(set, p + ".norm2", ParamGroup::kMain);
  }
  for (std::size_t i = 0; i < decoders.size(); ++i) {
    const std::string p = prefix + ".decoder" + std::to_string(i);
    decoders[i].self_attn.collect(set, p + ".self_attn");
    decoders[i].norm1.collect(set, p + ".norm1", ParamGroup::kMain);
    decoders[i].cross_attn.collect(set, p + ".cross_attn");
    decoders[i].norm2.collect(set, p + ".norm2", ParamGroup::kMain);
    decoders[i].ffn.collect(set, p + ".ffn", ParamGroup::kMain);
    decoders[i].norm3.collect(set, p + ".norm3", ParamGroup::kMain);
  }
  set.add(prefix + ".query_embed", query_embed, ParamGroup::kMain);
  for (std::size_t j = 0; j < 3; ++j) {
    kernel_head[j].collect(set, prefix + ".kernel_head" + std::to_string(j), ParamGroup::kMain);
  }
  referring.collect(set, prefix + ".referring", ParamGroup::kMain);
}

}  // namespace ftea
