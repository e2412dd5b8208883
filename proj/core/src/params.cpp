#include "ftea/params.hpp"

namespace ftea {

void ParamSet::add(std::string name, Tensor value, ParamGroup group) {
  if (find(name) != nullptr) throw ContractError("duplicate parameter name " + name);
  value.set_requires_grad(true);
  items_.push_back({std::move(name), std::move(value), group});
}

const Parameter* ParamSet::find(const std::string& name) const {
  for (const auto& p : items_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.value.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : items_) p.value.zero_grad();
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias) : weight(xavier_uniform({in, out}, rng)) {
  if (with_bias) bias = Tensor({out}, true);
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

void Linear::collect(ParamSet& set, const std::string& prefix, ParamGroup group) const {
  set.add(prefix + ".weight", weight, group);
  if (bias.defined()) set.add(prefix + ".bias", bias, group);
}

LayerNormParams::LayerNormParams(std::size_t width)
    : gain(Tensor::full({width}, 1.0).set_requires_grad(true)), bias(Tensor({width}, true)) {}

Tensor LayerNormParams::operator()(const Tensor& x, Reduction reduction) const {
  return layer_norm(x, gain, bias, reduction);
}

void LayerNormParams::collect(ParamSet& set, const std::string& prefix, ParamGroup group) const {
  set.add(prefix + ".gain", gain, group);
  set.add(prefix + ".bias", bias, group);
}

FeedForward::FeedForward(std::size_t width, std::size_t hidden, std::size_t out_width, Rng& rng)
    : in(width, hidden, rng), out(hidden, out_width, rng) {}

void FeedForward::collect(ParamSet& set, const std::string& prefix, ParamGroup group) const {
  in.collect(set, prefix + ".in", group);
  out.collect(set, prefix + ".out", group);
}

Tensor apply_dropout(const Tensor& x, double p, const ForwardContext& ctx) {
  if (!ctx.training || p <= 0.0) return x;
  if (ctx.rng == nullptr) throw ContractError("training forward pass needs an Rng for dropout");
  return dropout(x, p, true, *ctx.rng);
}

}  // namespace ftea
