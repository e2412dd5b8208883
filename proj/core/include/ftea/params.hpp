#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ftea/ops.hpp"
#include "ftea/rng.hpp"
#include "ftea/tensor.hpp"

namespace ftea {

/// Optimiser group a parameter belongs to; the visual encoder trains at its own rate.
enum class ParamGroup { kVisualEncoder, kMain };

struct Parameter {
  std::string name;
  Tensor value;
  ParamGroup group = ParamGroup::kMain;
};

/// Ordered registry of trainable tensors with stable names.
class ParamSet {
 public:
  void add(std::string name, Tensor value, ParamGroup group);
  const std::vector<Parameter>& items() const { return items_; }
  std::vector<Parameter>& items() { return items_; }
  const Parameter* find(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<Parameter> items_;
};

/// Per-call execution settings. Dropout draws from `rng` only when training.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]; undefined when the layer has no bias

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

  Tensor operator()(const Tensor& x) const;
  void collect(ParamSet& set, const std::string& prefix, ParamGroup group) const;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  LayerNormParams() = default;
  explicit LayerNormParams(std::size_t width);

  Tensor operator()(const Tensor& x, Reduction reduction = Reduction::kSequential) const;
  void collect(ParamSet& set, const std::string& prefix, ParamGroup group) const;
};

/// Two linear layers with ReLU in between.
struct FeedForward {
  Linear in;
  Linear out;

  FeedForward() = default;
  FeedForward(std::size_t width, std::size_t hidden, std::size_t out_width, Rng& rng);

  Tensor operator()(const Tensor& x) const { return out(relu(in(x))); }
  void collect(ParamSet& set, const std::string& prefix, ParamGroup group) const;
};

Tensor apply_dropout(const Tensor& x, double p, const ForwardContext& ctx);

}  // namespace ftea
