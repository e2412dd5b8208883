#include "ftea/grad_suite.hpp"

#include <cmath>

#include "ftea/ops.hpp"
#include "ftea/rng.hpp"
#include "ftea/stacked_decoder.hpp"

namespace ftea {
namespace {

Tensor leaf(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return uniform_tensor(std::move(shape), rng, lo, hi, true);
}

// Values in [lo, hi] with a random sign, so relu/abs never sit near their kink.
Tensor signed_leaf(Shape shape, Rng& rng, double lo = 0.2, double hi = 1.0) {
  Tensor t = uniform_tensor(std::move(shape), rng, lo, hi, true);
  for (double& v : t.data())
    if (rng.bernoulli(0.5)) v = -v;
  return t;
}

std::vector<double> random_values(std::size_t n, Rng& rng, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

std::vector<GradReport> op_gradient_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradReport> out;
  const GradCheckOptions opts{1e-5, 0, seed};

  auto unary = [&](const std::string& name, Tensor x, auto op) {
    const Tensor w = uniform_tensor(op(x).shape(), rng);
    out.push_back(grad_check(name, [&] { return sum(mul(op(x), w)); }, {{"x", x}}, opts));
  };
  auto binary = [&](const std::string& name, Tensor a, Tensor b, auto op) {
    const Tensor w = uniform_tensor(op(a, b).shape(), rng);
    out.push_back(grad_check(name, [&] { return sum(mul(op(a, b), w)); }, {{"a", a}, {"b", b}}, opts));
  };

  for (const Reduction red : {Reduction::kSequential, Reduction::kCanonical}) {
    const std::string suffix = red == Reduction::kCanonical ? "/canonical" : "";
    binary("matmul" + suffix, leaf({2, 3, 4}, rng), leaf({4, 5}, rng),
           [red](const Tensor& a, const Tensor& b) { return matmul(a, b, red); });
    Tensor x = leaf({3, 6}, rng), g = leaf({6}, rng, 0.5, 1.5), b = leaf({6}, rng);
    const Tensor w = uniform_tensor({3, 6}, rng);
    out.push_back(grad_check("layer_norm" + suffix, [&] { return sum(mul(layer_norm(x, g, b, red), w)); },
                             {{"x", x}, {"gain", g}, {"bias", b}}, opts));
  }
  unary("transpose_last2", leaf({2, 3, 4}, rng), [](const Tensor& x) { return transpose_last2(x); });
  binary("grouped_linear", leaf({2, 3, 6}, rng), leaf({3, 2, 4}, rng),
         [](const Tensor& x, const Tensor& w) { return grouped_linear(x, w, 3); });

  binary("add", leaf({2, 3}, rng), leaf({3}, rng), [](const Tensor& a, const Tensor& b) { return add(a, b); });
  binary("sub", leaf({2, 1, 3}, rng), leaf({4, 1}, rng), [](const Tensor& a, const Tensor& b) { return sub(a, b); });
  binary("mul", leaf({2, 3}, rng), leaf({2, 1}, rng), [](const Tensor& a, const Tensor& b) { return mul(a, b); });
  binary("div", leaf({2, 3}, rng), signed_leaf({3}, rng, 0.5, 1.5),
         [](const Tensor& a, const Tensor& b) { return div(a, b); });
  unary("scale", leaf({4}, rng), [](const Tensor& x) { return scale(x, -2.5); });
  unary("add_scalar", leaf({4}, rng), [](const Tensor& x) { return add_scalar(x, 0.75); });
  unary("sigmoid", leaf({2, 4}, rng, -3, 3), [](const Tensor& x) { return sigmoid(x); });
  unary("log_sigmoid", leaf({2, 4}, rng, -3, 3), [](const Tensor& x) { return log_sigmoid(x); });
  unary("relu", signed_leaf({2, 4}, rng), [](const Tensor& x) { return relu(x); });
  unary("log", leaf({2, 4}, rng, 0.3, 2.0), [](const Tensor& x) { return log(x); });
  unary("abs", signed_leaf({2, 4}, rng), [](const Tensor& x) { return abs(x); });
  unary("square", leaf({2, 4}, rng), [](const Tensor& x) { return square(x); });
  {
    // The mask must be identical on every evaluation, so the stream is reseeded inside fn.
    const std::uint64_t mask_seed = rng.next();
    unary("dropout", leaf({3, 5}, rng), [mask_seed](const Tensor& x) {
      Rng r(mask_seed);
      return dropout(x, 0.3, true, r);
    });
  }

  {
    Tensor x = leaf({2, 3}, rng);
    out.push_back(grad_check("sum", [&] { return scale(sum(x), 1.3); }, {{"x", x}}, opts));
  }
  {
    Tensor x = leaf({2, 3}, rng);
    out.push_back(grad_check("mean", [&] { return scale(mean(x), 1.3); }, {{"x", x}}, opts));
  }
  {
    Tensor x = signed_leaf({2, 3}, rng);
    out.push_back(grad_check("frobenius_norm", [&] { return frobenius_norm(x); }, {{"x", x}}, opts));
  }
  unary("softmax_last", leaf({2, 5}, rng, -2, 2), [](const Tensor& x) { return softmax_last(x); });
  unary("bilinear_upsample", leaf({2, 3, 2, 3}, rng), [](const Tensor& x) { return bilinear_upsample(x, 7, 5); });

  unary("reshape", leaf({2, 6}, rng), [](const Tensor& x) { return reshape(x, {3, 4}); });
  unary("permute", leaf({2, 3, 4}, rng), [](const Tensor& x) { return permute(x, {2, 0, 1}); });
  unary("select", leaf({2, 3, 4}, rng), [](const Tensor& x) { return select(x, 1, 2); });
  unary("narrow", leaf({2, 5}, rng), [](const Tensor& x) { return narrow(x, 1, 1, 3); });
  binary("concat", leaf({2, 3}, rng), leaf({2, 2}, rng),
         [](const Tensor& a, const Tensor& b) { return concat({a, b, a}, 1); });
  unary("broadcast_to", leaf({3, 1}, rng), [](const Tensor& x) { return broadcast_to(x, {2, 3, 4}); });
  unary("gather", leaf({5}, rng), [](const Tensor& x) { return gather(x, {4, 0, 0, 2, 4, 1}, {2, 3}); });

  {
    Tensor logits = leaf({3, 4}, rng, -3, 3);
    const std::vector<double> target = random_values(12, rng, 0, 1);
    out.push_back(grad_check("sigmoid_focal_loss", [&] { return sigmoid_focal_loss(logits, target, 0.25, 2.0); },
                             {{"logits", logits}}, opts));
  }
  {
    Tensor logits = leaf({3, 4}, rng, -3, 3);
    const std::vector<double> target = random_values(12, rng, 0, 1);
    const std::vector<double> weight = random_values(12, rng, 0.1, 1);
    out.push_back(grad_check("bce_with_logits", [&] { return bce_with_logits(logits, target, weight); },
                             {{"logits", logits}}, opts));
  }
  return out;
}

GradReport stacked_path_gradient(std::uint64_t seed, const StackedPathDims& dims, GradCheckOptions options) {
  Rng rng(seed);
  const MaskDecoderDims md{16, 24, dims.channels, dims.candidates, 8, 4, 2};
  MaskDecoder decoder(md, rng);
  const std::size_t t = dims.frames, h = dims.height, w = dims.width;

  VisualPyramid pyramid;
  pyramid.f4 = {leaf({t, (h / 4) * (w / 4), md.c1}, rng), h / 4, w / 4};
  pyramid.f8 = {leaf({t, (h / 8) * (w / 8), md.c2}, rng), h / 8, w / 8};
  pyramid.f16 = {uniform_tensor({t, (h / 16) * (w / 16), 2 * md.c2}, rng), h / 16, w / 16};
  const std::size_t visual = (h / 16) * (w / 16);
  Tensor x_prime = leaf({t, visual + 3, md.width}, rng);
  DynamicKernels kernels;
  for (auto& z : kernels.z) z = leaf({t, md.candidates, md.kernel_width}, rng);
  const Tensor weight = uniform_tensor({t, md.candidates, h, w}, rng);

  // Subtracting the unperturbed output keeps the summed terms small, so the rounding error
  // of the final sum stays far below the finite-difference signal.
  const Tensor baseline(Shape{t, md.candidates, h, w},
                        decoder(pyramid, x_prime, visual, kernels, h, w).probs.values());
  auto fn = [&] { return sum(mul(sub(decoder(pyramid, x_prime, visual, kernels, h, w).probs, baseline), weight)); };
  std::vector<NamedTensor> inputs{{"x_prime", x_prime},
                                  {"f4", pyramid.f4.data},
                                  {"f8", pyramid.f8.data},
                                  {"z1", kernels.z[0]},
                                  {"z2", kernels.z[1]},
                                  {"z3", kernels.z[2]},
                                  {"w_proj", decoder.w_proj}};
  for (const auto* s : {&decoder.stage1, &decoder.stage2}) {
    const std::string p = s == &decoder.stage1 ? "stage1." : "stage2.";
    for (const auto& [name, tensor] :
         std::vector<NamedTensor>{{"w_query", s->w_query},     {"w_key", s->w_key},     {"w_value", s->w_value},
                                  {"w0", s->w0},               {"sffn_w1", s->sffn_w1}, {"sffn_b1", s->sffn_b1},
                                  {"sffn_w2", s->sffn_w2},     {"sffn_b2", s->sffn_b2}, {"ln_in.gain", s->ln_in.gain},
                                  {"ln_in.bias", s->ln_in.bias}, {"ln_out.gain", s->ln_out.gain},
                                  {"ln_out.bias", s->ln_out.bias}})
      inputs.emplace_back(p + name, tensor);
  }
  options.seed = seed;
  return grad_check("stacked_path", fn, inputs, options);
}

}  // namespace ftea
