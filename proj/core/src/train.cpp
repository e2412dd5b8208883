#include "ftea/train.hpp"

#include <cmath>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ftea {

namespace fs = std::filesystem;
using nlohmann::json;

AdamW::AdamW(ParamSet& params, const OptimConfig& config) : params_(&params), config_(config) {
  for (const auto& p : params.items()) {
    m_.emplace_back(p.value.numel(), 0.0);
    v_.emplace_back(p.value.numel(), 0.0);
  }
}

void AdamW::step(double main_lr, double encoder_lr) {
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  auto& items = params_->items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& p = items[i];
    if (!p.value.has_grad()) continue;
    const double lr = p.group == ParamGroup::kVisualEncoder ? encoder_lr : main_lr;
    auto w = p.value.data();
    const auto g = p.value.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    const double decay = 1.0 - lr * config_.weight_decay;
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      w[j] *= decay;
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
  }
}

double grad_norm(const ParamSet& params) {
  double total = 0.0;
  for (const auto& p : params.items()) {
    if (!p.value.has_grad()) continue;
    for (double g : p.value.grad()) total += g * g;
  }
  return std::sqrt(total);
}

double clip_grad_norm(ParamSet& params, double max_norm) {
  const double norm = grad_norm(params);
  if (!std::isfinite(norm)) {
    for (const auto& p : params.items()) {
      if (!p.value.has_grad()) continue;
      for (double g : p.value.grad()) {
        if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter " + p.name);
      }
    }
    throw NumericalError("gradient norm overflowed");
  }
  const double coef = max_norm / (norm + 1e-6);
  if (coef < 1.0) {
    for (auto& p : params.items()) {
      if (!p.value.has_grad()) continue;
      for (double& g : p.value.mutable_grad()) g *= coef;
    }
  }
  return norm;
}

std::string format_step(const StepLog& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.17g\t%.17g\t%.17g", s.step, s.mask, s.ref, s.div, s.total);
  return buf;
}

namespace {

void check_finite(double v, const char* component, std::size_t step) {
  if (!std::isfinite(v)) {
    throw NumericalError(std::string("non-finite ") + component + " loss at step " + std::to_string(step));
  }
}

// Fisher-Yates on the run's own stream, independent of the standard library's shuffle.
void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

TrainResult train(FteaModel& model, const std::vector<ClipSample>& clips, const TrainOptions& options) {
  if (clips.empty()) throw ContractError("train: empty dataset");
  const Config& cfg = model.config();
  const auto& d = cfg.dims;
  std::vector<ClipSample> data;
  for (const auto& c : clips) data.push_back(resize_clip(c, d.height, d.width_px));

  Rng rng = Rng::derived(cfg.seed, 0x7472616eULL);
  ParamSet& params = model.params();
  AdamW opt(params, cfg.optim);
  const std::size_t batch = cfg.optim.batch;
  const std::size_t per_epoch = (data.size() + batch - 1) / batch;
  const std::size_t total = options.max_steps != 0 ? options.max_steps : cfg.optim.epochs * per_epoch;

  std::ofstream log;
  if (!options.log_path.empty()) {
    log.open(options.log_path, std::ios::binary);
    if (!log) throw std::runtime_error("cannot write " + options.log_path);
  }

  TrainResult result;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const ForwardContext ctx{true, &rng};

  for (std::size_t step = 0; step < total; ++step) {
    const std::size_t epoch = step / per_epoch, slot = step % per_epoch;
    if (slot == 0) shuffle(order, rng);
    const double factor = epoch >= cfg.optim.drop_epoch ? 1.0 / cfg.optim.drop_factor : 1.0;

    const std::size_t begin = slot * batch, end = std::min(begin + batch, data.size());
    const double inv_b = 1.0 / static_cast<double>(end - begin);
    params.zero_grad();
    StepLog entry;
    entry.step = step;
    for (std::size_t b = begin; b < end; ++b) {
      const ClipSample& base = data[order[b]];
      const bool flip = rng.bernoulli(cfg.optim.flip_prob);
      ClipSample clip = flip ? flip_horizontal(base) : base;
      if (const auto s = static_cast<std::int64_t>(cfg.optim.max_shift); s > 0) {
        const auto dy = rng.integer(-s, s), dx = rng.integer(-s, s);
        clip = translate_clip(clip, dy, dx);
      }
      const Prediction p = model.forward(clip.frames_tensor(), tokenize(clip.query), ctx);
      const LossBreakdown loss =
          clip_losses(p.masks, p.ref_logits, p.kernels, model.w_div, clip.ground_truth(), cfg.loss);
      check_finite(loss.mask.item(), "mask", step);
      check_finite(loss.ref.item(), "referring", step);
      check_finite(loss.div.item(), "diversity", step);
      check_finite(loss.total.item(), "total", step);
      entry.mask += loss.mask.item() * inv_b;
      entry.ref += loss.ref.item() * inv_b;
      entry.div += loss.div.item() * inv_b;
      entry.total += loss.total.item() * inv_b;
      scale(loss.total, inv_b).backward();
    }
    clip_grad_norm(params, cfg.optim.clip_norm);
    entry.grad_norm = grad_norm(params);
    opt.step(cfg.optim.lr * factor, cfg.optim.encoder_lr * factor);

    if (log) log << format_step(entry) << '\n';
    if (options.on_step) options.on_step(entry);
    result.log.push_back(entry);
  }
  result.steps = total;
  result.rng_state = rng.state();
  return result;
}

// --- checkpoints -------------------------------------------------------------

void save_checkpoint(const std::string& dir, const FteaModel& model, const Checkpoint& meta) {
  fs::create_directories(dir);
  json manifest;
  manifest["config"] = write_config(model.config());
  manifest["step"] = meta.step;
  manifest["rng_state"] = meta.rng_state;
  manifest["tensors"] = json::array();
  std::ofstream bin(fs::path(dir) / "model.bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + (fs::path(dir) / "model.bin").string());
  std::size_t offset = 0;
  for (const auto& p : model.params().items()) {
    manifest["tensors"].push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}});
    const auto v = p.value.data();
    bin.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    offset += v.size();
  }
  std::ofstream man(fs::path(dir) / "manifest.json", std::ios::binary);
  man << manifest.dump(1) << '\n';
}

namespace {

json read_manifest(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!in) throw LoadError("cannot open " + (fs::path(dir) / "manifest.json").string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError(std::string("malformed checkpoint manifest: ") + e.what());
  }
}

}  // namespace

void load_parameters(const std::string& dir, FteaModel& model, Checkpoint* meta) {
  const json manifest = read_manifest(dir);
  std::ifstream bin(fs::path(dir) / "model.bin", std::ios::binary);
  if (!bin) throw LoadError("cannot open " + (fs::path(dir) / "model.bin").string());
  std::vector<char> raw((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (raw.size() % sizeof(double) != 0) throw LoadError("model.bin size is not a multiple of 8 bytes");
  std::vector<double> values(raw.size() / sizeof(double));
  std::memcpy(values.data(), raw.data(), raw.size());

  auto& items = model.params().items();
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != items.size()) {
    throw LoadError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model has " +
                    std::to_string(items.size()));
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& t = tensors[i];
    const auto name = t.at("name").get<std::string>();
    const auto shape = t.at("shape").get<Shape>();
    const auto offset = t.at("offset").get<std::size_t>();
    if (name != items[i].name || shape != items[i].value.shape()) {
      throw LoadError("checkpoint tensor " + name + " " + to_string(shape) + " does not match model tensor " +
                      items[i].name + " " + to_string(items[i].value.shape()));
    }
    auto dst = items[i].value.data();
    if (offset + dst.size() > values.size()) throw LoadError("model.bin is truncated at tensor " + name);
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.begin());
  }
  if (meta != nullptr) {
    meta->step = manifest.at("step").get<std::size_t>();
    meta->rng_state = manifest.at("rng_state").get<std::string>();
  }
}

FteaModel load_checkpoint(const std::string& dir, Checkpoint* meta) {
  const json manifest = read_manifest(dir);
  FteaModel model(read_config(manifest.at("config").get<std::string>()));
  load_parameters(dir, model, meta);
  return model;
}

}  // namespace ftea
