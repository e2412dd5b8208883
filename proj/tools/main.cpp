#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ftea/grad_suite.hpp"
#include "ftea/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace ftea;

namespace {

constexpr double kGradTolerance = 1e-4;

struct CommonOptions {
  std::string config_path;
  std::string preset = "desk";
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "Config file (INI); overrides --preset");
  cmd->add_option("--preset", o.preset, "Named preset")->check(CLI::IsMember({"paper", "desk"}));
  cmd->add_option("--seed", o.seed, "Run seed");
}

Config resolve_config(const CommonOptions& o) {
  Config c = o.config_path.empty() ? preset(o.preset) : load_config_file(o.config_path);
  if (o.seed) c.seed = *o.seed;
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// Prints one line per check and returns true when all are within tolerance.
bool run_gradcheck(std::uint64_t seed) {
  bool ok = true;
  auto report = [&](const GradReport& r) {
    const bool pass = r.max_rel_error <= kGradTolerance;
    ok = ok && pass;
    std::printf("%-24s %.3e %s\n", r.op.c_str(), r.max_rel_error, pass ? "ok" : "FAIL");
  };
  for (const GradReport& r : op_gradient_suite(seed)) report(r);
  report(stacked_path_gradient(seed));
  return ok;
}

int cmd_gen_data(const CommonOptions& common, const std::string& out, std::optional<std::size_t> clips) {
  Config c = resolve_config(common);
  GeneratorSpec spec = GeneratorSpec::from_config(c);
  if (clips) spec.clips = *clips;
  const auto data = generate_synthetic(spec, c.seed);
  save_dataset(out, data);
  std::printf("wrote %zu clips to %s\n", data.size(), out.c_str());
  return 0;
}

int cmd_train(const CommonOptions& common, const std::string& data_dir, const std::string& out, std::size_t steps) {
  const Config c = resolve_config(common);
  const auto data = load_dataset(data_dir);
  FteaModel model(c);
  TrainOptions opts;
  opts.max_steps = steps;
  opts.log_path = (fs::path(out) / "train_log.tsv").string();
  fs::create_directories(out);
  opts.on_step = [](const StepLog& s) {
    if (s.step % 50 == 0) std::printf("step %zu total %.4f\n", s.step, s.total);
  };
  const TrainResult r = train(model, data, opts);
  save_checkpoint(out, model, {r.steps, r.rng_state});
  std::printf("trained %zu steps; checkpoint in %s\n", r.steps, out.c_str());
  return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& clip_dir, const std::string& query,
              const std::string& out) {
  const FteaModel model = load_checkpoint(checkpoint);
  ClipSample clip = load_clip(clip_dir);
  if (!query.empty()) clip.query = query;
  const InferenceResult r = infer(model, clip);
  nlohmann::json j;
  j["query"] = clip.query;
  j["candidate"] = r.candidate;
  j["confidence"] = r.confidence;
  j["masks"] = nlohmann::json::array();
  for (const Mask& m : r.masks) j["masks"].push_back(nlohmann::json::parse(encode_rle(m)));
  if (out.empty()) {
    std::cout << j.dump(1) << '\n';
  } else {
    write_text(out, j.dump(1) + "\n");
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& out) {
  const FteaModel model = load_checkpoint(checkpoint);
  const std::string text = serialize(evaluate_dataset(model, load_dataset(data_dir)));
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text(out, text);
  }
  return 0;
}

// Quick end-to-end smoke run: gradients, a short training run, checkpoint round trip and evaluation.
int cmd_selftest(const CommonOptions& common) {
  CommonOptions o = common;
  o.preset = "desk";
  Config c = resolve_config(o);
  c.dims.height = c.dims.width_px = 32;
  const bool grads = run_gradcheck(c.seed);

  GeneratorSpec spec = GeneratorSpec::from_config(c);
  spec.clips = 2;
  const auto data = generate_synthetic(spec, c.seed);
  FteaModel model(c);
  TrainOptions opts;
  opts.max_steps = 4;
  const TrainResult r = train(model, data, opts);
  const fs::path dir = fs::temp_directory_path() / ("ftea_selftest_" + std::to_string(c.seed));
  save_checkpoint(dir.string(), model, {r.steps, r.rng_state});
  const FteaModel loaded = load_checkpoint(dir.string());
  fs::remove_all(dir);
  const bool round_trip = infer(model, data[0]).masks == infer(loaded, data[0]).masks;
  std::printf("training: %zu steps, final total %.4f\n", r.steps, r.log.back().total);
  std::printf("checkpoint round trip: %s\n", round_trip ? "ok" : "FAIL");
  std::printf("%s", serialize(evaluate_dataset(loaded, data)).c_str());
  const bool ok = grads && round_trip && std::isfinite(r.log.back().total);
  std::printf("selftest %s\n", ok ? "passed" : "FAILED");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Referring video object segmentation on synthetic clips"};
  app.require_subcommand(1);

  CommonOptions common;
  std::string out, data_dir, checkpoint, clip_dir, query;
  std::optional<std::size_t> clips;
  std::size_t steps = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  add_common(gen, common);
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--clips", clips, "Number of clips (default from config)");

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(tr, common);
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--out", out, "Checkpoint directory")->required();
  tr->add_option("--steps", steps, "Stop after this many steps (default: configured epochs)");

  auto* inf = app.add_subcommand("infer", "Segment the referred object in one clip");
  inf->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  inf->add_option("--clip", clip_dir, "Clip directory")->required();
  inf->add_option("--query", query, "Referring expression (default: the clip's query.txt)");
  inf->add_option("--out", out, "Output JSON file (default: stdout)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--out", out, "Report file (default: stdout)");

  auto* gc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  std::uint64_t grad_seed = 0;
  gc->add_option("--seed", grad_seed, "Seed of the random inputs");

  auto* st = app.add_subcommand("selftest", "Short end-to-end smoke run");
  add_common(st, common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(common, out, clips);
    if (*tr) return cmd_train(common, data_dir, out, steps);
    if (*inf) return cmd_infer(checkpoint, clip_dir, query, out);
    if (*ev) return cmd_eval(checkpoint, data_dir, out);
    if (*gc) return run_gradcheck(grad_seed) ? 0 : 1;
    if (*st) return cmd_selftest(common);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
