#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ftea/model.hpp"

namespace ftea {

/// Raised when a loss term or gradient stops being finite.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decoupled-weight-decay Adam over a ParamSet with one learning rate per group.
class AdamW {
 public:
  AdamW(ParamSet& params, const OptimConfig& config);

  /// Applies one update from the gradients currently stored on the parameters.
  void step(double main_lr, double encoder_lr);
  std::size_t steps() const { return steps_; }

 private:
  ParamSet* params_;
  OptimConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t steps_ = 0;
};

/// Scales all gradients so their global L2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(ParamSet& params, double max_norm);
double grad_norm(const ParamSet& params);

struct StepLog {
  std::size_t step = 0;
  double mask = 0, ref = 0, div = 0, total = 0;
  double grad_norm = 0;  // after clipping
};

/// Tab-separated "step mask ref div total" line with round-trip precision.
std::string format_step(const StepLog& s);

struct TrainOptions {
  /// Stops after this many steps when non-zero; otherwise runs config.optim.epochs epochs.
  std::size_t max_steps = 0;
  std::string log_path;  // written when non-empty
  std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
  std::vector<StepLog> log;
  std::size_t steps = 0;
  std::string rng_state;
};

/// Mini-batch training with flip augmentation, clipping and the step-decay schedule.
TrainResult train(FteaModel& model, const std::vector<ClipSample>& clips, const TrainOptions& options = {});

// --- checkpoints -------------------------------------------------------------

class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::size_t step = 0;
  std::string rng_state;
};

/// Writes model.bin (raw float64 values in parameter order) and manifest.json into `dir`.
void save_checkpoint(const std::string& dir, const FteaModel& model, const Checkpoint& meta);

/// Rebuilds the model from the stored config and overwrites every parameter.
FteaModel load_checkpoint(const std::string& dir, Checkpoint* meta = nullptr);

/// Loads parameters into an existing model; names and shapes must match exactly.
void load_parameters(const std::string& dir, FteaModel& model, Checkpoint* meta = nullptr);

}  // namespace ftea
