#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "ftea/alignment.hpp"
#include "ftea/encoders.hpp"
#include "ftea/losses.hpp"
#include "ftea/stacked_decoder.hpp"

namespace ftea {

struct ModelDims {
  std::size_t c1 = 96;
  std::size_t c2 = 192;
  std::size_t c3 = 384;
  std::size_t text_width = 768;  // C'
  std::size_t width = 256;       // C
  std::size_t kernel_width = 8;  // C0
  std::size_t candidates = 50;   // K
  std::size_t alpha = 4;
  std::size_t alpha2 = 2;
  std::size_t heads = 8;
  std::size_t ffn_hidden = 1024;
  std::size_t layers = 3;
  std::size_t frames = 8;  // T
  std::size_t height = 320;
  std::size_t width_px = 576;
  std::size_t max_tokens = 32;  // S_max
  double dropout = 0.1;
};

struct OptimConfig {
  double lr = 1e-4;
  double encoder_lr = 5e-5;
  double weight_decay = 1e-4;
  double clip_norm = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 12;
  std::size_t drop_epoch = 8;
  double drop_factor = 2.5;
  std::size_t batch = 2;
  double flip_prob = 0.5;
  std::size_t max_shift = 0;  // random translation of up to this many pixels per axis; 0 disables it
};

/// Synthetic generator settings.
struct DataConfig {
  std::size_t clips = 64;
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
  std::size_t min_radius = 7;
  std::size_t max_radius = 11;
  std::size_t min_speed = 2;
  std::size_t max_speed = 5;
};

struct Config {
  std::string preset = "paper";
  ModelDims dims;
  LossWeights loss;
  OptimConfig optim;
  DataConfig data;
  std::uint64_t seed = 0;

  EncoderDims encoder_dims() const;
  AlignmentDims alignment_dims() const;
  MaskDecoderDims decoder_dims() const;

  /// Throws ContractError naming the first inconsistent field.
  void validate() const;
};

/// Full-size defaults.
Config paper_preset();
/// Small profile that trains on one CPU core in minutes.
Config desk_preset();
/// Looks up a preset by name ("paper" or "desk").
Config preset(const std::string& name);

/// INI text with sections [model], [loss], [optim], [data], [run]; every field is written.
std::string write_config(const Config& config);
/// Starts from the preset named in [run] (default "paper") and overrides the keys present.
/// Unknown sections or keys are rejected.
Config read_config(const std::string& text);

Config load_config_file(const std::string& path);
void save_config_file(const Config& config, const std::string& path);

}  // namespace ftea
