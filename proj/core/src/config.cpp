#include "ftea/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace ftea {

EncoderDims Config::encoder_dims() const {
  return {dims.c1, dims.c2, dims.c3, dims.text_width, dims.width, dims.max_tokens};
}

AlignmentDims Config::alignment_dims() const {
  return {dims.width, dims.heads, dims.ffn_hidden, dims.candidates, dims.kernel_width, dims.layers, dims.dropout};
}

MaskDecoderDims Config::decoder_dims() const {
  return {dims.c1, dims.c2, dims.width, dims.candidates, dims.kernel_width, dims.alpha, dims.alpha2};
}

void Config::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ContractError("config: " + what);
  };
  require(dims.height % 16 == 0 && dims.width_px % 16 == 0, "model.height and model.width_px must be multiples of 16");
  require(dims.frames >= 1, "model.frames must be positive");
  require(dims.heads >= 1 && dims.width % dims.heads == 0, "model.width must be divisible by model.heads");
  require(dims.width % 4 == 0, "model.width must be divisible by 4");
  require(dims.candidates >= 1, "model.candidates must be positive");
  require(dims.alpha >= 1 && dims.alpha2 >= 1, "model.alpha and model.alpha2 must be positive");
  require(dims.layers == 3, "model.layers must be 3 (one kernel head per decoder level)");
  require(dims.dropout >= 0.0 && dims.dropout < 1.0, "model.dropout must lie in [0, 1)");
  require(optim.batch >= 1, "optim.batch must be positive");
  require(optim.drop_factor > 0.0, "optim.drop_factor must be positive");
  require(optim.max_shift < std::min(dims.height, dims.width_px), "optim.max_shift must be smaller than the frame");
  require(data.min_objects >= 1 && data.min_objects <= data.max_objects, "data object range is empty");
  require(data.max_objects <= dims.candidates, "data.max_objects exceeds model.candidates");
  require(data.min_radius >= 1 && data.min_radius <= data.max_radius, "data radius range is empty");
  require(data.min_speed <= data.max_speed, "data speed range is empty");
  require(loss.dice >= 0 && loss.ref >= 0 && loss.focal >= 0 && loss.div >= 0 && loss.negative >= 0,
          "loss weights must be non-negative");
}

Config paper_preset() {
  Config c;
  c.preset = "paper";
  return c;
}

Config desk_preset() {
  Config c;
  c.preset = "desk";
  c.dims.c1 = 24;
  c.dims.c2 = 48;
  c.dims.c3 = 96;
  c.dims.text_width = 96;
  c.dims.width = 64;
  c.dims.kernel_width = 8;
  c.dims.candidates = 6;
  c.dims.heads = 8;
  c.dims.ffn_hidden = 256;
  c.dims.frames = 2;
  c.dims.height = 64;
  c.dims.width_px = 64;
  c.optim.lr = 1e-3;
  c.optim.encoder_lr = 5e-4;
  c.optim.epochs = 250;
  c.optim.drop_epoch = 200;
  c.data.clips = 4;
  return c;
}

Config preset(const std::string& name) {
  if (name == "paper") return paper_preset();
  if (name == "desk") return desk_preset();
  throw ContractError("unknown preset '" + name + "' (expected paper or desk)");
}

namespace {

struct Field {
  std::string section;
  std::string key;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t parse_size(const std::string& s, const std::string& key) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || s[0] == '-') throw ContractError("config: " + key + " expects an integer");
  return static_cast<std::size_t>(v);
}

double parse_double(const std::string& s, const std::string& key) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ContractError("config: " + key + " expects a number");
  return v;
}

template <typename Group>
void add_size(std::vector<Field>& out, const std::string& section, const std::string& key, Group Config::*group,
              std::size_t Group::*field) {
  out.push_back({section, key,
                 [=](Config& c, const std::string& v) { (c.*group).*field = parse_size(v, section + "." + key); },
                 [=](const Config& c) { return std::to_string((c.*group).*field); }});
}

template <typename Group>
void add_double(std::vector<Field>& out, const std::string& section, const std::string& key, Group Config::*group,
                double Group::*field) {
  out.push_back({section, key,
                 [=](Config& c, const std::string& v) { (c.*group).*field = parse_double(v, section + "." + key); },
                 [=](const Config& c) { return format_double((c.*group).*field); }});
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    const auto m = &Config::dims;
    add_size(f, "model", "c1", m, &ModelDims::c1);
    add_size(f, "model", "c2", m, &ModelDims::c2);
    add_size(f, "model", "c3", m, &ModelDims::c3);
    add_size(f, "model", "text_width", m, &ModelDims::text_width);
    add_size(f, "model", "width", m, &ModelDims::width);
    add_size(f, "model", "kernel_width", m, &ModelDims::kernel_width);
    add_size(f, "model", "candidates", m, &ModelDims::candidates);
    add_size(f, "model", "alpha", m, &ModelDims::alpha);
    add_size(f, "model", "alpha2", m, &ModelDims::alpha2);
    add_size(f, "model", "heads", m, &ModelDims::heads);
    add_size(f, "model", "ffn_hidden", m, &ModelDims::ffn_hidden);
    add_size(f, "model", "layers", m, &ModelDims::layers);
    add_size(f, "model", "frames", m, &ModelDims::frames);
    add_size(f, "model", "height", m, &ModelDims::height);
    add_size(f, "model", "width_px", m, &ModelDims::width_px);
    add_size(f, "model", "max_tokens", m, &ModelDims::max_tokens);
    add_double(f, "model", "dropout", m, &ModelDims::dropout);

    const auto l = &Config::loss;
    add_double(f, "loss", "dice", l, &LossWeights::dice);
    add_double(f, "loss", "ref", l, &LossWeights::ref);
    add_double(f, "loss", "focal", l, &LossWeights::focal);
    add_double(f, "loss", "div", l, &LossWeights::div);
    add_double(f, "loss", "negative", l, &LossWeights::negative);
    add_double(f, "loss", "dice_eps", l, &LossWeights::dice_eps);
    add_double(f, "loss", "focal_alpha", l, &LossWeights::focal_alpha);
    add_double(f, "loss", "focal_gamma", l, &LossWeights::focal_gamma);

    const auto o = &Config::optim;
    add_double(f, "optim", "lr", o, &OptimConfig::lr);
    add_double(f, "optim", "encoder_lr", o, &OptimConfig::encoder_lr);
    add_double(f, "optim", "weight_decay", o, &OptimConfig::weight_decay);
    add_double(f, "optim", "clip_norm", o, &OptimConfig::clip_norm);
    add_double(f, "optim", "beta1", o, &OptimConfig::beta1);
    add_double(f, "optim", "beta2", o, &OptimConfig::beta2);
    add_double(f, "optim", "eps", o, &OptimConfig::eps);
    add_size(f, "optim", "epochs", o, &OptimConfig::epochs);
    add_size(f, "optim", "drop_epoch", o, &OptimConfig::drop_epoch);
    add_double(f, "optim", "drop_factor", o, &OptimConfig::drop_factor);
    add_size(f, "optim", "batch", o, &OptimConfig::batch);
    add_double(f, "optim", "flip_prob", o, &OptimConfig::flip_prob);
    add_size(f, "optim", "max_shift", o, &OptimConfig::max_shift);

    const auto d = &Config::data;
    add_size(f, "data", "clips", d, &DataConfig::clips);
    add_size(f, "data", "min_objects", d, &DataConfig::min_objects);
    add_size(f, "data", "max_objects", d, &DataConfig::max_objects);
    add_size(f, "data", "min_radius", d, &DataConfig::min_radius);
    add_size(f, "data", "max_radius", d, &DataConfig::max_radius);
    add_size(f, "data", "min_speed", d, &DataConfig::min_speed);
    add_size(f, "data", "max_speed", d, &DataConfig::max_speed);

    f.push_back({"run", "preset", [](Config& c, const std::string& v) { c.preset = v; },
                 [](const Config& c) { return c.preset; }});
    f.push_back({"run", "seed",
                 [](Config& c, const std::string& v) { c.seed = static_cast<std::uint64_t>(parse_size(v, "run.seed")); },
                 [](const Config& c) { return std::to_string(c.seed); }});
    return f;
  }();
  return table;
}

}  // namespace

std::string write_config(const Config& config) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << f.get(config) << '\n';
  }
  return os.str();
}

Config read_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ContractError(std::string("config: ") + e.what());
  }
  std::string base = "paper";
  if (auto run = tree.get_child_optional("run")) {
    if (auto p = run->get_optional<std::string>("preset")) base = *p;
  }
  Config config = preset(base);
  for (const auto& [section, keys] : tree) {
    if (keys.empty() && !keys.data().empty()) {
      throw ContractError("config: key '" + section + "' outside a section");
    }
    for (const auto& [key, value] : keys) {
      const Field* match = nullptr;
      for (const auto& f : fields()) {
        if (f.section == section && f.key == key) match = &f;
      }
      if (match == nullptr) throw ContractError("config: unknown key " + section + "." + key);
      match->set(config, value.data());
    }
  }
  config.validate();
  return config;
}

Config load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return read_config(ss.str());
}

void save_config_file(const Config& config, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write config " + path);
  out << write_config(config);
}

}  // namespace ftea
