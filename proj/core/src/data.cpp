#include "ftea/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ftea/encoders.hpp"
#include "json.hpp"

namespace ftea {

namespace fs = std::filesystem;
using nlohmann::json;

std::string motion_word(Motion m) {
  switch (m) {
    case Motion::kLeft: return "left";
    case Motion::kRight: return "right";
    case Motion::kUp: return "up";
    case Motion::kDown: return "down";
    case Motion::kStill: return "still";
  }
  return "still";
}

Motion parse_motion(const std::string& word) {
  for (Motion m : {Motion::kLeft, Motion::kRight, Motion::kUp, Motion::kDown, Motion::kStill}) {
    if (motion_word(m) == word) return m;
  }
  throw GenerationError("unknown motion word '" + word + "'");
}

Rgb color_value(const std::string& name) {
  if (name == "red") return {220, 40, 40};
  if (name == "green") return {40, 200, 60};
  if (name == "blue") return {50, 90, 235};
  if (name == "yellow") return {230, 215, 40};
  if (name == "white") return {240, 240, 240};
  if (name == "purple") return {150, 60, 200};
  if (name == "orange") return {240, 140, 30};
  throw GenerationError("unknown colour '" + name + "'");
}

std::size_t Attributes::shared_with(const Attributes& other) const {
  return (shape == other.shape ? 1u : 0u) + (color == other.color ? 1u : 0u) + (motion == other.motion ? 1u : 0u);
}

std::string make_query(const Attributes& a) {
  return "the " + a.color + " " + a.shape + " moving " + motion_word(a.motion);
}

Attributes parse_query(const std::string& query) {
  const auto tokens = tokenize(query);
  if (tokens.size() != 5 || tokens[0] != "the" || tokens[3] != "moving") {
    throw GenerationError("query '" + query + "' does not follow the generator template");
  }
  return {tokens[2], tokens[1], parse_motion(tokens[4])};
}

namespace {

std::pair<double, double> direction(Motion m) {
  switch (m) {
    case Motion::kLeft: return {-1.0, 0.0};
    case Motion::kRight: return {1.0, 0.0};
    case Motion::kUp: return {0.0, -1.0};
    case Motion::kDown: return {0.0, 1.0};
    case Motion::kStill: return {0.0, 0.0};
  }
  return {0.0, 0.0};
}

bool inside(const std::string& shape, double dx, double dy, double r) {
  if (shape == "circle") return dx * dx + dy * dy <= r * r;
  if (shape == "square") {
    const double half = 0.85 * r;
    return std::abs(dx) <= half && std::abs(dy) <= half;
  }
  if (shape == "triangle") {
    // Apex at the top, base of width 2r at the bottom.
    if (dy < -r || dy > r) return false;
    return std::abs(dx) <= (dy + r) / 2.0;
  }
  throw GenerationError("unknown shape '" + shape + "'");
}

}  // namespace

Mask rasterize(const ObjectTrack& o, std::size_t t, std::size_t height, std::size_t width) {
  const auto [ux, uy] = direction(o.attrs.motion);
  const double cx = o.cx + ux * o.speed * static_cast<double>(t);
  const double cy = o.cy + uy * o.speed * static_cast<double>(t);
  Mask m(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
      if (inside(o.attrs.shape, dx, dy, o.radius)) m.at(y, x) = 1;
    }
  }
  return m;
}

Tensor ClipSample::frames_tensor() const {
  std::vector<double> v(rgb.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) v[i] = static_cast<double>(rgb[i]) / 255.0;
  return Tensor({frames, height, width, 3}, std::move(v));
}

GroundTruth ClipSample::ground_truth() const {
  std::vector<double> m(frames * height * width);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < height * width; ++i) m[t * height * width + i] = masks[t].data[i];
  }
  return {Tensor({1, frames, height, width}, std::move(m)), Tensor({1, frames}, flags)};
}

GeneratorSpec GeneratorSpec::from_config(const Config& config) {
  GeneratorSpec s;
  s.clips = config.data.clips;
  s.frames = config.dims.frames;
  s.height = config.dims.height;
  s.width = config.dims.width_px;
  s.min_objects = config.data.min_objects;
  s.max_objects = config.data.max_objects;
  s.min_radius = config.data.min_radius;
  s.max_radius = config.data.max_radius;
  s.min_speed = config.data.min_speed;
  s.max_speed = config.data.max_speed;
  return s;
}

ClipSample generate_clip(const GeneratorSpec& spec, std::uint64_t seed, std::size_t index) {
  if (spec.min_objects < 1 || spec.min_objects > spec.max_objects) throw GenerationError("empty object count range");
  std::vector<Attributes> all;
  for (const auto& s : spec.vocab.shapes)
    for (const auto& c : spec.vocab.colors)
      for (Motion m : spec.vocab.motions) all.push_back({s, c, m});
  if (all.empty()) throw GenerationError("empty attribute vocabulary");

  Rng rng = Rng::derived(seed, index);
  const Attributes target = all[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(all.size()) - 1))];
  std::vector<Attributes> pool;
  for (const auto& a : all) {
    if (a.shared_with(target) <= 1) pool.push_back(a);
  }
  if (pool.size() + 1 < spec.max_objects) {
    throw GenerationError("vocabulary admits only " + std::to_string(pool.size()) +
                          " distractors sharing at most one attribute with a target; " +
                          std::to_string(spec.max_objects - 1) + " needed");
  }
  const auto count = static_cast<std::size_t>(
      rng.integer(static_cast<std::int64_t>(spec.min_objects), static_cast<std::int64_t>(spec.max_objects)));
  std::vector<Attributes> attrs{target};
  for (std::size_t i = 1; i < count; ++i) {
    const auto pick = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(pool.size()) - 1));
    attrs.push_back(pool[pick]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  // Random drawing order so the referred object is not always painted first.
  const auto target_slot = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(count) - 1));
  std::swap(attrs[0], attrs[target_slot]);

  const double h = static_cast<double>(spec.height), w = static_cast<double>(spec.width);
  std::vector<ObjectTrack> tracks;
  for (const auto& a : attrs) {
    ObjectTrack best;
    double best_gap = -1e300;
    // Rejection sampling for tracks that never overlap; the least-overlapping draw is kept otherwise.
    for (int attempt = 0; attempt < 200; ++attempt) {
      ObjectTrack o;
      o.attrs = a;
      o.radius = static_cast<double>(
          rng.integer(static_cast<std::int64_t>(spec.min_radius), static_cast<std::int64_t>(spec.max_radius)));
      o.speed = a.motion == Motion::kStill
                    ? 0.0
                    : static_cast<double>(rng.integer(static_cast<std::int64_t>(std::max<std::size_t>(spec.min_speed, 1)),
                                                      static_cast<std::int64_t>(std::max<std::size_t>(spec.max_speed, 1))));
      o.cx = rng.uniform(o.radius, std::max(o.radius, w - o.radius));
      o.cy = rng.uniform(o.radius, std::max(o.radius, h - o.radius));
      double gap = 1e300;
      for (const auto& other : tracks) {
        const auto [ax, ay] = direction(o.attrs.motion);
        const auto [bx, by] = direction(other.attrs.motion);
        for (std::size_t t = 0; t < spec.frames; ++t) {
          const double td = static_cast<double>(t);
          const double dx = (o.cx + ax * o.speed * td) - (other.cx + bx * other.speed * td);
          const double dy = (o.cy + ay * o.speed * td) - (other.cy + by * other.speed * td);
          gap = std::min(gap, std::sqrt(dx * dx + dy * dy) - o.radius - other.radius - 2.0);
        }
      }
      if (gap > best_gap) {
        best_gap = gap;
        best = o;
      }
      if (gap >= 0.0) break;
    }
    tracks.push_back(best);
  }

  ClipSample clip;
  char id[32];
  std::snprintf(id, sizeof id, "clip_%04zu", index);
  clip.id = id;
  clip.frames = spec.frames;
  clip.height = spec.height;
  clip.width = spec.width;
  clip.rgb.assign(spec.frames * spec.height * spec.width * 3, 0);
  clip.target = target;
  clip.objects = attrs;
  clip.query = make_query(target);
  const std::size_t px = spec.height * spec.width;
  for (std::size_t t = 0; t < spec.frames; ++t) {
    std::vector<int> owner(px, -1);
    for (std::size_t o = 0; o < tracks.size(); ++o) {
      const Mask m = rasterize(tracks[o], t, spec.height, spec.width);
      const Rgb c = color_value(tracks[o].attrs.color);
      for (std::size_t i = 0; i < px; ++i) {
        if (!m.data[i]) continue;
        owner[i] = static_cast<int>(o);
        std::uint8_t* dst = clip.rgb.data() + (t * px + i) * 3;
        dst[0] = c.r;
        dst[1] = c.g;
        dst[2] = c.b;
      }
    }
    Mask gt(spec.height, spec.width);
    for (std::size_t i = 0; i < px; ++i) gt.data[i] = owner[i] == static_cast<int>(target_slot) ? 1 : 0;
    clip.flags.push_back(gt.area() > 0 ? 1.0 : 0.0);
    clip.masks.push_back(std::move(gt));
  }
  return clip;
}

std::vector<ClipSample> generate_synthetic(const GeneratorSpec& spec, std::uint64_t seed) {
  std::vector<ClipSample> out;
  out.reserve(spec.clips);
  for (std::size_t i = 0; i < spec.clips; ++i) out.push_back(generate_clip(spec, seed, i));
  return out;
}

ClipSample flip_horizontal(const ClipSample& clip) {
  ClipSample out = clip;
  const std::size_t h = clip.height, w = clip.width;
  for (std::size_t t = 0; t < clip.frames; ++t) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t src = ((t * h + y) * w + (w - 1 - x)) * 3, dst = ((t * h + y) * w + x) * 3;
        std::copy_n(clip.rgb.begin() + static_cast<std::ptrdiff_t>(src), 3,
                    out.rgb.begin() + static_cast<std::ptrdiff_t>(dst));
        out.masks[t].at(y, x) = clip.masks[t].at(y, w - 1 - x);
      }
    }
  }
  std::istringstream is(clip.query);
  std::string word, query;
  while (is >> word) {
    if (word == "left") {
      word = "right";
    } else if (word == "right") {
      word = "left";
    }
    query += (query.empty() ? "" : " ") + word;
  }
  out.query = query;
  auto mirror = [](Attributes& a) {
    if (a.motion == Motion::kLeft) {
      a.motion = Motion::kRight;
    } else if (a.motion == Motion::kRight) {
      a.motion = Motion::kLeft;
    }
  };
  mirror(out.target);
  for (auto& a : out.objects) mirror(a);
  return out;
}

ClipSample translate_clip(const ClipSample& clip, long dy, long dx) {
  ClipSample out = clip;
  const long h = static_cast<long>(clip.height), w = static_cast<long>(clip.width);
  std::fill(out.rgb.begin(), out.rgb.end(), std::uint8_t{0});
  for (std::size_t t = 0; t < clip.frames; ++t) {
    Mask& m = out.masks[t];
    std::fill(m.data.begin(), m.data.end(), std::uint8_t{0});
    for (long y = std::max(0L, dy); y < std::min(h, h + dy); ++y) {
      for (long x = std::max(0L, dx); x < std::min(w, w + dx); ++x) {
        const auto src = static_cast<std::size_t>((static_cast<long>(t) * h + y - dy) * w + x - dx);
        const auto dst = static_cast<std::size_t>((static_cast<long>(t) * h + y) * w + x);
        std::copy_n(clip.rgb.begin() + static_cast<std::ptrdiff_t>(src * 3), 3,
                    out.rgb.begin() + static_cast<std::ptrdiff_t>(dst * 3));
        m.data[dst - t * clip.height * clip.width] = clip.masks[t].data[src - t * clip.height * clip.width];
      }
    }
    out.flags[t] = m.area() > 0 ? 1.0 : 0.0;
  }
  return out;
}

// --- files -----------------------------------------------------------------

void write_ppm(const std::string& path, std::size_t height, std::size_t width, const std::uint8_t* rgb) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P6\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb), static_cast<std::streamsize>(height * width * 3));
}

std::vector<std::uint8_t> read_ppm(const std::string& path, std::size_t& height, std::size_t& width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  auto next_token = [&]() {
    std::string tok;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(ch);
    }
    return tok;
  };
  if (next_token() != "P6") throw std::runtime_error(path + " is not a binary PPM (P6)");
  width = std::stoul(next_token());
  height = std::stoul(next_token());
  if (next_token() != "255") throw std::runtime_error(path + ": only 8-bit PPM is supported");
  std::vector<std::uint8_t> rgb(height * width * 3);
  in.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (static_cast<std::size_t>(in.gcount()) != rgb.size()) throw std::runtime_error(path + ": truncated pixel data");
  return rgb;
}

namespace {

json rle_json(const Mask& m) {
  std::vector<std::size_t> starts, lengths;
  for (std::size_t i = 0; i < m.data.size();) {
    if (!m.data[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < m.data.size() && m.data[j]) ++j;
    starts.push_back(i);
    lengths.push_back(j - i);
    i = j;
  }
  return {{"height", m.height}, {"width", m.width}, {"starts", starts}, {"lengths", lengths}};
}

Mask rle_mask(const json& j) {
  Mask m(j.at("height").get<std::size_t>(), j.at("width").get<std::size_t>());
  const auto starts = j.at("starts").get<std::vector<std::size_t>>();
  const auto lengths = j.at("lengths").get<std::vector<std::size_t>>();
  if (starts.size() != lengths.size()) throw std::runtime_error("RLE: starts and lengths differ in length");
  for (std::size_t r = 0; r < starts.size(); ++r) {
    if (starts[r] + lengths[r] > m.data.size()) throw std::runtime_error("RLE: run exceeds the mask");
    std::fill_n(m.data.begin() + static_cast<std::ptrdiff_t>(starts[r]), lengths[r], 1);
  }
  return m;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

std::string frame_name(std::size_t t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%02zu.ppm", t);
  return buf;
}

}  // namespace

std::string encode_rle(const Mask& m) { return rle_json(m).dump(); }

Mask decode_rle(const std::string& json_text) { return rle_mask(json::parse(json_text)); }

void save_dataset(const std::string& dir, const std::vector<ClipSample>& clips) {
  fs::create_directories(dir);
  json manifest;
  manifest["clips"] = json::array();
  for (const auto& c : clips) {
    const fs::path cdir = fs::path(dir) / c.id;
    fs::create_directories(cdir);
    const std::size_t frame_bytes = c.height * c.width * 3;
    for (std::size_t t = 0; t < c.frames; ++t) {
      write_ppm((cdir / frame_name(t)).string(), c.height, c.width, c.rgb.data() + t * frame_bytes);
    }
    write_text(cdir / "query.txt", c.query + "\n");
    json gt;
    gt["flags"] = c.flags;
    gt["masks"] = json::array();
    for (const auto& m : c.masks) gt["masks"].push_back(rle_json(m));
    gt["target"] = {{"shape", c.target.shape}, {"color", c.target.color}, {"motion", motion_word(c.target.motion)}};
    write_text(cdir / "gt.json", gt.dump(1) + "\n");
    manifest["clips"].push_back({{"id", c.id}, {"frames", c.frames}, {"height", c.height}, {"width", c.width}});
  }
  write_text(fs::path(dir) / "manifest.json", manifest.dump(1) + "\n");
}

ClipSample load_clip(const std::string& dir) {
  ClipSample c;
  c.id = fs::path(dir).filename().string();
  for (std::size_t t = 0;; ++t) {
    const fs::path p = fs::path(dir) / frame_name(t);
    if (!fs::exists(p)) break;
    std::size_t h = 0, w = 0;
    auto rgb = read_ppm(p.string(), h, w);
    if (t == 0) {
      c.height = h;
      c.width = w;
    } else if (h != c.height || w != c.width) {
      throw std::runtime_error(p.string() + ": frame size differs from the first frame");
    }
    c.rgb.insert(c.rgb.end(), rgb.begin(), rgb.end());
    c.frames = t + 1;
  }
  if (c.frames == 0) throw std::runtime_error(dir + " contains no frame_00.ppm");
  std::string q = read_text(fs::path(dir) / "query.txt");
  while (!q.empty() && (q.back() == '\n' || q.back() == '\r')) q.pop_back();
  c.query = q;
  return c;
}

std::vector<ClipSample> load_dataset(const std::string& dir) {
  const json manifest = json::parse(read_text(fs::path(dir) / "manifest.json"));
  std::vector<ClipSample> out;
  for (const auto& entry : manifest.at("clips")) {
    const fs::path cdir = fs::path(dir) / entry.at("id").get<std::string>();
    ClipSample c = load_clip(cdir.string());
    const json gt = json::parse(read_text(cdir / "gt.json"));
    c.flags = gt.at("flags").get<std::vector<double>>();
    for (const auto& m : gt.at("masks")) c.masks.push_back(rle_mask(m));
    const auto& tg = gt.at("target");
    c.target = {tg.at("shape").get<std::string>(), tg.at("color").get<std::string>(),
                parse_motion(tg.at("motion").get<std::string>())};
    if (c.masks.size() != c.frames || c.flags.size() != c.frames) {
      throw std::runtime_error(cdir.string() + ": ground truth does not cover every frame");
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<std::uint8_t> resize_rgb(const std::vector<std::uint8_t>& rgb, std::size_t frames, std::size_t h,
                                     std::size_t w, std::size_t out_h, std::size_t out_w) {
  std::vector<std::uint8_t> out(frames * out_h * out_w * 3);
  auto src_coord = [](std::size_t i, std::size_t in, std::size_t outn) {
    const double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t y = 0; y < out_h; ++y) {
      const double sy = src_coord(y, h, out_h);
      const auto y0 = static_cast<std::size_t>(sy);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t x = 0; x < out_w; ++x) {
        const double sx = src_coord(x, w, out_w);
        const auto x0 = static_cast<std::size_t>(sx);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const double fx = sx - static_cast<double>(x0);
        for (std::size_t ch = 0; ch < 3; ++ch) {
          auto at = [&](std::size_t yy, std::size_t xx) {
            return static_cast<double>(rgb[((t * h + yy) * w + xx) * 3 + ch]);
          };
          const double top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
          const double bot = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
          const double v = top + (bot - top) * fy;
          out[((t * out_h + y) * out_w + x) * 3 + ch] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
      }
    }
  }
  return out;
}

Mask resize_nearest(const Mask& m, std::size_t out_h, std::size_t out_w) {
  Mask out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = std::min(m.height - 1, y * m.height / out_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = std::min(m.width - 1, x * m.width / out_w);
      out.at(y, x) = m.at(sy, sx);
    }
  }
  return out;
}

ClipSample resize_clip(const ClipSample& clip, std::size_t out_h, std::size_t out_w) {
  if (clip.height == out_h && clip.width == out_w) return clip;
  ClipSample out = clip;
  out.rgb = resize_rgb(clip.rgb, clip.frames, clip.height, clip.width, out_h, out_w);
  out.height = out_h;
  out.width = out_w;
  for (auto& m : out.masks) m = resize_nearest(m, out_h, out_w);
  for (std::size_t t = 0; t < out.masks.size(); ++t) out.flags[t] = out.masks[t].area() > 0 ? 1.0 : 0.0;
  return out;
}

}  // namespace ftea
