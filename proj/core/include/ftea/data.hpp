#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ftea/config.hpp"
#include "ftea/losses.hpp"
#include "ftea/metrics.hpp"
#include "ftea/rng.hpp"

namespace ftea {

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Motion { kLeft, kRight, kUp, kDown, kStill };

struct Rgb {
  std::uint8_t r, g, b;
};

/// Attribute vocabularies of the moving-shapes generator.
struct Vocabulary {
  std::vector<std::string> shapes = {"square", "circle", "triangle"};
  std::vector<std::string> colors = {"red", "green", "blue", "yellow", "white"};
  std::vector<Motion> motions = {Motion::kLeft, Motion::kRight, Motion::kUp, Motion::kDown, Motion::kStill};
};

std::string motion_word(Motion m);
Motion parse_motion(const std::string& word);
/// Display colour of a colour word; throws for unknown words.
Rgb color_value(const std::string& name);

struct Attributes {
  std::string shape;
  std::string color;
  Motion motion = Motion::kStill;

  bool operator==(const Attributes&) const = default;
  std::size_t shared_with(const Attributes& other) const;
};

/// "the <color> <shape> moving <direction>".
std::string make_query(const Attributes& a);
/// Recovers the attributes from a generated query; throws GenerationError on other text.
Attributes parse_query(const std::string& query);

struct ObjectTrack {
  Attributes attrs;
  double cx = 0, cy = 0;  // centre at frame 0, pixel units
  double radius = 0;
  double speed = 0;  // pixels per frame along the motion direction
};

/// Pixels covered by `o` at frame t (pixel centres at +0.5).
Mask rasterize(const ObjectTrack& o, std::size_t t, std::size_t height, std::size_t width);

/// One clip with its single referred object.
struct ClipSample {
  std::string id;
  std::size_t frames = 0, height = 0, width = 0;
  std::vector<std::uint8_t> rgb;  // [T, H, W, 3]
  std::string query;
  std::vector<Mask> masks;    // referred object, one per frame (visible pixels)
  std::vector<double> flags;  // 1 where the referred object is visible
  Attributes target;
  std::vector<Attributes> objects;  // every rendered object in drawing order; not persisted

  /// Frames as [T, H, W, 3] in [0, 1].
  Tensor frames_tensor() const;
  /// N = 1 ground truth for the loss.
  GroundTruth ground_truth() const;
};

struct GeneratorSpec {
  std::size_t clips = 64;
  std::size_t frames = 2;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
  std::size_t min_radius = 7;
  std::size_t max_radius = 11;
  std::size_t min_speed = 2;
  std::size_t max_speed = 5;
  Vocabulary vocab;

  static GeneratorSpec from_config(const Config& config);
};

/// Clip i draws only from Rng::derived(seed, i), so clips are independent of each other.
ClipSample generate_clip(const GeneratorSpec& spec, std::uint64_t seed, std::size_t index);
std::vector<ClipSample> generate_synthetic(const GeneratorSpec& spec, std::uint64_t seed);

/// Mirrors frames and masks left-right and swaps the words left and right in the query.
ClipSample flip_horizontal(const ClipSample& clip);

/// Moves every frame by (dy, dx) pixels, filling uncovered pixels with black.
/// Frames where the referred object leaves the image get flag 0.
ClipSample translate_clip(const ClipSample& clip, long dy, long dx);

// --- files -----------------------------------------------------------------

void write_ppm(const std::string& path, std::size_t height, std::size_t width, const std::uint8_t* rgb);
std::vector<std::uint8_t> read_ppm(const std::string& path, std::size_t& height, std::size_t& width);

/// Row-major runs of ones: {"height", "width", "starts": [...], "lengths": [...]}.
std::string encode_rle(const Mask& m);
Mask decode_rle(const std::string& json_text);

void save_dataset(const std::string& dir, const std::vector<ClipSample>& clips);
std::vector<ClipSample> load_dataset(const std::string& dir);

/// Loads frames frame_00.ppm, frame_01.ppm, ... and query.txt from a clip directory.
ClipSample load_clip(const std::string& dir);

/// Bilinear frame resize (any direction) and nearest-neighbour mask resize.
std::vector<std::uint8_t> resize_rgb(const std::vector<std::uint8_t>& rgb, std::size_t frames, std::size_t h,
                                     std::size_t w, std::size_t out_h, std::size_t out_w);
Mask resize_nearest(const Mask& m, std::size_t out_h, std::size_t out_w);
/// Resizes a clip to (out_h, out_w) when its size differs.
ClipSample resize_clip(const ClipSample& clip, std::size_t out_h, std::size_t out_w);

}  // namespace ftea
