#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dittryon/garment_net.hpp"
#include "dittryon/image.hpp"

namespace dittryon {

using Rgb = std::array<double, 3>;

inline constexpr std::size_t kGlyphWidth = 5;
inline constexpr std::size_t kGlyphHeight = 7;
inline constexpr std::size_t kGlyphPitch = 6;
inline constexpr std::size_t kLinePitch = 8;
inline constexpr std::size_t kMaxLines = 3;

/// Characters of the bitmap font.
const std::string& font_glyphs();
/// Row-major 5x7 bitmap of `c`; throws SpecError for unknown characters.
const std::array<std::array<bool, kGlyphWidth>, kGlyphHeight>& glyph_bitmap(char c);

/// Named palette shared by garments, glyphs and captions.
const std::vector<std::string>& color_names();
Rgb palette(std::size_t color);

enum class Pattern { solid, stripes, checker };
const char* pattern_name(Pattern p);

struct GarmentSpec {
  std::size_t base_color = 0;
  Pattern pattern = Pattern::solid;
  std::vector<std::string> lines;        // one string of glyphs per text line
  std::vector<std::size_t> line_colors;  // palette index per line
  std::uint64_t seed = 0;

  std::size_t glyph_count() const;
};

struct Box {
  std::size_t y0 = 0, y1 = 0, x0 = 0, x1 = 0;  // half-open

  bool empty() const { return y0 >= y1 || x0 >= x1; }
};

/// Garment body box [m, S - m) with m = S / 16 (at least 1).
Box garment_body(std::size_t size);

/// Pixel boxes of each text line on the garment canvas. Throws SpecError when
/// the text does not fit inside the body box.
std::vector<Box> glyph_line_boxes(const GarmentSpec& spec, std::size_t size);

/// Lines and glyphs per line that fit a canvas.
std::size_t line_capacity(std::size_t size);
std::size_t glyph_capacity(std::size_t size);

ImageGrid render_garment(const GarmentSpec& spec, std::size_t size);

/// Similarity transform of the torso about the canvas centre.
struct Pose {
  double scale = 1.0;
  double angle = 0.0;  // radians
  double dx = 0.0;     // in units of size / 16
  double dy = 0.0;
};

inline constexpr std::size_t kPoseCount = 6;
/// Pose 0 is the identity.
Pose pose_table(std::size_t index);

struct PersonRender {
  ImageGrid person;
  ImageGrid mask;  // 1 where the warped garment lies
  ImageGrid pose_map;
};

/// Warps the garment body onto a stick figure by inverse nearest-neighbour
/// mapping. Pose map bands: torso 0.4, arms 0.7, head 1.0.
PersonRender render_person(const ImageGrid& garment, std::size_t pose_index);

/// Bounding box in person coordinates of a garment-space box under a pose.
Box warp_box(const Box& box, std::size_t pose_index, std::size_t size);

enum class CaptionDetail { brief, detailed };

/// brief = [color, pattern, "garment"]; detailed appends
/// "text line <ordinal> <glyphs...> in <color>" per line.
std::vector<std::string> make_caption(const GarmentSpec& spec, CaptionDetail detail);

/// Fixed caption vocabulary; id 0 is unused padding.
const std::vector<std::string>& caption_vocabulary();
TokenIds tokenize(const std::vector<std::string>& words);

GarmentSpec random_spec(std::uint64_t seed, std::size_t size);

struct SampleRecord {
  std::string id;
  GarmentSpec spec;  // garment shown in `garment`
  std::size_t pose = 0;
  ImageGrid garment;
  ImageGrid person;
  ImageGrid mask;
  ImageGrid pose_map;
  std::vector<std::string> caption_brief;
  std::vector<std::string> caption_detailed;
  std::string person_of;  // unpaired: id of the paired sample the person comes from
};

struct Dataset {
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> test_paired;
  std::vector<SampleRecord> test_unpaired;
  std::size_t image_size = 0;
};

/// Sattolo's algorithm: a uniformly random cyclic permutation, which has no
/// fixed point for n >= 2.
std::vector<std::size_t> derangement(std::size_t n, std::uint64_t seed);

/// Deterministic per seed. The test split holds round(n (1 - split)) samples,
/// at least 2 and leaving at least 2 for training; n < 4 is a ConfigError.
Dataset make_dataset(std::uint64_t seed, std::size_t n, double train_split, std::size_t image_size);

/// Layout: <root>/{train,test_paired,test_unpaired}/<id>_{garment,person}.ppm,
/// <id>_{mask,pose}.pgm, plus captions.jsonl and specs.jsonl at the root.
void write_dataset(const std::filesystem::path& root, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& root);

/// SHA-256 over relative paths and bytes of every file under root, in path order.
std::string directory_hash(const std::filesystem::path& root);

}  // namespace dittryon
