#include "dittryon/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dittryon/params.hpp"
#include "dittryon/rng.hpp"

namespace dittryon {

namespace {

using Bitmap = std::array<std::array<bool, kGlyphWidth>, kGlyphHeight>;

Bitmap parse_rows(const std::array<const char*, kGlyphHeight>& rows) {
  Bitmap b{};
  for (std::size_t y = 0; y < kGlyphHeight; ++y) {
    for (std::size_t x = 0; x < kGlyphWidth; ++x) b[y][x] = rows[y][x] == '#';
  }
  return b;
}

const std::map<char, Bitmap>& font() {
  static const std::map<char, Bitmap> f = {
      {'A', parse_rows({".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"})},
      {'B', parse_rows({"####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."})},
      {'C', parse_rows({".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."})},
      {'D', parse_rows({"####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."})},
      {'E', parse_rows({"#####", "#....", "#....", "####.", "#....", "#....", "#####"})},
      {'H', parse_rows({"#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"})},
      {'I', parse_rows({".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."})},
      {'K', parse_rows({"#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"})},
      {'L', parse_rows({"#....", "#....", "#....", "#....", "#....", "#....", "#####"})},
      {'N', parse_rows({"#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"})},
      {'O', parse_rows({".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."})},
      {'R', parse_rows({"####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"})},
      {'S', parse_rows({".####", "#....", "#....", ".###.", "....#", "....#", "####."})},
      {'T', parse_rows({"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."})},
      {'U', parse_rows({"#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."})},
      {'X', parse_rows({"#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"})},
  };
  return f;
}

const std::vector<Rgb>& palette_values() {
  static const std::vector<Rgb> p = {
      {0.85, 0.10, 0.10}, {0.10, 0.65, 0.20}, {0.15, 0.25, 0.85}, {0.95, 0.85, 0.10},
      {0.10, 0.80, 0.85}, {0.80, 0.20, 0.75}, {0.05, 0.05, 0.05}, {0.97, 0.97, 0.97},
  };
  return p;
}

constexpr Rgb kGarmentBackground{0.80, 0.80, 0.80};
constexpr Rgb kPersonBackground{0.90, 0.90, 0.90};
constexpr Rgb kSkin{0.90, 0.72, 0.58};

double luminance(const Rgb& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

void put(ImageGrid& img, std::size_t y, std::size_t x, const Rgb& c) {
  for (std::size_t k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
}

const char* kOrdinals[kMaxLines] = {"one", "two", "three"};

struct Affine {
  double c, s, scale, cx, cy, dx, dy;
};

Affine affine_for(std::size_t pose_index, std::size_t size) {
  const Pose p = pose_table(pose_index);
  const double unit = static_cast<double>(size) / 16.0;
  const double half = static_cast<double>(size) / 2.0;
  return Affine{std::cos(p.angle), std::sin(p.angle), p.scale, half, half, p.dx * unit, p.dy * unit};
}

}  // namespace

const std::string& font_glyphs() {
  static const std::string g = [] {
    std::string s;
    for (const auto& [c, b] : font()) s.push_back(c);
    return s;
  }();
  return g;
}

const Bitmap& glyph_bitmap(char c) {
  auto it = font().find(c);
  if (it == font().end()) throw SpecError(std::string("glyph '") + c + "' is not in the font");
  return it->second;
}

const std::vector<std::string>& color_names() {
  static const std::vector<std::string> n = {"red", "green", "blue", "yellow", "cyan", "magenta", "black", "white"};
  return n;
}

Rgb palette(std::size_t color) {
  if (color >= palette_values().size()) throw SpecError("palette index " + std::to_string(color) + " out of range");
  return palette_values()[color];
}

const char* pattern_name(Pattern p) {
  switch (p) {
    case Pattern::solid: return "solid";
    case Pattern::stripes: return "stripes";
    case Pattern::checker: return "checker";
  }
  return "solid";
}

std::size_t GarmentSpec::glyph_count() const {
  std::size_t n = 0;
  for (const auto& l : lines) n += l.size();
  return n;
}

Box garment_body(std::size_t size) {
  const std::size_t m = std::max<std::size_t>(1, size / 16);
  return Box{m, size - m, m, size - m};
}

std::size_t line_capacity(std::size_t size) {
  const Box b = garment_body(size);
  const std::size_t inner = b.y1 - b.y0;
  if (inner < kGlyphHeight) return 0;
  return std::min(kMaxLines, 1 + (inner - kGlyphHeight) / kLinePitch);
}

std::size_t glyph_capacity(std::size_t size) {
  const Box b = garment_body(size);
  return (b.x1 - b.x0 + 1) / kGlyphPitch;
}

std::vector<Box> glyph_line_boxes(const GarmentSpec& spec, std::size_t size) {
  if (spec.line_colors.size() != spec.lines.size()) throw SpecError("one color is needed per text line");
  if (spec.lines.size() > kMaxLines) throw SpecError("at most 3 text lines are supported");
  std::vector<Box> boxes;
  if (spec.lines.empty()) return boxes;
  const Box body = garment_body(size);
  const std::size_t inner_h = body.y1 - body.y0, inner_w = body.x1 - body.x0;
  const std::size_t block_h = kGlyphHeight + kLinePitch * (spec.lines.size() - 1);
  if (block_h > inner_h) {
    throw SpecError(std::to_string(spec.lines.size()) + " text lines overflow a " + std::to_string(size) + " canvas");
  }
  const std::size_t top = body.y0 + (inner_h - block_h) / 2;
  for (std::size_t k = 0; k < spec.lines.size(); ++k) {
    const std::string& line = spec.lines[k];
    if (line.empty()) throw SpecError("empty text line");
    const std::size_t w = kGlyphPitch * line.size() - 1;
    if (w > inner_w) throw SpecError("text line '" + line + "' overflows a " + std::to_string(size) + " canvas");
    const std::size_t left = body.x0 + (inner_w - w) / 2;
    const std::size_t y0 = top + kLinePitch * k;
    boxes.push_back(Box{y0, y0 + kGlyphHeight, left, left + w});
  }
  return boxes;
}

ImageGrid render_garment(const GarmentSpec& spec, std::size_t size) {
  if (size < 16) throw SpecError("garment canvas must be at least 16 pixels");
  const Rgb base = palette(spec.base_color);
  Rgb alt;
  for (std::size_t k = 0; k < 3; ++k) alt[k] = 0.5 * base[k] + 0.25;
  const Box body = garment_body(size);
  const auto boxes = glyph_line_boxes(spec, size);

  ImageGrid img(3, size, size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) put(img, y, x, kGarmentBackground);
  }
  for (std::size_t y = body.y0; y < body.y1; ++y) {
    for (std::size_t x = body.x0; x < body.x1; ++x) {
      const std::size_t ry = (y - body.y0) / 2, rx = (x - body.x0) / 2;
      bool odd = false;
      if (spec.pattern == Pattern::stripes) odd = ry % 2 == 1;
      if (spec.pattern == Pattern::checker) odd = (ry + rx) % 2 == 1;
      put(img, y, x, odd ? alt : base);
    }
  }
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    const Rgb ink = palette(spec.line_colors[k]);
    for (std::size_t g = 0; g < spec.lines[k].size(); ++g) {
      const auto& bm = glyph_bitmap(spec.lines[k][g]);
      for (std::size_t y = 0; y < kGlyphHeight; ++y) {
        for (std::size_t x = 0; x < kGlyphWidth; ++x) {
          if (bm[y][x]) put(img, boxes[k].y0 + y, boxes[k].x0 + g * kGlyphPitch + x, ink);
        }
      }
    }
  }
  return img;
}

Pose pose_table(std::size_t index) {
  static const Pose poses[kPoseCount] = {
      {1.00, 0.00, 0.0, 0.0},  {0.80, 0.00, 0.0, 1.0},   {0.80, 0.15, 0.0, 1.0},
      {0.80, -0.15, 0.0, 1.0}, {0.75, 0.08, -1.0, 1.0}, {0.75, -0.08, 1.0, 1.0},
  };
  if (index >= kPoseCount) throw RangeError("pose index " + std::to_string(index) + " out of range");
  return poses[index];
}

PersonRender render_person(const ImageGrid& garment, std::size_t pose_index) {
  if (garment.channels != 3 || garment.height != garment.width) throw DimensionError("garment must be square RGB");
  const std::size_t size = garment.height;
  const Affine a = affine_for(pose_index, size);
  const Box body = garment_body(size);
  const double arm = static_cast<double>(size) / 8.0;
  const double head_r = static_cast<double>(size) / 8.0;
  const double head_x = static_cast<double>(size) / 2.0, head_y = static_cast<double>(body.y0) - head_r;
  const double arm_bottom = static_cast<double>(body.y0) + static_cast<double>(body.y1 - body.y0) / 2.0;

  PersonRender r{ImageGrid(3, size, size), ImageGrid(1, size, size), ImageGrid(1, size, size)};
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5 - a.cx - a.dx;
      const double py = static_cast<double>(y) + 0.5 - a.cy - a.dy;
      const double qx = a.cx + (a.c * px + a.s * py) / a.scale;
      const double qy = a.cy + (-a.s * px + a.c * py) / a.scale;
      const double fx = std::floor(qx), fy = std::floor(qy);
      const bool in_body = fx >= static_cast<double>(body.x0) && fx < static_cast<double>(body.x1) &&
                           fy >= static_cast<double>(body.y0) && fy < static_cast<double>(body.y1);
      if (in_body) {
        const auto gy = static_cast<std::size_t>(fy), gx = static_cast<std::size_t>(fx);
        for (std::size_t c = 0; c < 3; ++c) r.person.at(y, x, c) = garment.at(gy, gx, c);
        r.mask.at(y, x, 0) = 1.0;
        r.pose_map.at(y, x, 0) = 0.4;
        continue;
      }
      const bool in_arm = qy >= static_cast<double>(body.y0) && qy < arm_bottom &&
                          ((qx >= static_cast<double>(body.x0) - arm && qx < static_cast<double>(body.x0)) ||
                           (qx >= static_cast<double>(body.x1) && qx < static_cast<double>(body.x1) + arm));
      const double hx = qx - head_x, hy = qy - head_y;
      const bool in_head = hx * hx + hy * hy <= head_r * head_r;
      if (in_arm || in_head) {
        put(r.person, y, x, kSkin);
        r.pose_map.at(y, x, 0) = in_head ? 1.0 : 0.7;
      } else {
        put(r.person, y, x, kPersonBackground);
      }
    }
  }
  return r;
}

Box warp_box(const Box& box, std::size_t pose_index, std::size_t size) {
  const Affine a = affine_for(pose_index, size);
  double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
  for (double qx : {static_cast<double>(box.x0), static_cast<double>(box.x1)}) {
    for (double qy : {static_cast<double>(box.y0), static_cast<double>(box.y1)}) {
      const double ux = (qx - a.cx) * a.scale, uy = (qy - a.cy) * a.scale;
      const double px = a.cx + a.dx + a.c * ux - a.s * uy;
      const double py = a.cy + a.dy + a.s * ux + a.c * uy;
      lo_x = std::min(lo_x, px);
      hi_x = std::max(hi_x, px);
      lo_y = std::min(lo_y, py);
      hi_y = std::max(hi_y, py);
    }
  }
  const double s = static_cast<double>(size);
  auto clampd = [&](double v) { return static_cast<std::size_t>(std::clamp(v, 0.0, s)); };
  return Box{clampd(std::floor(lo_y)), clampd(std::ceil(hi_y)), clampd(std::floor(lo_x)), clampd(std::ceil(hi_x))};
}

std::vector<std::string> make_caption(const GarmentSpec& spec, CaptionDetail detail) {
  std::vector<std::string> words{color_names().at(spec.base_color), pattern_name(spec.pattern), "garment"};
  if (detail == CaptionDetail::brief || spec.lines.empty()) return words;
  if (spec.lines.size() > kMaxLines) throw SpecError("at most 3 text lines are supported");
  words.push_back("text");
  for (std::size_t k = 0; k < spec.lines.size(); ++k) {
    words.push_back("line");
    words.push_back(kOrdinals[k]);
    for (char c : spec.lines[k]) words.push_back(std::string(1, c));
    words.push_back("in");
    words.push_back(color_names().at(spec.line_colors[k]));
  }
  return words;
}

const std::vector<std::string>& caption_vocabulary() {
  static const std::vector<std::string> v = [] {
    std::vector<std::string> w{"<pad>"};
    for (const auto& c : color_names()) w.push_back(c);
    for (Pattern p : {Pattern::solid, Pattern::stripes, Pattern::checker}) w.push_back(pattern_name(p));
    for (const char* s : {"garment", "text", "line", "one", "two", "three", "in"}) w.push_back(s);
    for (char c : font_glyphs()) w.push_back(std::string(1, c));
    return w;
  }();
  return v;
}

TokenIds tokenize(const std::vector<std::string>& words) {
  const auto& vocab = caption_vocabulary();
  TokenIds ids;
  ids.reserve(words.size());
  for (const auto& w : words) {
    auto it = std::find(vocab.begin(), vocab.end(), w);
    if (it == vocab.end()) throw SpecError("word '" + w + "' is not in the caption vocabulary");
    ids.push_back(static_cast<std::size_t>(it - vocab.begin()));
  }
  return ids;
}

GarmentSpec random_spec(std::uint64_t seed, std::size_t size) {
  Rng rng(seed);
  GarmentSpec spec;
  spec.seed = seed;
  spec.base_color = rng.below(palette_values().size());
  spec.pattern = static_cast<Pattern>(rng.below(3));
  const std::size_t lcap = line_capacity(size), gcap = glyph_capacity(size);
  const bool text = lcap > 0 && gcap > 0 && rng.uniform() < 0.75;
  const std::size_t nlines = text ? 1 + rng.below(lcap) : 0;
  const double base_l = luminance(palette(spec.base_color));
  std::vector<std::size_t> inks;
  for (std::size_t c = 0; c < palette_values().size(); ++c) {
    if (c != spec.base_color && std::abs(luminance(palette(c)) - base_l) >= 0.3) inks.push_back(c);
  }
  for (std::size_t k = 0; k < nlines; ++k) {
    const std::size_t len = 1 + rng.below(gcap);
    std::string line;
    for (std::size_t g = 0; g < len; ++g) line.push_back(font_glyphs()[rng.below(font_glyphs().size())]);
    spec.lines.push_back(line);
    spec.line_colors.push_back(inks[rng.below(inks.size())]);
  }
  return spec;
}

std::vector<std::size_t> derangement(std::size_t n, std::uint64_t seed) {
  if (n < 2) throw ConfigError("a derangement needs at least 2 elements, got " + std::to_string(n));
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(p[i], p[rng.below(i)]);
  return p;
}

namespace {

std::string make_id(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%04zu", prefix, i);
  return buf;
}

SampleRecord make_record(std::string id, const GarmentSpec& spec, std::size_t pose, std::size_t size) {
  SampleRecord r;
  r.id = std::move(id);
  r.spec = spec;
  r.pose = pose;
  r.garment = render_garment(spec, size);
  PersonRender pr = render_person(r.garment, pose);
  r.person = std::move(pr.person);
  r.mask = std::move(pr.mask);
  r.pose_map = std::move(pr.pose_map);
  r.caption_brief = make_caption(spec, CaptionDetail::brief);
  r.caption_detailed = make_caption(spec, CaptionDetail::detailed);
  return r;
}

}  // namespace

Dataset make_dataset(std::uint64_t seed, std::size_t n, double train_split, std::size_t image_size) {
  if (n < 4) throw ConfigError("dataset needs n >= 4 for train and deranged test splits, got " + std::to_string(n));
  if (!(train_split > 0.0 && train_split < 1.0)) throw ConfigError("train split must lie in (0, 1)");
  const auto wanted = static_cast<std::size_t>(std::llround(static_cast<double>(n) * (1.0 - train_split)));
  const std::size_t n_test = std::clamp<std::size_t>(wanted, 2, n - 2);
  const std::size_t n_train = n - n_test;

  Dataset ds;
  ds.image_size = image_size;
  for (std::size_t i = 0; i < n; ++i) {
    const GarmentSpec spec = random_spec(Rng::derive(seed, i), image_size);
    Rng pose_rng(Rng::derive(seed, 0x9000000 + i));
    const std::size_t pose = pose_rng.below(kPoseCount);
    if (i < n_train) {
      ds.train.push_back(make_record(make_id('t', i), spec, pose, image_size));
    } else {
      ds.test_paired.push_back(make_record(make_id('p', i - n_train), spec, pose, image_size));
    }
  }
  const auto perm = derangement(n_test, Rng::derive(seed, 0xde7a));
  for (std::size_t j = 0; j < n_test; ++j) {
    const SampleRecord& person = ds.test_paired[j];
    const SampleRecord& garment = ds.test_paired[perm[j]];
    SampleRecord r = person;
    r.id = make_id('u', j);
    r.spec = garment.spec;
    r.garment = garment.garment;
    r.caption_brief = garment.caption_brief;
    r.caption_detailed = garment.caption_detailed;
    r.person_of = person.id;
    ds.test_unpaired.push_back(std::move(r));
  }
  return ds;
}

namespace {

const char* kSplits[3] = {"train", "test_paired", "test_unpaired"};

template <typename D>
auto& split_of(D& ds, std::size_t k) {
  return k == 0 ? ds.train : k == 1 ? ds.test_paired : ds.test_unpaired;
}

nlohmann::json spec_json(const SampleRecord& r, const char* split) {
  return nlohmann::json{{"id", r.id},
                        {"split", split},
                        {"base_color", r.spec.base_color},
                        {"pattern", pattern_name(r.spec.pattern)},
                        {"lines", r.spec.lines},
                        {"line_colors", r.spec.line_colors},
                        {"seed", r.spec.seed},
                        {"pose", r.pose},
                        {"person_of", r.person_of}};
}

Pattern parse_pattern(const std::string& s) {
  for (Pattern p : {Pattern::solid, Pattern::stripes, Pattern::checker}) {
    if (s == pattern_name(p)) return p;
  }
  throw IoError("unknown pattern '" + s + "'");
}

}  // namespace

void write_dataset(const std::filesystem::path& root, const Dataset& ds) {
  std::ostringstream captions, specs;
  for (std::size_t k = 0; k < 3; ++k) {
    const auto dir = root / kSplits[k];
    std::filesystem::create_directories(dir);
    for (const SampleRecord& r : split_of(ds, k)) {
      write_pnm(dir / (r.id + "_garment.ppm"), r.garment);
      write_pnm(dir / (r.id + "_person.ppm"), r.person);
      write_pnm(dir / (r.id + "_mask.pgm"), r.mask);
      write_pnm(dir / (r.id + "_pose.pgm"), r.pose_map);
      captions << nlohmann::json{{"id", r.id}, {"split", kSplits[k]}, {"brief", r.caption_brief},
                                 {"detailed", r.caption_detailed}}
                      .dump()
               << '\n';
      specs << spec_json(r, kSplits[k]).dump() << '\n';
    }
  }
  atomic_write(root / "captions.jsonl", captions.str());
  atomic_write(root / "specs.jsonl", specs.str());
}

Dataset read_dataset(const std::filesystem::path& root) {
  if (!std::filesystem::exists(root / "specs.jsonl")) throw IoError("no dataset at " + root.string());
  std::map<std::string, nlohmann::json> captions;
  {
    std::istringstream in(read_file(root / "captions.jsonl"));
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      captions[j.at("id").get<std::string>()] = j;
    }
  }
  Dataset ds;
  std::istringstream in(read_file(root / "specs.jsonl"));
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    SampleRecord r;
    r.id = j.at("id").get<std::string>();
    const std::string split = j.at("split").get<std::string>();
    r.spec.base_color = j.at("base_color").get<std::size_t>();
    r.spec.pattern = parse_pattern(j.at("pattern").get<std::string>());
    r.spec.lines = j.at("lines").get<std::vector<std::string>>();
    r.spec.line_colors = j.at("line_colors").get<std::vector<std::size_t>>();
    r.spec.seed = j.at("seed").get<std::uint64_t>();
    r.pose = j.at("pose").get<std::size_t>();
    r.person_of = j.at("person_of").get<std::string>();
    auto c = captions.find(r.id);
    if (c == captions.end()) throw IoError("no caption for " + r.id);
    r.caption_brief = c->second.at("brief").get<std::vector<std::string>>();
    r.caption_detailed = c->second.at("detailed").get<std::vector<std::string>>();
    const auto dir = root / split;
    r.garment = read_pnm(dir / (r.id + "_garment.ppm"));
    r.person = read_pnm(dir / (r.id + "_person.ppm"));
    r.mask = read_pnm(dir / (r.id + "_mask.pgm"));
    r.pose_map = read_pnm(dir / (r.id + "_pose.pgm"));
    ds.image_size = r.person.height;
    std::size_t k = 0;
    while (k < 3 && split != kSplits[k]) ++k;
    if (k == 3) throw IoError("unknown split '" + split + "'");
    split_of(ds, k).push_back(std::move(r));
  }
  return ds;
}

std::string directory_hash(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  }
  std::vector<std::pair<std::string, std::filesystem::path>> rel;
  for (const auto& f : files) rel.emplace_back(std::filesystem::relative(f, root).generic_string(), f);
  std::sort(rel.begin(), rel.end());
  std::string blob;
  for (const auto& [name, path] : rel) {
    const std::string bytes = read_file(path);
    blob += name;
    blob.push_back('\0');
    blob += std::to_string(bytes.size());
    blob.push_back('\0');
    blob += bytes;
  }
  return sha256_hex(blob);
}

}  // namespace dittryon
