#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "dittryon/synth_data.hpp"

using namespace dittryon;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("dittryon_synth_" + name);
  std::filesystem::remove_all(p);
  return p;
}

bool pixel_is(const ImageGrid& img, std::size_t y, std::size_t x, const Rgb& c) {
  return img.at(y, x, 0) == c[0] && img.at(y, x, 1) == c[1] && img.at(y, x, 2) == c[2];
}

std::size_t color_index(const std::string& name) {
  const auto& names = color_names();
  return static_cast<std::size_t>(std::find(names.begin(), names.end(), name) - names.begin());
}

}  // namespace

TEST(RenderGarment, SolidRedBody) {
  GarmentSpec spec;
  spec.base_color = color_index("red");
  const ImageGrid img = render_garment(spec, 16);
  const Box body = garment_body(16);
  EXPECT_EQ(body.y0, 1u);
  EXPECT_EQ(body.y1, 15u);
  for (std::size_t y = body.y0; y < body.y1; ++y)
    for (std::size_t x = body.x0; x < body.x1; ++x) EXPECT_TRUE(pixel_is(img, y, x, palette(spec.base_color)));
  EXPECT_FALSE(pixel_is(img, 0, 0, palette(spec.base_color)));
}

TEST(RenderGarment, DeterministicAndOverflow) {
  const GarmentSpec spec = random_spec(17, 32);
  EXPECT_EQ(render_garment(spec, 32), render_garment(spec, 32));
  GarmentSpec big;
  big.lines = {"ABCDEHIKLN"};
  big.line_colors = {0};
  EXPECT_THROW(render_garment(big, 16), SpecError);
  big.lines = {"A", "B", "C", "D"};
  big.line_colors = {0, 0, 0, 0};
  EXPECT_THROW(render_garment(big, 64), SpecError);
  EXPECT_THROW(render_garment(GarmentSpec{}, 8), SpecError);
  EXPECT_THROW(glyph_bitmap('Z'), SpecError);
}

TEST(RenderGarment, GlyphMatchesBitmap) {
  // Letter A of the 5x7 font, written out independently.
  const char* rows[7] = {".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"};
  GarmentSpec spec;
  spec.base_color = color_index("white");
  spec.lines = {"A"};
  spec.line_colors = {color_index("blue")};
  const ImageGrid img = render_garment(spec, 16);
  const Box box = glyph_line_boxes(spec, 16).at(0);
  EXPECT_EQ(box.x1 - box.x0, 5u);
  EXPECT_EQ(box.y1 - box.y0, 7u);
  for (std::size_t y = 0; y < 7; ++y) {
    for (std::size_t x = 0; x < 5; ++x) {
      const bool ink = rows[y][x] == '#';
      EXPECT_EQ(glyph_bitmap('A')[y][x], ink);
      EXPECT_TRUE(pixel_is(img, box.y0 + y, box.x0 + x, palette(ink ? spec.line_colors[0] : spec.base_color)))
          << y << "," << x;
    }
  }
}

TEST(RenderGarment, CanvasCapacities) {
  EXPECT_EQ(line_capacity(16), 1u);
  EXPECT_EQ(glyph_capacity(16), 2u);
  EXPECT_EQ(line_capacity(32), 3u);
  EXPECT_GE(glyph_capacity(32), 4u);
}

TEST(RenderPerson, IdentityPose) {
  const ImageGrid g = render_garment(random_spec(3, 16), 16);
  const PersonRender pr = render_person(g, 0);
  const Box body = garment_body(16);
  for (std::size_t y = 0; y < 16; ++y) {
    for (std::size_t x = 0; x < 16; ++x) {
      const bool inside = y >= body.y0 && y < body.y1 && x >= body.x0 && x < body.x1;
      EXPECT_EQ(pr.mask.at(y, x, 0), inside ? 1.0 : 0.0);
      if (inside) {
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(pr.person.at(y, x, c), g.at(y, x, c));
      }
    }
  }
}

TEST(RenderPerson, MaskedPixelsComeFromTheGarmentBody) {
  const ImageGrid g = render_garment(random_spec(4, 32), 32);
  const Box body = garment_body(32);
  std::set<std::array<double, 3>> colors;
  for (std::size_t y = body.y0; y < body.y1; ++y)
    for (std::size_t x = body.x0; x < body.x1; ++x) colors.insert({g.at(y, x, 0), g.at(y, x, 1), g.at(y, x, 2)});
  for (std::size_t pose = 0; pose < kPoseCount; ++pose) {
    const PersonRender pr = render_person(g, pose);
    std::size_t n = 0;
    for (std::size_t y = 0; y < 32; ++y) {
      for (std::size_t x = 0; x < 32; ++x) {
        const double m = pr.mask.at(y, x, 0);
        EXPECT_TRUE(m == 0.0 || m == 1.0);
        if (m == 1.0) {
          ++n;
          EXPECT_TRUE(colors.count({pr.person.at(y, x, 0), pr.person.at(y, x, 1), pr.person.at(y, x, 2)}));
          EXPECT_EQ(pr.pose_map.at(y, x, 0), 0.4);
        } else if (pr.pose_map.at(y, x, 0) == 0.0) {
          EXPECT_TRUE(pixel_is(pr.person, y, x, Rgb{0.9, 0.9, 0.9}));
        }
      }
    }
    EXPECT_GT(n, 0u) << pose;
  }
}

TEST(RenderPerson, PosesGiveDistinctMasks) {
  const ImageGrid g = render_garment(random_spec(5, 16), 16);
  for (std::size_t a = 0; a < kPoseCount; ++a) {
    for (std::size_t b = a + 1; b < kPoseCount; ++b) {
      const ImageGrid ma = render_person(g, a).mask, mb = render_person(g, b).mask;
      std::size_t hamming = 0;
      for (std::size_t i = 0; i < ma.values.size(); ++i) hamming += ma.values[i] != mb.values[i];
      EXPECT_GT(hamming, 0u) << a << " vs " << b;
    }
  }
  EXPECT_THROW(pose_table(kPoseCount), RangeError);
}

TEST(Caption, BriefAndDetailed) {
  GarmentSpec spec;
  spec.base_color = color_index("red");
  EXPECT_EQ(make_caption(spec, CaptionDetail::brief), (std::vector<std::string>{"red", "solid", "garment"}));
  EXPECT_EQ(make_caption(spec, CaptionDetail::detailed), make_caption(spec, CaptionDetail::brief));

  for (std::uint64_t s = 0; s < 30; ++s) {
    const GarmentSpec r = random_spec(s, 32);
    const auto brief = make_caption(r, CaptionDetail::brief), det = make_caption(r, CaptionDetail::detailed);
    for (const auto& w : brief) EXPECT_NE(std::find(det.begin(), det.end(), w), det.end());
    EXPECT_EQ(tokenize(det).size(), det.size());
  }
}

TEST(Caption, TwoLineGlyphs) {
  GarmentSpec spec;
  spec.base_color = color_index("white");
  spec.lines = {"SUN", "SAND"};
  spec.line_colors = {color_index("black"), color_index("blue")};
  ASSERT_NO_THROW(render_garment(spec, 32));
  const auto det = make_caption(spec, CaptionDetail::detailed);
  const std::vector<std::string> expect{"white", "solid", "garment", "text", "line", "one", "S", "U", "N", "in",
                                        "black", "line", "two", "S", "A", "N", "D", "in", "blue"};
  EXPECT_EQ(det, expect);
  const auto brief = make_caption(spec, CaptionDetail::brief);
  for (const char* w : {"line", "S", "U", "N", "A", "D"}) EXPECT_EQ(std::find(brief.begin(), brief.end(), w), brief.end());
}

TEST(Caption, Vocabulary) {
  const auto& v = caption_vocabulary();
  EXPECT_EQ(v.front(), "<pad>");
  EXPECT_EQ(v.size(), 1u + 8u + 3u + 7u + 16u);
  EXPECT_EQ(std::set<std::string>(v.begin(), v.end()).size(), v.size());
  EXPECT_THROW(tokenize({"sweater"}), SpecError);
}

TEST(RandomSpec, InkContrastAndFit) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    const GarmentSpec spec = random_spec(s, 16);
    EXPECT_LE(spec.lines.size(), 1u);
    for (std::size_t c : spec.line_colors) EXPECT_NE(c, spec.base_color);
    EXPECT_NO_THROW(glyph_line_boxes(spec, 16));
  }
}

TEST(Dataset, SplitsAndDerangement) {
  const Dataset ds = make_dataset(9, 20, 0.8, 16);
  EXPECT_EQ(ds.train.size() + ds.test_paired.size(), 20u);
  EXPECT_EQ(ds.test_paired.size(), 4u);
  EXPECT_EQ(ds.test_unpaired.size(), ds.test_paired.size());
  for (std::size_t j = 0; j < ds.test_unpaired.size(); ++j) {
    const SampleRecord& u = ds.test_unpaired[j];
    EXPECT_EQ(u.person_of, ds.test_paired[j].id);
    EXPECT_EQ(u.person, ds.test_paired[j].person);
    EXPECT_NE(u.spec.seed, ds.test_paired[j].spec.seed);
  }
  const auto p = derangement(50, 3);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NE(p[i], i);
  EXPECT_EQ(std::set<std::size_t>(p.begin(), p.end()).size(), 50u);
  EXPECT_THROW(derangement(1, 0), ConfigError);
  EXPECT_THROW(make_dataset(9, 3, 0.5, 16), ConfigError);
  EXPECT_EQ(make_dataset(9, 4, 0.9, 16).test_paired.size(), 2u);
}

TEST(Dataset, ByteIdenticalAcrossRuns) {
  const auto a = temp_dir("a"), b = temp_dir("b");
  write_dataset(a, make_dataset(13, 10, 0.7, 16));
  write_dataset(b, make_dataset(13, 10, 0.7, 16));
  EXPECT_EQ(directory_hash(a), directory_hash(b));
  EXPECT_TRUE(std::filesystem::exists(a / "train" / "t0000_garment.ppm"));
  EXPECT_TRUE(std::filesystem::exists(a / "test_unpaired" / "u0000_pose.pgm"));
  EXPECT_TRUE(std::filesystem::exists(a / "captions.jsonl"));

  const Dataset back = read_dataset(a);
  const Dataset orig = make_dataset(13, 10, 0.7, 16);
  ASSERT_EQ(back.train.size(), orig.train.size());
  EXPECT_EQ(back.train[0].person, quantize8(orig.train[0].person));
  EXPECT_EQ(back.test_unpaired[1].person_of, orig.test_unpaired[1].person_of);
  EXPECT_EQ(back.test_paired[0].caption_detailed, orig.test_paired[0].caption_detailed);

  write_dataset(b, make_dataset(14, 10, 0.7, 16));
  EXPECT_NE(directory_hash(a), directory_hash(b));
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}
