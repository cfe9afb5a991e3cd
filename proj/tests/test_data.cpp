#include <gtest/gtest.h>
#include <png.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "amen/data.hpp"

using namespace amen;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("amen_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

// Slides both strokes over the image and predicts the one that appears
// complete; works only for noise-free images.
std::size_t template_match(const Tensor<float>& img, std::size_t d) {
  const std::size_t s = img.dim(1);
  for (std::size_t y = 0; y + d <= s; ++y)
    for (std::size_t x = 0; x + d <= s; ++x) {
      bool diag = true, anti = true;
      for (std::size_t i = 0; i < d; ++i) {
        diag = diag && img.at(0, y + i, x + i) == kSyntheticStroke;
        anti = anti && img.at(0, y + i, x + d - 1 - i) == kSyntheticStroke;
      }
      if (diag) return 0;
      if (anti) return 1;
    }
  return 99;
}

}  // namespace

TEST(SyntheticTest, BalancedAndValid) {
  const auto ds = gen_synthetic({.n = 100, .seed = 1});
  EXPECT_EQ(ds.size(), 100u);
  EXPECT_EQ(ds.class_counts(), (std::vector<std::size_t>{50, 50}));
  EXPECT_NO_THROW(validate_dataset(ds));
  EXPECT_EQ(ds.images[0].shape(), (Shape{1, 32, 32}));
  EXPECT_EQ(ds.ids[7], "img_00007");
}

TEST(SyntheticTest, SameSeedSameData) {
  const auto a = gen_synthetic({.n = 40, .seed = 3}), b = gen_synthetic({.n = 40, .seed = 3});
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.ids, b.ids);
  const auto c = gen_synthetic({.n = 40, .seed = 4});
  EXPECT_NE(a.images, c.images);
}

TEST(SyntheticTest, NoiseFreeImagesDifferOnlyInPatternPlacement) {
  const auto ds = gen_synthetic({.n = 40, .noise = 0.0, .seed = 5});
  const std::size_t d = 7;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::size_t stroke = 0;
    for (auto v : ds.images[i].values()) {
      EXPECT_TRUE(v == kSyntheticBackground || v == kSyntheticStroke);
      stroke += v == kSyntheticStroke;
    }
    EXPECT_EQ(stroke, d);
  }
}

TEST(SyntheticTest, NoiseFreeLabelsAreRecoveredByTemplateMatching) {
  const auto ds = gen_synthetic({.n = 200, .noise = 0.0, .seed = 6});
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) correct += template_match(ds.images[i], 7) == ds.labels[i];
  EXPECT_EQ(correct, ds.size());
}

TEST(SyntheticTest, InvalidExtentsRejected) {
  EXPECT_THROW(gen_synthetic({.image_size = 16, .detail_size = 4}), ArgumentError);
  EXPECT_THROW(gen_synthetic({.detail_size = 1}), ArgumentError);
  EXPECT_THROW(gen_synthetic({.noise = -1}), ArgumentError);
}

TEST(ValidateTest, CatchesBrokenInvariants) {
  auto ds = gen_synthetic({.n = 4, .seed = 1});
  auto dup = ds;
  dup.ids[1] = dup.ids[0];
  EXPECT_THROW(validate_dataset(dup), ValidationError);
  auto range = ds;
  range.images[2][5] = 1.5f;
  EXPECT_THROW(validate_dataset(range), ValidationError);
  auto len = ds;
  len.labels.pop_back();
  EXPECT_THROW(validate_dataset(len), ValidationError);
  auto lab = ds;
  lab.labels[0] = 2;
  EXPECT_THROW(validate_dataset(lab), ValidationError);
}

TEST(ImageDirTest, SaveThenLoadRoundTrip) {
  const auto root = scratch("roundtrip");
  const auto ds = gen_synthetic({.n = 10, .seed = 2});
  save_image_dir(ds, root);
  const auto back = load_image_dir(root);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.ids, ds.ids);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    // 8-bit quantization.
    EXPECT_LE(max_abs_diff(back.images[i], ds.images[i]), 0.5f / 255 + 1e-6f);
  }
  fs::remove_all(root);
}

TEST(ImageDirTest, EmptyManifestGivesEmptyDataset) {
  const auto root = scratch("empty");
  write_file(root / "manifest.csv", "");
  EXPECT_TRUE(load_image_dir(root).empty());
  write_file(root / "manifest.csv", "path,label\n");
  EXPECT_TRUE(load_image_dir(root).empty());
  fs::remove_all(root);
}

TEST(ImageDirTest, MissingFileErrorNamesPath) {
  const auto root = scratch("missing");
  write_file(root / "manifest.csv", "path,label\nimages/ghost.pgm,0\n");
  try {
    load_image_dir(root);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("images/ghost.pgm"), std::string::npos) << e.what();
  }
  fs::remove_all(root);
}

TEST(ImageDirTest, BadLabelAndCorruptImage) {
  const auto root = scratch("bad");
  write_file(root / "a.pgm", std::string("P5\n1 1\n255\n") + char(10));
  write_file(root / "manifest.csv", "path,label\na.pgm,cat\n");
  EXPECT_THROW(load_image_dir(root), ArgumentError);
  write_file(root / "b.pgm", "P5\n4 4\n255\nxx");
  write_file(root / "manifest.csv", "path,label\nb.pgm,1\n");
  EXPECT_THROW(load_image_dir(root), DecodeError);
  fs::remove_all(root);
}

TEST(ImageDirTest, PixelEndpointsScaleExactly) {
  const auto root = scratch("endpoints");
  write_file(root / "x.pgm", std::string("P5\n2 1\n255\n") + char(0) + char(255));
  write_file(root / "manifest.csv", "path,label\nx.pgm,1\n");
  const auto ds = load_image_dir(root);
  EXPECT_EQ(ds.images[0][0], 0.0f);
  EXPECT_EQ(ds.images[0][1], 1.0f);
  EXPECT_EQ(ds.classes, 2u);
  fs::remove_all(root);
}

TEST(ImageDirTest, ReadsPngGrayAndRgb) {
  const auto root = scratch("png");
  auto write_png = [&](const fs::path& p, std::uint32_t format, std::vector<unsigned char> px) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = 2;
    img.height = 1;
    img.format = format;
    ASSERT_TRUE(png_image_write_to_file(&img, p.c_str(), 0, px.data(), 0, nullptr));
  };
  write_png(root / "g.png", PNG_FORMAT_GRAY, {0, 255});
  write_png(root / "c.png", PNG_FORMAT_RGB, {255, 0, 0, 0, 0, 255});
  const auto g = read_image(root / "g.png");
  EXPECT_EQ(g.shape(), (Shape{1, 1, 2}));
  EXPECT_EQ(g[0], 0.0f);
  EXPECT_EQ(g[1], 1.0f);
  const auto c = read_image(root / "c.png");
  EXPECT_EQ(c.shape(), (Shape{3, 1, 2}));
  EXPECT_EQ(c.at(0, 0, 0), 1.0f);
  EXPECT_EQ(c.at(2, 0, 1), 1.0f);
  EXPECT_EQ(c.at(1, 0, 0), 0.0f);
  fs::remove_all(root);
}

TEST(ImageDirTest, IdsFallBackToPathOnStemCollision) {
  EXPECT_EQ(ids_from_paths({"a/x.pgm", "b/y.png"}), (std::vector<std::string>{"x", "y"}));
  EXPECT_EQ(ids_from_paths({"a/x.pgm", "b/x.png"}), (std::vector<std::string>{"a_x", "b_x"}));
}

TEST(ResizeTest, IdentityAndConstant) {
  const auto ds = gen_synthetic({.n = 2, .seed = 1});
  EXPECT_EQ(resize(ds.images[0], 32), ds.images[0]);
  const auto c = resize(Tensor<float>({1, 5, 5}, 0.3f), 13);
  ASSERT_EQ(c.shape(), (Shape{1, 13, 13}));
  for (auto v : c.values()) EXPECT_NEAR(v, 0.3f, 1e-6f);
  EXPECT_THROW(resize(c, 0), ArgumentError);
}

TEST(ResizeTest, CheckerboardToOnePixel) {
  const auto r = resize(Tensor<float>({1, 2, 2}, std::vector<float>{0, 1, 1, 0}), 1);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_FLOAT_EQ(r[0], 0.5f);
}

TEST(ResizeTest, UpThenDownStaysWithinQuarter) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> u(0, 1);
  for (int t = 0; t < 20; ++t) {
    // Constant 2x2 blocks.
    Tensor<float> img({1, 8, 8});
    for (std::size_t by = 0; by < 4; ++by)
      for (std::size_t bx = 0; bx < 4; ++bx) {
        const float v = u(rng);
        for (std::size_t i = 0; i < 2; ++i)
          for (std::size_t j = 0; j < 2; ++j) img.at(0, 2 * by + i, 2 * bx + j) = v;
      }
    EXPECT_LE(max_abs_diff(resize(resize(img, 16), 8), img), 0.25f);
  }
}

TEST(SplitTest, StratifiedHalves) {
  const auto ds = gen_synthetic({.n = 100, .seed = 2});
  const auto [train, eval] = split(ds, 0.5, 9);
  EXPECT_EQ(train.class_counts(), (std::vector<std::size_t>{25, 25}));
  EXPECT_EQ(eval.class_counts(), (std::vector<std::size_t>{25, 25}));
  EXPECT_EQ(train.split, SplitTag::train);
  EXPECT_EQ(eval.split, SplitTag::eval);
}

TEST(SplitTest, DeterministicPartition) {
  const auto ds = gen_synthetic({.n = 60, .seed = 2});
  const auto [a1, b1] = split(ds, 0.25, 4);
  const auto [a2, b2] = split(ds, 0.25, 4);
  EXPECT_EQ(a1.ids, a2.ids);
  EXPECT_EQ(b1.ids, b2.ids);
  std::set<std::string> all(a1.ids.begin(), a1.ids.end());
  for (const auto& id : b1.ids) EXPECT_TRUE(all.insert(id).second) << id;
  EXPECT_EQ(all, std::set<std::string>(ds.ids.begin(), ds.ids.end()));
  const auto [a3, b3] = split(ds, 0.25, 5);
  EXPECT_NE(b1.ids, b3.ids);
}

TEST(SplitTest, Errors) {
  auto ds = gen_synthetic({.n = 3, .seed = 2});  // labels 0,1,0
  EXPECT_THROW(split(ds, 0.5, 1), ArgumentError);
  EXPECT_THROW(split(gen_synthetic({.n = 10}), 0.0, 1), ArgumentError);
  EXPECT_THROW(split(gen_synthetic({.n = 10}), 1.0, 1), ArgumentError);
}
