#pragma once

// Datasets: ingestion from a manifest, synthetic "subtle detail" images,
// bilinear resizing and stratified splitting.

#include <algorithm>
#include <cstddef>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "amen/error.hpp"
#include "amen/image_io.hpp"
#include "amen/resample.hpp"
#include "amen/tensor.hpp"

namespace amen {

enum class SplitTag { all, train, eval };

struct Dataset {
  std::vector<Tensor<float>> images;  // each [C, H, W], values in [0, 1]
  std::vector<std::size_t> labels;    // class index; one_hot() gives y_n
  std::vector<std::string> ids;
  std::size_t classes = 2;
  SplitTag split = SplitTag::all;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }

  Tensor<float> one_hot(std::size_t i) const {
    Tensor<float> y({classes});
    y[labels.at(i)] = 1.0f;
    return y;
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> n(classes, 0);
    for (auto l : labels) ++n.at(l);
    return n;
  }

  Dataset subset(const std::vector<std::size_t>& idx, SplitTag tag) const {
    Dataset d{{}, {}, {}, classes, tag};
    for (auto i : idx) {
      d.images.push_back(images.at(i));
      d.labels.push_back(labels.at(i));
      d.ids.push_back(ids.at(i));
    }
    return d;
  }
};

// Checks the dataset invariants: aligned lengths, unique ids, labels below
// `classes`, uniform image shape, pixels in [0, 1]. Throws ValidationError.
inline void validate_dataset(const Dataset& d) {
  if (d.labels.size() != d.images.size() || d.ids.size() != d.images.size()) {
    throw ValidationError("dataset", "image/label/id counts differ");
  }
  if (d.classes < 2) throw ValidationError("classes", "need at least 2");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!seen.insert(d.ids[i]).second) throw ValidationError("ids", "duplicate id '" + d.ids[i] + "'");
    if (d.labels[i] >= d.classes) throw ValidationError("labels", "label out of range for " + d.ids[i]);
    if (d.images[i].rank() != 3 || d.images[i].shape() != d.images[0].shape()) {
      throw ValidationError("images", "inconsistent image shape for " + d.ids[i]);
    }
    for (float v : d.images[i].values()) {
      if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("images", "pixel outside [0,1] in " + d.ids[i]);
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic generator.
//
// Grayscale images of textured noise around a mid-gray background with one
// detail_size x detail_size micro-pattern at a random position. Class 0 draws
// the pattern along the main diagonal, class 1 along the anti-diagonal; labels
// alternate so the classes are balanced.

struct SyntheticOptions {
  std::size_t n = 400;
  std::size_t image_size = 32;
  std::size_t detail_size = 7;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

inline constexpr float kSyntheticBackground = 0.35f;
inline constexpr float kSyntheticStroke = 0.85f;

inline bool synthetic_stroke(std::size_t label, std::size_t i, std::size_t j, std::size_t d) {
  return label == 0 ? i == j : i + j == d - 1;
}

inline Dataset gen_synthetic(const SyntheticOptions& opt) {
  if (opt.image_size == 0 || opt.detail_size < 2 || opt.detail_size * 4 >= opt.image_size) {
    throw ArgumentError("gen_synthetic: need 2 <= detail_size < image_size / 4, got detail " +
                        std::to_string(opt.detail_size) + " for image " + std::to_string(opt.image_size));
  }
  if (!(opt.noise >= 0.0)) throw ArgumentError("gen_synthetic: noise must be >= 0");
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pos(0, opt.image_size - opt.detail_size);
  const std::size_t s = opt.image_size, d = opt.detail_size;

  Dataset ds;
  ds.classes = 2;
  for (std::size_t n = 0; n < opt.n; ++n) {
    const std::size_t label = n % 2;
    Tensor<float> img({1, s, s}, kSyntheticBackground);
    if (opt.noise > 0) {
      for (auto& v : img.values()) v = static_cast<float>(std::clamp(v + opt.noise * gauss(rng), 0.0, 1.0));
    }
    const std::size_t y0 = pos(rng), x0 = pos(rng);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        if (synthetic_stroke(label, i, j, d)) img.at(0, y0 + i, x0 + j) = kSyntheticStroke;
    char id[32];
    std::snprintf(id, sizeof id, "img_%05zu", n);
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
    ds.ids.emplace_back(id);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Manifest ingestion. The manifest is CSV with header `path,label`; paths are
// relative to `root`. Dataset order equals manifest order.

inline std::string trim(std::string s) {
  const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && ws(s.back())) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && ws(s[i])) ++i;
  return s.substr(i);
}

// Image ids are file stems; when stems collide (e.g. per-class folders with
// the same file names) the whole relative path without extension is used,
// with '/' replaced by '_'.
inline std::vector<std::string> ids_from_paths(const std::vector<std::string>& rel) {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  bool unique = true;
  for (const auto& r : rel) {
    ids.push_back(std::filesystem::path(r).stem().string());
    unique = unique && seen.insert(ids.back()).second;
  }
  if (unique) return ids;
  for (std::size_t i = 0; i < rel.size(); ++i) {
    std::filesystem::path p(rel[i]);
    ids[i] = (p.parent_path() / p.stem()).generic_string();
    std::replace(ids[i].begin(), ids[i].end(), '/', '_');
  }
  return ids;
}

inline Dataset load_image_dir(const std::filesystem::path& root, const std::filesystem::path& manifest) {
  std::ifstream f(manifest);
  if (!f) throw IoError("missing manifest " + manifest.string());
  Dataset ds;
  std::vector<std::string> rels;
  std::string line;
  std::size_t lineno = 0;
  std::size_t max_label = 0;
  while (std::getline(f, line)) {
    ++lineno;
    line = trim(line);
    if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line = line.substr(3);
    if (line.empty()) continue;
    if (lineno == 1) {
      if (line != "path,label") throw ParseError(manifest.string() + ": expected header 'path,label'");
      continue;
    }
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw ParseError(manifest.string() + ":" + std::to_string(lineno) + ": expected 'path,label'");
    }
    const std::string rel = trim(line.substr(0, comma));
    const std::string lab = trim(line.substr(comma + 1));
    std::size_t label = 0;
    {
      std::size_t used = 0;
      bool ok = !lab.empty() && std::all_of(lab.begin(), lab.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
      if (ok) {
        try {
          label = std::stoul(lab, &used);
        } catch (...) {
          ok = false;
        }
      }
      if (!ok || used != lab.size()) {
        throw ArgumentError(manifest.string() + ":" + std::to_string(lineno) + ": unknown label '" + lab + "'");
      }
    }
    const auto path = root / rel;
    if (!std::filesystem::exists(path)) throw IoError("missing image file " + path.string());
    ds.images.push_back(read_image(path));
    ds.labels.push_back(label);
    rels.push_back(rel);
    max_label = std::max(max_label, label);
  }
  ds.ids = ids_from_paths(rels);
  ds.classes = std::max<std::size_t>(2, max_label + 1);
  if (!ds.empty()) validate_dataset(ds);
  return ds;
}

inline Dataset load_image_dir(const std::filesystem::path& root) {
  return load_image_dir(root, root / "manifest.csv");
}

// Writes `root/images/<id>.pgm` and `root/manifest.csv`. Grayscale only.
inline void save_image_dir(const Dataset& ds, const std::filesystem::path& root) {
  std::filesystem::create_directories(root / "images");
  std::ofstream m(root / "manifest.csv", std::ios::binary);
  if (!m) throw IoError("cannot write " + (root / "manifest.csv").string());
  m << "path,label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::string rel = "images/" + ds.ids[i] + ".pgm";
    write_pgm(root / rel, ds.images[i]);
    m << rel << ',' << ds.labels[i] << '\n';
  }
}

// ---------------------------------------------------------------------------

// Bilinear resampling of every channel to target x target (see resample.hpp
// for the pixel alignment).
inline Tensor<float> resize(const Tensor<float>& image, std::size_t target) {
  if (target == 0) throw ArgumentError("resize: target must be >= 1");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == target && w == target) return image;
  Tensor<float> out({c, target, target});
  for (std::size_t ch = 0; ch < c; ++ch) {
    detail::bilinear_plane(image.data() + ch * h * w, h, w, out.data() + ch * target * target, target, target);
  }
  return out;
}

inline Dataset resize_dataset(Dataset ds, std::size_t target) {
  for (auto& img : ds.images) img = resize(img, target);
  return ds;
}

// Stratified split: within each class a seeded shuffle picks
// round(count * eval_fraction) eval samples (at least one per split). Both
// outputs keep the original relative order.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double eval_fraction, std::uint64_t seed) {
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
    throw ArgumentError("split: eval_fraction must lie in (0, 1)");
  }
  std::vector<std::vector<std::size_t>> by_class(ds.classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(ds.labels[i]).push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train_idx, eval_idx;
  for (std::size_t c = 0; c < ds.classes; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    if (idx.size() < 2) {
      throw ArgumentError("split: class " + std::to_string(c) + " has fewer than 2 samples");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_eval = static_cast<std::size_t>(std::llround(static_cast<double>(idx.size()) * eval_fraction));
    n_eval = std::clamp<std::size_t>(n_eval, 1, idx.size() - 1);
    eval_idx.insert(eval_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_eval));
    train_idx.insert(train_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_eval), idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(eval_idx.begin(), eval_idx.end());
  return {ds.subset(train_idx, SplitTag::train), ds.subset(eval_idx, SplitTag::eval)};
}

}  // namespace amen
