#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <utility>

#include "fdlab/core/random.hpp"
#include "fdlab/data/dataset.hpp"
#include "fdlab/data/image_io.hpp"

namespace fdlab::data {

inline constexpr const char* kDatasetManifest = "dataset.json";

/// Loads `<root>/<class_name>/<image>`; class ids follow lexicographic
/// subdirectory order and images are resampled to side x side.
inline Dataset load_image_folder(const fs::path& root, std::size_t side = 32) {
  if (!fs::exists(root)) throw LoadError("dataset path does not exist: " + root.string());
  if (!fs::is_directory(root)) throw LoadError("dataset path is not a directory: " + root.string());
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path());
  if (class_dirs.empty()) throw LoadError("no class subdirectories in " + root.string());
  std::sort(class_dirs.begin(), class_dirs.end());

  Dataset ds;
  ds.provenance = Provenance::folder;
  ds.source_path = root.string();
  ds.num_classes = int(class_dirs.size());
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    ds.class_names.push_back(class_dirs[c].filename().string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[c]))
      if (e.is_regular_file() && e.path().filename().string().front() != '.') files.push_back(e.path());
    if (files.empty()) throw LoadError("empty class folder: " + class_dirs[c].string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) ds.items.push_back({to_tensor(read_image(f), side), int(c)});
  }
  return ds;
}

/// Writes the dataset as `<root>/<class_name>/<index>.png` plus a manifest.
inline void export_image_folder(const Dataset& ds, const fs::path& root) {
  fs::create_directories(root);
  std::vector<std::size_t> seen(ds.num_classes, 0);
  for (const auto& it : ds.items) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.png", seen[it.label]++);
    write_png(root / ds.class_names[it.label] / name, from_tensor(it.pixels));
  }
  std::ofstream(root / kDatasetManifest) << ds.manifest().dump(2) << '\n';
}

/// Stratified, seeded split; class k contributes round(fraction * count_k)
/// items to the first part. Both parts keep the original item order.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0, "split: train_fraction must lie in (0,1)");
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.items.size(); ++i) by_class[ds.items[i].label].push_back(i);
  std::vector<char> in_train(ds.items.size(), 0);
  Rng rng(seed);
  for (auto& idx : by_class) {
    rng.shuffle(idx.begin(), idx.end());
    const auto take = std::size_t(std::llround(train_fraction * double(idx.size())));
    for (std::size_t j = 0; j < take && j < idx.size(); ++j) in_train[idx[j]] = 1;
  }
  Dataset a = ds, b = ds;
  a.items.clear();
  b.items.clear();
  for (std::size_t i = 0; i < ds.items.size(); ++i) (in_train[i] ? a : b).items.push_back(ds.items[i]);
  return {std::move(a), std::move(b)};
}

}  // namespace fdlab::data
