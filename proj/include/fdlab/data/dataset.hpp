#pragma once

#include <cstdint>
#include <json.hpp>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fdlab/core/archive.hpp"
#include "fdlab/core/error.hpp"
#include "fdlab/core/tensor.hpp"

namespace fdlab::data {

/// One image {C,H,W} with values in [0,1] and its class id.
struct LabeledImage {
  Tensor<float> pixels;
  int label = 0;
};

enum class Provenance { synthetic, folder };

class Dataset {
 public:
  std::vector<LabeledImage> items;
  int num_classes = 0;
  std::vector<std::string> class_names;
  Provenance provenance = Provenance::synthetic;
  std::uint64_t seed = 0;
  std::string source_path;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  Shape image_shape() const { return items.empty() ? Shape{} : items.front().pixels.shape(); }

  /// Throws ArgumentError if pixels leave [0,1], labels are out of range or shapes differ.
  void validate() const {
    require(num_classes >= 1, "dataset: num_classes must be positive");
    require(class_names.size() == std::size_t(num_classes), "dataset: class_names size mismatch");
    const Shape s = image_shape();
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& it = items[i];
      require(it.pixels.shape() == s, "dataset: image " + std::to_string(i) + " has a different shape");
      require(it.label >= 0 && it.label < num_classes, "dataset: label out of range at item " + std::to_string(i));
      for (float v : it.pixels) require(v >= 0.f && v <= 1.f, "dataset: pixel outside [0,1] at item " + std::to_string(i));
    }
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> c(num_classes, 0);
    for (const auto& it : items) ++c[it.label];
    return c;
  }

  template <typename T = float>
  Tensor<T> images(std::span<const std::size_t> idx) const {
    const Shape s = image_shape();
    Shape bs{idx.size()};
    bs.insert(bs.end(), s.begin(), s.end());
    Tensor<T> out(bs);
    const std::size_t d = numel(s);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto& px = items.at(idx[i]).pixels;
      std::copy(px.begin(), px.end(), out.data() + i * d);
    }
    return out;
  }

  std::vector<int> labels(std::span<const std::size_t> idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(items.at(i).label);
    return out;
  }

  /// Content hash over shapes, pixels and labels.
  std::string content_hash() const {
    Fnv1a h;
    for (const auto& it : items) {
      h.update(it.pixels.data(), it.pixels.size() * sizeof(float));
      h.update(&it.label, sizeof it.label);
    }
    for (const auto& n : class_names) h.update(n);
    return h.hex();
  }

  nlohmann::json manifest() const {
    nlohmann::json j;
    j["provenance"] = provenance == Provenance::synthetic ? "synthetic" : "folder";
    if (provenance == Provenance::synthetic) j["seed"] = seed;
    else j["path"] = source_path;
    j["num_classes"] = num_classes;
    j["image_shape"] = image_shape();
    j["count"] = items.size();
    j["class_counts"] = class_counts();
    nlohmann::json ids = nlohmann::json::object();
    for (int c = 0; c < num_classes; ++c) ids[class_names[c]] = c;
    j["class_ids"] = ids;
    j["content_hash"] = content_hash();
    return j;
  }
};

/// Names "class_00", "class_01", ... used when a corpus has no natural names.
inline std::vector<std::string> default_class_names(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back((i < 10 ? "class_0" : "class_") + std::to_string(i));
  return out;
}

}  // namespace fdlab::data
