#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "fdlab/attacks/optimizer.hpp"

namespace fdlab::attacks {

namespace fs = std::filesystem;

inline std::string delta_key(const std::string& spec_hash, std::size_t index) {
  return "delta/" + spec_hash + "/" + std::to_string(index);
}

/// One JSON-lines record: spec hash, indices, delta statistics, loss trace,
/// and the archive key of the stored delta when tensors are persisted.
template <typename T>
nlohmann::json to_record(const AttackResult<T>& r, const std::string& spec_hash, bool with_tensor) {
  nlohmann::json j = {{"spec_hash", spec_hash},
                      {"index", r.index},
                      {"variant", to_string(r.spec.variant)},
                      {"tap", is_baseline(r.spec.variant) ? nlohmann::json(nullptr) : nlohmann::json(r.spec.tap)},
                      {"y_src", r.spec.y_src},
                      {"y_tgt", r.spec.y_tgt ? nlohmann::json(*r.spec.y_tgt) : nlohmann::json(nullptr)},
                      {"epsilon", r.spec.epsilon},
                      {"delta_linf", r.linf()},
                      {"delta_l2", r.l2()},
                      {"projected_pixels", r.projected_pixels},
                      {"loss_trace", r.loss_trace}};
  if (with_tensor) j["delta_key"] = delta_key(spec_hash, r.index);
  return j;
}

/// Appends records to `jsonl` and, when `archive` is non-null, adds every delta to it.
/// `spec_hash` identifies the attack template shared by the results.
template <typename T>
void append_results(const fs::path& jsonl, const std::vector<AttackResult<T>>& results, const std::string& spec_hash,
                    TensorArchive* archive) {
  std::ofstream out(jsonl, std::ios::app);
  if (!out) throw LoadError("cannot write " + jsonl.string());
  for (const auto& r : results) {
    out << to_record(r, spec_hash, archive != nullptr).dump() << '\n';
    if (archive) archive->add(delta_key(spec_hash, r.index), r.delta);
  }
}

inline std::vector<nlohmann::json> read_records(const fs::path& jsonl) {
  std::ifstream in(jsonl);
  if (!in) throw LoadError("cannot open " + jsonl.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(jsonl.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace fdlab::attacks
