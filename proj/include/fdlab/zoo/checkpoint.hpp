#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>

#include "fdlab/core/archive.hpp"
#include "fdlab/zoo/network.hpp"

namespace fdlab::zoo {

namespace fs = std::filesystem;

/// Provenance recorded next to the weights.
struct CheckpointInfo {
  std::uint64_t training_seed = 0;
  std::string dataset_hash;
  nlohmann::json extra = nlohmann::json::object();
};

inline fs::path weights_path(const fs::path& stem) { return fs::path(stem.string() + ".weights"); }
inline fs::path manifest_path(const fs::path& stem) { return fs::path(stem.string() + ".json"); }

template <typename T>
nlohmann::json describe_graph(const nn::Graph<T>& g) {
  nlohmann::json nodes = nlohmann::json::array();
  for (int i = 1; i < g.size(); ++i) {
    const auto& n = g.node(i);
    nodes.push_back({{"kind", n.op->kind()}, {"attrs", n.op->attributes()}, {"inputs", n.inputs}, {"name", n.name}});
  }
  return {{"input_shape", g.input_shape()}, {"nodes", nodes}};
}

template <typename T>
nn::Graph<T> graph_from_description(const nlohmann::json& j) {
  nn::Graph<T> g(j.at("input_shape").get<Shape>());
  for (const auto& n : j.at("nodes"))
    g.add(nn::make_op<T>(n.at("kind").get<std::string>(), n.at("attrs").get<std::vector<long>>()),
          n.at("inputs").get<std::vector<int>>(), n.at("name").get<std::string>());
  return g;
}

/// Writes `<stem>.weights` (tensor archive) and `<stem>.json` (architecture,
/// tap table, graph layout, training seed, dataset hash, weights hash).
template <typename T>
nlohmann::json save_checkpoint(const TappedNetwork<T>& net, const fs::path& stem, const CheckpointInfo& info = {}) {
  TensorArchive ar;
  net.graph().store(ar, "");
  ar.save(weights_path(stem));
  nlohmann::json taps = nlohmann::json::array();
  for (const auto& t : net.taps()) taps.push_back({{"index", t.index}, {"name", t.internal_name}, {"node", t.node}});
  nlohmann::json m = {{"arch_id", to_string(net.arch())},
                      {"num_classes", net.num_classes()},
                      {"taps", taps},
                      {"graph", describe_graph(net.graph())},
                      {"training_seed", info.training_seed},
                      {"dataset_hash", info.dataset_hash},
                      {"weights_hash", hash_file(weights_path(stem))},
                      {"extra", info.extra}};
  std::ofstream(manifest_path(stem)) << m.dump(2) << '\n';
  return m;
}

template <typename T = float>
TappedNetwork<T> load_checkpoint(const fs::path& stem) {
  std::ifstream in(manifest_path(stem));
  if (!in) throw LoadError("missing checkpoint manifest " + manifest_path(stem).string());
  nlohmann::json m;
  try {
    in >> m;
    auto g = graph_from_description<T>(m.at("graph"));
    g.restore(TensorArchive::load(weights_path(stem)), "");
    std::vector<TapId> taps;
    for (const auto& t : m.at("taps"))
      taps.push_back({t.at("index").get<int>(), t.at("name").get<std::string>(), t.at("node").get<int>()});
    return TappedNetwork<T>(parse_arch(m.at("arch_id").get<std::string>()), std::move(g), std::move(taps),
                            m.at("num_classes").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed checkpoint manifest " + manifest_path(stem).string() + ": " + e.what());
  }
}

inline nlohmann::json read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace fdlab::zoo
