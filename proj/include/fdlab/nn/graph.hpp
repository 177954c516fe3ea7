#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fdlab/core/archive.hpp"
#include "fdlab/nn/ops.hpp"

namespace fdlab::nn {

/// Per-call activations and op state recorded by `Graph::forward`.
template <typename T>
struct Tape {
  std::vector<Tensor<T>> out;
  std::vector<Tensor<T>> saved;
  int upto = -1;
  bool training = false;
};

/// A directed acyclic graph of ops in topological (insertion) order. Node 0
/// is the input. Inference and backpropagation are const; per-call state
/// lives in a Tape owned by the caller.
template <typename T>
class Graph {
 public:
  struct Node {
    std::unique_ptr<Op<T>> op;
    std::vector<int> inputs;
    std::string name;
    Shape shape;
    std::size_t param_offset = 0;
  };

  explicit Graph(Shape input_shape = {}) {
    nodes_.push_back(Node{nullptr, {}, "input", std::move(input_shape), 0});
  }

  Graph(const Graph& other) : Graph(other.nodes_[0].shape) { copy_from(other); }
  Graph& operator=(const Graph& other) {
    if (this != &other) {
      nodes_.clear();
      nodes_.push_back(Node{nullptr, {}, "input", other.nodes_[0].shape, 0});
      num_params_ = 0;
      copy_from(other);
    }
    return *this;
  }
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  int add(std::unique_ptr<Op<T>> op, std::vector<int> inputs, std::string name = {}) {
    std::vector<Shape> in_shapes;
    for (int i : inputs) {
      require(i >= 0 && i < int(nodes_.size()), "graph: input node out of range");
      in_shapes.push_back(nodes_[i].shape);
    }
    Shape s = op->output_shape(in_shapes);
    const std::size_t offset = num_params_;
    num_params_ += op->params().size();
    if (name.empty()) name = op->kind() + std::to_string(nodes_.size());
    nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(name), std::move(s), offset});
    return int(nodes_.size()) - 1;
  }

  /// Convenience for single-input ops.
  int add(std::unique_ptr<Op<T>> op, int input, std::string name = {}) {
    return add(std::move(op), std::vector<int>{input}, std::move(name));
  }

  int size() const { return int(nodes_.size()); }
  int last() const { return int(nodes_.size()) - 1; }
  const Shape& input_shape() const { return nodes_[0].shape; }
  const Shape& shape(int node) const { return nodes_.at(node).shape; }
  const Node& node(int i) const { return nodes_.at(i); }

  int find(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
      if (nodes_[i].name == name) return i;
    throw LookupError("graph has no node named '" + name + "'");
  }

  void init(Rng& rng) {
    for (auto& n : nodes_)
      if (n.op) n.op->init(rng);
  }

  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> out;
    for (auto& n : nodes_)
      if (n.op)
        for (auto& p : n.op->params()) out.push_back(&p);
    return out;
  }
  std::vector<const Tensor<T>*> parameters() const {
    std::vector<const Tensor<T>*> out;
    for (const auto& n : nodes_)
      if (n.op)
        for (const auto& p : std::as_const(*n.op).params()) out.push_back(&p);
    return out;
  }
  std::vector<Tensor<T>*> buffers() {
    std::vector<Tensor<T>*> out;
    for (auto& n : nodes_)
      if (n.op)
        for (auto& b : n.op->buffers()) out.push_back(&b);
    return out;
  }
  std::vector<const Tensor<T>*> buffers() const {
    std::vector<const Tensor<T>*> out;
    for (const auto& n : nodes_)
      if (n.op)
        for (const auto& b : std::as_const(*n.op).buffers()) out.push_back(&b);
    return out;
  }

  /// Zeroed gradient storage aligned with `parameters()`.
  std::vector<Tensor<T>> zero_grads() const {
    std::vector<Tensor<T>> g;
    for (const auto* p : parameters()) g.emplace_back(p->shape());
    return g;
  }

  /// Evaluates nodes [1, upto]. Nodes that `upto` does not depend on are skipped.
  void forward(const Tensor<T>& x, int upto, bool training, Tape<T>& tape) const {
    require(upto >= 0 && upto < size(), "graph: node out of range");
    require(x.rank() >= 1 && x.sample_shape() == nodes_[0].shape,
            "graph input shape mismatch: expected " + shape_str(nodes_[0].shape) + " got " + shape_str(x.sample_shape()));
    const auto needed = ancestors(upto);
    tape.out.assign(upto + 1, Tensor<T>{});
    tape.saved.assign(upto + 1, Tensor<T>{});
    tape.out[0] = x;
    tape.upto = upto;
    tape.training = training;
    std::vector<const Tensor<T>*> in;
    for (int i = 1; i <= upto; ++i) {
      if (!needed[i]) continue;
      in.clear();
      for (int j : nodes_[i].inputs) in.push_back(&tape.out[j]);
      nodes_[i].op->forward(in, tape.out[i], tape.saved[i], training);
    }
  }

  Tensor<T> run(const Tensor<T>& x, int upto) const {
    Tape<T> tape;
    forward(x, upto, false, tape);
    return std::move(tape.out[upto]);
  }

  /// Backpropagates `seed` (d scalar / d node output) through the tape.
  /// Accumulates parameter gradients into `pgrad` when non-null and returns
  /// the gradient w.r.t. the graph input when `want_input` is set.
  Tensor<T> backward(const Tape<T>& tape, int node, const Tensor<T>& seed, std::vector<Tensor<T>>* pgrad,
                     bool want_input) const {
    require(node >= 1 && node <= tape.upto, "graph backward: node not on tape");
    require(seed.shape() == tape.out[node].shape(), "graph backward: seed shape mismatch");
    std::vector<Tensor<T>> grads(node + 1);
    grads[node] = seed;
    std::vector<const Tensor<T>*> in;
    std::vector<Tensor<T>*> gin;
    for (int i = node; i >= 1; --i) {
      if (grads[i].empty()) continue;
      const auto& n = nodes_[i];
      in.clear();
      gin.clear();
      for (int j : n.inputs) {
        in.push_back(&tape.out[j]);
        if (j == 0 && !want_input) {
          gin.push_back(nullptr);
          continue;
        }
        if (grads[j].empty()) grads[j].reset(tape.out[j].shape());
        gin.push_back(&grads[j]);
      }
      std::span<Tensor<T>> pg;
      if (pgrad && !n.op->params().empty()) pg = std::span<Tensor<T>>(pgrad->data() + n.param_offset, n.op->params().size());
      n.op->backward(in, tape.out[i], tape.saved[i], grads[i], gin, pg);
      grads[i] = Tensor<T>{};
    }
    if (!want_input) return {};
    if (grads[0].empty()) grads[0].reset(tape.out[0].shape());
    return std::move(grads[0]);
  }

  template <typename U>
  Graph<U> cast() const {
    Graph<U> g(nodes_[0].shape);
    for (int i = 1; i < size(); ++i)
      g.add(make_op<U>(nodes_[i].op->kind(), nodes_[i].op->attributes()), nodes_[i].inputs, nodes_[i].name);
    auto dst = g.parameters();
    auto src = parameters();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
    auto dbuf = g.buffers();
    auto sbuf = buffers();
    for (std::size_t i = 0; i < sbuf.size(); ++i) *dbuf[i] = sbuf[i]->template cast<U>();
    return g;
  }

  void store(TensorArchive& ar, const std::string& prefix) const {
    auto ps = parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) ar.add(prefix + "p" + std::to_string(i), *ps[i]);
    auto bs = buffers();
    for (std::size_t i = 0; i < bs.size(); ++i) ar.add(prefix + "b" + std::to_string(i), *bs[i]);
  }

  void restore(const TensorArchive& ar, const std::string& prefix) {
    auto load_into = [&](std::vector<Tensor<T>*> dst, const std::string& tag) {
      for (std::size_t i = 0; i < dst.size(); ++i) {
        const auto& src = ar.at(prefix + tag + std::to_string(i));
        if (src.shape() != dst[i]->shape())
          throw LoadError("archive tensor " + prefix + tag + std::to_string(i) + " has shape " + shape_str(src.shape()) +
                          ", expected " + shape_str(dst[i]->shape()));
        *dst[i] = src.template cast<T>();
      }
    };
    load_into(parameters(), "p");
    load_into(buffers(), "b");
  }

 private:
  std::vector<char> ancestors(int node) const {
    std::vector<char> need(node + 1, 0);
    need[node] = 1;
    for (int i = node; i >= 1; --i)
      if (need[i])
        for (int j : nodes_[i].inputs) need[j] = 1;
    return need;
  }

  void copy_from(const Graph& other) {
    for (int i = 1; i < other.size(); ++i)
      add(make_op<T>(other.nodes_[i].op->kind(), other.nodes_[i].op->attributes()), other.nodes_[i].inputs,
          other.nodes_[i].name);
    auto dst = parameters();
    auto src = other.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = *src[i];
    auto dbuf = buffers();
    auto sbuf = other.buffers();
    for (std::size_t i = 0; i < sbuf.size(); ++i) *dbuf[i] = *sbuf[i];
  }

  std::vector<Node> nodes_;
  std::size_t num_params_ = 0;
};

}  // namespace fdlab::nn
