#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "car/matrix.hpp"

// Minimal tape-based reverse-mode differentiation over dense matrices.
//
// A Graph is a single-use, append-only tape. Tensors are handles into it.
// Nodes are recorded in construction order, which is already topological, so
// backward is a single reverse sweep. Nothing is shared between graphs.
namespace car::ad {

enum class OpKind {
  kLeaf,
  kConstant,
  kMatMul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kAddColumn,
  kRelu,
  kSigmoid,
  kMaskedSoftmax,
  kSubtractLabelLogit,
  kCrossEntropyMean,
  kSum,
  kSpectralNorm,
};

std::string_view op_name(OpKind kind);

// Sentinel for "no excluded index" in row-wise masked softmax.
inline constexpr int kNoExclusion = -1;

class Graph;

class Tensor {
 public:
  Tensor() = default;

  std::size_t id() const noexcept { return id_; }
  Graph* graph() const noexcept { return graph_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  // Value of a 1×1 tensor.
  double item() const;
  bool requires_grad() const;

 private:
  friend class Graph;
  Tensor(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

struct Node {
  OpKind kind = OpKind::kConstant;
  std::vector<std::size_t> parents;
  Matrix value;
  bool requires_grad = false;

  // Per-op parameters.
  double scalar = 0.0;
  double scalar_b = 0.0;
  std::vector<int> indices;

  // Forward-pass caches consumed by backward (softmax probabilities, the top
  // singular vectors, ...).
  Matrix aux_a;
  Matrix aux_b;
};

// Result of one backward sweep: a gradient for every node of the graph.
// Nodes the root does not depend on hold zeros of the node's shape.
class Gradients {
 public:
  const Matrix& operator[](const Tensor& t) const { return grads_.at(t.id()); }
  const Matrix& at(std::size_t id) const { return grads_.at(id); }
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend class Graph;
  std::vector<Matrix> grads_;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Tensor leaf(Matrix value);
  Tensor constant(Matrix value);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }

  // Records `node`, evaluates its forward value from the parents' cached
  // values and returns a handle to it.
  Tensor record(Node node);

  // Reverse sweep from a 1×1 root. Throws RankError for non-scalar roots.
  Gradients backward(const Tensor& root) const;

  // Re-evaluates every node from its parents' cached values and returns
  // true when all recomputed outputs match the cached ones bit-for-bit.
  bool replay_matches() const;

  // Order in which the last backward() call visited nodes (diagnostics).
  const std::vector<std::size_t>& last_backward_order() const noexcept {
    return backward_order_;
  }

 private:
  void evaluate(Node& node) const;
  void check_owner(const Tensor& t) const;

  std::vector<Node> nodes_;
  mutable std::vector<std::size_t> backward_order_;
};

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
// Elementwise product.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
// a (r×c) plus column vector b (r×1) added to every column.
Tensor add_column(const Tensor& a, const Tensor& b);
// relu'(0) is taken as 0.
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// Softmax of a 1×K row with index `excluded` removed from the normalization
// and forced to exactly 0. Requires K ≥ 2.
Tensor masked_softmax(const Tensor& logits, int excluded);
// Row-wise variant: row q excludes `excluded[q]`, or nothing when that entry
// is kNoExclusion.
Tensor masked_softmax_rows(const Tensor& logits, std::span<const int> excluded);

// out[q, i] = a[q, i] − a[q, labels[q]].
Tensor subtract_label_logit(const Tensor& a, std::span<const int> labels);

// Mean over rows of log Σ_i exp(f[q,i]) − f[q, y_q], max-shift stabilized.
Tensor cross_entropy_mean(const Tensor& logits, std::span<const int> labels);

Tensor sum(const Tensor& a);

// ---- numerical gradient checking -----------------------------------------

// Builds a scalar loss from leaves holding the given parameter values.
using LossBuilder = std::function<Tensor(Graph&, std::span<const Tensor>)>;

// Worst relative error over every parameter entry between the autodiff
// gradient and the central difference (L(θ+ε) − L(θ−ε)) / 2ε, using the
// denominator max(|analytic|, |numeric|, floor).
double grad_check(const LossBuilder& build, std::span<const Matrix> params,
                  double eps = 1e-5, double floor = 1e-8);

// Autodiff gradients of `build` at `params`, one matrix per parameter.
std::vector<Matrix> gradients(const LossBuilder& build,
                              std::span<const Matrix> params);

}  // namespace car::ad
