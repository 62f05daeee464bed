#include "car/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "car/error.hpp"
#include "car/spectral.hpp"

namespace car::ad {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kAddColumn: return "add_column";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kMaskedSoftmax: return "masked_softmax";
    case OpKind::kSubtractLabelLogit: return "subtract_label_logit";
    case OpKind::kCrossEntropyMean: return "cross_entropy_mean";
    case OpKind::kSum: return "sum";
    case OpKind::kSpectralNorm: return "spectral_norm";
  }
  return "unknown";
}

const Matrix& Tensor::value() const {
  if (graph_ == nullptr) throw ParameterError("tensor: not attached to a graph");
  return graph_->value(id_);
}

double Tensor::item() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw RankError("tensor: item() on non-scalar of shape " + v.shape_string());
  }
  return v[0];
}

bool Tensor::requires_grad() const { return graph_->node(id_).requires_grad; }

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Masked softmax of one row into `out`; `excluded` < 0 means no mask.
void softmax_row(std::span<const double> in, int excluded, std::span<double> out) {
  double shift = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (static_cast<int>(i) != excluded) shift = std::max(shift, in[i]);
  }
  double z = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (static_cast<int>(i) == excluded) {
      out[i] = 0.0;
    } else {
      out[i] = std::exp(in[i] - shift);
      z += out[i];
    }
  }
  for (double& o : out) o /= z;
}

void require_same_shape(const Matrix& a, const Matrix& b, std::string_view op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shapes " + a.shape_string() +
                         " and " + b.shape_string() + " differ");
  }
}

void require_labels(const Matrix& logits, std::span<const int> labels,
                    std::string_view op) {
  if (labels.size() != logits.rows()) {
    throw DimensionError(std::string(op) + ": " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(logits.rows()) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) {
      throw DimensionError(std::string(op) + ": label " + std::to_string(y) +
                           " outside [0, " + std::to_string(logits.cols()) + ")");
    }
  }
}

}  // namespace

void Graph::check_owner(const Tensor& t) const {
  if (t.graph() != this || t.id() >= nodes_.size()) {
    throw ParameterError("graph: tensor belongs to a different graph");
  }
}

Tensor Graph::leaf(Matrix value) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Graph::constant(Matrix value) {
  Node n;
  n.kind = OpKind::kConstant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Graph::record(Node node) {
  for (std::size_t p : node.parents) {
    if (p >= nodes_.size()) throw ParameterError("graph: dangling parent id");
    node.requires_grad = node.requires_grad || nodes_[p].requires_grad;
  }
  evaluate(node);
  nodes_.push_back(std::move(node));
  return Tensor(this, nodes_.size() - 1);
}

void Graph::evaluate(Node& n) const {
  auto in = [&](std::size_t k) -> const Matrix& { return nodes_[n.parents[k]].value; };

  switch (n.kind) {
    case OpKind::kLeaf:
    case OpKind::kConstant:
      return;
    case OpKind::kMatMul:
      n.value = car::matmul(in(0), in(1));
      return;
    case OpKind::kTranspose:
      n.value = in(0).transposed();
      return;
    case OpKind::kAdd:
      require_same_shape(in(0), in(1), "add");
      n.value = in(0) + in(1);
      return;
    case OpKind::kSub:
      require_same_shape(in(0), in(1), "sub");
      n.value = in(0) - in(1);
      return;
    case OpKind::kMul:
      require_same_shape(in(0), in(1), "mul");
      n.value = hadamard(in(0), in(1));
      return;
    case OpKind::kScale:
      n.value = in(0) * n.scalar;
      return;
    case OpKind::kAddScalar: {
      n.value = in(0);
      for (double& x : n.value.values()) x += n.scalar;
      return;
    }
    case OpKind::kAddColumn: {
      const Matrix& a = in(0);
      const Matrix& b = in(1);
      if (b.cols() != 1 || b.rows() != a.rows()) {
        throw DimensionError("add_column: cannot add " + b.shape_string() +
                             " to every column of " + a.shape_string());
      }
      n.value = a;
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) n.value(r, c) += b[r];
      return;
    }
    case OpKind::kRelu: {
      n.value = in(0);
      for (double& x : n.value.values()) x = x > 0.0 ? x : 0.0;
      return;
    }
    case OpKind::kSigmoid: {
      n.value = in(0);
      for (double& x : n.value.values()) x = stable_sigmoid(x);
      return;
    }
    case OpKind::kMaskedSoftmax: {
      const Matrix& a = in(0);
      n.value = Matrix(a.rows(), a.cols());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        softmax_row(a.row(r), n.indices[r],
                    n.value.values().subspan(r * a.cols(), a.cols()));
      }
      return;
    }
    case OpKind::kSubtractLabelLogit: {
      const Matrix& a = in(0);
      n.value = a;
      for (std::size_t r = 0; r < a.rows(); ++r) {
        const double ref = a(r, static_cast<std::size_t>(n.indices[r]));
        for (std::size_t c = 0; c < a.cols(); ++c) n.value(r, c) = a(r, c) - ref;
      }
      return;
    }
    case OpKind::kCrossEntropyMean: {
      const Matrix& a = in(0);
      n.aux_a = Matrix(a.rows(), a.cols());
      double total = 0.0;
      for (std::size_t r = 0; r < a.rows(); ++r) {
        auto row = a.row(r);
        const auto top = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        const double shift = row[top];
        // log Σ exp(x − shift) = log1p(Σ_{i≠top} …) keeps tiny losses when the label wins.
        double rest = 0.0;
        for (std::size_t i = 0; i < row.size(); ++i)
          if (i != top) rest += std::exp(row[i] - shift);
        total += std::log1p(rest) + (shift - row[static_cast<std::size_t>(n.indices[r])]);
        softmax_row(row, kNoExclusion,
                    n.aux_a.values().subspan(r * a.cols(), a.cols()));
      }
      n.value = Matrix(1, 1, total / static_cast<double>(a.rows()));
      return;
    }
    case OpKind::kSum:
      n.value = Matrix(1, 1, car::sum(in(0)));
      return;
    case OpKind::kSpectralNorm: {
      spectral::PowerIterationOptions opts;
      opts.max_iters = static_cast<int>(n.indices.at(0));
      opts.tol = n.scalar;
      opts.vector_tol = n.scalar_b;
      const auto t = spectral::power_iteration(in(0), opts);
      n.value = Matrix(1, 1, t.sigma);
      n.aux_a = Matrix::column_vector(t.u);
      n.aux_b = Matrix::column_vector(t.v);
      return;
    }
  }
}

Gradients Graph::backward(const Tensor& root) const {
  check_owner(root);
  const Matrix& rv = nodes_[root.id()].value;
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw RankError("backward: root must be scalar, got " + rv.shape_string());
  }

  Gradients out;
  out.grads_.reserve(nodes_.size());
  for (const Node& n : nodes_) out.grads_.emplace_back(n.value.rows(), n.value.cols());
  auto& g = out.grads_;
  g[root.id()][0] = 1.0;

  backward_order_.clear();
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || n.parents.empty()) continue;
    backward_order_.push_back(id);
    const Matrix& go = g[id];

    auto accumulate = [&](std::size_t k, const Matrix& contrib) {
      const std::size_t p = n.parents[k];
      if (nodes_[p].requires_grad) g[p] += contrib;
    };
    auto wants = [&](std::size_t k) { return nodes_[n.parents[k]].requires_grad; };
    auto in = [&](std::size_t k) -> const Matrix& { return nodes_[n.parents[k]].value; };

    switch (n.kind) {
      case OpKind::kLeaf:
      case OpKind::kConstant:
        break;
      case OpKind::kMatMul:
        if (wants(0)) accumulate(0, matmul_nt(go, in(1)));
        if (wants(1)) accumulate(1, matmul_tn(in(0), go));
        break;
      case OpKind::kTranspose:
        accumulate(0, go.transposed());
        break;
      case OpKind::kAdd:
        accumulate(0, go);
        accumulate(1, go);
        break;
      case OpKind::kSub:
        accumulate(0, go);
        if (wants(1)) accumulate(1, go * -1.0);
        break;
      case OpKind::kMul:
        if (wants(0)) accumulate(0, hadamard(go, in(1)));
        if (wants(1)) accumulate(1, hadamard(go, in(0)));
        break;
      case OpKind::kScale:
        accumulate(0, go * n.scalar);
        break;
      case OpKind::kAddScalar:
        accumulate(0, go);
        break;
      case OpKind::kAddColumn: {
        accumulate(0, go);
        if (wants(1)) {
          Matrix gb(go.rows(), 1);
          for (std::size_t r = 0; r < go.rows(); ++r)
            for (std::size_t c = 0; c < go.cols(); ++c) gb[r] += go(r, c);
          accumulate(1, gb);
        }
        break;
      }
      case OpKind::kRelu: {
        Matrix d = go;
        const Matrix& x = in(0);
        for (std::size_t i = 0; i < d.size(); ++i)
          if (!(x[i] > 0.0)) d[i] = 0.0;
        accumulate(0, d);
        break;
      }
      case OpKind::kSigmoid: {
        Matrix d = go;
        for (std::size_t i = 0; i < d.size(); ++i) {
          const double s = n.value[i];
          d[i] *= s * (1.0 - s);
        }
        accumulate(0, d);
        break;
      }
      case OpKind::kMaskedSoftmax: {
        // dx_i = y_i (g_i − Σ_k g_k y_k); the excluded entry has y = 0.
        const Matrix& y = n.value;
        Matrix d(y.rows(), y.cols());
        for (std::size_t r = 0; r < y.rows(); ++r) {
          const double inner = dot(go.row(r), y.row(r));
          for (std::size_t c = 0; c < y.cols(); ++c) d(r, c) = y(r, c) * (go(r, c) - inner);
        }
        accumulate(0, d);
        break;
      }
      case OpKind::kSubtractLabelLogit: {
        Matrix d = go;
        for (std::size_t r = 0; r < go.rows(); ++r) {
          double row_sum = 0.0;
          for (std::size_t c = 0; c < go.cols(); ++c) row_sum += go(r, c);
          d(r, static_cast<std::size_t>(n.indices[r])) -= row_sum;
        }
        accumulate(0, d);
        break;
      }
      case OpKind::kCrossEntropyMean: {
        Matrix d = n.aux_a;
        const double w = go[0] / static_cast<double>(d.rows());
        for (std::size_t r = 0; r < d.rows(); ++r) {
          d(r, static_cast<std::size_t>(n.indices[r])) -= 1.0;
        }
        d *= w;
        accumulate(0, d);
        break;
      }
      case OpKind::kSum:
        accumulate(0, Matrix(in(0).rows(), in(0).cols(), go[0]));
        break;
      case OpKind::kSpectralNorm: {
        // Danskin: ∂σ/∂A = u vᵀ with the converged vectors held fixed.
        Matrix d = matmul_nt(n.aux_a, n.aux_b);
        d *= go[0];
        accumulate(0, d);
        break;
      }
    }
  }
  return out;
}

bool Graph::replay_matches() const {
  for (const Node& n : nodes_) {
    if (n.parents.empty()) continue;
    Node copy = n;
    evaluate(copy);
    if (!copy.value.same_shape(n.value)) return false;
    if (std::memcmp(copy.value.values().data(), n.value.values().data(),
                    n.value.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

// ---- primitives -----------------------------------------------------------

namespace {

Graph& common_graph(const Tensor& a, const Tensor& b) {
  if (!a.valid() || a.graph() != b.graph()) {
    throw ParameterError("operands belong to different graphs");
  }
  return *a.graph();
}

Graph& graph_of(const Tensor& a) {
  if (!a.valid()) throw ParameterError("tensor is not attached to a graph");
  return *a.graph();
}

Tensor unary(OpKind kind, const Tensor& a, double scalar = 0.0,
             std::vector<int> indices = {}) {
  Node n;
  n.kind = kind;
  n.parents = {a.id()};
  n.scalar = scalar;
  n.indices = std::move(indices);
  return graph_of(a).record(std::move(n));
}

Tensor binary(OpKind kind, const Tensor& a, const Tensor& b) {
  Node n;
  n.kind = kind;
  n.parents = {a.id(), b.id()};
  return common_graph(a, b).record(std::move(n));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) { return binary(OpKind::kMatMul, a, b); }
Tensor transpose(const Tensor& a) { return unary(OpKind::kTranspose, a); }
Tensor add(const Tensor& a, const Tensor& b) { return binary(OpKind::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(OpKind::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(OpKind::kMul, a, b); }
Tensor scale(const Tensor& a, double c) { return unary(OpKind::kScale, a, c); }
Tensor add_scalar(const Tensor& a, double c) { return unary(OpKind::kAddScalar, a, c); }
Tensor add_column(const Tensor& a, const Tensor& b) {
  return binary(OpKind::kAddColumn, a, b);
}
Tensor relu(const Tensor& a) { return unary(OpKind::kRelu, a); }
Tensor sigmoid(const Tensor& a) { return unary(OpKind::kSigmoid, a); }

Tensor masked_softmax(const Tensor& logits, int excluded) {
  const Matrix& v = logits.value();
  if (v.rows() != 1) {
    throw DimensionError("masked_softmax: expected a 1xK row, got " + v.shape_string());
  }
  const int k = static_cast<int>(v.cols());
  if (k < 2) throw DegenerateClassError("masked_softmax: needs K >= 2");
  if (excluded < 0 || excluded >= k) {
    throw DimensionError("masked_softmax: excluded index " + std::to_string(excluded) +
                         " outside [0, " + std::to_string(k) + ")");
  }
  const int ex[1] = {excluded};
  return masked_softmax_rows(logits, ex);
}

Tensor masked_softmax_rows(const Tensor& logits, std::span<const int> excluded) {
  const Matrix& v = logits.value();
  if (v.cols() < 2) throw DegenerateClassError("masked_softmax: needs K >= 2");
  if (excluded.size() != v.rows()) {
    throw DimensionError("masked_softmax: " + std::to_string(excluded.size()) +
                         " exclusions for " + std::to_string(v.rows()) + " rows");
  }
  for (int e : excluded) {
    if (e != kNoExclusion && (e < 0 || static_cast<std::size_t>(e) >= v.cols())) {
      throw DimensionError("masked_softmax: excluded index " + std::to_string(e) +
                           " out of range");
    }
  }
  return unary(OpKind::kMaskedSoftmax, logits, 0.0,
               std::vector<int>(excluded.begin(), excluded.end()));
}

Tensor subtract_label_logit(const Tensor& a, std::span<const int> labels) {
  require_labels(a.value(), labels, "subtract_label_logit");
  return unary(OpKind::kSubtractLabelLogit, a, 0.0,
               std::vector<int>(labels.begin(), labels.end()));
}

Tensor cross_entropy_mean(const Tensor& logits, std::span<const int> labels) {
  if (logits.value().rows() == 0) throw EmptyBatchError("cross_entropy_mean: empty batch");
  require_labels(logits.value(), labels, "cross_entropy_mean");
  return unary(OpKind::kCrossEntropyMean, logits, 0.0,
               std::vector<int>(labels.begin(), labels.end()));
}

Tensor sum(const Tensor& a) { return unary(OpKind::kSum, a); }

// ---- gradient checking ----------------------------------------------------

namespace {

double evaluate_loss(const LossBuilder& build, std::span<const Matrix> params) {
  Graph g;
  std::vector<Tensor> leaves;
  leaves.reserve(params.size());
  for (const Matrix& p : params) leaves.push_back(g.leaf(p));
  const double v = build(g, leaves).item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
  return v;
}

}  // namespace

std::vector<Matrix> gradients(const LossBuilder& build, std::span<const Matrix> params) {
  Graph g;
  std::vector<Tensor> leaves;
  leaves.reserve(params.size());
  for (const Matrix& p : params) leaves.push_back(g.leaf(p));
  const Tensor root = build(g, leaves);
  if (!std::isfinite(root.item())) throw NumericError("gradients: non-finite loss");
  const Gradients grads = g.backward(root);
  std::vector<Matrix> out;
  out.reserve(leaves.size());
  for (const Tensor& l : leaves) out.push_back(grads[l]);
  return out;
}

double grad_check(const LossBuilder& build, std::span<const Matrix> params, double eps,
                  double floor) {
  if (!(eps > 0.0 && floor > 0.0)) throw ParameterError("grad_check: eps and floor must be positive");
  const std::vector<Matrix> analytic = gradients(build, params);

  std::vector<Matrix> work(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t p = 0; p < work.size(); ++p) {
    for (std::size_t i = 0; i < work[p].size(); ++i) {
      const double saved = work[p][i];
      work[p][i] = saved + eps;
      const double up = evaluate_loss(build, work);
      work[p][i] = saved - eps;
      const double down = evaluate_loss(build, work);
      work[p][i] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace car::ad
