#include "dymesh/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

namespace dymesh {

namespace {

thread_local int g_no_grad_depth = 0;

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw std::invalid_argument("tensor: negative dimension");
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void check_finite(const std::vector<double>& data, const char* op) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(op) +
                               ": produced a non-finite value");
    }
  }
}

void require_2d(const Tensor& t, const char* op) {
  if (t.shape().size() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected a 2-D tensor, got " +
                                shape_str(t.shape()));
  }
}

using detail::TensorNode;

std::shared_ptr<TensorNode> make_node(std::vector<int64_t> shape,
                                      std::vector<double> data,
                                      std::vector<Tensor> parents,
                                      const char* op) {
  check_finite(data, op);
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (grad_enabled()) {
    bool track = false;
    for (const Tensor& p : parents) track = track || p.requires_grad();
    if (track) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (const Tensor& p : parents) node->parents.push_back(p.node());
    }
  }
  return node;
}

}  // namespace

// --- NoGradGuard ------------------------------------------------------------

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

// --- ComputeGraph -----------------------------------------------------------

namespace detail {

ComputeGraph ComputeGraph::build(TensorNode* root) {
  ComputeGraph graph;
  std::unordered_set<TensorNode*> visited;
  // Iterative post-order DFS: a node enters `order` after all its parents.
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      graph.order.push_back(node);
      stack.pop_back();
    }
  }
  return graph;
}

void ComputeGraph::run_backward() const {
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward();
  }
}

}  // namespace detail

// --- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(std::vector<int64_t> shape, bool requires_grad) {
  return from_data(shape, std::vector<double>(shape_numel(shape), 0.0),
                   requires_grad);
}

Tensor Tensor::full(std::vector<int64_t> shape, double value,
                    bool requires_grad) {
  return from_data(shape, std::vector<double>(shape_numel(shape), value),
                   requires_grad);
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                " does not match data length " +
                                std::to_string(data.size()));
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

const std::vector<int64_t>& Tensor::shape() const { return node_->shape; }
int64_t Tensor::numel() const { return node_->numel(); }

int64_t Tensor::rows() const {
  require_2d(*this, "rows");
  return node_->shape[0];
}

int64_t Tensor::cols() const {
  require_2d(*this, "cols");
  return node_->shape[1];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

const std::vector<double>& Tensor::data() const { return node_->data; }
std::vector<double>& Tensor::mutable_data() { return node_->data; }

double Tensor::value() const {
  if (numel() != 1) {
    throw std::invalid_argument("value: tensor is not a scalar, shape " +
                                shape_str(node_->shape));
  }
  return node_->data[0];
}

double Tensor::at(int64_t r, int64_t c) const {
  require_2d(*this, "at");
  return node_->data[r * node_->shape[1] + c];
}

bool Tensor::has_grad() const {
  return node_ && node_->grad.size() == node_->data.size();
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw std::runtime_error("grad: no gradient accumulated");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.assign(node_->data.size(), 0.0);
}

void Tensor::backward() const {
  if (!node_) throw std::runtime_error("backward: undefined tensor");
  if (numel() != 1) {
    throw std::invalid_argument("backward: expected a scalar loss, shape " +
                                shape_str(node_->shape));
  }
  auto graph = detail::ComputeGraph::build(node_.get());
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  graph.run_backward();
}

// --- elementwise ops ----------------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto node = make_node(a.shape(), std::move(out), {a, b}, "add");
  if (node->requires_grad) {
    auto an = a.node(), bn = b.node();
    TensorNode* rn = node.get();
    node->backward = [an, bn, rn] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < rn->grad.size(); ++i) an->grad[i] += rn->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < rn->grad.size(); ++i) bn->grad[i] += rn->grad[i];
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto node = make_node(a.shape(), std::move(out), {a, b}, "sub");
  if (node->requires_grad) {
    auto an = a.node(), bn = b.node();
    TensorNode* rn = node.get();
    node->backward = [an, bn, rn] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < rn->grad.size(); ++i) an->grad[i] += rn->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < rn->grad.size(); ++i) bn->grad[i] -= rn->grad[i];
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto node = make_node(a.shape(), std::move(out), {a, b}, "mul");
  if (node->requires_grad) {
    auto an = a.node(), bn = b.node();
    TensorNode* rn = node.get();
    node->backward = [an, bn, rn] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < rn->grad.size(); ++i)
          an->grad[i] += rn->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < rn->grad.size(); ++i)
          bn->grad[i] += rn->grad[i] * an->data[i];
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  auto node = make_node(a.shape(), std::move(out), {a}, "scale");
  if (node->requires_grad) {
    auto an = a.node();
    TensorNode* rn = node.get();
    node->backward = [an, rn, s] {
      an->ensure_grad();
      for (size_t i = 0; i < rn->grad.size(); ++i)
        an->grad[i] += rn->grad[i] * s;
    };
  }
  return Tensor::wrap(node);
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + s;
  auto node = make_node(a.shape(), std::move(out), {a}, "add_scalar");
  if (node->requires_grad) {
    auto an = a.node();
    TensorNode* rn = node.get();
    node->backward = [an, rn] {
      an->ensure_grad();
      for (size_t i = 0; i < rn->grad.size(); ++i) an->grad[i] += rn->grad[i];
    };
  }
  return Tensor::wrap(node);
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
  auto node = make_node(a.shape(), std::move(out), {a}, "exp");
  if (node->requires_grad) {
    auto an = a.node();
    TensorNode* rn = node.get();
    node->backward = [an, rn] {
      an->ensure_grad();
      for (size_t i = 0; i < rn->grad.size(); ++i)
        an->grad[i] += rn->grad[i] * rn->data[i];
    };
  }
  return Tensor::wrap(node);
}

Tensor gelu(const Tensor& a) {
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    double x = a.data()[i];
    out[i] = x * 0.5 * (1.0 + std::erf(x * inv_sqrt2));
  }
  auto node = make_node(a.shape(), std::move(out), {a}, "gelu");
  if (node->requires_grad) {
    auto an = a.node();
    TensorNode* rn = node.get();
    node->backward = [an, rn, inv_sqrt2, inv_sqrt2pi] {
      an->ensure_grad();
      for (size_t i = 0; i < rn->grad.size(); ++i) {
        double x = an->data[i];
        double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
        an->grad[i] += rn->grad[i] * (cdf + x * pdf);
      }
    };
  }
  return Tensor::wrap(node);
}

// --- matrix ops ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int64_t m = a.shape()[0], k = a.shape()[1];
  const int64_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw std::invalid_argument("matmul: inner dimensions disagree, " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t p = 0; p < k; ++p) {
      const double aip = ad[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bd + p * n;
      double* orow = out.data() + i * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  auto node = make_node({m, n}, std::move(out), {a, b}, "matmul");
  if (node->requires_grad) {
    auto an = a.node(), bn = b.node();
    TensorNode* rn = node.get();
    node->backward = [an, bn, rn, m, k, n] {
      const double* gy = rn->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        // ga = gy . b^T
        for (int64_t i = 0; i < m; ++i) {
          for (int64_t p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* grow = gy + i * n;
            const double* brow = bn->data.data() + p * n;
            for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            an->grad[i * k + p] += acc;
          }
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        // gb = a^T . gy
        for (int64_t i = 0; i < m; ++i) {
          const double* grow = gy + i * n;
          for (int64_t p = 0; p < k; ++p) {
            const double aip = an->data[i * k + p];
            if (aip == 0.0) continue;
            double* brow = bn->grad.data() + p * n;
            for (int64_t j = 0; j < n; ++j) brow[j] += aip * grow[j];
          }
        }
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const int64_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(a.data().size());
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out[j * r + i] = a.data()[i * c + j];
  auto node = make_node({c, r}, std::move(out), {a}, "transpose");
  if (node->requires_grad) {
    auto an = a.node();
    TensorNode* rn = node.get();
    node->backward = [an, rn, r, c] {
      an->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j)
          an->grad[i * c + j] += rn->grad[j * r + i];
    };
  }
  return Tensor::wrap(node);
}

// --- reductions -----------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  auto node = make_node({1}, {acc}, {a}, "sum");
  if (node->requires_grad) {
    auto an = a.node();
    TensorNode* rn = node.get();
    node->backward = [an, rn] {
      an->ensure_grad();
      for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += rn->grad[0];
    };
  }
  return Tensor::wrap(node);
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  Tensor d = sub(a, b);
  return mean(mul(d, d));
}

// --- softmax / normalization -------------------------------------------------

Tensor masked_softmax(const Tensor& logits, const Tensor& additive_mask) {
  require_2d(logits, "masked_softmax");
  require_2d(additive_mask, "masked_softmax");
  if (additive_mask.requires_grad()) {
    throw std::invalid_argument(
        "masked_softmax: the additive mask must not require gradients");
  }
  const int64_t r = logits.shape()[0], c = logits.shape()[1];
  const bool broadcast = additive_mask.shape()[0] == 1;
  if (additive_mask.shape()[1] != c ||
      (!broadcast && additive_mask.shape()[0] != r)) {
    throw std::invalid_argument("masked_softmax: mask shape " +
                                shape_str(additive_mask.shape()) +
                                " not broadcastable to " +
                                shape_str(logits.shape()));
  }
  std::vector<double> out(logits.data().size());
  for (int64_t i = 0; i < r; ++i) {
    const double* lrow = logits.data().data() + i * c;
    const double* mrow = additive_mask.data().data() + (broadcast ? 0 : i * c);
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < c; ++j) mx = std::max(mx, lrow[j] + mrow[j]);
    if (!(mx > -std::numeric_limits<double>::infinity())) {
      throw std::runtime_error("masked_softmax: degenerate row " +
                               std::to_string(i) + " (fully masked)");
    }
    double denom = 0.0;
    double* orow = out.data() + i * c;
    for (int64_t j = 0; j < c; ++j) {
      double s = lrow[j] + mrow[j];
      orow[j] = (s == -std::numeric_limits<double>::infinity())
                    ? 0.0
                    : std::exp(s - mx);
      denom += orow[j];
    }
    for (int64_t j = 0; j < c; ++j) orow[j] /= denom;
  }
  auto node = make_node(logits.shape(), std::move(out), {logits},
                        "masked_softmax");
  if (node->requires_grad) {
    auto ln = logits.node();
    TensorNode* rn = node.get();
    node->backward = [ln, rn, r, c] {
      ln->ensure_grad();
      for (int64_t i = 0; i < r; ++i) {
        const double* y = rn->data.data() + i * c;
        const double* g = rn->grad.data() + i * c;
        double dot = 0.0;
        for (int64_t j = 0; j < c; ++j) dot += g[j] * y[j];
        double* gl = ln->grad.data() + i * c;
        for (int64_t j = 0; j < c; ++j) gl[j] += y[j] * (g[j] - dot);
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor softmax_rows(const Tensor& logits) {
  return masked_softmax(logits, Tensor::zeros({1, logits.shape()[1]}));
}

Tensor layer_norm(const Tensor& x, double eps) {
  require_2d(x, "layer_norm");
  const int64_t r = x.shape()[0], c = x.shape()[1];
  if (c == 0) throw std::invalid_argument("layer_norm: zero columns");
  std::vector<double> out(x.data().size());
  std::vector<double> inv_sigma(r);
  for (int64_t i = 0; i < r; ++i) {
    const double* row = x.data().data() + i * c;
    double mu = 0.0;
    for (int64_t j = 0; j < c; ++j) mu += row[j];
    mu /= c;
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= c;
    inv_sigma[i] = 1.0 / std::sqrt(var + eps);
    double* orow = out.data() + i * c;
    for (int64_t j = 0; j < c; ++j) orow[j] = (row[j] - mu) * inv_sigma[i];
  }
  auto node = make_node(x.shape(), std::move(out), {x}, "layer_norm");
  if (node->requires_grad) {
    auto xn = x.node();
    TensorNode* rn = node.get();
    node->backward = [xn, rn, r, c, is = std::move(inv_sigma)] {
      xn->ensure_grad();
      for (int64_t i = 0; i < r; ++i) {
        const double* y = rn->data.data() + i * c;
        const double* g = rn->grad.data() + i * c;
        double gmean = 0.0, gymean = 0.0;
        for (int64_t j = 0; j < c; ++j) {
          gmean += g[j];
          gymean += g[j] * y[j];
        }
        gmean /= c;
        gymean /= c;
        double* gx = xn->grad.data() + i * c;
        for (int64_t j = 0; j < c; ++j)
          gx[j] += is[i] * (g[j] - gmean - y[j] * gymean);
      }
    };
  }
  return Tensor::wrap(node);
}

// --- broadcasting row-vector ops ----------------------------------------------

namespace {

void require_rowvec(const Tensor& a, const Tensor& v, const char* op) {
  require_2d(a, op);
  require_2d(v, op);
  if (v.shape()[0] != 1 || v.shape()[1] != a.shape()[1]) {
    throw std::invalid_argument(std::string(op) + ": expected a [1x" +
                                std::to_string(a.shape()[1]) +
                                "] row vector, got " + shape_str(v.shape()));
  }
}

}  // namespace

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  require_rowvec(a, v, "add_rowvec");
  const int64_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(a.data().size());
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j)
      out[i * c + j] = a.data()[i * c + j] + v.data()[j];
  auto node = make_node(a.shape(), std::move(out), {a, v}, "add_rowvec");
  if (node->requires_grad) {
    auto an = a.node(), vn = v.node();
    TensorNode* rn = node.get();
    node->backward = [an, vn, rn, r, c] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < rn->grad.size(); ++i) an->grad[i] += rn->grad[i];
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j) vn->grad[j] += rn->grad[i * c + j];
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor mul_rowvec(const Tensor& a, const Tensor& v) {
  require_rowvec(a, v, "mul_rowvec");
  const int64_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(a.data().size());
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j)
      out[i * c + j] = a.data()[i * c + j] * v.data()[j];
  auto node = make_node(a.shape(), std::move(out), {a, v}, "mul_rowvec");
  if (node->requires_grad) {
    auto an = a.node(), vn = v.node();
    TensorNode* rn = node.get();
    node->backward = [an, vn, rn, r, c] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j)
            an->grad[i * c + j] += rn->grad[i * c + j] * vn->data[j];
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j)
            vn->grad[j] += rn->grad[i * c + j] * an->data[i * c + j];
      }
    };
  }
  return Tensor::wrap(node);
}

// --- structural ops -------------------------------------------------------------

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_2d(a, "concat_cols");
  require_2d(b, "concat_cols");
  if (a.shape()[0] != b.shape()[0]) {
    throw std::invalid_argument("concat_cols: row counts differ, " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  const int64_t r = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  std::vector<double> out(static_cast<size_t>(r) * (ca + cb));
  for (int64_t i = 0; i < r; ++i) {
    std::copy_n(a.data().data() + i * ca, ca, out.data() + i * (ca + cb));
    std::copy_n(b.data().data() + i * cb, cb, out.data() + i * (ca + cb) + ca);
  }
  auto node = make_node({r, ca + cb}, std::move(out), {a, b}, "concat_cols");
  if (node->requires_grad) {
    auto an = a.node(), bn = b.node();
    TensorNode* rn = node.get();
    node->backward = [an, bn, rn, r, ca, cb] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < ca; ++j)
            an->grad[i * ca + j] += rn->grad[i * (ca + cb) + j];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < cb; ++j)
            bn->grad[i * cb + j] += rn->grad[i * (ca + cb) + ca + j];
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const int64_t c = parts[0].cols();
  int64_t total = 0;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_rows");
    if (p.shape()[1] != c) {
      throw std::invalid_argument("concat_rows: column counts differ");
    }
    total += p.shape()[0];
  }
  std::vector<double> out(static_cast<size_t>(total) * c);
  int64_t row = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data() + row * c);
    row += p.shape()[0];
  }
  auto node = make_node({total, c}, std::move(out), parts, "concat_rows");
  if (node->requires_grad) {
    std::vector<std::shared_ptr<TensorNode>> pnodes;
    std::vector<int64_t> prows;
    for (const Tensor& p : parts) {
      pnodes.push_back(p.node());
      prows.push_back(p.shape()[0]);
    }
    TensorNode* rn = node.get();
    node->backward = [pnodes, prows, rn, c] {
      int64_t row = 0;
      for (size_t k = 0; k < pnodes.size(); ++k) {
        if (pnodes[k]->requires_grad) {
          pnodes[k]->ensure_grad();
          for (int64_t i = 0; i < prows[k] * c; ++i)
            pnodes[k]->grad[i] += rn->grad[row * c + i];
        }
        row += prows[k];
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& indices) {
  require_2d(a, "gather_rows");
  const int64_t r = a.shape()[0], c = a.shape()[1];
  for (int64_t idx : indices) {
    if (idx < 0 || idx >= r) {
      throw std::invalid_argument("gather_rows: index " + std::to_string(idx) +
                                  " out of range [0," + std::to_string(r) +
                                  ")");
    }
  }
  const int64_t n = static_cast<int64_t>(indices.size());
  std::vector<double> out(static_cast<size_t>(n) * c);
  for (int64_t i = 0; i < n; ++i)
    std::copy_n(a.data().data() + indices[i] * c, c, out.data() + i * c);
  auto node = make_node({n, c}, std::move(out), {a}, "gather_rows");
  if (node->requires_grad) {
    auto an = a.node();
    TensorNode* rn = node.get();
    node->backward = [an, rn, idx = indices, c] {
      an->ensure_grad();
      for (size_t i = 0; i < idx.size(); ++i)
        for (int64_t j = 0; j < c; ++j)
          an->grad[idx[i] * c + j] += rn->grad[i * c + j];
    };
  }
  return Tensor::wrap(node);
}

Tensor slice_cols(const Tensor& a, int64_t start, int64_t count) {
  require_2d(a, "slice_cols");
  const int64_t r = a.shape()[0], c = a.shape()[1];
  if (start < 0 || count < 0 || start + count > c) {
    throw std::invalid_argument("slice_cols: range [" + std::to_string(start) +
                                ", " + std::to_string(start + count) +
                                ") outside of " + std::to_string(c) +
                                " columns");
  }
  std::vector<double> out(static_cast<size_t>(r) * count);
  for (int64_t i = 0; i < r; ++i)
    std::copy_n(a.data().data() + i * c + start, count, out.data() + i * count);
  auto node = make_node({r, count}, std::move(out), {a}, "slice_cols");
  if (node->requires_grad) {
    auto an = a.node();
    TensorNode* rn = node.get();
    node->backward = [an, rn, r, c, start, count] {
      an->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < count; ++j)
          an->grad[i * c + start + j] += rn->grad[i * count + j];
    };
  }
  return Tensor::wrap(node);
}

Tensor reshape(const Tensor& a, std::vector<int64_t> shape) {
  if (shape_numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: element count mismatch, " +
                                shape_str(a.shape()) + " -> " +
                                shape_str(shape));
  }
  auto node = make_node(std::move(shape), a.data(), {a}, "reshape");
  if (node->requires_grad) {
    auto an = a.node();
    TensorNode* rn = node.get();
    node->backward = [an, rn] {
      an->ensure_grad();
      for (size_t i = 0; i < rn->grad.size(); ++i) an->grad[i] += rn->grad[i];
    };
  }
  return Tensor::wrap(node);
}

Tensor rope_rows(const Tensor& x, const std::vector<int64_t>& positions,
                 double base) {
  require_2d(x, "rope_rows");
  const int64_t r = x.shape()[0], c = x.shape()[1];
  if (c % 2 != 0) {
    throw std::invalid_argument("rope_rows: column count must be even");
  }
  if (static_cast<int64_t>(positions.size()) != r) {
    throw std::invalid_argument("rope_rows: one position per row required");
  }
  const int64_t half = c / 2;
  std::vector<double> freqs(half);
  for (int64_t j = 0; j < half; ++j)
    freqs[j] = std::pow(base, -2.0 * static_cast<double>(j) / c);
  std::vector<double> out(x.data().size());
  for (int64_t i = 0; i < r; ++i) {
    const double* row = x.data().data() + i * c;
    double* orow = out.data() + i * c;
    for (int64_t j = 0; j < half; ++j) {
      double angle = static_cast<double>(positions[i]) * freqs[j];
      double cs = std::cos(angle), sn = std::sin(angle);
      double a = row[2 * j], b = row[2 * j + 1];
      orow[2 * j] = a * cs - b * sn;
      orow[2 * j + 1] = a * sn + b * cs;
    }
  }
  auto node = make_node(x.shape(), std::move(out), {x}, "rope_rows");
  if (node->requires_grad) {
    auto xn = x.node();
    TensorNode* rn = node.get();
    node->backward = [xn, rn, pos = positions, fr = std::move(freqs), r, c] {
      xn->ensure_grad();
      const int64_t half = c / 2;
      for (int64_t i = 0; i < r; ++i) {
        const double* g = rn->grad.data() + i * c;
        double* gx = xn->grad.data() + i * c;
        for (int64_t j = 0; j < half; ++j) {
          double angle = static_cast<double>(pos[i]) * fr[j];
          double cs = std::cos(angle), sn = std::sin(angle);
          // inverse rotation of the incoming gradient
          gx[2 * j] += g[2 * j] * cs + g[2 * j + 1] * sn;
          gx[2 * j + 1] += -g[2 * j] * sn + g[2 * j + 1] * cs;
        }
      }
    };
  }
  return Tensor::wrap(node);
}

// --- gradient checking -----------------------------------------------------------

namespace {

double max_rel_error(const std::vector<double>& analytic,
                     const std::function<double(int64_t, double)>& eval_shifted,
                     const std::vector<double>& base, double h) {
  double worst = 0.0;
  for (size_t i = 0; i < base.size(); ++i) {
    double fp = eval_shifted(static_cast<int64_t>(i), base[i] + h);
    double fm = eval_shifted(static_cast<int64_t>(i), base[i] - h);
    double numeric = (fp - fm) / (2.0 * h);
    double err = std::abs(analytic[i] - numeric) /
                 (std::abs(analytic[i]) + std::abs(numeric) + 1e-10);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, double h) {
  Tensor xg = Tensor::from_data(x.shape(), x.data(), true);
  Tensor y = f(xg);
  if (y.numel() != 1) {
    throw std::invalid_argument("grad_check: f must return a scalar");
  }
  if (!std::isfinite(y.value())) {
    throw std::runtime_error("grad_check: f(x) is not finite");
  }
  y.backward();
  std::vector<double> analytic = xg.has_grad()
                                     ? xg.grad()
                                     : std::vector<double>(x.numel(), 0.0);
  NoGradGuard ng;
  std::vector<double> base = x.data();
  auto eval = [&](int64_t i, double v) {
    std::vector<double> shifted = base;
    shifted[i] = v;
    return f(Tensor::from_data(x.shape(), std::move(shifted))).value();
  };
  return max_rel_error(analytic, eval, base, h);
}

double grad_check(const std::function<Tensor()>& f, const Tensor& param,
                  double h) {
  if (!param.requires_grad()) {
    throw std::invalid_argument("grad_check: parameter does not require grad");
  }
  Tensor p = param;
  p.zero_grad();
  Tensor y = f();
  if (y.numel() != 1) {
    throw std::invalid_argument("grad_check: f must return a scalar");
  }
  if (!std::isfinite(y.value())) {
    throw std::runtime_error("grad_check: f() is not finite");
  }
  y.backward();
  std::vector<double> analytic = p.has_grad()
                                     ? p.grad()
                                     : std::vector<double>(p.numel(), 0.0);
  NoGradGuard ng;
  std::vector<double> base = p.data();
  auto eval = [&](int64_t i, double v) {
    p.mutable_data()[i] = v;
    double out = f().value();
    p.mutable_data()[i] = base[i];
    return out;
  };
  double err = max_rel_error(analytic, eval, base, h);
  p.mutable_data() = base;
  return err;
}

// --- Rng -------------------------------------------------------------------------

Rng::Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

uint64_t Rng::next_u64() { return gen_(); }

double Rng::uniform() {
  return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 drawn in (0, 1] so the log is always finite.
  double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  double radius = std::sqrt(-2.0 * std::log(u1));
  double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

Tensor Rng::uniform_tensor(std::vector<int64_t> shape) {
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = uniform();
  return Tensor::from_data(std::move(shape), std::move(data));
}

Tensor Rng::normal_tensor(std::vector<int64_t> shape, bool requires_grad) {
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = normal();
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

}  // namespace dymesh
