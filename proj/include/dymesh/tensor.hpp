#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace dymesh {

namespace detail {

struct TensorNode {
  std::vector<int64_t> shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

// Reverse topological order over the dynamically recorded graph.
// Parents precede children in `order`; the backward sweep walks it in
// reverse so every node is visited exactly once.
struct ComputeGraph {
  std::vector<TensorNode*> order;
  static ComputeGraph build(TensorNode* root);
  void run_backward() const;
};

}  // namespace detail

// Disables graph recording for its lifetime (thread-local, nestable).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// Dense row-major tensor of 64-bit reals. Tensor is a cheap shared handle;
// operations record parent links when any input requires gradients, and
// backward() replays the recorded graph in reverse topological order.
// Every operation rejects non-finite results instead of propagating them.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<int64_t> shape, double value,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<int64_t> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int64_t>& shape() const;
  int64_t numel() const;
  int64_t rows() const;
  int64_t cols() const;
  bool requires_grad() const;

  const std::vector<double>& data() const;
  std::vector<double>& mutable_data();
  double value() const;
  double at(int64_t r, int64_t c) const;

  bool has_grad() const;
  const std::vector<double>& grad() const;
  void zero_grad();

  // Reverse-mode sweep from this scalar.
  void backward() const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::TensorNode> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor mse(const Tensor& a, const Tensor& b);

// Row softmax of (logits + mask). The mask is an additive log-space term,
// same shape as logits or a single broadcast row; it must not require
// gradients. A row whose entries are all -inf is a degenerate-row error.
Tensor masked_softmax(const Tensor& logits, const Tensor& additive_mask);
Tensor softmax_rows(const Tensor& logits);

// Per-row normalization to zero mean / unit variance (no affine part).
Tensor layer_norm(const Tensor& x, double eps = 1e-5);

// Broadcast a [1 x c] vector over the rows of a [r x c] matrix.
Tensor add_rowvec(const Tensor& a, const Tensor& v);
Tensor mul_rowvec(const Tensor& a, const Tensor& v);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& indices);
Tensor slice_cols(const Tensor& a, int64_t start, int64_t count);
Tensor reshape(const Tensor& a, std::vector<int64_t> shape);

// Rotary embedding over row positions: channel pairs (2j, 2j+1) are rotated
// by positions[i] * base^(-2j/d). Column count must be even.
Tensor rope_rows(const Tensor& x, const std::vector<int64_t>& positions,
                 double base = 10000.0);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// Max over coordinates of |analytic - central difference| /
// (|analytic| + |central| + 1e-10) for a scalar-valued f at x.
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, double h = 1e-5);

// Same check against a leaf parameter perturbed in place; f() must rebuild
// the graph (and redo any seeded sampling) on every call.
double grad_check(const std::function<Tensor()>& f, const Tensor& param,
                  double h = 1e-5);

// Deterministic random stream: mt19937_64 bit stream with Box-Muller
// normals. The same seed and call sequence reproduce the same values.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  double uniform();  // [0, 1)
  double normal();
  Tensor uniform_tensor(std::vector<int64_t> shape);
  Tensor normal_tensor(std::vector<int64_t> shape, bool requires_grad = false);
  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dymesh
