#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// Every operation returns a Tensor that remembers its inputs and a closure
// that pushes the output gradient back to them. Calling backward() on a 1x1
// tensor walks the recorded graph in reverse topological order. Parameters
// are tensors created with requires_grad = true; their gradients accumulate
// across backward() calls until zero_grad().

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace graphex::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  uint64_t visit_mark = 0;

  // grad += g, allocating on first use.
  void accumulate(const Matrix& g);
  template <typename Expr>
  void accumulate_expr(const Expr& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Matrix value) { return Tensor(std::move(value), false); }
  static Tensor parameter(Matrix value) { return Tensor(std::move(value), true); }
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  // Direct access for optimizers and initializers; bypasses the graph.
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void zero_grad();

  // Seeds d(self)/d(self) = 1 and propagates. Requires a 1x1 tensor.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// While alive, operations do not record the graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// --- linear algebra ---
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor transpose(const Tensor& a);

// --- elementwise ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_row(const Tensor& a, const Tensor& row);  // broadcasts a 1 x n row
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor square(const Tensor& a);
Tensor log_sigmoid(const Tensor& a);
// Zeroes entries with probability p and rescales the rest by 1/(1-p).
Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// --- reductions ---
Tensor sum(const Tensor& a);        // 1 x 1
Tensor mean_rows(const Tensor& a);  // 1 x cols, averaged over rows
// Row r of the result is the elementwise max over rows segments[r] of a.
Tensor segment_max(const Tensor& a, const std::vector<std::vector<Index>>& segments);

// --- row/column structure ---
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, Index start, Index count);
Tensor slice_cols(const Tensor& a, Index start, Index count);
Tensor gather_rows(const Tensor& table, std::span<const int32_t> indices);
Tensor gather_rows(const Tensor& table, std::span<const Index> indices);

// --- normalization and losses ---
// Row-wise softmax. `mask`, when non-empty, is added to the logits first
// (use -inf to exclude positions).
Tensor softmax_rows(const Tensor& logits, const Matrix& mask = Matrix());
Tensor log_softmax_rows(const Tensor& logits);
// -sum_i a(rows[i], cols[i]).
Tensor negative_sum_entries(const Tensor& a, std::span<const Index> rows, std::span<const Index> cols);
// Sum over rows of -log softmax(logits)(i, targets[i]); rows with a negative
// target are ignored.
Tensor cross_entropy_sum(const Tensor& logits, std::span<const int32_t> targets);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

}  // namespace graphex::ad
