#include "graphex/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace graphex::ad {
namespace {

thread_local bool g_grad_enabled = true;

uint64_t next_visit_mark() {
  static thread_local uint64_t mark = 0;
  return ++mark;
}

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(std::string("autodiff shape error: ") + what);
}

// Builds the output node. The graph is only recorded when gradients are
// enabled and at least one input needs them.
Tensor record(Matrix value, std::initializer_list<const Tensor*> inputs,
              std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool needs = false;
    for (const Tensor* t : inputs) needs = needs || t->requires_grad();
    if (needs) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const Tensor* t : inputs) node->inputs.push_back(t->node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

Tensor record_many(Matrix value, std::span<const Tensor> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.requires_grad();
    if (needs) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const auto& t : inputs) node->inputs.push_back(t.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

inline bool wants(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Tensor(std::move(m));
}

double Tensor::item() const {
  if (node_->value.size() != 1) throw std::logic_error("item() on a non-scalar tensor");
  return node_->value(0, 0);
}

void Tensor::zero_grad() {
  if (node_) node_->grad.resize(0, 0);
}

void Tensor::backward() const {
  if (node_->value.size() != 1) throw std::logic_error("backward() needs a scalar output");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order of the recorded graph.
  const uint64_t mark = next_visit_mark();
  std::vector<Node*> order;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  node_->visit_mark = mark;
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && child->backward && child->visit_mark != mark) {
        child->visit_mark = mark;
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(n);
    stack.pop_back();
  }

  node_->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->grad.size() == 0 || !n->backward) continue;
    n->backward(*n);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul inner dimension");
  Matrix out = a.value() * b.value();
  return record(std::move(out), {&a, &b}, [](Node& self) {
    const Matrix& a = self.inputs[0]->value;
    const Matrix& b = self.inputs[1]->value;
    if (wants(self, 0)) self.inputs[0]->accumulate_expr(self.grad * b.transpose());
    if (wants(self, 1)) self.inputs[1]->accumulate_expr(a.transpose() * self.grad);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.cols(), "matmul_nt inner dimension");
  Matrix out = a.value() * b.value().transpose();
  return record(std::move(out), {&a, &b}, [](Node& self) {
    const Matrix& a = self.inputs[0]->value;
    const Matrix& b = self.inputs[1]->value;
    if (wants(self, 0)) self.inputs[0]->accumulate_expr(self.grad * b);
    if (wants(self, 1)) self.inputs[1]->accumulate_expr(self.grad.transpose() * a);
  });
}

Tensor transpose(const Tensor& a) {
  Matrix out = a.value().transpose();
  return record(std::move(out), {&a}, [](Node& self) {
    self.inputs[0]->accumulate_expr(self.grad.transpose());
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  Matrix out = a.value() + b.value();
  return record(std::move(out), {&a, &b}, [](Node& self) {
    if (wants(self, 0)) self.inputs[0]->accumulate(self.grad);
    if (wants(self, 1)) self.inputs[1]->accumulate(self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  Matrix out = a.value() - b.value();
  return record(std::move(out), {&a, &b}, [](Node& self) {
    if (wants(self, 0)) self.inputs[0]->accumulate(self.grad);
    if (wants(self, 1)) self.inputs[1]->accumulate_expr(-self.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return record(std::move(out), {&a, &b}, [](Node& self) {
    if (wants(self, 0)) self.inputs[0]->accumulate_expr(self.grad.cwiseProduct(self.inputs[1]->value));
    if (wants(self, 1)) self.inputs[1]->accumulate_expr(self.grad.cwiseProduct(self.inputs[0]->value));
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return record(std::move(out), {&a, &row}, [](Node& self) {
    if (wants(self, 0)) self.inputs[0]->accumulate(self.grad);
    if (wants(self, 1)) self.inputs[1]->accumulate_expr(self.grad.colwise().sum());
  });
}

Tensor scale(const Tensor& a, double s) {
  Matrix out = a.value() * s;
  return record(std::move(out), {&a}, [s](Node& self) { self.inputs[0]->accumulate_expr(self.grad * s); });
}

Tensor add_scalar(const Tensor& a, double s) {
  Matrix out = a.value().array() + s;
  return record(std::move(out), {&a}, [](Node& self) { self.inputs[0]->accumulate(self.grad); });
}

Tensor sigmoid(const Tensor& a) {
  Matrix out = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return record(std::move(out), {&a}, [](Node& self) {
    const auto& y = self.value.array();
    self.inputs[0]->accumulate_expr((self.grad.array() * y * (1.0 - y)).matrix());
  });
}

Tensor tanh(const Tensor& a) {
  Matrix out = a.value().array().tanh();
  return record(std::move(out), {&a}, [](Node& self) {
    const auto& y = self.value.array();
    self.inputs[0]->accumulate_expr((self.grad.array() * (1.0 - y.square())).matrix());
  });
}

Tensor relu(const Tensor& a) {
  Matrix out = a.value().cwiseMax(0.0);
  return record(std::move(out), {&a}, [](Node& self) {
    const auto& x = self.inputs[0]->value.array();
    self.inputs[0]->accumulate_expr((self.grad.array() * (x > 0.0).cast<double>()).matrix());
  });
}

Tensor exp(const Tensor& a) {
  Matrix out = a.value().array().exp();
  return record(std::move(out), {&a}, [](Node& self) {
    self.inputs[0]->accumulate_expr(self.grad.cwiseProduct(self.value));
  });
}

Tensor square(const Tensor& a) {
  Matrix out = a.value().array().square();
  return record(std::move(out), {&a}, [](Node& self) {
    self.inputs[0]->accumulate_expr((2.0 * self.grad.array() * self.inputs[0]->value.array()).matrix());
  });
}

Tensor log_sigmoid(const Tensor& a) {
  // log sigmoid(x) = min(x, 0) - log(1 + exp(-|x|))
  Matrix out = a.value().unaryExpr(
      [](double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); });
  return record(std::move(out), {&a}, [](Node& self) {
    // d/dx = 1 - sigmoid(x) = sigmoid(-x)
    Matrix d = self.inputs[0]->value.unaryExpr([](double x) {
      if (x >= 0) {
        const double e = std::exp(-x);
        return e / (1.0 + e);
      }
      return 1.0 / (1.0 + std::exp(x));
    });
    self.inputs[0]->accumulate_expr(self.grad.cwiseProduct(d));
  });
}

Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw std::invalid_argument("dropout probability must be < 1");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix mask(a.rows(), a.cols());
  const double keep = 1.0 / (1.0 - p);
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = u(rng) < p ? 0.0 : keep;
  Matrix out = a.value().cwiseProduct(mask);
  return record(std::move(out), {&a}, [mask = std::move(mask)](Node& self) {
    self.inputs[0]->accumulate_expr(self.grad.cwiseProduct(mask));
  });
}

Tensor sum(const Tensor& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return record(std::move(out), {&a}, [](Node& self) {
    const auto& in = self.inputs[0]->value;
    self.inputs[0]->accumulate_expr(Matrix::Constant(in.rows(), in.cols(), self.grad(0, 0)));
  });
}

Tensor mean_rows(const Tensor& a) {
  require(a.rows() > 0, "mean_rows of empty tensor");
  Matrix out = a.value().colwise().mean();
  return record(std::move(out), {&a}, [](Node& self) {
    const auto n = self.inputs[0]->value.rows();
    Matrix g = self.grad.replicate(n, 1) / static_cast<double>(n);
    self.inputs[0]->accumulate(g);
  });
}

Tensor segment_max(const Tensor& a, const std::vector<std::vector<Index>>& segments) {
  const Index cols = a.cols();
  Matrix out(static_cast<Index>(segments.size()), cols);
  std::vector<Index> argmax(segments.size() * static_cast<std::size_t>(cols));
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& rows = segments[s];
    require(!rows.empty(), "segment_max empty segment");
    for (Index c = 0; c < cols; ++c) {
      Index best = rows[0];
      double v = a.value()(best, c);
      for (std::size_t k = 1; k < rows.size(); ++k) {
        const double x = a.value()(rows[k], c);
        if (x > v) {
          v = x;
          best = rows[k];
        }
      }
      out(static_cast<Index>(s), c) = v;
      argmax[s * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)] = best;
    }
  }
  return record(std::move(out), {&a}, [argmax = std::move(argmax), cols](Node& self) {
    const auto& in = self.inputs[0]->value;
    Matrix g = Matrix::Zero(in.rows(), in.cols());
    for (Index s = 0; s < self.grad.rows(); ++s) {
      for (Index c = 0; c < cols; ++c) {
        g(argmax[static_cast<std::size_t>(s * cols + c)], c) += self.grad(s, c);
      }
    }
    self.inputs[0]->accumulate(g);
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_rows of nothing");
  Index rows = 0;
  const Index cols = parts[0].cols();
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return record_many(std::move(out), parts, [](Node& self) {
    Index at = 0;
    for (auto& in : self.inputs) {
      const Index r = in->value.rows();
      if (in->requires_grad) in->accumulate_expr(self.grad.middleRows(at, r));
      at += r;
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_cols of nothing");
  Index cols = 0;
  const Index rows = parts[0].rows();
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return record_many(std::move(out), parts, [](Node& self) {
    Index at = 0;
    for (auto& in : self.inputs) {
      const Index c = in->value.cols();
      if (in->requires_grad) in->accumulate_expr(self.grad.middleCols(at, c));
      at += c;
    }
  });
}

Tensor slice_rows(const Tensor& a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows range");
  Matrix out = a.value().middleRows(start, count);
  return record(std::move(out), {&a}, [start, count](Node& self) {
    auto& in = *self.inputs[0];
    if (in.grad.size() == 0) in.grad = Matrix::Zero(in.value.rows(), in.value.cols());
    in.grad.middleRows(start, count) += self.grad;
  });
}

Tensor slice_cols(const Tensor& a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols range");
  Matrix out = a.value().middleCols(start, count);
  return record(std::move(out), {&a}, [start, count](Node& self) {
    auto& in = *self.inputs[0];
    if (in.grad.size() == 0) in.grad = Matrix::Zero(in.value.rows(), in.value.cols());
    in.grad.middleCols(start, count) += self.grad;
  });
}

namespace {

template <typename IndexT>
Tensor gather_rows_impl(const Tensor& table, std::span<const IndexT> indices) {
  Matrix out(static_cast<Index>(indices.size()), table.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto r = static_cast<Index>(indices[i]);
    require(r >= 0 && r < table.rows(), "gather_rows index");
    out.row(static_cast<Index>(i)) = table.value().row(r);
  }
  std::vector<Index> idx(indices.begin(), indices.end());
  return record(std::move(out), {&table}, [idx = std::move(idx)](Node& self) {
    auto& in = *self.inputs[0];
    if (in.grad.size() == 0) in.grad = Matrix::Zero(in.value.rows(), in.value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) in.grad.row(idx[i]) += self.grad.row(static_cast<Index>(i));
  });
}

}  // namespace

Tensor gather_rows(const Tensor& table, std::span<const int32_t> indices) {
  return gather_rows_impl(table, indices);
}

Tensor gather_rows(const Tensor& table, std::span<const Index> indices) {
  return gather_rows_impl(table, indices);
}

Tensor softmax_rows(const Tensor& logits, const Matrix& mask) {
  Matrix z = logits.value();
  if (mask.size() != 0) {
    require(mask.rows() == z.rows() && mask.cols() == z.cols(), "softmax mask shape");
    z += mask;
  }
  for (Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    // Scalar exp keeps masked (-inf) entries at exactly zero.
    z.row(i) = z.row(i).unaryExpr([m](double v) { return std::exp(v - m); });
    z.row(i) /= z.row(i).sum();
  }
  return record(std::move(z), {&logits}, [](Node& self) {
    const Matrix& y = self.value;
    // dx = y * (g - sum(g * y))
    Eigen::VectorXd dots = (self.grad.cwiseProduct(y)).rowwise().sum();
    Matrix g = y.cwiseProduct(self.grad - dots.replicate(1, y.cols()));
    self.inputs[0]->accumulate(g);
  });
}

Tensor log_softmax_rows(const Tensor& logits) {
  Matrix z = logits.value();
  for (Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    const double lse = m + std::log((z.row(i).array() - m).exp().sum());
    z.row(i).array() -= lse;
  }
  return record(std::move(z), {&logits}, [](Node& self) {
    // dx = g - softmax * sum(g)
    Eigen::VectorXd gs = self.grad.rowwise().sum();
    Matrix p = self.value.array().exp();
    Matrix g = self.grad - p.cwiseProduct(gs.replicate(1, p.cols()));
    self.inputs[0]->accumulate(g);
  });
}

Tensor negative_sum_entries(const Tensor& a, std::span<const Index> rows, std::span<const Index> cols) {
  require(rows.size() == cols.size(), "negative_sum_entries index lengths");
  double total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) total -= a.value()(rows[i], cols[i]);
  Matrix out(1, 1);
  out(0, 0) = total;
  std::vector<Index> r(rows.begin(), rows.end());
  std::vector<Index> c(cols.begin(), cols.end());
  return record(std::move(out), {&a}, [r = std::move(r), c = std::move(c)](Node& self) {
    auto& in = *self.inputs[0];
    if (in.grad.size() == 0) in.grad = Matrix::Zero(in.value.rows(), in.value.cols());
    const double g = self.grad(0, 0);
    for (std::size_t i = 0; i < r.size(); ++i) in.grad(r[i], c[i]) -= g;
  });
}

Tensor cross_entropy_sum(const Tensor& logits, std::span<const int32_t> targets) {
  require(static_cast<Index>(targets.size()) == logits.rows(), "cross_entropy target count");
  const Matrix& z = logits.value();
  Matrix probs(z.rows(), z.cols());
  double total = 0.0;
  for (Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    probs.row(i) = (z.row(i).array() - m).exp();
    const double s = probs.row(i).sum();
    probs.row(i) /= s;
    const int32_t t = targets[static_cast<std::size_t>(i)];
    if (t < 0) continue;
    require(t < z.cols(), "cross_entropy target index");
    total -= z(i, t) - m - std::log(s);
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  std::vector<int32_t> tgt(targets.begin(), targets.end());
  return record(std::move(out), {&logits},
                [probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
                  Matrix g = probs;
                  for (Index i = 0; i < g.rows(); ++i) {
                    const int32_t t = tgt[static_cast<std::size_t>(i)];
                    if (t < 0) {
                      g.row(i).setZero();
                    } else {
                      g(i, t) -= 1.0;
                    }
                  }
                  g *= self.grad(0, 0);
                  self.inputs[0]->accumulate(g);
                });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require(gamma.rows() == 1 && gamma.cols() == x.cols(), "layer_norm gamma");
  require(beta.rows() == 1 && beta.cols() == x.cols(), "layer_norm beta");
  const Index n = x.cols();
  Matrix xhat(x.rows(), n);
  Eigen::VectorXd inv_std(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mu = x.value().row(i).mean();
    const double var = (x.value().row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mu) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
               beta.value().row(0).array();
  return record(std::move(out), {&x, &gamma, &beta},
                [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                  const Matrix& g = self.grad;
                  if (wants(self, 1)) self.inputs[1]->accumulate_expr(g.cwiseProduct(xhat).colwise().sum());
                  if (wants(self, 2)) self.inputs[2]->accumulate_expr(g.colwise().sum());
                  if (wants(self, 0)) {
                    const auto& gamma = self.inputs[1]->value;
                    Matrix dxhat = g.array().rowwise() * gamma.row(0).array();
                    Matrix dx(dxhat.rows(), dxhat.cols());
                    for (Index i = 0; i < dxhat.rows(); ++i) {
                      const double m1 = dxhat.row(i).mean();
                      const double m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
                      dx.row(i) = (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
                    }
                    self.inputs[0]->accumulate(dx);
                  }
                });
}

}  // namespace graphex::ad
