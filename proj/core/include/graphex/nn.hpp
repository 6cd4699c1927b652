#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "graphex/autodiff.hpp"

namespace graphex::nn {

using ad::Index;
using ad::Matrix;
using ad::Tensor;

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

// Owns the trainable tensors of a model in registration order.
class ParameterStore {
 public:
  Tensor add(std::string name, Matrix init);
  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::vector<NamedParameter>& parameters() { return params_; }
  const Tensor& get(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();
  double grad_norm() const;
  // Copies values by name from another store with the same layout.
  void copy_from(const ParameterStore& other);

 private:
  std::vector<NamedParameter> params_;
};

// Glorot-uniform fan-in/fan-out initialization.
Matrix xavier(Index rows, Index cols, std::mt19937_64& rng);
Matrix normal(Index rows, Index cols, double stddev, std::mt19937_64& rng);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, Index in, Index out, std::mt19937_64& rng,
         bool bias = true);
  Tensor operator()(const Tensor& x) const;
  const Tensor& weight() const { return w_; }
  const Tensor& bias() const { return b_; }

 private:
  Tensor w_;
  Tensor b_;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(ParameterStore& store, const std::string& name, Index vocab, Index dim, std::mt19937_64& rng,
            double stddev);
  Tensor operator()(std::span<const int32_t> ids) const { return ad::gather_rows(table_, ids); }
  const Tensor& table() const { return table_; }
  Index dim() const { return table_.cols(); }

 private:
  Tensor table_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, Index dim);
  Tensor operator()(const Tensor& x) const { return ad::layer_norm_rows(x, gamma_, beta_); }

 private:
  Tensor gamma_;
  Tensor beta_;
};

// Gated recurrent unit with gates ordered [update z, reset r, candidate n]:
//   z = sigmoid(x Wz + h Uz + bz)
//   r = sigmoid(x Wr + h Ur + br)
//   n = tanh(x Wn + bn + r * (h Un))
//   h' = (1 - z) * n + z * h
// Rows of x and h are independent sequences (batch).
class GruCell {
 public:
  GruCell() = default;
  GruCell(ParameterStore& store, const std::string& name, Index input_dim, Index hidden_dim,
          std::mt19937_64& rng);

  Index hidden_dim() const { return hidden_; }
  // x_proj = x W + b, precomputed for a whole sequence by project().
  Tensor project(const Tensor& x) const;
  Tensor step_projected(const Tensor& x_proj, const Tensor& h) const;
  Tensor step(const Tensor& x, const Tensor& h) const { return step_projected(project(x), h); }
  // Runs over the rows of x (T x input) from h0 and returns all states (T x hidden).
  Tensor run(const Tensor& x, const Tensor& h0) const;

  const Tensor& w() const { return w_; }
  const Tensor& u() const { return u_; }
  const Tensor& b() const { return b_; }

 private:
  Index hidden_ = 0;
  Tensor w_;
  Tensor u_;
  Tensor b_;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& name, Index dim, int heads,
                     std::mt19937_64& rng);
  // query: Tq x d, memory: Tk x d; mask (Tq x Tk, additive) may be empty.
  Tensor operator()(const Tensor& query, const Tensor& memory, const Matrix& mask) const;
  int heads() const { return heads_; }

 private:
  int heads_ = 1;
  Index dim_ = 0;
  Linear q_, k_, v_, o_;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterStore& store, const std::string& name, Index dim, Index hidden, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x) const { return out_(ad::relu(in_(x))); }

 private:
  Linear in_, out_;
};

// Sinusoidal position table (length x dim).
Matrix positional_encoding(Index length, Index dim);
// Additive mask that hides future positions (upper triangle = -inf).
Matrix causal_mask(Index length);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
};

class Adam {
 public:
  Adam(ParameterStore& store, AdamConfig cfg);
  // Applies one update from the accumulated gradients, then clears them.
  void step();
  const AdamConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

 private:
  ParameterStore* store_;
  AdamConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  int64_t t_ = 0;
};

// Versioned checkpoint: magic, format version, config echo (JSON text), then
// named matrices.
void save_checkpoint(const std::filesystem::path& path, const std::string& config_json,
                     const ParameterStore& store);
// Returns the stored config echo. Parameters are matched by name and shape.
std::string load_checkpoint(const std::filesystem::path& path, ParameterStore& store);
std::string read_checkpoint_config(const std::filesystem::path& path);

}  // namespace graphex::nn
