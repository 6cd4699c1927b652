#include "graphex/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

namespace graphex::nn {

using namespace graphex::ad;

Tensor ParameterStore::add(std::string name, Matrix init) {
  for (const auto& p : params_) {
    if (p.name == name) throw std::logic_error("duplicate parameter name: " + name);
  }
  Tensor t = Tensor::parameter(std::move(init));
  params_.push_back({std::move(name), t});
  return t;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw std::out_of_range("no parameter named " + name);
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.tensor.value().size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double ParameterStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) {
    if (p.tensor.grad().size() != 0) sq += p.tensor.grad().squaredNorm();
  }
  return std::sqrt(sq);
}

void ParameterStore::copy_from(const ParameterStore& other) {
  for (auto& p : params_) {
    const auto& src = other.get(p.name).value();
    if (src.rows() != p.tensor.rows() || src.cols() != p.tensor.cols()) {
      throw std::invalid_argument("shape mismatch copying " + p.name);
    }
    p.tensor.mutable_value() = src;
  }
}

Matrix xavier(Index rows, Index cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Matrix normal(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Linear::Linear(ParameterStore& store, const std::string& name, Index in, Index out, std::mt19937_64& rng,
               bool bias) {
  w_ = store.add(name + ".weight", xavier(in, out, rng));
  if (bias) b_ = store.add(name + ".bias", Matrix::Zero(1, out));
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, w_);
  return b_.defined() ? add_row(y, b_) : y;
}

Embedding::Embedding(ParameterStore& store, const std::string& name, Index vocab, Index dim,
                     std::mt19937_64& rng, double stddev) {
  table_ = store.add(name + ".table", normal(vocab, dim, stddev, rng));
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, Index dim) {
  gamma_ = store.add(name + ".gamma", Matrix::Ones(1, dim));
  beta_ = store.add(name + ".beta", Matrix::Zero(1, dim));
}

GruCell::GruCell(ParameterStore& store, const std::string& name, Index input_dim, Index hidden_dim,
                 std::mt19937_64& rng)
    : hidden_(hidden_dim) {
  w_ = store.add(name + ".w", xavier(input_dim, 3 * hidden_dim, rng));
  u_ = store.add(name + ".u", xavier(hidden_dim, 3 * hidden_dim, rng));
  b_ = store.add(name + ".b", Matrix::Zero(1, 3 * hidden_dim));
}

Tensor GruCell::project(const Tensor& x) const { return add_row(matmul(x, w_), b_); }

Tensor GruCell::step_projected(const Tensor& x_proj, const Tensor& h) const {
  const Index H = hidden_;
  Tensor hu = matmul(h, u_);
  Tensor z = sigmoid(add(slice_cols(x_proj, 0, H), slice_cols(hu, 0, H)));
  Tensor r = sigmoid(add(slice_cols(x_proj, H, H), slice_cols(hu, H, H)));
  Tensor n = ad::tanh(add(slice_cols(x_proj, 2 * H, H), mul(r, slice_cols(hu, 2 * H, H))));
  return add(n, mul(z, sub(h, n)));
}

Tensor GruCell::run(const Tensor& x, const Tensor& h0) const {
  Tensor proj = project(x);
  std::vector<Tensor> states;
  states.reserve(static_cast<std::size_t>(x.rows()));
  Tensor h = h0;
  for (Index t = 0; t < x.rows(); ++t) {
    h = step_projected(slice_rows(proj, t, 1), h);
    states.push_back(h);
  }
  return concat_rows(states);
}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& name, Index dim, int heads,
                                       std::mt19937_64& rng)
    : heads_(heads), dim_(dim) {
  if (heads < 1 || dim % heads != 0) throw std::invalid_argument("model dim must divide by head count");
  q_ = Linear(store, name + ".q", dim, dim, rng);
  k_ = Linear(store, name + ".k", dim, dim, rng);
  v_ = Linear(store, name + ".v", dim, dim, rng);
  o_ = Linear(store, name + ".o", dim, dim, rng);
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& memory, const Matrix& mask) const {
  const Index dk = dim_ / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor q = q_(query);
  Tensor k = k_(memory);
  Tensor v = v_(memory);
  std::vector<Tensor> outs;
  outs.reserve(static_cast<std::size_t>(heads_));
  for (int h = 0; h < heads_; ++h) {
    Tensor qh = slice_cols(q, h * dk, dk);
    Tensor kh = slice_cols(k, h * dk, dk);
    Tensor vh = slice_cols(v, h * dk, dk);
    Tensor weights = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt), mask);
    outs.push_back(matmul(weights, vh));
  }
  return o_(heads_ == 1 ? outs[0] : concat_cols(outs));
}

FeedForward::FeedForward(ParameterStore& store, const std::string& name, Index dim, Index hidden,
                         std::mt19937_64& rng)
    : in_(store, name + ".in", dim, hidden, rng), out_(store, name + ".out", hidden, dim, rng) {}

Matrix positional_encoding(Index length, Index dim) {
  Matrix pe(length, dim);
  for (Index pos = 0; pos < length; ++pos) {
    for (Index i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * rate;
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Matrix causal_mask(Index length) {
  Matrix m = Matrix::Zero(length, length);
  for (Index i = 0; i < length; ++i) {
    for (Index j = i + 1; j < length; ++j) m(i, j) = -std::numeric_limits<double>::infinity();
  }
  return m;
}

Adam::Adam(ParameterStore& store, AdamConfig cfg) : store_(&store), cfg_(cfg) {
  for (const auto& p : store.parameters()) {
    m_.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
    v_.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
  }
}

void Adam::step() {
  ++t_;
  double clip = 1.0;
  if (cfg_.clip_norm > 0.0) {
    const double norm = store_->grad_norm();
    if (norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto& params = store_->parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].tensor;
    if (p.grad().size() == 0) continue;
    const Matrix g = p.grad() * clip;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    p.mutable_value().array() -=
        cfg_.learning_rate * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.epsilon);
  }
  store_->zero_grad();
}

namespace {

constexpr char kMagic[8] = {'G', 'P', 'X', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("truncated checkpoint");
  return v;
}

std::string read_string(std::istream& in) {
  const auto len = read_pod<uint64_t>(in);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("truncated checkpoint");
  return s;
}

std::string read_header(std::istream& in, const std::filesystem::path& path) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a graphex checkpoint: " + path.string());
  }
  const auto version = read_pod<uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  return read_string(in);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& config_json,
                     const ParameterStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kCheckpointVersion);
  write_pod(out, static_cast<uint64_t>(config_json.size()));
  out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
  write_pod(out, static_cast<uint64_t>(store.parameters().size()));
  for (const auto& p : store.parameters()) {
    write_pod(out, static_cast<uint64_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_pod(out, static_cast<int64_t>(p.tensor.rows()));
    write_pod(out, static_cast<int64_t>(p.tensor.cols()));
    out.write(reinterpret_cast<const char*>(p.tensor.value().data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p.tensor.value().size())));
  }
}

std::string read_checkpoint_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path.string());
  return read_header(in, path);
}

std::string load_checkpoint(const std::filesystem::path& path, ParameterStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path.string());
  std::string config = read_header(in, path);
  const auto count = read_pod<uint64_t>(in);
  std::map<std::string, Matrix> loaded;
  for (uint64_t i = 0; i < count; ++i) {
    std::string name = read_string(in);
    const auto rows = read_pod<int64_t>(in);
    const auto cols = read_pod<int64_t>(in);
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * rows * cols));
    if (!in) throw std::runtime_error("truncated checkpoint");
    loaded.emplace(std::move(name), std::move(m));
  }
  for (auto& p : store.parameters()) {
    auto it = loaded.find(p.name);
    if (it == loaded.end()) throw std::runtime_error("checkpoint lacks parameter " + p.name);
    if (it->second.rows() != p.tensor.rows() || it->second.cols() != p.tensor.cols()) {
      throw std::runtime_error("checkpoint shape mismatch for " + p.name);
    }
    p.tensor.mutable_value() = it->second;
  }
  return config;
}

}  // namespace graphex::nn
