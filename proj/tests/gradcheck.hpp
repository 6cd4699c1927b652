#pragma once

// Central finite-difference gradient oracle for tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "graphex/autodiff.hpp"
#include "graphex/nn.hpp"

namespace graphex::testing {

struct BlockError {
  std::string name;
  double relative = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double analytic_norm = 0.0;
};

// Numeric gradient of loss() with respect to every entry of `t`.
inline ad::Matrix numeric_gradient(const std::function<double()>& loss, ad::Tensor& t, double h) {
  ad::Matrix g(t.rows(), t.cols());
  for (ad::Index i = 0; i < t.value().size(); ++i) {
    double& x = t.mutable_value().data()[i];
    const double saved = x;
    x = saved + h;
    const double plus = loss();
    x = saved - h;
    const double minus = loss();
    x = saved;
    g.data()[i] = (plus - minus) / (2.0 * h);
  }
  return g;
}

// Compares backward() of build_loss() against central differences for every
// parameter in the store; returns one entry per block.
inline std::vector<BlockError> check_gradients(const std::function<ad::Tensor()>& build_loss,
                                               nn::ParameterStore& store, double h = 1e-5) {
  store.zero_grad();
  build_loss().backward();
  std::vector<ad::Matrix> analytic;
  for (auto& p : store.parameters()) {
    analytic.push_back(p.tensor.grad().size() == 0
                           ? ad::Matrix::Zero(p.tensor.rows(), p.tensor.cols())
                           : p.tensor.grad());
  }
  store.zero_grad();

  const auto loss_value = [&] {
    ad::NoGradGuard guard;
    return build_loss().item();
  };
  std::vector<BlockError> out;
  for (std::size_t i = 0; i < store.parameters().size(); ++i) {
    auto& p = store.parameters()[i];
    const ad::Matrix numeric = numeric_gradient(loss_value, p.tensor, h);
    const double an = analytic[i].norm();
    const double nn_ = numeric.norm();
    const double denom = std::max(an, nn_);
    // Blocks the loss does not depend on have zero gradient on both sides.
    const double rel = denom < 1e-9 ? 0.0 : (analytic[i] - numeric).norm() / denom;
    out.push_back({p.name, rel, an});
  }
  return out;
}

inline double max_relative_error(const std::vector<BlockError>& errors) {
  double m = 0.0;
  for (const auto& e : errors) m = std::max(m, e.relative);
  return m;
}

}  // namespace graphex::testing
