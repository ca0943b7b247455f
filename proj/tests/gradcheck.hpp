#pragma once

// Central-difference gradient oracle. Independent of the backward pass: it only
// evaluates the forward function on perturbed parameter values.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "viewset/autograd.hpp"

namespace viewset::testing {

struct GradCheckResult {
  std::string name;
  double rel_error = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
};

/// ||a - n|| / max(||a||, ||n||); 0 when both norms are below 1e-10.
inline double relative_error(const Matrix& analytic, const Matrix& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i];
    const double n = numeric.data()[i];
    diff += (a - n) * (a - n);
    na += a * a;
    nn += n * n;
  }
  diff = std::sqrt(diff);
  const double scale = std::max(std::sqrt(na), std::sqrt(nn));
  return scale < 1e-10 ? 0.0 : diff / scale;
}

/// `loss` must rebuild the graph from the current parameter values on every call.
inline std::vector<GradCheckResult> check_gradients(
    std::vector<std::pair<std::string, ag::Var>> params, const std::function<ag::Var()>& loss,
    double h = 1e-4) {
  for (auto& [n, p] : params) p.zero_grad();
  ag::backward(loss());
  std::vector<GradCheckResult> out;
  for (auto& [name, p] : params) {
    Matrix numeric(p.rows(), p.cols());
    auto values = p.mutable_value().data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + h;
      const double up = loss().value()(0, 0);
      values[i] = orig - h;
      const double down = loss().value()(0, 0);
      values[i] = orig;
      numeric.data()[i] = (up - down) / (2.0 * h);
    }
    GradCheckResult r;
    r.name = name;
    r.rel_error = relative_error(p.grad(), numeric);
    for (double v : p.grad().data()) r.analytic_norm += v * v;
    for (double v : numeric.data()) r.numeric_norm += v * v;
    r.analytic_norm = std::sqrt(r.analytic_norm);
    r.numeric_norm = std::sqrt(r.numeric_norm);
    out.push_back(r);
  }
  return out;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = d(rng);
  return m;
}

}  // namespace viewset::testing
