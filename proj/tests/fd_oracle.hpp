#pragma once

// Central finite differences, kept independent of the autodiff code paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "leopard/autodiff/tensor.hpp"

namespace fd {

template <typename T>
std::vector<double> numeric_gradient(const std::function<double()>& f, leopard::ad::BasicTensor<T>& x,
                                     double h = 1e-5) {
  auto vals = x.mutable_values();
  std::vector<double> out(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const T orig = vals[i];
    vals[i] = orig + T(h);
    const double up = f();
    vals[i] = orig - T(h);
    const double down = f();
    vals[i] = orig;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

template <typename Span>
double max_relative_error(const Span& analytic, const std::vector<double>& numeric, double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    worst = std::max(worst, relative_error(static_cast<double>(analytic[i]), numeric[i], floor));
  }
  return worst;
}

inline leopard::ad::Tensor random_tensor(leopard::ad::Shape shape, std::mt19937_64& rng, double scale = 1.0,
                                         bool requires_grad = true) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(leopard::ad::element_count(shape));
  for (double& x : v) x = n(rng);
  return leopard::ad::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace fd
