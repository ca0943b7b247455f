#include "viewset/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace viewset {

namespace {

constexpr double kHullRadius = 4.0;
constexpr double kRingRadius = 2.0;

/// Two orthonormal directions in R^dim by Gram-Schmidt on Gaussian draws.
std::pair<std::vector<double>, std::vector<double>> random_plane(std::size_t dim,
                                                                 std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> u(dim), v(dim);
  for (auto& x : u) x = g(rng);
  for (auto& x : v) x = g(rng);
  auto norm = [](std::vector<double>& a) {
    double n = std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0));
    for (auto& x : a) x /= n;
  };
  norm(u);
  const double d = std::inner_product(u.begin(), u.end(), v.begin(), 0.0);
  for (std::size_t i = 0; i < dim; ++i) v[i] -= d * u[i];
  norm(v);
  return {u, v};
}

}  // namespace

std::vector<Matrix> synthetic_aspects(const SyntheticConfig& cfg) {
  const std::size_t k = cfg.num_classes;
  const std::size_t m = cfg.views;
  if (k < 3) {
    throw std::invalid_argument("synthetic task needs at least 3 classes for every aspect to be "
                                "shared while class multisets stay distinct");
  }
  if (m < 2) throw std::invalid_argument("synthetic task needs at least 2 views per shape");
  if (cfg.dim < 2) throw std::invalid_argument("synthetic task needs dim >= 2");

  const std::size_t pairs = m >= 8 ? (m - 4) / 2 : 0;
  const bool hull = pairs >= 2 && pairs < k;
  if (!hull && m >= k) {
    throw std::invalid_argument("synthetic task infeasible: " + std::to_string(m) +
                                " views cannot form distinct shared aspect sets over " +
                                std::to_string(k) + " classes");
  }

  std::mt19937_64 rng(cfg.seed);
  const auto [u, v] = random_plane(cfg.dim, rng);
  auto point = [&](double x, double y) {
    std::vector<double> p(cfg.dim);
    for (std::size_t i = 0; i < cfg.dim; ++i) p[i] = x * u[i] + y * v[i];
    return p;
  };

  std::vector<Matrix> out;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<std::vector<double>> aspects;
    if (hull) {
      aspects.push_back(point(kHullRadius, 0));
      aspects.push_back(point(-kHullRadius, 0));
      aspects.push_back(point(0, kHullRadius));
      aspects.push_back(point(0, -kHullRadius));
      const std::size_t ring = 2 * k;
      for (std::size_t j = 0; j < pairs; ++j) {
        for (std::size_t idx : {(c + j) % ring, (c + j + k) % ring}) {
          const double a = std::numbers::pi * static_cast<double>(idx) / static_cast<double>(k);
          aspects.push_back(point(kRingRadius * std::cos(a), kRingRadius * std::sin(a)));
        }
      }
      if (m % 2 == 1) aspects.push_back(point(0, 0));
    } else {
      for (std::size_t j = 0; j < m; ++j) {
        const double a = 2.0 * std::numbers::pi * static_cast<double>((c + j) % k) /
                         static_cast<double>(k);
        aspects.push_back(point(kRingRadius * std::cos(a), kRingRadius * std::sin(a)));
      }
    }
    Matrix mat(m, cfg.dim);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t i = 0; i < cfg.dim; ++i) mat(r, i) = aspects[r][i];
    out.push_back(std::move(mat));
  }
  return out;
}

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.shapes_per_class == 0) throw std::invalid_argument("shapes_per_class must be positive");
  if (!(cfg.noise >= 0.0)) throw std::invalid_argument("noise must be non-negative");
  if (!(cfg.test_fraction >= 0.0 && cfg.test_fraction <= 1.0)) {
    throw std::invalid_argument("test_fraction must lie in [0, 1]");
  }
  if (cfg.subclasses_per_class == 0) throw std::invalid_argument("subclasses_per_class must be positive");
  const auto aspects = synthetic_aspects(cfg);

  Dataset d;
  d.name = "synthetic";
  d.dim = cfg.dim;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) d.label_names.push_back("class" + std::to_string(c));

  std::mt19937_64 rng(cfg.seed + 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto n_test = static_cast<std::size_t>(
      std::llround(cfg.test_fraction * static_cast<double>(cfg.shapes_per_class)));
  const std::size_t n_train = cfg.shapes_per_class - n_test;

  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    for (std::size_t i = 0; i < cfg.shapes_per_class; ++i) {
      ViewFeatureSet s;
      char id[64];
      std::snprintf(id, sizeof id, "syn_c%03zu_%04zu", c, i);
      s.shape_id = id;
      s.label = c;
      s.sublabel = c * cfg.subclasses_per_class + i % cfg.subclasses_per_class;
      std::vector<std::size_t> order(cfg.views);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      s.features = Matrix(cfg.views, cfg.dim);
      for (std::size_t r = 0; r < cfg.views; ++r)
        for (std::size_t j = 0; j < cfg.dim; ++j)
          s.features(r, j) = aspects[c](order[r], j) + cfg.noise * noise(rng);
      (i < n_train ? d.train : d.test).push_back(std::move(s));
    }
  }
  return d;
}

}  // namespace viewset
