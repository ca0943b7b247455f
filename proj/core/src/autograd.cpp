#include "viewset/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

namespace viewset::ag {

namespace {
thread_local bool t_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->requires_grad = requires_grad;
  if (requires_grad) node_->grad = Matrix(value.rows(), value.cols());
  node_->value = std::move(value);
}

void Var::zero_grad() {
  if (node_ && node_->requires_grad) node_->grad.fill(0.0);
}

Var make_op(Matrix value, std::vector<Var> inputs, const char* op,
            std::function<void(Node&)> backward_fn) {
  Var out;
  out.node_ = std::make_shared<Node>();
  Node& n = *out.node_;
  n.op = op;
  n.requires_grad = t_grad_enabled &&
                    std::any_of(inputs.begin(), inputs.end(),
                                [](const Var& v) { return v.requires_grad(); });
  if (n.requires_grad) {
    n.grad = Matrix(value.rows(), value.cols());
    n.backward_fn = std::move(backward_fn);
    n.inputs.reserve(inputs.size());
    for (auto& v : inputs) n.inputs.push_back(v.node());
  }
  n.value = std::move(value);
  return out;
}

void backward(const Var& loss) {
  if (!loss.defined() || loss.rows() != 1 || loss.cols() != 1) {
    throw ShapeError("backward: loss must be a 1x1 scalar, got " +
                     (loss.defined() ? loss.value().shape_str() : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; each node is emitted once.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

namespace {

void require_same(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.value().shape_str() + " vs " +
                     b.value().shape_str());
  }
}

void accumulate(Node& dst, const Matrix& g) {
  auto d = dst.grad.data();
  auto s = g.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <class F>
Var unary(const Var& x, const char* op, F f, auto dfdx) {
  Matrix y(x.rows(), x.cols());
  auto xs = x.value().data();
  auto ys = y.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = f(xs[i]);
  return make_op(std::move(y), {x}, op, [dfdx](Node& n) {
    Node& in = *n.inputs[0];
    if (!in.requires_grad) return;
    auto xv = in.value.data();
    auto g = n.grad.data();
    auto dg = in.grad.data();
    for (std::size_t i = 0; i < xv.size(); ++i) dg[i] += g[i] * dfdx(xv[i]);
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  return make_op(viewset::matmul(a.value(), b.value()), {a, b}, "matmul", [](Node& n) {
    Node& A = *n.inputs[0];
    Node& B = *n.inputs[1];
    if (A.requires_grad) accumulate(A, viewset::matmul_nt(n.grad, B.value));
    if (B.requires_grad) accumulate(B, viewset::matmul_tn(A.value, n.grad));
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  return make_op(viewset::matmul_nt(a.value(), b.value()), {a, b}, "matmul_nt", [](Node& n) {
    Node& A = *n.inputs[0];
    Node& B = *n.inputs[1];
    // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
    if (A.requires_grad) accumulate(A, viewset::matmul(n.grad, B.value));
    if (B.requires_grad) accumulate(B, viewset::matmul_tn(n.grad, A.value));
  });
}

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Matrix y = a.value();
  auto ys = y.data();
  auto bs = b.value().data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] += bs[i];
  return make_op(std::move(y), {a, b}, "add", [](Node& n) {
    for (auto& in : n.inputs)
      if (in->requires_grad) accumulate(*in, n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Matrix y = a.value();
  auto ys = y.data();
  auto bs = b.value().data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] -= bs[i];
  return make_op(std::move(y), {a, b}, "sub", [](Node& n) {
    if (n.inputs[0]->requires_grad) accumulate(*n.inputs[0], n.grad);
    if (n.inputs[1]->requires_grad) {
      auto d = n.inputs[1]->grad.data();
      auto g = n.grad.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
    }
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: row " + row.value().shape_str() + " cannot broadcast over " +
                     a.value().shape_str());
  }
  Matrix y = a.value();
  auto r = row.value().row(0);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto yr = y.row(i);
    for (std::size_t j = 0; j < yr.size(); ++j) yr[j] += r[j];
  }
  return make_op(std::move(y), {a, row}, "add_row", [](Node& n) {
    if (n.inputs[0]->requires_grad) accumulate(*n.inputs[0], n.grad);
    Node& R = *n.inputs[1];
    if (R.requires_grad) {
      auto dr = R.grad.row(0);
      for (std::size_t i = 0; i < n.grad.rows(); ++i) {
        auto g = n.grad.row(i);
        for (std::size_t j = 0; j < g.size(); ++j) dr[j] += g[j];
      }
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Matrix y = a.value();
  auto ys = y.data();
  auto bs = b.value().data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] *= bs[i];
  return make_op(std::move(y), {a, b}, "mul", [](Node& n) {
    Node& A = *n.inputs[0];
    Node& B = *n.inputs[1];
    auto g = n.grad.data();
    if (A.requires_grad) {
      auto d = A.grad.data();
      auto bv = B.value.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (B.requires_grad) {
      auto d = B.grad.data();
      auto av = A.value.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, "scale", [s](double x) { return s * x; }, [s](double) { return s; });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return make_op(Matrix(1, 1, s), {a}, "sum", [](Node& n) {
    Node& A = *n.inputs[0];
    const double g = n.grad(0, 0);
    for (double& d : A.grad.data()) d += g;
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  return add_row(matmul_nt(x, weight), bias);
}

Var softmax_rows(const Var& x) {
  return make_op(viewset::softmax_rows(x.value()), {x}, "softmax_rows", [](Node& n) {
    Node& X = *n.inputs[0];
    for (std::size_t i = 0; i < n.value.rows(); ++i) {
      auto y = n.value.row(i);
      auto g = n.grad.row(i);
      auto d = X.grad.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < y.size(); ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < y.size(); ++j) d[j] += y[j] * (g[j] - dot);
    }
  });
}

Var relu(const Var& x) {
  return unary(
      x, "relu", [](double v) { return v <= 0.0 ? 0.0 : v; },  // NaN passes through
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& x) {
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  constexpr double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const std::size_t rows = x.rows();
  const std::size_t d = x.cols();
  if (d == 0) throw ShapeError("layer_norm: zero-width input");
  if (gamma.rows() != 1 || gamma.cols() != d || !gamma.value().same_shape(beta.value())) {
    throw ShapeError("layer_norm: gamma/beta " + gamma.value().shape_str() + "/" +
                     beta.value().shape_str() + " incompatible with " + x.value().shape_str());
  }
  Matrix xhat(rows, d);
  Matrix rstd(rows, 1);
  Matrix y(rows, d);
  auto g = gamma.value().row(0);
  auto b = beta.value().row(0);
  for (std::size_t i = 0; i < rows; ++i) {
    auto xr = x.value().row(i);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double r = 1.0 / std::sqrt(var + eps);
    rstd(i, 0) = r;
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (xr[j] - mean) * r;
      y(i, j) = g[j] * xhat(i, j) + b[j];
    }
  }
  return make_op(std::move(y), {x, gamma, beta}, "layer_norm",
                 [xhat = std::move(xhat), rstd = std::move(rstd)](Node& n) {
                   Node& X = *n.inputs[0];
                   Node& G = *n.inputs[1];
                   Node& B = *n.inputs[2];
                   const std::size_t d = n.value.cols();
                   auto gam = G.value.row(0);
                   for (std::size_t i = 0; i < n.value.rows(); ++i) {
                     auto dy = n.grad.row(i);
                     auto xh = xhat.row(i);
                     if (G.requires_grad)
                       for (std::size_t j = 0; j < d; ++j) G.grad(0, j) += dy[j] * xh[j];
                     if (B.requires_grad)
                       for (std::size_t j = 0; j < d; ++j) B.grad(0, j) += dy[j];
                     if (!X.requires_grad) continue;
                     double m1 = 0.0;
                     double m2 = 0.0;
                     for (std::size_t j = 0; j < d; ++j) {
                       const double dxh = dy[j] * gam[j];
                       m1 += dxh;
                       m2 += dxh * xh[j];
                     }
                     m1 /= static_cast<double>(d);
                     m2 /= static_cast<double>(d);
                     auto dx = X.grad.row(i);
                     for (std::size_t j = 0; j < d; ++j)
                       dx[j] += rstd(i, 0) * (dy[j] * gam[j] - m1 - xh[j] * m2);
                   }
                 });
}

Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps,
                     Matrix* batch_mean, Matrix* batch_var) {
  const std::size_t n_rows = x.rows();
  const std::size_t d = x.cols();
  if (n_rows == 0) throw ShapeError("batch_norm_train: empty batch");
  if (gamma.rows() != 1 || gamma.cols() != d || !gamma.value().same_shape(beta.value())) {
    throw ShapeError("batch_norm_train: gamma/beta " + gamma.value().shape_str() +
                     " incompatible with " + x.value().shape_str());
  }
  Matrix mean(1, d);
  Matrix var(1, d);
  for (std::size_t i = 0; i < n_rows; ++i)
    for (std::size_t j = 0; j < d; ++j) mean(0, j) += x.value()(i, j);
  for (std::size_t j = 0; j < d; ++j) mean(0, j) /= static_cast<double>(n_rows);
  for (std::size_t i = 0; i < n_rows; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x.value()(i, j) - mean(0, j);
      var(0, j) += c * c;
    }
  for (std::size_t j = 0; j < d; ++j) var(0, j) /= static_cast<double>(n_rows);

  Matrix rstd(1, d);
  for (std::size_t j = 0; j < d; ++j) rstd(0, j) = 1.0 / std::sqrt(var(0, j) + eps);
  Matrix xhat(n_rows, d);
  Matrix y(n_rows, d);
  for (std::size_t i = 0; i < n_rows; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (x.value()(i, j) - mean(0, j)) * rstd(0, j);
      y(i, j) = gamma.value()(0, j) * xhat(i, j) + beta.value()(0, j);
    }
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;

  return make_op(std::move(y), {x, gamma, beta}, "batch_norm_train",
                 [xhat = std::move(xhat), rstd = std::move(rstd)](Node& n) {
                   Node& X = *n.inputs[0];
                   Node& G = *n.inputs[1];
                   Node& B = *n.inputs[2];
                   const std::size_t rows = n.value.rows();
                   const std::size_t d = n.value.cols();
                   for (std::size_t j = 0; j < d; ++j) {
                     double m1 = 0.0;
                     double m2 = 0.0;
                     double dg = 0.0;
                     double db = 0.0;
                     const double gam = G.value(0, j);
                     for (std::size_t i = 0; i < rows; ++i) {
                       const double dy = n.grad(i, j);
                       dg += dy * xhat(i, j);
                       db += dy;
                       m1 += dy * gam;
                       m2 += dy * gam * xhat(i, j);
                     }
                     if (G.requires_grad) G.grad(0, j) += dg;
                     if (B.requires_grad) B.grad(0, j) += db;
                     if (!X.requires_grad) continue;
                     m1 /= static_cast<double>(rows);
                     m2 /= static_cast<double>(rows);
                     for (std::size_t i = 0; i < rows; ++i)
                       X.grad(i, j) +=
                           rstd(0, j) * (n.grad(i, j) * gam - m1 - xhat(i, j) * m2);
                   }
                 });
}

Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Matrix& mean,
                    const Matrix& var, double eps) {
  const std::size_t d = x.cols();
  if (gamma.cols() != d || mean.cols() != d || var.cols() != d) {
    throw ShapeError("batch_norm_eval: statistics incompatible with " + x.value().shape_str());
  }
  Matrix rstd(1, d);
  for (std::size_t j = 0; j < d; ++j) rstd(0, j) = 1.0 / std::sqrt(var(0, j) + eps);
  Matrix xhat(x.rows(), d);
  Matrix y(x.rows(), d);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (x.value()(i, j) - mean(0, j)) * rstd(0, j);
      y(i, j) = gamma.value()(0, j) * xhat(i, j) + beta.value()(0, j);
    }
  return make_op(std::move(y), {x, gamma, beta}, "batch_norm_eval",
                 [xhat = std::move(xhat), rstd = std::move(rstd)](Node& n) {
                   Node& X = *n.inputs[0];
                   Node& G = *n.inputs[1];
                   Node& B = *n.inputs[2];
                   for (std::size_t i = 0; i < n.value.rows(); ++i)
                     for (std::size_t j = 0; j < n.value.cols(); ++j) {
                       const double dy = n.grad(i, j);
                       if (G.requires_grad) G.grad(0, j) += dy * xhat(i, j);
                       if (B.requires_grad) B.grad(0, j) += dy;
                       if (X.requires_grad) X.grad(i, j) += dy * G.value(0, j) * rstd(0, j);
                     }
                 });
}

Var dropout(const Var& x, double rate, Mode mode, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::Eval || rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  Matrix mask(x.rows(), x.cols());
  for (double& m : mask.data()) m = keep(rng) ? s : 0.0;
  Matrix y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] *= mask.data()[i];
  return make_op(std::move(y), {x}, "dropout", [mask = std::move(mask)](Node& n) {
    Node& X = *n.inputs[0];
    auto d = X.grad.data();
    auto g = n.grad.data();
    auto m = mask.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * m[i];
  });
}

Var slice_cols(const Var& x, std::size_t start, std::size_t count) {
  if (start + count > x.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of " + x.value().shape_str());
  }
  Matrix y(x.rows(), count);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) y(i, j) = x.value()(i, start + j);
  return make_op(std::move(y), {x}, "slice_cols", [start](Node& n) {
    Node& X = *n.inputs[0];
    for (std::size_t i = 0; i < n.grad.rows(); ++i)
      for (std::size_t j = 0; j < n.grad.cols(); ++j) X.grad(i, start + j) += n.grad(i, j);
  });
}

Var slice_rows(const Var& x, std::size_t start, std::size_t count) {
  if (start + count > x.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of " + x.value().shape_str());
  }
  const std::size_t c = x.cols();
  std::vector<double> data(x.value().data().begin() + static_cast<std::ptrdiff_t>(start * c),
                           x.value().data().begin() +
                               static_cast<std::ptrdiff_t>((start + count) * c));
  return make_op(Matrix(count, c, std::move(data)), {x}, "slice_rows", [start](Node& n) {
    Node& X = *n.inputs[0];
    const std::size_t c = n.grad.cols();
    auto g = n.grad.data();
    auto d = X.grad.data().subspan(start * c, g.size());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: row count mismatch " + p.value().shape_str() + " vs " +
                       parts[0].value().shape_str());
    }
    cols += p.cols();
  }
  Matrix y(rows, cols);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) y(i, off + j) = p.value()(i, j);
    off += p.cols();
  }
  return make_op(std::move(y), {parts.begin(), parts.end()}, "concat_cols",
                 [offsets = std::move(offsets)](Node& n) {
                   for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                     Node& P = *n.inputs[k];
                     if (!P.requires_grad) continue;
                     for (std::size_t i = 0; i < P.grad.rows(); ++i)
                       for (std::size_t j = 0; j < P.grad.cols(); ++j)
                         P.grad(i, j) += n.grad(i, offsets[k] + j);
                   }
                 });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: column count mismatch " + p.value().shape_str() + " vs " +
                       parts[0].value().shape_str());
    }
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  return make_op(Matrix(rows, cols, std::move(data)), {parts.begin(), parts.end()}, "concat_rows",
                 [](Node& n) {
                   std::size_t off = 0;
                   auto g = n.grad.data();
                   for (auto& in : n.inputs) {
                     const std::size_t len = in->value.size();
                     if (in->requires_grad) {
                       auto d = in->grad.data();
                       for (std::size_t i = 0; i < len; ++i) d[i] += g[off + i];
                     }
                     off += len;
                   }
                 });
}

Var col_max(const Var& x) {
  if (x.rows() == 0) throw ShapeError("col_max: empty input");
  Matrix y(1, x.cols());
  std::vector<std::size_t> arg(x.cols(), 0);
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double m = x.value()(0, j);
    for (std::size_t i = 1; i < x.rows(); ++i) {
      if (x.value()(i, j) > m || std::isnan(x.value()(i, j))) {
        m = x.value()(i, j);
        arg[j] = i;
        if (std::isnan(m)) break;
      }
    }
    y(0, j) = m;
  }
  return make_op(std::move(y), {x}, "col_max", [arg = std::move(arg)](Node& n) {
    Node& X = *n.inputs[0];
    for (std::size_t j = 0; j < arg.size(); ++j) X.grad(arg[j], j) += n.grad(0, j);
  });
}

Var col_mean(const Var& x) {
  if (x.rows() == 0) throw ShapeError("col_mean: empty input");
  Matrix y(1, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) y(0, j) += x.value()(i, j);
  const double inv = 1.0 / static_cast<double>(x.rows());
  for (double& v : y.data()) v *= inv;
  return make_op(std::move(y), {x}, "col_mean", [inv](Node& n) {
    Node& X = *n.inputs[0];
    for (std::size_t i = 0; i < X.grad.rows(); ++i)
      for (std::size_t j = 0; j < X.grad.cols(); ++j) X.grad(i, j) += n.grad(0, j) * inv;
  });
}

Var cross_entropy(const Var& logits, std::span<const std::size_t> labels) {
  const std::size_t b = logits.rows();
  const std::size_t k = logits.cols();
  if (labels.size() != b) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     logits.value().shape_str());
  }
  if (b == 0) throw ShapeError("cross_entropy: empty batch");
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= k) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) +
                              " at row " + std::to_string(i) + " outside [0, " +
                              std::to_string(k) + ")");
    }
  }
  Matrix probs = viewset::softmax_rows(logits.value());
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    auto r = logits.value().row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double se = 0.0;
    for (double v : r) se += std::exp(v - mx);
    loss += mx + std::log(se) - r[labels[i]];
  }
  loss /= static_cast<double>(b);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return make_op(Matrix(1, 1, loss), {logits}, "cross_entropy",
                 [probs = std::move(probs), lab = std::move(lab)](Node& n) {
                   Node& X = *n.inputs[0];
                   const double g = n.grad(0, 0) / static_cast<double>(lab.size());
                   for (std::size_t i = 0; i < lab.size(); ++i)
                     for (std::size_t j = 0; j < probs.cols(); ++j)
                       X.grad(i, j) += g * (probs(i, j) - (j == lab[i] ? 1.0 : 0.0));
                 });
}

}  // namespace viewset::ag
