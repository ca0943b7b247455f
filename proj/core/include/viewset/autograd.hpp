#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "viewset/matrix.hpp"

/// Reverse-mode differentiation over Matrix values.
///
/// Every op records its inputs and a backward closure on the result node. The
/// graph is owned by the result handles: once the loss Var goes out of scope the
/// intermediate nodes are released, while parameter leaves stay alive in the model.
namespace viewset::ag {

struct Node {
  Matrix value;
  /// Zero-initialized, same shape as value; only allocated when requires_grad.
  Matrix grad;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;
  const char* op = "leaf";
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }

  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return node_ != nullptr; }
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Var make_op(Matrix value, std::vector<Var> inputs, const char* op,
                     std::function<void(Node&)> backward_fn);
  std::shared_ptr<Node> node_;
};

/// While alive on a thread, ops on that thread record no backward closures.
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

/// Trainable leaf.
inline Var parameter(Matrix value) { return Var(std::move(value), true); }
/// Leaf that never receives a gradient.
inline Var constant(Matrix value) { return Var(std::move(value), false); }

/// Builds a result node. The closure is dropped when no input requires a gradient.
Var make_op(Matrix value, std::vector<Var> inputs, const char* op,
            std::function<void(Node&)> backward_fn);

/// Propagates d(loss)/d(node) to every reachable node that requires a gradient.
/// Gradients accumulate; callers zero parameter gradients between steps.
/// Throws ShapeError unless loss is 1x1.
void backward(const Var& loss);

enum class Mode { Train, Eval };

Var matmul(const Var& a, const Var& b);
/// a · bᵀ
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
/// Adds a 1xN row to every row of a.
Var add_row(const Var& a, const Var& row);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var sum(const Var& a);
/// x · Wᵀ + b with W stored out x in and b a 1 x out row.
Var linear(const Var& x, const Var& weight, const Var& bias);

Var softmax_rows(const Var& x);
Var relu(const Var& x);
/// Exact GELU, 0.5·x·(1 + erf(x/√2)).
Var gelu(const Var& x);

/// Per-row standardization with biased variance, then γ·x̂ + β.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);

/// Per-column standardization over the rows (the batch), then γ·x̂ + β.
/// Writes the batch mean and biased variance to the optional out-params.
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps,
                     Matrix* batch_mean = nullptr, Matrix* batch_var = nullptr);
/// Standardization with fixed statistics.
Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Matrix& mean,
                    const Matrix& var, double eps);

/// Inverted dropout: eval mode and rate 0 are identity.
Var dropout(const Var& x, double rate, Mode mode, std::mt19937_64& rng);

Var slice_cols(const Var& x, std::size_t start, std::size_t count);
Var slice_rows(const Var& x, std::size_t start, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);

/// 1xN column-wise maximum. Ties route the gradient to the first maximal row.
Var col_max(const Var& x);
/// 1xN column-wise mean.
Var col_mean(const Var& x);

/// Mean over the batch of -log softmax(logits)[label].
Var cross_entropy(const Var& logits, std::span<const std::size_t> labels);

}  // namespace viewset::ag
