#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "viewset/config.hpp"
#include "viewset/dataset.hpp"
#include "viewset/model.hpp"

namespace viewset {

/// Warm-restart cosine schedule with linear warmup and a decaying peak.
///
/// Within cycle c = epoch / restart_interval the peak is peak_lr·(1 - peak_decay)^c. The first
/// warmup_epochs epochs of a cycle ramp linearly to the peak, reaching it on the last warmup
/// epoch; the remainder follows a half cosine from the peak towards zero.
double lr_at(std::size_t epoch, const TrainConfig& cfg);

/// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(std::vector<NamedParam> params, double beta1, double beta2, double eps,
        double weight_decay);

  void step(double lr);
  void zero_grad();
  std::size_t steps() const { return t_; }
  const std::vector<NamedParam>& params() const { return params_; }

 private:
  std::vector<NamedParam> params_;
  std::vector<Matrix> m_, v_;
  double beta1_, beta2_, eps_, wd_;
  std::size_t t_ = 0;
};

struct AccuracyReport {
  double instance_accuracy = 0.0;
  /// Unweighted mean of per_class.
  double class_accuracy = 0.0;
  /// Accuracy of each class that has at least one item, aligned with `classes`.
  std::vector<double> per_class;
  std::vector<std::size_t> classes;
  std::size_t total = 0;
};

/// Classes without items are left out of the class mean (with a warning).
AccuracyReport accuracy_report(std::span<const std::size_t> predicted,
                               std::span<const std::size_t> labels, std::size_t num_classes);

/// Uniform sample of `m` views without replacement.
ViewFeatureSet sample_views(const ViewFeatureSet& shape, std::size_t m, std::mt19937_64& rng);

/// Deterministic per-shape seed so that evaluation does not depend on dataset order.
std::uint64_t shape_seed(const std::string& shape_id, std::uint64_t base_seed);

/// Eval-mode accuracy. With views_per_shape in (0, M) each shape is evaluated on a fixed
/// per-shape sample.
AccuracyReport evaluate(std::span<const ViewFeatureSet> shapes, const ViewSetModel& model,
                        std::size_t views_per_shape = 0, std::uint64_t seed = 0);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  AccuracyReport eval;
};

/// Named copy of every parameter and buffer.
using ModelState = std::vector<std::pair<std::string, Matrix>>;

ModelState capture_state(ViewSetModel& model);
/// Throws std::invalid_argument on a missing name or shape mismatch.
void restore_state(ViewSetModel& model, const ModelState& state);

struct TrainResult {
  std::vector<EpochRecord> log;
  double best_instance_accuracy = 0.0;
  double best_class_accuracy = 0.0;
  std::size_t best_epoch = 0;
  /// State at the epoch with the best eval instance accuracy.
  ModelState best_state;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Joint optimization of all (non-frozen) parameters. `eval_set` may be empty, in which
/// case the training set is evaluated each epoch. Throws TrainingError on a non-finite loss.
TrainResult train(std::span<const ViewFeatureSet> train_set,
                  std::span<const ViewFeatureSet> eval_set, ViewSetModel& model,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// One tab-separated log line: epoch, lr, train loss, eval instance acc, eval class acc.
std::string format_epoch_line(const EpochRecord& r);

}  // namespace viewset
