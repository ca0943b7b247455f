#include "viewset/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

namespace viewset {

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  const std::size_t cycle = epoch / cfg.restart_interval;
  const std::size_t e = epoch % cfg.restart_interval;
  const double peak = cfg.peak_lr * std::pow(1.0 - cfg.peak_decay, static_cast<double>(cycle));
  if (e < cfg.warmup_epochs) {
    return peak * (static_cast<double>(e + 1) / static_cast<double>(cfg.warmup_epochs));
  }
  const double frac = static_cast<double>(e - cfg.warmup_epochs) /
                      static_cast<double>(cfg.restart_interval - cfg.warmup_epochs);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

AdamW::AdamW(std::vector<NamedParam> params, double beta1, double beta2, double eps,
             double weight_decay)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.rows(), p.var.cols());
    v_.emplace_back(p.var.rows(), p.var.cols());
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ag::Var var = params_[i].var;
    auto w = var.mutable_value().data();
    auto g = var.grad().data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] -= lr * wd_ * w[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

AccuracyReport accuracy_report(std::span<const std::size_t> predicted,
                               std::span<const std::size_t> labels, std::size_t num_classes) {
  if (predicted.size() != labels.size()) {
    throw std::invalid_argument("accuracy_report: prediction/label count mismatch");
  }
  std::vector<std::size_t> correct(num_classes, 0);
  std::vector<std::size_t> total(num_classes, 0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw std::out_of_range("accuracy_report: label " + std::to_string(labels[i]) +
                              " outside [0, " + std::to_string(num_classes) + ")");
    }
    ++total[labels[i]];
    if (predicted[i] == labels[i]) {
      ++correct[labels[i]];
      ++hits;
    }
  }
  AccuracyReport r;
  r.total = labels.size();
  r.instance_accuracy = labels.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(labels.size());
  std::size_t absent = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (total[c] == 0) {
      ++absent;
      continue;
    }
    r.classes.push_back(c);
    r.per_class.push_back(static_cast<double>(correct[c]) / static_cast<double>(total[c]));
  }
  if (absent > 0 && !labels.empty()) {
    spdlog::warn("{} of {} classes have no items; excluded from class accuracy", absent,
                 num_classes);
  }
  if (!r.per_class.empty()) {
    r.class_accuracy = std::accumulate(r.per_class.begin(), r.per_class.end(), 0.0) /
                       static_cast<double>(r.per_class.size());
  }
  return r;
}

ViewFeatureSet sample_views(const ViewFeatureSet& shape, std::size_t m, std::mt19937_64& rng) {
  const std::size_t available = shape.num_views();
  if (m == 0 || m > available) {
    throw std::invalid_argument("sample_views: cannot draw " + std::to_string(m) +
                                " views from shape '" + shape.shape_id + "' with " +
                                std::to_string(available));
  }
  std::vector<std::size_t> idx(available);
  std::iota(idx.begin(), idx.end(), 0);
  // partial Fisher-Yates
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, available - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  ViewFeatureSet out;
  out.shape_id = shape.shape_id;
  out.label = shape.label;
  out.sublabel = shape.sublabel;
  out.features = Matrix(m, shape.features.cols());
  for (std::size_t i = 0; i < m; ++i) {
    auto src = shape.features.row(idx[i]);
    std::copy(src.begin(), src.end(), out.features.row(i).begin());
  }
  return out;
}

std::uint64_t shape_seed(const std::string& shape_id, std::uint64_t base_seed) {
  // FNV-1a
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : shape_id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h ^ (base_seed * 0x9E3779B97F4A7C15ULL);
}

AccuracyReport evaluate(std::span<const ViewFeatureSet> shapes, const ViewSetModel& model,
                        std::size_t views_per_shape, std::uint64_t seed) {
  std::vector<std::size_t> predicted;
  std::vector<std::size_t> labels;
  predicted.reserve(shapes.size());
  labels.reserve(shapes.size());
  for (const auto& s : shapes) {
    if (views_per_shape > 0 && views_per_shape < s.num_views()) {
      std::mt19937_64 rng(shape_seed(s.shape_id, seed));
      predicted.push_back(model.predict(sample_views(s, views_per_shape, rng)).argmax());
    } else {
      predicted.push_back(model.predict(s).argmax());
    }
    labels.push_back(s.label);
  }
  return accuracy_report(predicted, labels, model.config().num_classes);
}

ModelState capture_state(ViewSetModel& model) {
  ModelState st;
  for (const auto& p : model.parameters()) st.emplace_back(p.name, p.var.value());
  for (const auto& b : model.buffers()) st.emplace_back(b.name, *b.value);
  return st;
}

void restore_state(ViewSetModel& model, const ModelState& state) {
  auto find = [&](const std::string& name) -> const Matrix& {
    for (const auto& [n, m] : state)
      if (n == name) return m;
    throw std::invalid_argument("state has no tensor named '" + name + "'");
  };
  auto assign = [](const std::string& name, Matrix& dst, const Matrix& src) {
    if (!dst.same_shape(src)) {
      throw std::invalid_argument("tensor '" + name + "' has shape " + src.shape_str() +
                                  ", model expects " + dst.shape_str());
    }
    dst = src;
  };
  for (auto& p : model.parameters()) {
    ag::Var v = p.var;
    assign(p.name, v.mutable_value(), find(p.name));
  }
  for (auto& b : model.buffers()) assign(b.name, *b.value, find(b.name));
}

TrainResult train(std::span<const ViewFeatureSet> train_set,
                  std::span<const ViewFeatureSet> eval_set, ViewSetModel& model,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  const std::size_t k = model.config().num_classes;
  for (const auto& s : train_set) {
    if (s.label >= k) {
      throw std::invalid_argument("train: shape '" + s.shape_id + "' has label " +
                                  std::to_string(s.label) + " >= num_classes " +
                                  std::to_string(k));
    }
    if (cfg.views_per_shape > s.num_views()) {
      throw std::invalid_argument("train: views_per_shape " + std::to_string(cfg.views_per_shape) +
                                  " exceeds the " + std::to_string(s.num_views()) +
                                  " views of shape '" + s.shape_id + "'");
    }
  }
  if (eval_set.empty()) eval_set = train_set;

  // Subsystem streams derive from the one seed by fixed offsets.
  std::mt19937_64 shuffle_rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed + 1);
  std::mt19937_64 sample_rng(cfg.seed + 2);

  std::vector<NamedParam> trainable;
  for (auto& p : model.parameters())
    if (!(cfg.freeze_adapter && model.is_adapter_param(p.name))) trainable.push_back(p);
  AdamW opt(trainable, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
  auto all_params = model.parameters();

  TrainResult result;
  bool have_best = false;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Matrix> views;
      std::vector<std::size_t> labels;
      views.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = train_set[order[i]];
        if (cfg.views_per_shape > 0 && cfg.views_per_shape < s.num_views()) {
          views.push_back(sample_views(s, cfg.views_per_shape, sample_rng).features);
        } else {
          views.push_back(s.features);
        }
        labels.push_back(s.label);
      }
      std::vector<const Matrix*> ptrs;
      for (const auto& v : views) ptrs.push_back(&v);

      for (auto& p : all_params) p.var.zero_grad();
      ag::Var logits = model.forward(ptrs, Mode::Train, dropout_rng);
      ag::Var loss = ag::cross_entropy(logits, labels);
      const double l = loss.value()(0, 0);
      if (!std::isfinite(l)) {
        std::string ids;
        for (std::size_t i = start; i < end; ++i) {
          if (!ids.empty()) ids += ',';
          ids += train_set[order[i]].shape_id;
        }
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch [" +
                            ids + "]");
      }
      ag::backward(loss);
      opt.step(lr);
      loss_sum += l * static_cast<double>(end - start);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.eval = evaluate(eval_set, model, cfg.views_per_shape, cfg.seed);
    if (!have_best || rec.eval.instance_accuracy > result.best_instance_accuracy) {
      result.best_instance_accuracy = rec.eval.instance_accuracy;
      result.best_epoch = epoch;
      result.best_state = capture_state(model);
      have_best = true;
    }
    result.best_class_accuracy = std::max(result.best_class_accuracy, rec.eval.class_accuracy);
    if (on_epoch) on_epoch(rec);
    result.log.push_back(std::move(rec));
  }
  if (!have_best) result.best_state = capture_state(model);
  return result;
}

std::string format_epoch_line(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.6f\t%.4f\t%.4f", r.epoch, r.lr, r.train_loss,
                r.eval.instance_accuracy, r.eval.class_accuracy);
  return buf;
}

}  // namespace viewset
