#pragma once

#include <cstddef>
#include <cstdint>

namespace viewset {

/// Architecture hyperparameters. Defaults are the reference configuration.
struct ModelConfig {
  std::size_t dim_in = 512;
  std::size_t dim_view = 512;
  /// 0 disables the encoder (adapter -> transition -> decoder ablation).
  std::size_t num_blocks = 4;
  std::size_t num_heads = 8;
  std::size_t mlp_ratio = 2;
  double dropout_rate = 0.1;
  std::size_t num_classes = 40;
  bool use_position_encoding = false;
  bool use_class_token = false;
  std::size_t max_views = 20;
  std::size_t decoder_depth = 2;
  std::size_t decoder_hidden = 512;
  double norm_eps = 1e-5;
  double bn_momentum = 0.1;

  std::size_t head_dim() const { return dim_view / num_heads; }
  std::size_t descriptor_dim() const { return 2 * dim_view; }

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Optimization settings for the joint (second-stage) training.
struct TrainConfig {
  std::size_t epochs = 300;
  double peak_lr = 1e-3;
  std::size_t restart_interval = 100;
  std::size_t warmup_epochs = 5;
  double peak_decay = 0.4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  /// 0 means use every stored view of each shape.
  std::size_t views_per_shape = 0;
  bool freeze_adapter = false;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

}  // namespace viewset
