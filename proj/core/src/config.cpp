#include "viewset/config.hpp"

#include <stdexcept>
#include <string>

namespace viewset {

namespace {
[[noreturn]] void reject(const std::string& what) { throw std::invalid_argument(what); }
}  // namespace

void ModelConfig::validate() const {
  if (dim_in == 0) reject("dim_in must be positive");
  if (dim_view == 0) reject("dim_view must be positive");
  if (num_heads == 0 || dim_view % num_heads != 0) {
    reject("dim_view (" + std::to_string(dim_view) + ") must be divisible by num_heads (" +
           std::to_string(num_heads) + ")");
  }
  if (mlp_ratio == 0) reject("mlp_ratio must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) reject("dropout_rate must lie in [0, 1)");
  if (num_classes < 2) reject("num_classes must be at least 2");
  if (decoder_depth < 1 || decoder_depth > 3) reject("decoder_depth must be 1, 2 or 3");
  if (decoder_depth > 1 && decoder_hidden == 0) reject("decoder_hidden must be positive");
  if (use_position_encoding && max_views == 0) reject("max_views must be positive");
  if (!(norm_eps > 0.0)) reject("norm_eps must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) reject("bn_momentum must lie in [0, 1]");
}

void TrainConfig::validate() const {
  if (restart_interval == 0) reject("restart_interval must be positive");
  if (warmup_epochs >= restart_interval) reject("warmup_epochs must be below restart_interval");
  if (!(peak_decay >= 0.0 && peak_decay < 1.0)) reject("peak_decay must lie in [0, 1)");
  if (!(peak_lr > 0.0)) reject("peak_lr must be positive");
  if (weight_decay < 0.0) reject("weight_decay must be non-negative");
  if (batch_size == 0) reject("batch_size must be positive");
}

}  // namespace viewset
