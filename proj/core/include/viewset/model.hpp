#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "viewset/autograd.hpp"
#include "viewset/config.hpp"
#include "viewset/dataset.hpp"

namespace viewset {

using ag::Mode;

struct NamedParam {
  std::string name;
  ag::Var var;
};

/// Non-trainable state that still belongs in a checkpoint (decoder running statistics).
struct NamedBuffer {
  std::string name;
  Matrix* value;
};

struct Prediction {
  std::vector<double> logits;
  std::vector<double> probabilities;

  std::size_t argmax() const;
};

/// Pre-norm attention block: LN -> MSA -> dropout -> residual, LN -> MLP(GELU) -> dropout -> residual.
struct BlockParams {
  ag::Var ln1_gamma, ln1_beta;
  ag::Var wq, bq, wk, bk, wv, bv, wo, bo;
  ag::Var ln2_gamma, ln2_beta;
  ag::Var w1, b1, w2, b2;
};

/// One hidden decoder layer: affine -> batch standardization -> ReLU.
struct DecoderLayer {
  ag::Var weight, bias;
  ag::Var bn_gamma, bn_beta;
  Matrix running_mean;
  Matrix running_var;
};

/// Head-averaged attention weights, one square matrix per block.
using AttentionMaps = std::vector<Matrix>;

/// Single block forward. When `maps` is non-null the head-averaged softmax weights are appended.
ag::Var attention_block(const ag::Var& z, const BlockParams& p, std::size_t num_heads,
                        double dropout_rate, double eps, Mode mode, std::mt19937_64& rng,
                        AttentionMaps* maps = nullptr);

/// Column-wise max concatenated with column-wise mean: M x D -> 1 x 2D.
ag::Var max_mean_pool(const ag::Var& z);

/// Set classifier: feature adapter -> encoder -> transition -> decoder.
class ViewSetModel {
 public:
  ViewSetModel(ModelConfig cfg, std::uint64_t seed);
  // Parameters are shared handles; a copy would alias them.
  ViewSetModel(const ViewSetModel&) = delete;
  ViewSetModel& operator=(const ViewSetModel&) = delete;
  ViewSetModel(ViewSetModel&&) = default;
  ViewSetModel& operator=(ViewSetModel&&) = default;

  const ModelConfig& config() const { return cfg_; }

  /// Trainable parameters in a fixed order.
  std::vector<NamedParam> parameters() const;
  std::vector<NamedBuffer> buffers();
  /// Scalar count of trainable parameters; the adapter can be excluded.
  std::size_t parameter_count(bool include_adapter = true) const;
  bool is_adapter_param(const std::string& name) const;

  ag::Var init_features(const ag::Var& raw) const;
  ag::Var encode(const ag::Var& z0, Mode mode, std::mt19937_64& rng,
                 AttentionMaps* maps = nullptr) const;
  ag::Var transition(const ag::Var& encoded) const;
  /// Descriptor of one view set (1 x 2D).
  ag::Var descriptor(const Matrix& raw_features, Mode mode, std::mt19937_64& rng) const;
  /// B x 2D descriptors -> B x K logits. Train mode updates the running statistics.
  ag::Var decode(const ag::Var& descriptors, Mode mode);
  ag::Var decode_eval(const ag::Var& descriptors) const;

  /// Logits for a batch of view sets (B x K).
  ag::Var forward(std::span<const Matrix* const> batch, Mode mode, std::mt19937_64& rng);

  Prediction predict(const Matrix& raw_features) const;
  Prediction predict(const ViewFeatureSet& shape) const { return predict(shape.features); }

  AttentionMaps attention_maps(const Matrix& raw_features) const;

  const ag::Var& adapter_weight() const { return adapter_w_; }
  const ag::Var& adapter_bias() const { return adapter_b_; }
  const std::vector<BlockParams>& blocks() const { return blocks_; }
  std::vector<BlockParams>& blocks() { return blocks_; }
  const ag::Var& position_table() const { return pos_table_; }
  std::vector<DecoderLayer>& decoder_layers() { return dec_layers_; }
  const ag::Var& decoder_out_weight() const { return dec_out_w_; }
  const ag::Var& decoder_out_bias() const { return dec_out_b_; }

 private:
  void check_input(const Matrix& raw) const;

  ModelConfig cfg_;
  ag::Var adapter_w_, adapter_b_;
  ag::Var pos_table_;
  ag::Var cls_token_, cls_proj_w_, cls_proj_b_;
  std::vector<BlockParams> blocks_;
  std::vector<DecoderLayer> dec_layers_;
  ag::Var dec_out_w_, dec_out_b_;
};

}  // namespace viewset
