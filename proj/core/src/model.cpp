#include "viewset/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace viewset {

namespace {

Matrix uniform_init(std::size_t rows, std::size_t cols, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

Matrix normal_init(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

struct Affine {
  ag::Var weight, bias;
};

Affine make_affine(std::size_t out, std::size_t in, std::mt19937_64& rng) {
  return {ag::parameter(uniform_init(out, in, in, rng)), ag::parameter(uniform_init(1, out, in, rng))};
}

ag::Var ones_row(std::size_t n) { return ag::parameter(Matrix(1, n, 1.0)); }
ag::Var zeros_row(std::size_t n) { return ag::parameter(Matrix(1, n, 0.0)); }

}  // namespace

std::size_t Prediction::argmax() const {
  return static_cast<std::size_t>(
      std::distance(logits.begin(), std::max_element(logits.begin(), logits.end())));
}

ag::Var attention_block(const ag::Var& z, const BlockParams& p, std::size_t num_heads,
                        double dropout_rate, double eps, Mode mode, std::mt19937_64& rng,
                        AttentionMaps* maps) {
  const std::size_t d = z.cols();
  const std::size_t dh = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ag::Var h = ag::layer_norm(z, p.ln1_gamma, p.ln1_beta, eps);
  ag::Var q = ag::linear(h, p.wq, p.bq);
  ag::Var k = ag::linear(h, p.wk, p.bk);
  ag::Var v = ag::linear(h, p.wv, p.bv);

  std::vector<ag::Var> heads;
  heads.reserve(num_heads);
  Matrix avg;
  if (maps) avg = Matrix(z.rows(), z.rows());
  for (std::size_t i = 0; i < num_heads; ++i) {
    ag::Var qh = ag::slice_cols(q, i * dh, dh);
    ag::Var kh = ag::slice_cols(k, i * dh, dh);
    ag::Var vh = ag::slice_cols(v, i * dh, dh);
    ag::Var weights = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), scale));
    if (maps) {
      auto a = avg.data();
      auto w = weights.value().data();
      for (std::size_t j = 0; j < a.size(); ++j) a[j] += w[j];
    }
    heads.push_back(ag::matmul(weights, vh));
  }
  if (maps) {
    for (double& x : avg.data()) x /= static_cast<double>(num_heads);
    maps->push_back(std::move(avg));
  }
  ag::Var msa = ag::linear(ag::concat_cols(heads), p.wo, p.bo);
  ag::Var zhat = ag::add(ag::dropout(msa, dropout_rate, mode, rng), z);

  ag::Var h2 = ag::layer_norm(zhat, p.ln2_gamma, p.ln2_beta, eps);
  ag::Var mlp = ag::linear(ag::gelu(ag::linear(h2, p.w1, p.b1)), p.w2, p.b2);
  return ag::add(ag::dropout(mlp, dropout_rate, mode, rng), zhat);
}

ag::Var max_mean_pool(const ag::Var& z) {
  const ag::Var parts[] = {ag::col_max(z), ag::col_mean(z)};
  return ag::concat_cols(parts);
}

ViewSetModel::ViewSetModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg_.dim_view;

  auto adapter = make_affine(d, cfg_.dim_in, rng);
  adapter_w_ = adapter.weight;
  adapter_b_ = adapter.bias;

  if (cfg_.use_position_encoding) pos_table_ = ag::parameter(normal_init(cfg_.max_views, d, 0.02, rng));
  if (cfg_.use_class_token) {
    cls_token_ = ag::parameter(normal_init(1, d, 0.02, rng));
    auto proj = make_affine(cfg_.descriptor_dim(), d, rng);
    cls_proj_w_ = proj.weight;
    cls_proj_b_ = proj.bias;
  }

  const std::size_t hidden = cfg_.mlp_ratio * d;
  blocks_.reserve(cfg_.num_blocks);
  for (std::size_t l = 0; l < cfg_.num_blocks; ++l) {
    BlockParams b;
    b.ln1_gamma = ones_row(d);
    b.ln1_beta = zeros_row(d);
    auto q = make_affine(d, d, rng);
    auto k = make_affine(d, d, rng);
    auto v = make_affine(d, d, rng);
    auto o = make_affine(d, d, rng);
    b.wq = q.weight, b.bq = q.bias;
    b.wk = k.weight, b.bk = k.bias;
    b.wv = v.weight, b.bv = v.bias;
    b.wo = o.weight, b.bo = o.bias;
    b.ln2_gamma = ones_row(d);
    b.ln2_beta = zeros_row(d);
    auto fc1 = make_affine(hidden, d, rng);
    auto fc2 = make_affine(d, hidden, rng);
    b.w1 = fc1.weight, b.b1 = fc1.bias;
    b.w2 = fc2.weight, b.b2 = fc2.bias;
    blocks_.push_back(std::move(b));
  }

  std::size_t width = cfg_.descriptor_dim();
  for (std::size_t i = 0; i + 1 < cfg_.decoder_depth; ++i) {
    auto fc = make_affine(cfg_.decoder_hidden, width, rng);
    DecoderLayer layer{fc.weight, fc.bias, ones_row(cfg_.decoder_hidden),
                       zeros_row(cfg_.decoder_hidden), Matrix(1, cfg_.decoder_hidden, 0.0),
                       Matrix(1, cfg_.decoder_hidden, 1.0)};
    dec_layers_.push_back(std::move(layer));
    width = cfg_.decoder_hidden;
  }
  auto out = make_affine(cfg_.num_classes, width, rng);
  dec_out_w_ = out.weight;
  dec_out_b_ = out.bias;
}

std::vector<NamedParam> ViewSetModel::parameters() const {
  std::vector<NamedParam> ps;
  ps.push_back({"adapter.weight", adapter_w_});
  ps.push_back({"adapter.bias", adapter_b_});
  if (pos_table_.defined()) ps.push_back({"encoder.position_table", pos_table_});
  if (cls_token_.defined()) {
    ps.push_back({"encoder.class_token", cls_token_});
    ps.push_back({"transition.class_proj.weight", cls_proj_w_});
    ps.push_back({"transition.class_proj.bias", cls_proj_b_});
  }
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& b = blocks_[l];
    const std::string pre = "blocks." + std::to_string(l) + ".";
    ps.push_back({pre + "ln1.gamma", b.ln1_gamma});
    ps.push_back({pre + "ln1.beta", b.ln1_beta});
    ps.push_back({pre + "attn.q.weight", b.wq});
    ps.push_back({pre + "attn.q.bias", b.bq});
    ps.push_back({pre + "attn.k.weight", b.wk});
    ps.push_back({pre + "attn.k.bias", b.bk});
    ps.push_back({pre + "attn.v.weight", b.wv});
    ps.push_back({pre + "attn.v.bias", b.bv});
    ps.push_back({pre + "attn.out.weight", b.wo});
    ps.push_back({pre + "attn.out.bias", b.bo});
    ps.push_back({pre + "ln2.gamma", b.ln2_gamma});
    ps.push_back({pre + "ln2.beta", b.ln2_beta});
    ps.push_back({pre + "mlp.fc1.weight", b.w1});
    ps.push_back({pre + "mlp.fc1.bias", b.b1});
    ps.push_back({pre + "mlp.fc2.weight", b.w2});
    ps.push_back({pre + "mlp.fc2.bias", b.b2});
  }
  for (std::size_t i = 0; i < dec_layers_.size(); ++i) {
    const auto& l = dec_layers_[i];
    const std::string pre = "decoder.hidden." + std::to_string(i) + ".";
    ps.push_back({pre + "weight", l.weight});
    ps.push_back({pre + "bias", l.bias});
    ps.push_back({pre + "bn.gamma", l.bn_gamma});
    ps.push_back({pre + "bn.beta", l.bn_beta});
  }
  ps.push_back({"decoder.out.weight", dec_out_w_});
  ps.push_back({"decoder.out.bias", dec_out_b_});
  return ps;
}

std::vector<NamedBuffer> ViewSetModel::buffers() {
  std::vector<NamedBuffer> bs;
  for (std::size_t i = 0; i < dec_layers_.size(); ++i) {
    const std::string pre = "decoder.hidden." + std::to_string(i) + ".bn.";
    bs.push_back({pre + "running_mean", &dec_layers_[i].running_mean});
    bs.push_back({pre + "running_var", &dec_layers_[i].running_var});
  }
  return bs;
}

bool ViewSetModel::is_adapter_param(const std::string& name) const {
  return name.starts_with("adapter.");
}

std::size_t ViewSetModel::parameter_count(bool include_adapter) const {
  std::size_t n = 0;
  for (const auto& p : parameters()) {
    if (!include_adapter && is_adapter_param(p.name)) continue;
    n += p.var.value().size();
  }
  return n;
}

void ViewSetModel::check_input(const Matrix& raw) const {
  if (raw.rows() == 0) throw ShapeError("view set must contain at least one view");
  if (raw.cols() != cfg_.dim_in) {
    throw ShapeError("feature width " + std::to_string(raw.cols()) +
                     " does not match model dim_in " + std::to_string(cfg_.dim_in));
  }
  if (cfg_.use_position_encoding && raw.rows() > cfg_.max_views) {
    throw std::invalid_argument("view count " + std::to_string(raw.rows()) +
                                " exceeds max_views " + std::to_string(cfg_.max_views) +
                                " with position encoding enabled");
  }
}

ag::Var ViewSetModel::init_features(const ag::Var& raw) const {
  check_input(raw.value());
  return ag::linear(raw, adapter_w_, adapter_b_);
}

ag::Var ViewSetModel::encode(const ag::Var& z0, Mode mode, std::mt19937_64& rng,
                             AttentionMaps* maps) const {
  if (cfg_.use_position_encoding && z0.rows() > cfg_.max_views) {
    throw std::invalid_argument("view count " + std::to_string(z0.rows()) +
                                " exceeds max_views " + std::to_string(cfg_.max_views) +
                                " with position encoding enabled");
  }
  ag::Var z = z0;
  if (cfg_.use_position_encoding) z = ag::add(z, ag::slice_rows(pos_table_, 0, z.rows()));
  if (cfg_.use_class_token) {
    const ag::Var parts[] = {cls_token_, z};
    z = ag::concat_rows(parts);
  }
  for (const auto& b : blocks_)
    z = attention_block(z, b, cfg_.num_heads, cfg_.dropout_rate, cfg_.norm_eps, mode, rng, maps);
  return z;
}

ag::Var ViewSetModel::transition(const ag::Var& encoded) const {
  if (cfg_.use_class_token) {
    return ag::linear(ag::slice_rows(encoded, 0, 1), cls_proj_w_, cls_proj_b_);
  }
  return max_mean_pool(encoded);
}

ag::Var ViewSetModel::descriptor(const Matrix& raw_features, Mode mode,
                                 std::mt19937_64& rng) const {
  check_input(raw_features);
  ag::Var z0 = init_features(ag::constant(raw_features));
  return transition(encode(z0, mode, rng));
}

ag::Var ViewSetModel::decode(const ag::Var& descriptors, Mode mode) {
  // Batch statistics over a single row are degenerate; such batches use the running ones.
  if (mode == Mode::Eval || descriptors.rows() < 2) return decode_eval(descriptors);
  ag::Var h = descriptors;
  const double m = cfg_.bn_momentum;
  const auto n = static_cast<double>(descriptors.rows());
  for (auto& layer : dec_layers_) {
    Matrix mean, var;
    h = ag::linear(h, layer.weight, layer.bias);
    h = ag::relu(ag::batch_norm_train(h, layer.bn_gamma, layer.bn_beta, cfg_.norm_eps, &mean, &var));
    for (std::size_t j = 0; j < mean.cols(); ++j) {
      layer.running_mean(0, j) = (1.0 - m) * layer.running_mean(0, j) + m * mean(0, j);
      // running variance tracks the unbiased estimate
      layer.running_var(0, j) = (1.0 - m) * layer.running_var(0, j) + m * var(0, j) * n / (n - 1.0);
    }
  }
  return ag::linear(h, dec_out_w_, dec_out_b_);
}

ag::Var ViewSetModel::decode_eval(const ag::Var& descriptors) const {
  ag::Var h = descriptors;
  for (const auto& layer : dec_layers_) {
    h = ag::linear(h, layer.weight, layer.bias);
    h = ag::relu(ag::batch_norm_eval(h, layer.bn_gamma, layer.bn_beta, layer.running_mean,
                                     layer.running_var, cfg_.norm_eps));
  }
  return ag::linear(h, dec_out_w_, dec_out_b_);
}

ag::Var ViewSetModel::forward(std::span<const Matrix* const> batch, Mode mode,
                              std::mt19937_64& rng) {
  if (batch.empty()) throw ShapeError("forward: empty batch");
  std::vector<ag::Var> descs;
  descs.reserve(batch.size());
  for (const Matrix* m : batch) descs.push_back(descriptor(*m, mode, rng));
  return decode(ag::concat_rows(descs), mode);
}

Prediction ViewSetModel::predict(const Matrix& raw_features) const {
  ag::NoGradGuard no_grad;
  std::mt19937_64 unused(0);
  ag::Var logits = decode_eval(descriptor(raw_features, Mode::Eval, unused));
  Prediction p;
  p.logits.assign(logits.value().data().begin(), logits.value().data().end());
  Matrix probs = viewset::softmax_rows(logits.value());
  p.probabilities.assign(probs.data().begin(), probs.data().end());
  return p;
}

AttentionMaps ViewSetModel::attention_maps(const Matrix& raw_features) const {
  ag::NoGradGuard no_grad;
  std::mt19937_64 unused(0);
  AttentionMaps maps;
  encode(init_features(ag::constant(raw_features)), Mode::Eval, unused, &maps);
  return maps;
}

}  // namespace viewset
