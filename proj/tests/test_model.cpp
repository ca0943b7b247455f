#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "viewset/model.hpp"

namespace viewset {
namespace {

using testing::random_matrix;

ModelConfig small_config(std::size_t dim_in = 5, std::size_t d = 8, std::size_t blocks = 2,
                         std::size_t heads = 2, std::size_t classes = 3) {
  ModelConfig c;
  c.dim_in = dim_in;
  c.dim_view = d;
  c.num_blocks = blocks;
  c.num_heads = heads;
  c.num_classes = classes;
  c.decoder_hidden = 6;
  c.max_views = 8;
  return c;
}

/// Overwrites every parameter with uniform noise, including norms and running statistics.
void randomize(ViewSetModel& m, std::uint64_t seed, double scale = 0.8) {
  std::mt19937_64 rng(seed);
  for (auto& p : m.parameters()) {
    ag::Var v = p.var;
    v.mutable_value() = random_matrix(v.rows(), v.cols(), rng, -scale, scale);
  }
  for (auto& layer : m.decoder_layers()) {
    layer.running_mean = random_matrix(1, layer.running_mean.cols(), rng, -0.5, 0.5);
    layer.running_var = random_matrix(1, layer.running_var.cols(), rng, 0.5, 1.5);
  }
}

Matrix permute_rows(const Matrix& x, const std::vector<std::size_t>& perm) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) y(i, j) = x(perm[i], j);
  return y;
}

// ---- independent scalar-loop oracle for one attention block (eval mode) ----

Matrix affine_oracle(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y(x.rows(), w.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t o = 0; o < w.rows(); ++o) {
      double s = b(0, o);
      for (std::size_t k = 0; k < x.cols(); ++k) s += x(i, k) * w(o, k);
      y(i, o) = s;
    }
  return y;
}

Matrix ln_oracle(const Matrix& x, const Matrix& g, const Matrix& b, double eps) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < x.cols(); ++j) mu += x(i, j);
    mu /= static_cast<double>(x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
    var /= static_cast<double>(x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j)
      y(i, j) = g(0, j) * (x(i, j) - mu) / std::sqrt(var + eps) + b(0, j);
  }
  return y;
}

Matrix block_oracle(const Matrix& z, const BlockParams& p, std::size_t heads, double eps) {
  const std::size_t m = z.rows(), d = z.cols(), dh = d / heads;
  const Matrix h = ln_oracle(z, p.ln1_gamma.value(), p.ln1_beta.value(), eps);
  const Matrix q = affine_oracle(h, p.wq.value(), p.bq.value());
  const Matrix k = affine_oracle(h, p.wk.value(), p.bk.value());
  const Matrix v = affine_oracle(h, p.wv.value(), p.bv.value());
  Matrix concat(m, d);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    for (std::size_t i = 0; i < m; ++i) {
      std::vector<double> s(m);
      for (std::size_t j = 0; j < m; ++j) {
        double dot = 0;
        for (std::size_t t = 0; t < dh; ++t) dot += q(i, hd * dh + t) * k(j, hd * dh + t);
        s[j] = dot / std::sqrt(static_cast<double>(dh));
      }
      const double mx = *std::max_element(s.begin(), s.end());
      double tot = 0;
      for (double& x : s) tot += (x = std::exp(x - mx));
      for (std::size_t t = 0; t < dh; ++t) {
        double acc = 0;
        for (std::size_t j = 0; j < m; ++j) acc += s[j] / tot * v(j, hd * dh + t);
        concat(i, hd * dh + t) = acc;
      }
    }
  }
  Matrix zhat = affine_oracle(concat, p.wo.value(), p.bo.value());
  for (std::size_t i = 0; i < zhat.size(); ++i) zhat.data()[i] += z.data()[i];
  Matrix hid = affine_oracle(ln_oracle(zhat, p.ln2_gamma.value(), p.ln2_beta.value(), eps),
                             p.w1.value(), p.b1.value());
  for (double& x : hid.data()) x = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
  Matrix out = affine_oracle(hid, p.w2.value(), p.b2.value());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += zhat.data()[i];
  return out;
}

TEST(InitFeatures, IdentityAdapter) {
  ViewSetModel m(small_config(8, 8), 1);
  ag::Var w = m.adapter_weight(), b = m.adapter_bias();
  w.mutable_value() = Matrix::identity(8);
  b.mutable_value().fill(0.0);
  std::mt19937_64 rng(2);
  const Matrix raw = random_matrix(3, 8, rng);
  EXPECT_EQ(m.init_features(ag::constant(raw)).value(), raw);
}

TEST(InitFeatures, ZeroWeightsGiveBiasRows) {
  ViewSetModel m(small_config(16, 8), 1);
  ag::Var w = m.adapter_weight();
  w.mutable_value().fill(0.0);
  std::mt19937_64 rng(3);
  const Matrix out = m.init_features(ag::constant(random_matrix(4, 16, rng))).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(out(i, j), m.adapter_bias().value()(0, j));
}

TEST(InitFeatures, MatchesMatmulOracle) {
  ViewSetModel m(small_config(16, 8), 4);
  randomize(m, 5);
  std::mt19937_64 rng(6);
  const Matrix raw = random_matrix(3, 16, rng);
  const Matrix expect = affine_oracle(raw, m.adapter_weight().value(), m.adapter_bias().value());
  EXPECT_LT(max_abs_diff(m.init_features(ag::constant(raw)).value(), expect), 1e-12);
}

TEST(InitFeatures, RejectsWidthMismatch) {
  ViewSetModel m(small_config(16, 8), 4);
  EXPECT_THROW(m.init_features(ag::constant(Matrix(2, 15))), ShapeError);
}

TEST(AttentionBlock, SingleViewReducesToValueThenOutputProjection) {
  ViewSetModel m(small_config(8, 8, 1), 7);
  randomize(m, 8);
  const BlockParams& p = m.blocks()[0];
  std::mt19937_64 rng(9);
  const Matrix z = random_matrix(1, 8, rng);
  AttentionMaps maps;
  const Matrix out =
      attention_block(ag::constant(z), p, 2, 0.0, 1e-5, Mode::Eval, rng, &maps).value();
  ASSERT_EQ(maps.size(), 1u);
  EXPECT_EQ(maps[0](0, 0), 1.0);

  const Matrix h = ln_oracle(z, p.ln1_gamma.value(), p.ln1_beta.value(), 1e-5);
  const Matrix msa = affine_oracle(affine_oracle(h, p.wv.value(), p.bv.value()), p.wo.value(),
                                   p.bo.value());
  Matrix zhat = msa;
  for (std::size_t j = 0; j < 8; ++j) zhat(0, j) += z(0, j);
  Matrix hid = affine_oracle(ln_oracle(zhat, p.ln2_gamma.value(), p.ln2_beta.value(), 1e-5),
                             p.w1.value(), p.b1.value());
  for (double& x : hid.data()) x = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
  Matrix expect = affine_oracle(hid, p.w2.value(), p.b2.value());
  for (std::size_t j = 0; j < 8; ++j) expect(0, j) += zhat(0, j);
  EXPECT_LT(max_abs_diff(out, expect), 1e-12);
}

TEST(AttentionBlock, ZeroWeightsAreIdentityInEval) {
  ViewSetModel m(small_config(8, 8, 1), 7);
  for (auto& p : m.parameters()) {
    ag::Var v = p.var;
    if (p.name.starts_with("blocks.") && p.name.find("ln") == std::string::npos) v.mutable_value().fill(0.0);
  }
  std::mt19937_64 rng(1);
  const Matrix z = random_matrix(4, 8, rng);
  EXPECT_EQ(attention_block(ag::constant(z), m.blocks()[0], 2, 0.1, 1e-5, Mode::Eval, rng).value(), z);
}

TEST(AttentionBlock, MatchesPerHeadOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ViewSetModel m(small_config(4, 4, 1, 2), seed);
    randomize(m, seed + 100);
    std::mt19937_64 rng(seed);
    const Matrix z = random_matrix(2, 4, rng, -2, 2);
    const Matrix got =
        attention_block(ag::constant(z), m.blocks()[0], 2, 0.0, 1e-5, Mode::Eval, rng).value();
    EXPECT_LT(max_abs_diff(got, block_oracle(z, m.blocks()[0], 2, 1e-5)), 1e-10);
  }
}

TEST(Encoder, SingleBlockEqualsAttentionBlock) {
  ViewSetModel m(small_config(8, 8, 1), 3);
  randomize(m, 4);
  std::mt19937_64 rng(5);
  const Matrix z = random_matrix(3, 8, rng);
  const Matrix a = m.encode(ag::constant(z), Mode::Eval, rng).value();
  const Matrix b = attention_block(ag::constant(z), m.blocks()[0], 2, m.config().dropout_rate,
                                   1e-5, Mode::Eval, rng)
                       .value();
  EXPECT_EQ(a, b);
}

TEST(Encoder, PermutationEquivariantOverAllPermutations) {
  ViewSetModel m(small_config(8, 8, 2), 11);
  randomize(m, 12);
  std::mt19937_64 rng(13);
  const Matrix z = random_matrix(3, 8, rng, -2, 2);
  const Matrix base = m.encode(ag::constant(z), Mode::Eval, rng).value();
  std::vector<std::size_t> perm{0, 1, 2};
  do {
    const Matrix out = m.encode(ag::constant(permute_rows(z, perm)), Mode::Eval, rng).value();
    EXPECT_LT(max_abs_diff(out, permute_rows(base, perm)), 1e-12);
  } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST(Encoder, PositionEncodingBreaksInvariance) {
  auto cfg = small_config(8, 8, 2);
  cfg.use_position_encoding = true;
  ViewSetModel m(cfg, 21);
  randomize(m, 22);
  std::mt19937_64 rng(23);
  const Matrix z = random_matrix(4, 8, rng);
  const Matrix base = m.transition(m.encode(ag::constant(z), Mode::Eval, rng)).value();
  bool changed = false;
  std::vector<std::size_t> perm{0, 1, 2, 3};
  for (int trial = 0; trial < 20 && !changed; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    const Matrix d = m.transition(m.encode(ag::constant(permute_rows(z, perm)), Mode::Eval, rng)).value();
    changed = max_abs_diff(d, base) > 1e-6;
  }
  EXPECT_TRUE(changed);
}

TEST(Encoder, RejectsTooManyViewsWithPositionEncoding) {
  auto cfg = small_config(8, 8, 1);
  cfg.use_position_encoding = true;
  cfg.max_views = 3;
  ViewSetModel m(cfg, 1);
  std::mt19937_64 rng(1);
  EXPECT_THROW(m.encode(ag::constant(Matrix(4, 8)), Mode::Eval, rng), std::invalid_argument);
  EXPECT_THROW(m.predict(Matrix(4, 8)), std::invalid_argument);
}

TEST(Encoder, ClassTokenPrependsARow) {
  auto cfg = small_config(8, 8, 1);
  cfg.use_class_token = true;
  ViewSetModel m(cfg, 1);
  std::mt19937_64 rng(1);
  const auto z = m.encode(ag::constant(Matrix(3, 8, 0.5)), Mode::Eval, rng);
  EXPECT_EQ(z.rows(), 4u);
  EXPECT_EQ(m.transition(z).cols(), 16u);
}

TEST(Transition, SingleRowHalvesEqual) {
  std::mt19937_64 rng(1);
  const Matrix z = random_matrix(1, 6, rng);
  const Matrix t = max_mean_pool(ag::constant(z)).value();
  for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(t(0, j), t(0, 6 + j));
}

TEST(Transition, DirectArithmetic) {
  EXPECT_EQ(max_mean_pool(ag::constant(Matrix{{1, 4}, {3, 2}})).value(), (Matrix{{3, 4, 2, 3}}));
}

TEST(Transition, MatchesColumnLoopOracleAndMaxDominatesMean) {
  std::mt19937_64 rng(2);
  const Matrix z = random_matrix(6, 8, rng, -3, 3);
  Matrix expect(1, 16);
  for (std::size_t j = 0; j < 8; ++j) {
    double mx = z(0, j), s = 0;
    for (std::size_t i = 0; i < 6; ++i) {
      mx = std::max(mx, z(i, j));
      s += z(i, j);
    }
    expect(0, j) = mx;
    expect(0, 8 + j) = s / 6.0;
  }
  const Matrix t = max_mean_pool(ag::constant(z)).value();
  EXPECT_LT(max_abs_diff(t, expect), 1e-14);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(t(0, j), expect(0, j));
  for (std::size_t j = 0; j < 8; ++j) EXPECT_GE(t(0, j), t(0, 8 + j));
}

TEST(Transition, DuplicatedOrDominatedRowKeepsMaxHalf) {
  std::mt19937_64 rng(3);
  const Matrix z = random_matrix(4, 5, rng);
  Matrix dup(5, 5);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) dup(i, j) = z(i, j);
  for (std::size_t j = 0; j < 5; ++j) dup(4, j) = z(2, j);
  const Matrix a = max_mean_pool(ag::constant(z)).value();
  const Matrix b = max_mean_pool(ag::constant(dup)).value();
  for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(a(0, j), b(0, j));
}

TEST(Decoder, DepthOneZeroWeightsGiveBias) {
  auto cfg = small_config();
  cfg.decoder_depth = 1;
  ViewSetModel m(cfg, 1);
  ag::Var w = m.decoder_out_weight();
  w.mutable_value().fill(0.0);
  std::mt19937_64 rng(1);
  const Matrix logits = m.decode_eval(ag::constant(random_matrix(3, 16, rng))).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(logits(i, k), m.decoder_out_bias().value()(0, k));
}

TEST(Decoder, DepthTwoParameterCountClosedForm) {
  ModelConfig cfg;  // reference: D=512, hidden 512
  cfg.num_blocks = 0;
  for (std::size_t k : {10u, 40u, 55u}) {
    cfg.num_classes = k;
    ViewSetModel m(cfg, 0);
    std::size_t decoder = 0;
    for (const auto& p : m.parameters())
      if (p.name.starts_with("decoder.")) decoder += p.var.value().size();
    EXPECT_EQ(decoder, 1024u * 512 + 512 + 2 * 512 + 512 * k + k);
  }
}

TEST(Decoder, ProbabilitiesSumToOneForEveryDepth) {
  for (std::size_t depth : {1u, 2u, 3u}) {
    auto cfg = small_config();
    cfg.decoder_depth = depth;
    ViewSetModel m(cfg, depth);
    randomize(m, depth + 7);
    std::mt19937_64 rng(depth);
    const Prediction p = m.predict(random_matrix(4, 5, rng));
    ASSERT_EQ(p.probabilities.size(), 3u);
    EXPECT_NEAR(std::accumulate(p.probabilities.begin(), p.probabilities.end(), 0.0), 1.0, 1e-9);
  }
}

TEST(Config, RejectsInvalid) {
  auto cfg = small_config();
  cfg.num_heads = 3;
  EXPECT_THROW(ViewSetModel(cfg, 0), std::invalid_argument);
  cfg = small_config();
  cfg.num_classes = 1;
  EXPECT_THROW(ViewSetModel(cfg, 0), std::invalid_argument);
  cfg = small_config();
  cfg.decoder_depth = 4;
  EXPECT_THROW(ViewSetModel(cfg, 0), std::invalid_argument);
}

TEST(Forward, EvalLogitsInvariantUnderAllPermutations) {
  for (std::size_t m_views : {2u, 3u, 4u}) {
    ViewSetModel m(small_config(), m_views);
    randomize(m, 40 + m_views);
    std::mt19937_64 rng(m_views);
    const Matrix x = random_matrix(m_views, 5, rng, -2, 2);
    const Prediction base = m.predict(x);
    std::vector<std::size_t> perm(m_views);
    std::iota(perm.begin(), perm.end(), 0);
    do {
      const Prediction p = m.predict(permute_rows(x, perm));
      for (std::size_t k = 0; k < 3; ++k) EXPECT_LT(std::abs(p.logits[k] - base.logits[k]), 1e-9);
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
}

TEST(Forward, EvalIsDeterministic) {
  ViewSetModel m(small_config(), 1);
  std::mt19937_64 rng(1);
  const Matrix x = random_matrix(3, 5, rng);
  EXPECT_EQ(m.predict(x).logits, m.predict(x).logits);
}

TEST(Forward, BatchOfOneInTrainModeUsesRunningStatistics) {
  ViewSetModel m(small_config(), 1);
  std::mt19937_64 rng(1);
  const Matrix x = random_matrix(3, 5, rng);
  const Matrix* batch[] = {&x};
  const auto logits = m.forward(batch, Mode::Train, rng);
  EXPECT_TRUE(logits.value().all_finite());
  const auto& layer = m.decoder_layers()[0];
  for (double v : layer.running_var.data()) EXPECT_EQ(v, 1.0);
}

struct GradCase {
  const char* name;
  bool pos_enc;
  bool cls_token;
  double dropout;
  std::size_t depth;
};

void PrintTo(const GradCase& c, std::ostream* os) { *os << c.name; }

class FullModelGradient : public ::testing::TestWithParam<GradCase> {};

TEST_P(FullModelGradient, MatchesFiniteDifferences) {
  const GradCase gc = GetParam();
  auto cfg = small_config(5, 8, 2, 2, 3);
  cfg.use_position_encoding = gc.pos_enc;
  cfg.use_class_token = gc.cls_token;
  cfg.dropout_rate = gc.dropout;
  cfg.decoder_depth = gc.depth;
  ViewSetModel m(cfg, 77);
  randomize(m, 78, 0.3);
  std::mt19937_64 rng(79);
  std::vector<Matrix> sets;
  for (std::size_t i = 0; i < 4; ++i) sets.push_back(random_matrix(3, 5, rng, -1.5, 1.5));
  const Matrix* batch[] = {&sets[0], &sets[1], &sets[2], &sets[3]};
  const std::vector<std::size_t> labels{2, 0, 1, 2};
  std::vector<std::pair<std::string, ag::Var>> params;
  for (const auto& p : m.parameters()) params.emplace_back(p.name, p.var);
  auto loss = [&] {
    std::mt19937_64 drop(5);
    return ag::cross_entropy(m.forward(batch, Mode::Train, drop), labels);
  };
  for (const auto& r : testing::check_gradients(params, loss))
    EXPECT_LT(r.rel_error, 1e-4) << gc.name << ": " << r.name << " |a|=" << r.analytic_norm
                                 << " |n|=" << r.numeric_norm;
}

INSTANTIATE_TEST_SUITE_P(
    Variants, FullModelGradient,
    ::testing::Values(GradCase{"plain", false, false, 0.0, 2}, GradCase{"dropout", false, false, 0.2, 2},
                      GradCase{"pos_enc", true, false, 0.0, 2}, GradCase{"cls_token", false, true, 0.0, 2},
                      GradCase{"depth1", false, false, 0.0, 1}, GradCase{"depth3", false, false, 0.0, 3}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(ExportAttention, SingleViewIsUnitMap) {
  ViewSetModel m(small_config(), 1);
  const AttentionMaps maps = m.attention_maps(Matrix(1, 5, 0.3));
  ASSERT_EQ(maps.size(), 2u);
  for (const auto& a : maps) EXPECT_EQ(a, (Matrix{{1.0}}));
}

TEST(ExportAttention, RowsAreStochastic) {
  ViewSetModel m(small_config(), 2);
  randomize(m, 3);
  std::mt19937_64 rng(4);
  for (const auto& a : m.attention_maps(random_matrix(6, 5, rng, -2, 2))) {
    ASSERT_EQ(a.rows(), 6u);
    for (std::size_t i = 0; i < 6; ++i) {
      double s = 0;
      for (double v : a.row(i)) s += v;
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(ExportAttention, DuplicateViewsGetIdenticalColumns) {
  ViewSetModel m(small_config(), 5);
  randomize(m, 6);
  std::mt19937_64 rng(7);
  Matrix x = random_matrix(5, 5, rng, -2, 2);
  for (std::size_t j = 0; j < 5; ++j) x(3, j) = x(1, j);
  for (const auto& a : m.attention_maps(x))
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a(i, 1), a(i, 3));
}

TEST(ParameterCount, AblationTablesExact) {
  auto count = [](std::size_t blocks, std::size_t heads, std::size_t d) {
    ModelConfig c;
    c.num_blocks = blocks;
    c.num_heads = heads;
    c.dim_view = d;
    c.num_classes = 40;
    return ViewSetModel(c, 0).parameter_count(false);
  };
  EXPECT_EQ(count(2, 8, 512), 4751912u);
  EXPECT_EQ(count(4, 8, 512), 8957480u);
  EXPECT_EQ(count(2, 6, 384), 2783016u);
}

}  // namespace
}  // namespace viewset
