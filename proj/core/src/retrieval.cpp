#include "viewset/retrieval.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace viewset::retrieval {

std::size_t ScoredShape::predicted_class() const {
  if (probabilities.empty()) throw std::invalid_argument("shape '" + shape_id + "' has no scores");
  return static_cast<std::size_t>(std::distance(
      probabilities.begin(), std::max_element(probabilities.begin(), probabilities.end())));
}

RankList build_l1(const ScoredShape& query, std::span<const ScoredShape> corpus) {
  RankList out;
  out.query_id = query.shape_id;
  out.stage = Stage::L1;
  if (corpus.empty()) return out;
  const std::size_t cls = query.predicted_class();
  for (const auto& s : corpus) {
    if (s.shape_id == query.shape_id) continue;
    if (s.predicted_class() != cls) continue;
    out.entries.push_back({s.shape_id, s.probabilities[cls]});
  }
  auto better = [](const RankEntry& a, const RankEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.shape_id < b.shape_id;
  };
  if (out.entries.size() > kMaxRankLength) {
    std::partial_sort(out.entries.begin(),
                      out.entries.begin() + static_cast<std::ptrdiff_t>(kMaxRankLength),
                      out.entries.end(), better);
    out.entries.resize(kMaxRankLength);
  } else {
    std::sort(out.entries.begin(), out.entries.end(), better);
  }
  return out;
}

RankList rerank_l2(const RankList& l1, std::size_t query_sub,
                   const std::map<std::string, std::size_t>& sub_predictions) {
  RankList out;
  out.query_id = l1.query_id;
  out.stage = Stage::L2;
  out.entries = l1.entries;
  std::size_t missing = 0;
  std::stable_partition(out.entries.begin(), out.entries.end(), [&](const RankEntry& e) {
    auto it = sub_predictions.find(e.shape_id);
    if (it == sub_predictions.end()) {
      ++missing;
      return false;
    }
    return it->second == query_sub;
  });
  if (missing > 0) {
    spdlog::warn("query '{}': {} entries lack a subcategory prediction; kept after matches",
                 l1.query_id, missing);
  }
  return out;
}

double harmonic_f1(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

QueryScores score_query(const RankList& rank, const GroundTruth& gt) {
  auto lookup = [&](const std::string& id) -> const GroundTruthEntry& {
    auto it = gt.find(id);
    if (it == gt.end()) throw std::invalid_argument("shape '" + id + "' missing from ground truth");
    return it->second;
  };
  QueryScores q;
  q.query_id = rank.query_id;
  q.category = lookup(rank.query_id).category;

  std::size_t total_relevant = 0;
  for (const auto& [id, e] : gt)
    if (id != rank.query_id && e.category == q.category) ++total_relevant;

  const std::size_t n = rank.entries.size();
  std::size_t hits = 0;
  double ap_sum = 0.0;
  double dcg = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (lookup(rank.entries[k].shape_id).category != q.category) continue;
    ++hits;
    ap_sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    dcg += 1.0 / std::log2(static_cast<double>(k + 2));
  }
  q.precision = n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
  if (total_relevant == 0) {
    spdlog::warn("query '{}': category {} has no other shapes; recall, AP and NDCG set to 0",
                 rank.query_id, q.category);
    q.f1 = harmonic_f1(q.precision, 0.0);
    return q;
  }
  q.recall = static_cast<double>(hits) / static_cast<double>(total_relevant);
  q.f1 = harmonic_f1(q.precision, q.recall);
  q.average_precision = ap_sum / static_cast<double>(total_relevant);
  double ideal = 0.0;
  const std::size_t ideal_len = std::min(total_relevant, kMaxRankLength);
  for (std::size_t k = 0; k < ideal_len; ++k) ideal += 1.0 / std::log2(static_cast<double>(k + 2));
  q.ndcg = dcg / ideal;
  return q;
}

namespace {

struct Accum {
  double p = 0, r = 0, ap = 0, ndcg = 0;
  std::size_t n = 0;

  void add(const QueryScores& q) {
    p += q.precision;
    r += q.recall;
    ap += q.average_precision;
    ndcg += q.ndcg;
    ++n;
  }
  MetricBlock mean() const {
    const double d = static_cast<double>(n);
    MetricBlock b{p / d, r / d, 0.0, ap / d, ndcg / d};
    b.f1 = harmonic_f1(b.precision, b.recall);
    return b;
  }
};

}  // namespace

MetricsReport aggregate(std::span<const QueryScores> scores) {
  if (scores.empty()) throw std::invalid_argument("aggregate: no queries");
  Accum all;
  std::map<std::size_t, Accum> per_cat;
  for (const auto& q : scores) {
    all.add(q);
    per_cat[q.category].add(q);
  }
  MetricsReport r;
  r.num_queries = scores.size();
  r.num_categories = per_cat.size();
  r.micro = all.mean();
  MetricBlock sum{};
  for (const auto& [cat, acc] : per_cat) {
    const MetricBlock m = acc.mean();
    sum.precision += m.precision;
    sum.recall += m.recall;
    sum.map += m.map;
    sum.ndcg += m.ndcg;
  }
  const double c = static_cast<double>(per_cat.size());
  r.macro = {sum.precision / c, sum.recall / c, 0.0, sum.map / c, sum.ndcg / c};
  r.macro.f1 = harmonic_f1(r.macro.precision, r.macro.recall);
  return r;
}

void write_rank_lists(std::ostream& os, std::span<const RankList> lists) {
  for (const auto& l : lists) {
    os << l.query_id;
    for (const auto& e : l.entries) os << ' ' << e.shape_id;
    os << '\n';
  }
}

void write_metrics_table(std::ostream& os, const MetricsReport& r) {
  char buf[128];
  os << "        P@N     R@N     F1@N    mAP     NDCG\n";
  auto row = [&](const char* name, const MetricBlock& b) {
    std::snprintf(buf, sizeof buf, "%-6s  %.4f  %.4f  %.4f  %.4f  %.4f\n", name, b.precision,
                  b.recall, b.f1, b.map, b.ndcg);
    os << buf;
  };
  row("micro", r.micro);
  row("macro", r.macro);
}

void write_metrics_kv(std::ostream& os, const MetricsReport& r) {
  char buf[64];
  auto kv = [&](const char* block, const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%s.%s=%.6f\n", block, key, v);
    os << buf;
  };
  for (const auto& [name, b] : {std::pair{"micro", r.micro}, std::pair{"macro", r.macro}}) {
    kv(name, "p_at_n", b.precision);
    kv(name, "r_at_n", b.recall);
    kv(name, "f1_at_n", b.f1);
    kv(name, "map", b.map);
    kv(name, "ndcg", b.ndcg);
  }
  os << "queries=" << r.num_queries << '\n' << "categories=" << r.num_categories << '\n';
}

}  // namespace viewset::retrieval
