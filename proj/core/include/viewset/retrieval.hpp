#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace viewset::retrieval {

inline constexpr std::size_t kMaxRankLength = 1000;

enum class Stage { L1, L2 };

struct RankEntry {
  std::string shape_id;
  double score = 0.0;

  friend bool operator==(const RankEntry&, const RankEntry&) = default;
};

struct RankList {
  std::string query_id;
  std::vector<RankEntry> entries;
  Stage stage = Stage::L1;
};

/// A shape with the class distribution predicted for it.
struct ScoredShape {
  std::string shape_id;
  std::vector<double> probabilities;

  std::size_t predicted_class() const;
};

/// Corpus shapes predicted in the query's class, ordered by that class's probability
/// (descending, ties by ascending id), at most kMaxRankLength long. The query itself is skipped.
RankList build_l1(const ScoredShape& query, std::span<const ScoredShape> corpus);

/// Stable partition of `l1`: entries whose predicted subcategory equals `query_sub` first.
/// Entries missing from `sub_predictions` count as non-matching.
RankList rerank_l2(const RankList& l1, std::size_t query_sub,
                   const std::map<std::string, std::size_t>& sub_predictions);

struct GroundTruthEntry {
  std::size_t category = 0;
  std::optional<std::size_t> subcategory;
};
using GroundTruth = std::map<std::string, GroundTruthEntry>;

struct QueryScores {
  std::string query_id;
  std::size_t category = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double average_precision = 0.0;
  double ndcg = 0.0;
};

/// Binary category relevance. N is the rank list length; the relevant pool is every other
/// ground-truth shape of the query's category. NDCG uses gain rel and discount 1/log2(k+1),
/// normalized by the ideal ordering truncated to kMaxRankLength.
QueryScores score_query(const RankList& rank, const GroundTruth& gt);

struct MetricBlock {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double map = 0.0;
  double ndcg = 0.0;
};

struct MetricsReport {
  MetricBlock micro;
  MetricBlock macro;
  std::size_t num_queries = 0;
  std::size_t num_categories = 0;
};

/// micro: mean over queries; macro: mean over categories of per-category query means.
/// In both blocks F1 is the harmonic mean of the aggregated precision and recall.
MetricsReport aggregate(std::span<const QueryScores> scores);

double harmonic_f1(double precision, double recall);

/// One line per query: query id then the retrieved ids, whitespace separated.
void write_rank_lists(std::ostream& os, std::span<const RankList> lists);
/// Aligned text table with micro and macro rows.
void write_metrics_table(std::ostream& os, const MetricsReport& r);
/// key=value lines such as `micro.map=0.812345`.
void write_metrics_kv(std::ostream& os, const MetricsReport& r);

}  // namespace viewset::retrieval
