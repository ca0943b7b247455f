#pragma once

// From-definition retrieval metrics and an exhaustive case enumerator over tiny corpora.
// Sums run left to right in rank order so results are reproducible bit for bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "viewset/retrieval.hpp"

namespace viewset::testing {

struct OracleMetrics {
  double precision = 0, recall = 0, f1 = 0, ap = 0, ndcg = 0;
};

/// `list_rel[k]` is the relevance of rank position k+1; `corpus_rel` covers every corpus shape
/// other than the query.
inline OracleMetrics oracle_metrics(const std::vector<int>& list_rel,
                                    const std::vector<int>& corpus_rel) {
  OracleMetrics o;
  const std::size_t n = list_rel.size();
  std::size_t relevant_total = 0;
  for (int r : corpus_rel) relevant_total += static_cast<std::size_t>(r);
  auto relevant_in_top = [&](std::size_t k) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < k; ++i) c += static_cast<std::size_t>(list_rel[i]);
    return c;
  };
  const std::size_t retrieved_relevant = relevant_in_top(n);
  if (n > 0) o.precision = static_cast<double>(retrieved_relevant) / static_cast<double>(n);
  if (relevant_total == 0) return o;
  o.recall = static_cast<double>(retrieved_relevant) / static_cast<double>(relevant_total);
  if (o.precision + o.recall > 0) o.f1 = 2.0 * o.precision * o.recall / (o.precision + o.recall);

  double ap = 0;
  for (std::size_t k = 1; k <= n; ++k)
    if (list_rel[k - 1] == 1)
      ap += static_cast<double>(relevant_in_top(k)) / static_cast<double>(k);
  o.ap = ap / static_cast<double>(relevant_total);

  double dcg = 0;
  for (std::size_t k = 1; k <= n; ++k)
    if (list_rel[k - 1] == 1) dcg += 1.0 / std::log2(static_cast<double>(k) + 1.0);
  std::vector<int> ideal = corpus_rel;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  if (ideal.size() > retrieval::kMaxRankLength) ideal.resize(retrieval::kMaxRankLength);
  double idcg = 0;
  for (std::size_t k = 1; k <= ideal.size(); ++k)
    if (ideal[k - 1] == 1) idcg += 1.0 / std::log2(static_cast<double>(k) + 1.0);
  o.ndcg = dcg / idcg;
  return o;
}

struct TinyCase {
  retrieval::RankList rank;
  retrieval::GroundTruth gt;
  std::vector<int> list_rel;
  std::vector<int> corpus_rel;
};

/// Every corpus of one query plus 0..max_others other shapes, every relevance labelling of
/// the others, and every ordered selection of them as a rank list.
inline std::size_t enumerate_tiny_cases(std::size_t max_others,
                                        const std::function<void(const TinyCase&)>& visit) {
  std::size_t count = 0;
  for (std::size_t m = 0; m <= max_others; ++m) {
    for (std::size_t mask = 0; mask < (std::size_t{1} << m); ++mask) {
      TinyCase c;
      c.rank.query_id = "q";
      c.gt["q"] = {0, std::nullopt};
      std::vector<std::string> ids;
      for (std::size_t i = 0; i < m; ++i) {
        const int rel = static_cast<int>((mask >> i) & 1U);
        ids.push_back("s" + std::to_string(i));
        // irrelevant shapes alternate between two other categories
        c.gt[ids.back()] = {rel ? 0u : 1u + i % 2, std::nullopt};
        c.corpus_rel.push_back(rel);
      }
      std::vector<std::size_t> chosen;
      std::vector<bool> used(m, false);
      std::function<void()> extend = [&] {
        c.rank.entries.clear();
        c.list_rel.clear();
        for (std::size_t idx : chosen) {
          c.rank.entries.push_back({ids[idx], 0.0});
          c.list_rel.push_back(c.corpus_rel[idx]);
        }
        visit(c);
        ++count;
        for (std::size_t i = 0; i < m; ++i) {
          if (used[i]) continue;
          used[i] = true;
          chosen.push_back(i);
          extend();
          chosen.pop_back();
          used[i] = false;
        }
      };
      extend();
    }
  }
  return count;
}

}  // namespace viewset::testing
