#pragma once

// Test-side brute-force implementations of the retrieval metrics. These are
// deliberately naive and independent of the library's evaluation path; the
// suites assert exact agreement.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "disperse/eval.hpp"

namespace oracles {

struct NaiveMetrics {
  double map = 0.0;
  double r1 = 0.0;
  std::size_t scored_queries = 0;
};

inline double naive_ap(const std::vector<std::uint8_t>& rel) {
  double total = 0.0, hits = 0.0;
  std::size_t relevant = 0;
  for (auto r : rel)
    if (r) ++relevant;
  for (std::size_t k = 0; k < rel.size(); ++k) {
    if (!rel[k]) continue;
    hits += 1.0;
    total += hits / static_cast<double>(k + 1);
  }
  return total / static_cast<double>(relevant);
}

inline NaiveMetrics naive_evaluate(const disperse::eval::RetrievalBenchmark& b) {
  using disperse::eval::RetrievalBenchmark;
  const std::size_t d = b.query_embeddings.cols();
  const auto qv = b.query_embeddings.value();
  const auto gv = b.gallery_embeddings.value();
  NaiveMetrics out;
  double ap_sum = 0.0;
  std::size_t top_hits = 0;
  for (std::size_t q = 0; q < b.query_identities.size(); ++q) {
    std::vector<std::pair<double, std::size_t>> scored;
    std::size_t relevant = 0;
    for (std::size_t g = 0; g < b.gallery.size(); ++g) {
      if (b.gallery[g].sample_id == b.query_sample_ids[q]) continue;
      double dot = 0.0;
      for (std::size_t p = 0; p < d; ++p) dot += qv[q * d + p] * gv[g * d + p];
      scored.emplace_back(dot, g);
      if (b.gallery[g].identity == b.query_identities[q]) ++relevant;
    }
    if (relevant == 0) continue;  // dropped query
    std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return x.second < y.second;
    });
    std::vector<std::uint8_t> rel;
    rel.reserve(scored.size());
    for (const auto& [_, g] : scored)
      rel.push_back(b.gallery[g].identity == b.query_identities[q] ? 1 : 0);
    ap_sum += naive_ap(rel);
    if (rel[0]) ++top_hits;
    ++out.scored_queries;
  }
  out.map = 100.0 * ap_sum / static_cast<double>(out.scored_queries);
  out.r1 =
      100.0 * static_cast<double>(top_hits) / static_cast<double>(out.scored_queries);
  return out;
}

inline double naive_compactness(const disperse::ad::Tensor& emb,
                                const std::vector<std::size_t>& labels,
                                const std::vector<std::size_t>& subset) {
  const std::size_t d = emb.cols();
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t id : subset) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == id) members.push_back(i);
    if (members.size() < 2) continue;
    double acc = 0.0;
    for (std::size_t i : members)
      for (std::size_t j : members) {
        if (i == j) continue;
        double dot = 0.0;
        for (std::size_t p = 0; p < d; ++p)
          dot += emb.at(i, p) * emb.at(j, p);
        acc += dot;
      }
    const auto n = static_cast<double>(members.size());
    total += acc / (n * (n - 1.0));
    ++used;
  }
  return total / static_cast<double>(used);
}

}  // namespace oracles
