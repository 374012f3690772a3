#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "disperse/encoder.hpp"
#include "disperse/synth.hpp"
#include "disperse/tensor.hpp"

namespace disperse::eval {

/// Embeddings with their identity labels and stable sample ids. Sample ids
/// drive self-match exclusion, so they must be unique across any query set
/// and gallery that are evaluated together.
struct EmbeddingSet {
  ad::Tensor embeddings;  // n x d, unit rows
  std::vector<std::size_t> identities;
  std::vector<std::uint64_t> sample_ids;

  std::size_t size() const { return identities.size(); }
};

enum class SourceTag { kForgetTest, kNative, kDistractor };
enum class GalleryMode { kBase, kExtended };

struct GalleryItem {
  std::uint64_t sample_id = 0;
  std::size_t identity = 0;
  SourceTag tag = SourceTag::kDistractor;
};

struct RetrievalBenchmark {
  ad::Tensor query_embeddings;
  std::vector<std::size_t> query_identities;
  std::vector<std::uint64_t> query_sample_ids;

  ad::Tensor gallery_embeddings;
  std::vector<GalleryItem> gallery;

  /// Per query, sorted gallery indices skipped during ranking (self matches).
  std::vector<std::vector<std::size_t>> exclusions;
  /// Queries that still have at least one relevant gallery item.
  std::vector<std::size_t> active_queries;
  std::size_t dropped_query_count = 0;
};

/// Gallery = query set plus the base distractors; extended mode appends
/// extra_distractor_count items from the extra pool. Exact self matches
/// (same sample id) are excluded per query, and queries left without any
/// relevant gallery item are dropped and counted.
RetrievalBenchmark build_benchmark(const EmbeddingSet& queries,
                                   SourceTag query_tag,
                                   const EmbeddingSet& base_distractors,
                                   GalleryMode mode,
                                   std::size_t extra_distractor_count,
                                   const EmbeddingSet& extra_distractors);

/// Non-excluded gallery indices by descending cosine; ties break by
/// ascending gallery index.
std::vector<std::size_t> rank_gallery(const RetrievalBenchmark& bench,
                                      std::size_t query_index);

/// AP over a ranked relevance sequence: mean of precision-at-k over the
/// positions k holding relevant items.
double average_precision(const std::vector<std::uint8_t>& ranked_relevance);

struct RetrievalMetrics {
  double map = 0.0;  // percent
  double r1 = 0.0;   // percent
};

RetrievalMetrics evaluate(const RetrievalBenchmark& bench);

/// Mean over identities in `subset` of the average pairwise cosine within
/// the identity (ordered pairs, n_p(n_p-1) normalization). Identities with
/// fewer than two embeddings are skipped and counted in *skipped.
double compactness_score(const ad::Tensor& embeddings,
                         const std::vector<std::size_t>& labels,
                         const std::vector<std::size_t>& subset,
                         std::size_t* skipped = nullptr);

struct MetricsReport {
  double map_forget = 0.0;
  double r1_forget = 0.0;
  double map_retain = 0.0;
  double r1_retain = 0.0;
  double cs_forget = 0.0;
  double cs_retain = 0.0;
  double acc_forget = 0.0;  // percent
  double acc_retain = 0.0;  // percent
  std::size_t dropped_forget_queries = 0;
  std::size_t dropped_retain_queries = 0;
};

struct ReportPair {
  MetricsReport before;
  MetricsReport after;
};

struct BenchmarkSettings {
  GalleryMode mode = GalleryMode::kBase;
  std::size_t base_distractors = 0;   // 0 = half of the split's pool
  std::size_t extra_distractors = 0;  // 0 = the remaining half
};

/// Embeds every relevant split with each model and computes the full metric
/// set per model: retrieval on the forget and retain benchmarks, compactness
/// on both test partitions, and nearest-centroid accuracy against centroids
/// built from that model's train embeddings.
ReportPair full_report(const model::EncoderModel& original,
                       const model::EncoderModel& unlearned,
                       const std::vector<data::LabeledSample>& samples,
                       const data::SplitPlan& split,
                       const BenchmarkSettings& settings);

/// Single-model version of full_report.
MetricsReport model_report(const model::EncoderModel& m,
                           const std::vector<data::LabeledSample>& samples,
                           const data::SplitPlan& split,
                           const BenchmarkSettings& settings);

/// Versioned text dump of (sample id, identity, embedding) rows for external
/// visualization tooling. Values are printed with 17 significant digits so
/// the round trip is lossless.
void write_embedding_dump(const std::string& path, const EmbeddingSet& set);
EmbeddingSet read_embedding_dump(const std::string& path);

}  // namespace disperse::eval
