#include "disperse/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "disperse/io.hpp"

namespace disperse::eval {

namespace {

void append_set(std::vector<double>& data, std::vector<GalleryItem>& items,
                const EmbeddingSet& src, SourceTag tag, std::size_t count) {
  const auto ev = src.embeddings.value();
  const std::size_t d = src.embeddings.cols();
  for (std::size_t i = 0; i < count; ++i) {
    data.insert(data.end(), ev.begin() + i * d, ev.begin() + (i + 1) * d);
    items.push_back({src.sample_ids[i], src.identities[i], tag});
  }
}

double cosine_of(std::span<const double> a, std::span<const double> b,
                 std::size_t ai, std::size_t bi, std::size_t d) {
  double acc = 0.0;
  for (std::size_t p = 0; p < d; ++p) acc += a[ai * d + p] * b[bi * d + p];
  return acc;
}

}  // namespace

RetrievalBenchmark build_benchmark(const EmbeddingSet& queries,
                                   SourceTag query_tag,
                                   const EmbeddingSet& base_distractors,
                                   GalleryMode mode,
                                   std::size_t extra_distractor_count,
                                   const EmbeddingSet& extra_distractors) {
  if (queries.size() == 0)
    throw std::invalid_argument("build_benchmark: empty query set");
  if (mode == GalleryMode::kExtended) {
    if (extra_distractor_count == 0 || extra_distractors.size() == 0)
      throw std::invalid_argument(
          "build_benchmark: extended mode needs a nonempty extra pool");
    if (extra_distractor_count > extra_distractors.size())
      throw std::invalid_argument(
          "build_benchmark: extra pool smaller than requested count");
  }

  RetrievalBenchmark bench;
  bench.query_embeddings = queries.embeddings;
  bench.query_identities = queries.identities;
  bench.query_sample_ids = queries.sample_ids;

  const std::size_t d = queries.embeddings.cols();
  std::vector<double> gdata;
  append_set(gdata, bench.gallery, queries, query_tag, queries.size());
  append_set(gdata, bench.gallery, base_distractors, SourceTag::kDistractor,
             base_distractors.size());
  if (mode == GalleryMode::kExtended)
    append_set(gdata, bench.gallery, extra_distractors, SourceTag::kDistractor,
               extra_distractor_count);
  bench.gallery_embeddings =
      ad::Tensor::from(std::move(gdata), bench.gallery.size(), d);

  bench.exclusions.resize(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::size_t relevant = 0;
    for (std::size_t g = 0; g < bench.gallery.size(); ++g) {
      if (bench.gallery[g].sample_id == queries.sample_ids[q]) {
        bench.exclusions[q].push_back(g);
        continue;
      }
      if (bench.gallery[g].identity == queries.identities[q]) ++relevant;
    }
    if (relevant > 0)
      bench.active_queries.push_back(q);
    else
      ++bench.dropped_query_count;
  }
  return bench;
}

std::vector<std::size_t> rank_gallery(const RetrievalBenchmark& bench,
                                      std::size_t query_index) {
  if (query_index >= bench.query_identities.size())
    throw std::out_of_range("rank_gallery: query index out of range");
  const std::size_t d = bench.query_embeddings.cols();
  const auto qv = bench.query_embeddings.value();
  const auto gv = bench.gallery_embeddings.value();
  const auto& excluded = bench.exclusions[query_index];

  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(bench.gallery.size());
  for (std::size_t g = 0; g < bench.gallery.size(); ++g) {
    if (std::binary_search(excluded.begin(), excluded.end(), g)) continue;
    scored.emplace_back(cosine_of(qv, gv, query_index, g, d), g);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::size_t> order;
  order.reserve(scored.size());
  for (const auto& [_, g] : scored) order.push_back(g);
  return order;
}

double average_precision(const std::vector<std::uint8_t>& ranked_relevance) {
  std::size_t total_relevant = 0;
  for (auto r : ranked_relevance)
    if (r) ++total_relevant;
  if (total_relevant == 0)
    throw std::invalid_argument("average_precision: no relevant items");
  double ap = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < ranked_relevance.size(); ++k) {
    if (!ranked_relevance[k]) continue;
    ++hits;
    ap += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return ap / static_cast<double>(total_relevant);
}

RetrievalMetrics evaluate(const RetrievalBenchmark& bench) {
  if (bench.active_queries.empty())
    throw std::invalid_argument("evaluate: no scorable queries");
  double ap_sum = 0.0;
  std::size_t top1_hits = 0;
  for (std::size_t q : bench.active_queries) {
    const auto order = rank_gallery(bench, q);
    std::vector<std::uint8_t> rel(order.size());
    for (std::size_t k = 0; k < order.size(); ++k)
      rel[k] = bench.gallery[order[k]].identity == bench.query_identities[q];
    ap_sum += average_precision(rel);
    if (rel[0]) ++top1_hits;
  }
  const auto n = static_cast<double>(bench.active_queries.size());
  return {100.0 * ap_sum / n, 100.0 * static_cast<double>(top1_hits) / n};
}

double compactness_score(const ad::Tensor& embeddings,
                         const std::vector<std::size_t>& labels,
                         const std::vector<std::size_t>& subset,
                         std::size_t* skipped) {
  if (labels.size() != embeddings.rows())
    throw std::invalid_argument("compactness_score: one label per row required");
  const std::size_t d = embeddings.cols();
  const auto ev = embeddings.value();
  double total = 0.0;
  std::size_t used = 0, skip = 0;
  for (std::size_t id : subset) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == id) members.push_back(i);
    if (members.size() < 2) {
      ++skip;
      continue;
    }
    double acc = 0.0;
    for (std::size_t a : members)
      for (std::size_t b : members) {
        if (a == b) continue;
        acc += cosine_of(ev, ev, a, b, d);
      }
    const auto n_p = static_cast<double>(members.size());
    total += acc / (n_p * (n_p - 1.0));
    ++used;
  }
  if (skipped) *skipped = skip;
  if (used == 0)
    throw std::invalid_argument(
        "compactness_score: no identity in the subset has two embeddings");
  return total / static_cast<double>(used);
}

namespace {

EmbeddingSet embed_indices(const model::EncoderModel& m,
                           const std::vector<data::LabeledSample>& samples,
                           const std::vector<std::size_t>& indices) {
  EmbeddingSet set;
  set.embeddings = model::embed(m, data::stack_inputs(samples, indices));
  set.embeddings = set.embeddings.detached();
  set.identities = data::labels_of(samples, indices);
  set.sample_ids.assign(indices.begin(), indices.end());
  return set;
}

EmbeddingSet embed_distractors(const model::EncoderModel& m,
                               const std::vector<data::LabeledSample>& pool,
                               std::size_t first, std::size_t count,
                               std::uint64_t id_offset) {
  EmbeddingSet set;
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), first);
  set.embeddings = model::embed(m, data::stack_inputs(pool, idx)).detached();
  set.identities = data::labels_of(pool, idx);
  for (std::size_t i = 0; i < count; ++i)
    set.sample_ids.push_back(id_offset + first + i);
  return set;
}

}  // namespace

MetricsReport model_report(const model::EncoderModel& m,
                           const std::vector<data::LabeledSample>& samples,
                           const data::SplitPlan& split,
                           const BenchmarkSettings& settings) {
  MetricsReport rep;

  const auto forget_test = split.sample_indices(data::Assignment::kForgetTest);
  const auto retain_test = split.sample_indices(data::Assignment::kRetainTest);
  auto train_idx = split.sample_indices(data::Assignment::kForgetTrain);
  {
    const auto rt = split.sample_indices(data::Assignment::kRetainTrain);
    train_idx.insert(train_idx.end(), rt.begin(), rt.end());
    std::sort(train_idx.begin(), train_idx.end());
  }
  if (forget_test.empty() || retain_test.empty())
    throw std::invalid_argument("model_report: empty test partition");

  const EmbeddingSet forget_set = embed_indices(m, samples, forget_test);
  const EmbeddingSet retain_set = embed_indices(m, samples, retain_test);

  // Distractor pool slices; ids offset past the dataset sample indices.
  const std::size_t pool = split.distractors.size();
  std::size_t base_count = settings.base_distractors;
  std::size_t extra_count = settings.extra_distractors;
  if (base_count == 0 && extra_count == 0) {
    base_count = pool / 2;
    extra_count = pool - base_count;
  }
  if (base_count + extra_count > pool)
    throw std::invalid_argument("model_report: distractor pool too small");
  const auto id_offset = static_cast<std::uint64_t>(samples.size());
  const EmbeddingSet base_d =
      embed_distractors(m, split.distractors, 0, base_count, id_offset);
  EmbeddingSet extra_d;
  if (settings.mode == GalleryMode::kExtended)
    extra_d = embed_distractors(m, split.distractors, base_count, extra_count,
                                id_offset);

  const RetrievalBenchmark forget_bench =
      build_benchmark(forget_set, SourceTag::kForgetTest, base_d, settings.mode,
                      settings.mode == GalleryMode::kExtended ? extra_count : 0,
                      extra_d);
  const RetrievalBenchmark retain_bench =
      build_benchmark(retain_set, SourceTag::kNative, base_d, settings.mode,
                      settings.mode == GalleryMode::kExtended ? extra_count : 0,
                      extra_d);
  const RetrievalMetrics fm = evaluate(forget_bench);
  const RetrievalMetrics rm = evaluate(retain_bench);
  rep.map_forget = fm.map;
  rep.r1_forget = fm.r1;
  rep.map_retain = rm.map;
  rep.r1_retain = rm.r1;
  rep.dropped_forget_queries = forget_bench.dropped_query_count;
  rep.dropped_retain_queries = retain_bench.dropped_query_count;

  std::vector<std::size_t> retain_ids;
  for (std::size_t id = 0; id < m.num_classes; ++id)
    if (!split.is_forget_identity(id)) retain_ids.push_back(id);
  rep.cs_forget = compactness_score(forget_set.embeddings,
                                    forget_set.identities,
                                    split.forget_identities);
  rep.cs_retain =
      compactness_score(retain_set.embeddings, retain_set.identities,
                        retain_ids);

  const EmbeddingSet train_set = embed_indices(m, samples, train_idx);
  const auto pred_f = model::centroid_classify(
      train_set.embeddings, train_set.identities, forget_set.embeddings);
  const auto pred_r = model::centroid_classify(
      train_set.embeddings, train_set.identities, retain_set.embeddings);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred_f.size(); ++i)
    if (pred_f[i] == forget_set.identities[i]) ++hits;
  rep.acc_forget = 100.0 * static_cast<double>(hits) /
                   static_cast<double>(pred_f.size());
  hits = 0;
  for (std::size_t i = 0; i < pred_r.size(); ++i)
    if (pred_r[i] == retain_set.identities[i]) ++hits;
  rep.acc_retain = 100.0 * static_cast<double>(hits) /
                   static_cast<double>(pred_r.size());
  return rep;
}

ReportPair full_report(const model::EncoderModel& original,
                       const model::EncoderModel& unlearned,
                       const std::vector<data::LabeledSample>& samples,
                       const data::SplitPlan& split,
                       const BenchmarkSettings& settings) {
  if (original.embed_dim != unlearned.embed_dim ||
      original.input_dim != unlearned.input_dim ||
      original.num_classes != unlearned.num_classes)
    throw std::invalid_argument("full_report: model architectures differ");
  return {model_report(original, samples, split, settings),
          model_report(unlearned, samples, split, settings)};
}

void write_embedding_dump(const std::string& path, const EmbeddingSet& set) {
  io::ensure_parent_dir(path);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "# disperse-embdump v1 d=" << set.embeddings.cols() << "\n";
  out << "sample_id,identity,embedding...\n";
  const auto ev = set.embeddings.value();
  const std::size_t d = set.embeddings.cols();
  char buf[32];
  for (std::size_t i = 0; i < set.size(); ++i) {
    out << set.sample_ids[i] << ',' << set.identities[i];
    for (std::size_t p = 0; p < d; ++p) {
      std::snprintf(buf, sizeof buf, "%.17g", ev[i * d + p]);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

EmbeddingSet read_embedding_dump(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::string header;
  std::getline(in, header);
  std::size_t d = 0;
  if (std::sscanf(header.c_str(), "# disperse-embdump v1 d=%zu", &d) != 1)
    throw std::runtime_error("bad embedding dump header in " + path);
  std::string line;
  std::getline(in, line);  // column names
  EmbeddingSet set;
  std::vector<double> data;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    set.sample_ids.push_back(std::stoull(field));
    std::getline(ss, field, ',');
    set.identities.push_back(std::stoul(field));
    for (std::size_t p = 0; p < d; ++p) {
      std::getline(ss, field, ',');
      data.push_back(std::stod(field));
    }
  }
  set.embeddings = ad::Tensor::from(std::move(data), set.identities.size(), d);
  return set;
}

}  // namespace disperse::eval
