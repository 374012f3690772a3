#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "disperse/eval.hpp"
#include "disperse/rng.hpp"
#include "oracles.hpp"

using namespace disperse;

namespace {

eval::EmbeddingSet make_set(std::vector<double> rows, std::size_t n,
                            std::size_t d, std::vector<std::size_t> ids,
                            std::uint64_t first_sample_id) {
  eval::EmbeddingSet s;
  s.embeddings = ad::l2_normalize_rows(ad::Tensor::from(std::move(rows), n, d));
  s.identities = std::move(ids);
  for (std::size_t i = 0; i < n; ++i) s.sample_ids.push_back(first_sample_id + i);
  return s;
}

eval::EmbeddingSet random_set(std::size_t n, std::size_t d,
                              std::size_t n_identities, std::mt19937_64& rng,
                              std::uint64_t first_sample_id) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> id_dist(0, n_identities - 1);
  std::vector<double> rows(n * d);
  for (auto& v : rows) v = normal(rng);
  std::vector<std::size_t> ids(n);
  for (auto& i : ids) i = id_dist(rng);
  return make_set(std::move(rows), n, d, std::move(ids), first_sample_id);
}

const eval::EmbeddingSet kNoExtras{};

}  // namespace

TEST_CASE("average precision anchors") {
  CHECK(eval::average_precision({1, 0, 1}) ==
        doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
  CHECK(eval::average_precision({1, 1, 1, 1}) == doctest::Approx(1.0));
  CHECK(eval::average_precision({0, 0, 0, 1}) == doctest::Approx(0.25));
  CHECK_THROWS_AS(eval::average_precision({0, 0}), std::invalid_argument);
}

TEST_CASE("compactness score anchors") {
  SUBCASE("identical embeddings give 1") {
    const auto emb = ad::Tensor::from({1, 0, 1, 0, 1, 0}, 3, 2);
    CHECK(eval::compactness_score(emb, {4, 4, 4}, {4}) ==
          doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("orthogonal triple gives one third") {
    const auto emb = ad::Tensor::from({1, 0, 0, 1, 1, 0}, 3, 2);
    CHECK(eval::compactness_score(emb, {0, 0, 0}, {0}) ==
          doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }

  SUBCASE("identity mean is unweighted") {
    const auto emb = ad::Tensor::from(
        {1, 0, 1, 0, 1, 0, 0, 1, 1, 0, 0, 1}, 6, 2);
    const std::vector<std::size_t> labels{0, 0, 0, 1, 1, 1};
    // identity 0 compactness 1, identity 1 compactness 1/3 (as above)
    CHECK(eval::compactness_score(emb, labels, {0, 1}) ==
          doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }

  SUBCASE("singleton identities are skipped and counted") {
    const auto emb = ad::Tensor::from({1, 0, 1, 0, 0, 1}, 3, 2);
    std::size_t skipped = 0;
    const double cs =
        eval::compactness_score(emb, {0, 0, 1}, {0, 1}, &skipped);
    CHECK(cs == doctest::Approx(1.0));
    CHECK(skipped == 1);
  }

  SUBCASE("permuting samples within an identity changes nothing") {
    std::mt19937_64 rng(7);
    auto set = random_set(12, 5, 3, rng, 0);
    const double before = eval::compactness_score(
        set.embeddings, set.identities, {0, 1, 2});
    std::vector<std::size_t> perm(12);
    for (std::size_t i = 0; i < 12; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> rows(12 * 5);
    std::vector<std::size_t> ids(12);
    for (std::size_t i = 0; i < 12; ++i) {
      for (std::size_t p = 0; p < 5; ++p)
        rows[i * 5 + p] = set.embeddings.at(perm[i], p);
      ids[i] = set.identities[perm[i]];
    }
    const double after = eval::compactness_score(
        ad::Tensor::from(rows, 12, 5), ids, {0, 1, 2});
    CHECK(before == doctest::Approx(after).epsilon(1e-12));
  }
}

TEST_CASE("benchmark construction") {
  SUBCASE("self-only gallery drops the query") {
    auto queries = make_set({1, 0}, 1, 2, {0}, 0);
    auto distractors = make_set({0, 1}, 1, 2, {50}, 100);
    const auto bench =
        eval::build_benchmark(queries, eval::SourceTag::kForgetTest,
                              distractors, eval::GalleryMode::kBase, 0,
                              kNoExtras);
    CHECK(bench.dropped_query_count == 1);
    CHECK(bench.active_queries.empty());
    CHECK_THROWS_AS(eval::evaluate(bench), std::invalid_argument);
  }

  SUBCASE("query-set counting: each query sees its identity peers") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> rows(12 * 4);
    for (auto& v : rows) v = normal(rng);
    std::vector<std::size_t> ids;
    for (std::size_t c = 0; c < 3; ++c)
      for (int k = 0; k < 4; ++k) ids.push_back(c);
    auto queries = make_set(std::move(rows), 12, 4, std::move(ids), 0);
    auto distractors = random_set(6, 4, 2, rng, 100);
    for (auto& i : distractors.identities) i += 1000;
    const auto bench =
        eval::build_benchmark(queries, eval::SourceTag::kForgetTest,
                              distractors, eval::GalleryMode::kBase, 0,
                              kNoExtras);
    CHECK(bench.active_queries.size() == 12);
    CHECK(bench.gallery.size() == 18);
    for (std::size_t q = 0; q < 12; ++q) {
      const auto order = eval::rank_gallery(bench, q);
      CHECK(order.size() == 17);  // the self match is omitted
      std::size_t relevant = 0;
      for (auto g : order)
        if (bench.gallery[g].identity == bench.query_identities[q]) ++relevant;
      CHECK(relevant == 3);
    }
  }

  SUBCASE("extended mode appends exactly the requested distractors") {
    std::mt19937_64 rng(5);
    auto queries = random_set(4, 4, 2, rng, 0);
    auto base = random_set(3, 4, 1, rng, 100);
    for (auto& i : base.identities) i += 1000;
    auto extra = random_set(10, 4, 2, rng, 200);
    for (auto& i : extra.identities) i += 2000;
    const auto bench =
        eval::build_benchmark(queries, eval::SourceTag::kForgetTest, base,
                              eval::GalleryMode::kExtended, 7, extra);
    CHECK(bench.gallery.size() == 4 + 3 + 7);
    std::size_t tagged = 0;
    for (const auto& g : bench.gallery)
      if (g.tag == eval::SourceTag::kDistractor) ++tagged;
    CHECK(tagged == 10);
    CHECK_THROWS_AS(
        eval::build_benchmark(queries, eval::SourceTag::kForgetTest, base,
                              eval::GalleryMode::kExtended, 0, kNoExtras),
        std::invalid_argument);
  }
}

TEST_CASE("rank_gallery matches exhaustive sort on a hand-built gallery") {
  auto queries = make_set({1, 0}, 1, 2, {0}, 0);
  // cosines against (1,0): 1.0 (self, excluded), 0.8, 0.6, 0.0, -1.0
  std::vector<double> rows{1, 0, 0.8, 0.6, 0.6, 0.8, 0, 1, -1, 0};
  auto gallery_set = make_set(std::move(rows), 5, 2, {0, 0, 7, 8, 9}, 0);
  // gallery item 0 shares sample id 0 with the query (the self match)
  auto distractors = make_set({0.8, 0.6, 0.6, 0.8, 0, 1, -1, 0}, 4, 2,
                              {0, 7, 8, 9}, 100);
  const auto bench =
      eval::build_benchmark(queries, eval::SourceTag::kForgetTest, distractors,
                            eval::GalleryMode::kBase, 0, kNoExtras);
  const auto order = eval::rank_gallery(bench, 0);
  REQUIRE(order.size() == 4);
  CHECK(order[0] == 1);  // cos 0.8
  CHECK(order[1] == 2);  // cos 0.6
  CHECK(order[2] == 3);  // cos 0
  CHECK(order[3] == 4);  // cos -1
}

TEST_CASE("distractor placement moves AP the right way") {
  // query (1,0); two relevant at cos 0.9, 0.7
  auto queries = make_set({1, 0}, 1, 2, {0}, 0);
  const double lo = std::sqrt(1 - 0.49);
  auto relevant_only =
      make_set({0.9, std::sqrt(1 - 0.81), 0.7, lo}, 2, 2, {0, 0}, 100);
  const auto base_bench =
      eval::build_benchmark(queries, eval::SourceTag::kForgetTest,
                            relevant_only, eval::GalleryMode::kBase, 0,
                            kNoExtras);
  const double base_map = eval::evaluate(base_bench).map;
  CHECK(base_map == doctest::Approx(100.0));

  SUBCASE("a distractor below every relevant item changes nothing") {
    auto with_low = make_set(
        {0.9, std::sqrt(1 - 0.81), 0.7, lo, -0.5, std::sqrt(1 - 0.25)}, 3, 2,
        {0, 0, 777}, 100);
    const auto bench =
        eval::build_benchmark(queries, eval::SourceTag::kForgetTest, with_low,
                              eval::GalleryMode::kBase, 0, kNoExtras);
    CHECK(eval::evaluate(bench).map == doctest::Approx(base_map));
  }

  SUBCASE("a distractor ranked first strictly lowers AP") {
    auto with_top = make_set(
        {0.9, std::sqrt(1 - 0.81), 0.7, lo, 0.99, std::sqrt(1 - 0.9801)}, 3, 2,
        {0, 0, 777}, 100);
    const auto bench =
        eval::build_benchmark(queries, eval::SourceTag::kForgetTest, with_top,
                              eval::GalleryMode::kBase, 0, kNoExtras);
    CHECK(eval::evaluate(bench).map < base_map);
  }
}

TEST_CASE("evaluate matches the brute-force oracle on random instances") {
  std::mt19937_64 rng(mix_seed(2024, 0));
  for (int rep = 0; rep < 60; ++rep) {
    std::uniform_int_distribution<std::size_t> qn(2, 20), gn(1, 30),
        idn(1, 6), dim(2, 8);
    const std::size_t d = dim(rng);
    auto queries = random_set(qn(rng), d, idn(rng), rng, 0);
    auto distractors = random_set(gn(rng), d, idn(rng), rng, 1000);
    // distractor identities overlap query identities for some instances,
    // which exercises relevant items outside the query set
    if (rep % 2) {
      for (auto& i : distractors.identities) i += 500;
    }
    const auto bench =
        eval::build_benchmark(queries, eval::SourceTag::kForgetTest,
                              distractors, eval::GalleryMode::kBase, 0,
                              kNoExtras);
    if (bench.active_queries.empty()) continue;
    const auto got = eval::evaluate(bench);
    const auto want = oracles::naive_evaluate(bench);
    CHECK(bench.active_queries.size() == want.scored_queries);
    CHECK(std::abs(got.map - want.map) < 1e-10);
    CHECK(std::abs(got.r1 - want.r1) < 1e-10);
  }
}

TEST_CASE("random embeddings score near the permutation-null expectation") {
  // With i.i.d. random embeddings the ranking is an exchangeable random
  // permutation, so mAP concentrates near the Monte-Carlo null expectation.
  std::mt19937_64 rng(97);
  const std::size_t n_queries = 40, relevant = 5, distractors = 390;
  const std::size_t gallery = n_queries * relevant + distractors;

  // Monte-Carlo oracle: E[AP] for `relevant` hits placed uniformly at random
  std::vector<std::uint8_t> flags(gallery, 0);
  std::fill(flags.begin(), flags.begin() + relevant, 1);
  double null_map = 0.0;
  const int draws = 3000;
  for (int t = 0; t < draws; ++t) {
    std::shuffle(flags.begin(), flags.end(), rng);
    null_map += eval::average_precision(flags);
  }
  null_map = 100.0 * null_map / draws;

  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian_unit = [&](std::size_t n, std::size_t d) {
    std::vector<double> v(n * d);
    for (auto& x : v) x = normal(rng);
    return ad::l2_normalize_rows(ad::Tensor::from(std::move(v), n, d));
  };

  eval::EmbeddingSet queries;
  queries.embeddings = gaussian_unit(n_queries, 24);
  for (std::size_t i = 0; i < n_queries; ++i) {
    queries.identities.push_back(500 + i);
    queries.sample_ids.push_back(i);
  }
  eval::EmbeddingSet pool;
  pool.embeddings = gaussian_unit(gallery, 24);
  for (std::size_t q = 0; q < n_queries; ++q)
    for (std::size_t r = 0; r < relevant; ++r)
      pool.identities.push_back(500 + q);
  for (std::size_t d = 0; d < distractors; ++d)
    pool.identities.push_back(9000 + d);
  for (std::size_t i = 0; i < gallery; ++i) pool.sample_ids.push_back(1000 + i);

  const auto bench =
      eval::build_benchmark(queries, eval::SourceTag::kForgetTest, pool,
                            eval::GalleryMode::kBase, 0, kNoExtras);
  const auto m = eval::evaluate(bench);
  // generous band around the null: same order of magnitude, nothing like
  // actual retrieval quality
  CHECK(m.map > 0.2 * null_map);
  CHECK(m.map < 5.0 * null_map);
}

TEST_CASE("evaluate is invariant to gallery input order") {
  std::mt19937_64 rng(17);
  auto queries = random_set(8, 5, 3, rng, 0);
  auto distractors = random_set(12, 5, 4, rng, 100);
  const auto bench =
      eval::build_benchmark(queries, eval::SourceTag::kForgetTest, distractors,
                            eval::GalleryMode::kBase, 0, kNoExtras);
  const auto m1 = eval::evaluate(bench);

  // permute the distractor pool and rebuild
  std::vector<std::size_t> perm(12);
  for (std::size_t i = 0; i < 12; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  eval::EmbeddingSet shuffled;
  std::vector<double> rows(12 * 5);
  for (std::size_t i = 0; i < 12; ++i) {
    for (std::size_t p = 0; p < 5; ++p)
      rows[i * 5 + p] = distractors.embeddings.at(perm[i], p);
    shuffled.identities.push_back(distractors.identities[perm[i]]);
    shuffled.sample_ids.push_back(distractors.sample_ids[perm[i]]);
  }
  shuffled.embeddings = ad::Tensor::from(std::move(rows), 12, 5);
  const auto bench2 =
      eval::build_benchmark(queries, eval::SourceTag::kForgetTest, shuffled,
                            eval::GalleryMode::kBase, 0, kNoExtras);
  const auto m2 = eval::evaluate(bench2);
  CHECK(m1.map == doctest::Approx(m2.map).epsilon(1e-12));
  CHECK(m1.r1 == doctest::Approx(m2.r1).epsilon(1e-12));
}

TEST_CASE("full report on identical models is symmetric") {
  const auto ds = data::generate(8, 6, 6, 99, 0.3);
  const auto split = data::make_split(ds, 2, 0.5, 1, 3);
  const auto enc = model::make_encoder(6, 4, 8, {10}, 16.0, 0.2, 1);
  eval::BenchmarkSettings settings;
  const auto pair = eval::full_report(enc, enc, ds.samples, split, settings);
  CHECK(pair.before.map_forget == pair.after.map_forget);
  CHECK(pair.before.r1_retain == pair.after.r1_retain);
  CHECK(pair.before.cs_forget == pair.after.cs_forget);
  CHECK(pair.before.acc_retain == pair.after.acc_retain);
}

TEST_CASE("compactness agrees with the naive oracle on random instances") {
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 50; ++rep) {
    auto set = random_set(20, 6, 5, rng, 0);
    std::vector<std::size_t> subset{0, 1, 2, 3, 4};
    bool valid = true;
    for (std::size_t id : subset) {
      std::size_t count = 0;
      for (auto l : set.identities)
        if (l == id) ++count;
      if (count < 2) valid = false;
    }
    if (!valid) continue;
    const double got =
        eval::compactness_score(set.embeddings, set.identities, subset);
    const double want =
        oracles::naive_compactness(set.embeddings, set.identities, subset);
    CHECK(std::abs(got - want) < 1e-10);
  }
}

TEST_CASE("embedding dump round-trips") {
  std::mt19937_64 rng(31);
  auto set = random_set(7, 5, 3, rng, 40);
  const auto path =
      (std::filesystem::temp_directory_path() / "disperse_test_dump.csv")
          .string();
  eval::write_embedding_dump(path, set);
  const auto loaded = eval::read_embedding_dump(path);
  CHECK(loaded.sample_ids == set.sample_ids);
  CHECK(loaded.identities == set.identities);
  const auto a = set.embeddings.value();
  const auto b = loaded.embeddings.value();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  std::filesystem::remove(path);
}
