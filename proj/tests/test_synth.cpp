#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "disperse/rng.hpp"
#include "disperse/synth.hpp"

using namespace disperse;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("generation is deterministic in the seed") {
  const auto a = data::generate(10, 4, 8, 7, 0.3);
  const auto b = data::generate(10, 4, 8, 7, 0.3);
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].label == b.samples[i].label);
    CHECK(a.samples[i].input == b.samples[i].input);  // bit-identical
  }
  const auto c = data::generate(10, 4, 8, 8, 0.3);
  CHECK(a.samples[0].input != c.samples[0].input);
}

TEST_CASE("zero-noise limit collapses identities to one point") {
  const auto ds = data::generate(5, 3, 8, 3, 1e-300);
  for (std::size_t id = 0; id < 5; ++id) {
    const auto idx = ds.indices_of_identity(id);
    REQUIRE(idx.size() == 3);
    for (std::size_t i = 1; i < idx.size(); ++i)
      for (std::size_t p = 0; p < 8; ++p)
        CHECK(ds.samples[idx[i]].input[p] ==
              doctest::Approx(ds.samples[idx[0]].input[p]).epsilon(1e-12));
  }
}

TEST_CASE("generate rejects degenerate arguments") {
  CHECK_THROWS_AS(data::generate(1, 4, 8, 0, 0.3), std::invalid_argument);
  CHECK_THROWS_AS(data::generate(10, 1, 8, 0, 0.3), std::invalid_argument);
  CHECK_THROWS_AS(data::generate(10, 4, 8, 0, 0.0), std::invalid_argument);
}

TEST_CASE("split boundaries and ceil semantics") {
  const auto ds = data::generate(6, 15, 8, 11, 0.3);

  SUBCASE("n_forget = K-1 leaves one retain identity") {
    const auto split = data::make_split(ds, 5, 0.5, 1, 2);
    std::set<std::size_t> retained;
    for (std::size_t id = 0; id < 6; ++id)
      if (!split.is_forget_identity(id)) retained.insert(id);
    CHECK(retained.size() == 1);
  }

  SUBCASE("train_frac 0.5 with 15 samples gives 8 train / 7 test") {
    const auto split = data::make_split(ds, 2, 0.5, 1, 2);
    for (std::size_t id = 0; id < 6; ++id) {
      std::size_t train = 0, test = 0;
      for (std::size_t i : ds.indices_of_identity(id)) {
        const auto a = split.assignment[i];
        if (a == data::Assignment::kForgetTrain ||
            a == data::Assignment::kRetainTrain)
          ++train;
        else
          ++test;
      }
      CHECK(train == 8);
      CHECK(test == 7);
    }
  }

  SUBCASE("n_forget out of range rejected") {
    CHECK_THROWS_AS(data::make_split(ds, 6, 0.5, 1, 2), std::invalid_argument);
    CHECK_THROWS_AS(data::make_split(ds, 0, 0.5, 1, 2), std::invalid_argument);
  }
}

TEST_CASE("forget/retain partition is exact and exhaustive") {
  const auto ds = data::generate(20, 6, 8, 13, 0.3);
  const auto split = data::make_split(ds, 4, 0.5, 3, 2);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const bool forget = split.is_forget_identity(ds.samples[i].label);
    const auto a = split.assignment[i];
    const bool assigned_forget = a == data::Assignment::kForgetTrain ||
                                 a == data::Assignment::kForgetTest;
    CHECK(forget == assigned_forget);
  }
  // distractor identities are disjoint from every dataset identity
  for (const auto& s : split.distractors) CHECK(s.label >= 20);
}

TEST_CASE("three seeds give distinct forget sets, fixed train/test partition") {
  const auto ds = data::generate(30, 6, 8, 17, 0.3);
  const auto s1 = data::make_split(ds, 5, 0.5, 1, 2);
  const auto s2 = data::make_split(ds, 5, 0.5, 2, 2);
  const auto s3 = data::make_split(ds, 5, 0.5, 3, 2);
  CHECK(s1.forget_identities != s2.forget_identities);
  CHECK(s2.forget_identities != s3.forget_identities);
  // train/test membership is keyed to the dataset, not the split seed
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const bool t1 = s1.assignment[i] == data::Assignment::kForgetTrain ||
                    s1.assignment[i] == data::Assignment::kRetainTrain;
    const bool t2 = s2.assignment[i] == data::Assignment::kForgetTrain ||
                    s2.assignment[i] == data::Assignment::kRetainTrain;
    CHECK(t1 == t2);
  }
}

TEST_CASE("PK sampler") {
  const auto ds = data::generate(12, 5, 8, 19, 0.3);
  std::vector<std::size_t> pool(ds.samples.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;

  SUBCASE("batch arithmetic: 32 over 8 identities is 4 each") {
    auto rng = make_rng(1, 0);
    const auto batch = data::sample_batch(ds.samples, pool, 32, 8, rng);
    REQUIRE(batch.size() == 32);
    std::map<std::size_t, int> counts;
    for (auto i : batch) ++counts[ds.samples[i].label];
    CHECK(counts.size() == 8);
    for (const auto& [_, c] : counts) CHECK(c == 4);
  }

  SUBCASE("single-identity pool fills the batch with one label") {
    const auto only = ds.indices_of_identity(3);
    auto rng = make_rng(2, 0);
    const auto batch = data::sample_batch(ds.samples, only, 8, 1, rng);
    for (auto i : batch) CHECK(ds.samples[i].label == 3);
  }

  SUBCASE("every anchor has a positive across many draws") {
    auto rng = make_rng(3, 0);
    for (int rep = 0; rep < 1000; ++rep) {
      const auto batch = data::sample_batch(ds.samples, pool, 32, 8, rng);
      std::map<std::size_t, int> counts;
      for (auto i : batch) ++counts[ds.samples[i].label];
      for (const auto& [_, c] : counts) CHECK(c >= 2);
    }
  }

  SUBCASE("degenerate arguments") {
    auto rng = make_rng(4, 0);
    CHECK_THROWS_AS(data::sample_batch(ds.samples, {}, 32, 8, rng),
                    std::invalid_argument);
    CHECK_THROWS_AS(data::sample_batch(ds.samples, pool, 30, 8, rng),
                    std::invalid_argument);
    CHECK_THROWS_AS(data::sample_batch(ds.samples, pool, 8, 8, rng),
                    std::invalid_argument);
  }
}

TEST_CASE("leakage check flags planted duplicates") {
  // orthogonal forget/distractor centroids: max cosine 0, nothing flagged
  const auto f = ad::Tensor::from({1, 0, 0, 0, 1, 0}, 2, 3);
  const auto d = ad::Tensor::from({0, 0, 1}, 1, 3);
  auto rep = data::leakage_check(f, {0, 1}, d, {100}, 0.8);
  CHECK(rep.max_cosine == doctest::Approx(0.0));
  CHECK(rep.flagged.empty());

  // plant a forget centroid in the distractor set
  const auto leak = ad::Tensor::from({1, 0, 0}, 1, 3);
  rep = data::leakage_check(f, {0, 1}, leak, {100}, 0.8);
  CHECK(rep.max_cosine == doctest::Approx(1.0));
  REQUIRE(rep.flagged.size() == 1);
  CHECK(std::get<0>(rep.flagged[0]) == 0);
  CHECK(std::get<1>(rep.flagged[0]) == 100);
}

TEST_CASE("dataset and split files round-trip byte-identically") {
  const auto ds = data::generate(8, 4, 6, 23, 0.3);
  const auto split = data::make_split(ds, 2, 0.5, 5, 3);

  const auto dpath = temp_path("disperse_test_dataset.bin");
  const auto spath = temp_path("disperse_test_split.bin");
  data::save_dataset(ds, dpath, 42);
  data::save_split(split, spath, 42);

  const auto ds2 = data::load_dataset(dpath);
  CHECK(ds2.num_identities == ds.num_identities);
  CHECK(ds2.seed == ds.seed);
  REQUIRE(ds2.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(ds2.samples[i].label == ds.samples[i].label);
    CHECK(ds2.samples[i].input == ds.samples[i].input);
  }
  const auto split2 = data::load_split(spath);
  CHECK(split2.forget_identities == split.forget_identities);
  CHECK(split2.assignment == split.assignment);
  REQUIRE(split2.distractors.size() == split.distractors.size());
  for (std::size_t i = 0; i < split.distractors.size(); ++i)
    CHECK(split2.distractors[i].input == split.distractors[i].input);

  // regenerating and re-saving produces byte-identical files
  const auto dpath2 = temp_path("disperse_test_dataset2.bin");
  data::save_dataset(data::generate(8, 4, 6, 23, 0.3), dpath2, 42);
  CHECK(file_bytes(dpath) == file_bytes(dpath2));

  std::filesystem::remove(dpath);
  std::filesystem::remove(dpath2);
  std::filesystem::remove(spath);
}

TEST_CASE("duplicate injection produces near-identical same-identity pairs") {
  const auto plain = data::generate(6, 10, 8, 3, 0.4, 0, 0.0);
  const auto dup = data::generate(6, 10, 8, 3, 0.4, 0, 0.5);

  auto min_same_identity_gap = [](const data::SyntheticDataset& ds) {
    double best = 1e9;
    for (std::size_t id = 0; id < ds.num_identities; ++id) {
      const auto idx = ds.indices_of_identity(id);
      for (std::size_t a = 0; a < idx.size(); ++a)
        for (std::size_t b = a + 1; b < idx.size(); ++b) {
          double sq = 0.0;
          for (std::size_t p = 0; p < ds.input_dim; ++p) {
            const double d = ds.samples[idx[a]].input[p] -
                             ds.samples[idx[b]].input[p];
            sq += d * d;
          }
          best = std::min(best, std::sqrt(sq));
        }
    }
    return best;
  };
  CHECK(min_same_identity_gap(dup) < 0.1 * min_same_identity_gap(plain));
  CHECK_THROWS_AS(data::generate(6, 10, 8, 3, 0.4, 0, 1.5),
                  std::invalid_argument);
}

TEST_CASE("flip_rows reverses selected rows in place") {
  auto batch = ad::Tensor::from({1, 2, 3, 4, 5, 6}, 2, 3);
  data::flip_rows(batch, {1, 0});
  CHECK(batch.at(0, 0) == 3);
  CHECK(batch.at(0, 2) == 1);
  CHECK(batch.at(1, 0) == 4);  // unselected row untouched
}

TEST_CASE("distractor pool sizing follows the multiplier") {
  const auto ds = data::generate(10, 10, 8, 29, 0.3);
  const auto split = data::make_split(ds, 2, 0.5, 1, 4);
  std::size_t forget_test = 0;
  for (auto a : split.assignment)
    if (a == data::Assignment::kForgetTest) ++forget_test;
  CHECK(split.distractors.size() == 4 * forget_test);
}
