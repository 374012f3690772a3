#include "disperse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "disperse/io.hpp"
#include "disperse/rng.hpp"

namespace disperse::data {

namespace {

constexpr char kDatasetMagic[4] = {'D', 'S', 'P', 'D'};
constexpr char kSplitMagic[4] = {'D', 'S', 'P', 'S'};
constexpr std::uint32_t kFormatVersion = 1;

// Stream salts so the generator's sub-streams stay independent.
enum : std::uint64_t {
  kSaltPrototypes = 0x01,
  kSaltTransform = 0x02,
  kSaltNoise = 0x03,
  kSaltPartition = 0x04,
  kSaltForgetPick = 0x05,
  kSaltDistractors = 0x06,
};

std::vector<double> unit_gaussian_vector(std::size_t dim,
                                         std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double sq = 0.0;
  do {
    sq = 0.0;
    for (auto& x : v) {
      x = normal(rng);
      sq += x * x;
    }
  } while (sq < 1e-24);
  const double inv = 1.0 / std::sqrt(sq);
  for (auto& x : v) x *= inv;
  return v;
}

WorldTransform make_world_transform(std::size_t in_dim, std::size_t out_dim,
                                    std::mt19937_64& rng) {
  WorldTransform t;
  t.in_dim = in_dim;
  t.hidden = 2 * out_dim;
  t.out_dim = out_dim;
  std::normal_distribution<double> normal(0.0, 1.0);
  const double s1 = 3.0 / std::sqrt(static_cast<double>(in_dim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(t.hidden));
  t.w1.resize(in_dim * t.hidden);
  for (auto& w : t.w1) w = s1 * normal(rng);
  t.b1.resize(t.hidden);
  for (auto& b : t.b1) b = 0.3 * normal(rng);
  t.w2.resize(t.hidden * out_dim);
  for (auto& w : t.w2) w = s2 * normal(rng);
  t.b2.assign(out_dim, 0.0);
  return t;
}

// Generates `count` samples for identities [first_id, first_id + n_ids) with
// the dataset's prototype/noise/transform recipe. Used for both the main
// samples and the distractor pool.
std::vector<LabeledSample> generate_samples(const GeneratorParams& params,
                                            std::size_t first_id,
                                            std::size_t n_ids,
                                            std::size_t per_identity,
                                            std::mt19937_64& proto_rng,
                                            std::mt19937_64& noise_rng) {
  const std::size_t p = params.prototype_dim;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  // Per-coordinate sigma chosen so the expected perturbation norm equals
  // intra_class_noise_std (prototypes are unit vectors).
  const double sigma =
      params.intra_class_noise_std / std::sqrt(static_cast<double>(p));
  std::vector<LabeledSample> out;
  out.reserve(n_ids * per_identity);
  std::vector<double> z(p);
  std::vector<std::vector<double>> identity_zs;
  for (std::size_t id = 0; id < n_ids; ++id) {
    const std::vector<double> proto = unit_gaussian_vector(p, proto_rng);
    identity_zs.clear();
    for (std::size_t s = 0; s < per_identity; ++s) {
      const bool duplicate = s > 0 && params.duplicate_fraction > 0.0 &&
                             uniform(noise_rng) < params.duplicate_fraction;
      if (duplicate) {
        std::uniform_int_distribution<std::size_t> pick(0, identity_zs.size() - 1);
        const auto& base = identity_zs[pick(noise_rng)];
        for (std::size_t c = 0; c < p; ++c)
          z[c] = base[c] + 0.02 * sigma * normal(noise_rng);
      } else {
        for (std::size_t c = 0; c < p; ++c)
          z[c] = proto[c] + sigma * normal(noise_rng);
      }
      identity_zs.push_back(z);
      out.push_back({params.world_transform.apply(z), first_id + id});
    }
  }
  return out;
}

}  // namespace

std::vector<double> WorldTransform::apply(const std::vector<double>& z) const {
  std::vector<double> h(hidden);
  for (std::size_t j = 0; j < hidden; ++j) {
    double acc = b1[j];
    for (std::size_t i = 0; i < in_dim; ++i) acc += z[i] * w1[i * hidden + j];
    h[j] = std::tanh(acc);
  }
  std::vector<double> y(out_dim);
  for (std::size_t j = 0; j < out_dim; ++j) {
    double acc = b2[j];
    for (std::size_t i = 0; i < hidden; ++i) acc += h[i] * w2[i * out_dim + j];
    y[j] = acc;
  }
  return y;
}

void flip_rows(ad::Tensor& batch, const std::vector<std::uint8_t>& selected) {
  if (selected.size() != batch.rows())
    throw std::invalid_argument("flip_rows: one flag per row required");
  auto v = batch.value_mut();
  const std::size_t d = batch.cols();
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (!selected[i]) continue;
    for (std::size_t a = 0, b = d - 1; a < b; ++a, --b)
      std::swap(v[i * d + a], v[i * d + b]);
  }
}

std::vector<std::size_t> SyntheticDataset::indices_of_identity(
    std::size_t id) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].label == id) idx.push_back(i);
  return idx;
}

bool SplitPlan::is_forget_identity(std::size_t id) const {
  return std::binary_search(forget_identities.begin(), forget_identities.end(),
                            id);
}

std::vector<std::size_t> SplitPlan::sample_indices(Assignment a) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] == a) idx.push_back(i);
  return idx;
}

SyntheticDataset generate(std::size_t num_identities, std::size_t per_identity,
                          std::size_t input_dim, std::uint64_t seed,
                          double noise_std, std::size_t prototype_dim,
                          double duplicate_fraction) {
  if (num_identities < 2)
    throw std::invalid_argument("generate: need at least 2 identities");
  if (per_identity < 2)
    throw std::invalid_argument("generate: need at least 2 samples per identity");
  if (input_dim == 0) throw std::invalid_argument("generate: input_dim == 0");
  if (noise_std <= 0.0)
    throw std::invalid_argument("generate: noise_std must be positive");
  if (duplicate_fraction < 0.0 || duplicate_fraction >= 1.0)
    throw std::invalid_argument("generate: duplicate_fraction must be in [0, 1)");

  SyntheticDataset ds;
  ds.num_identities = num_identities;
  ds.input_dim = input_dim;
  ds.seed = seed;
  ds.params.prototype_dim = prototype_dim == 0 ? input_dim : prototype_dim;
  ds.params.intra_class_noise_std = noise_std;
  ds.params.duplicate_fraction = duplicate_fraction;

  auto transform_rng = make_rng(seed, kSaltTransform);
  ds.params.world_transform =
      make_world_transform(ds.params.prototype_dim, input_dim, transform_rng);

  auto proto_rng = make_rng(seed, kSaltPrototypes);
  auto noise_rng = make_rng(seed, kSaltNoise);
  ds.samples = generate_samples(ds.params, 0, num_identities, per_identity,
                                proto_rng, noise_rng);
  return ds;
}

SplitPlan make_split(const SyntheticDataset& ds, std::size_t n_forget,
                     double train_frac, std::uint64_t seed,
                     std::size_t distractor_multiplier) {
  if (n_forget == 0 || n_forget >= ds.num_identities)
    throw std::invalid_argument("make_split: need 0 < n_forget < K");
  if (train_frac <= 0.0 || train_frac >= 1.0)
    throw std::invalid_argument("make_split: need 0 < train_frac < 1");

  SplitPlan plan;
  plan.seed = seed;
  plan.train_frac = train_frac;

  // Forget identities: partial Fisher-Yates over [0, K).
  {
    auto rng = make_rng(seed, kSaltForgetPick);
    std::vector<std::size_t> ids(ds.num_identities);
    std::iota(ids.begin(), ids.end(), 0);
    for (std::size_t i = 0; i < n_forget; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
      std::swap(ids[i], ids[pick(rng)]);
    }
    plan.forget_identities.assign(ids.begin(),
                                  ids.begin() + static_cast<std::ptrdiff_t>(n_forget));
    std::sort(plan.forget_identities.begin(), plan.forget_identities.end());
  }

  // Train/test partition per identity, keyed to the dataset seed so every
  // forget-set draw sees the same fixed partition.
  plan.assignment.assign(ds.samples.size(), Assignment::kRetainTrain);
  std::size_t forget_test_count = 0;
  for (std::size_t id = 0; id < ds.num_identities; ++id) {
    auto idx = ds.indices_of_identity(id);
    auto rng = make_rng(ds.seed, mix_seed(kSaltPartition, id));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(
        std::ceil(train_frac * static_cast<double>(idx.size())));
    const bool forget = plan.is_forget_identity(id);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const bool train = i < n_train;
      plan.assignment[idx[i]] =
          forget ? (train ? Assignment::kForgetTrain : Assignment::kForgetTest)
                 : (train ? Assignment::kRetainTrain : Assignment::kRetainTest);
      if (forget && !train) ++forget_test_count;
    }
  }

  // Distractor pool: fresh identities from the same generator, labels offset
  // past K. Keyed to the dataset seed (a fixed external gallery, like the
  // benchmark datasets it stands in for).
  const std::size_t per_identity = ds.samples.size() / ds.num_identities;
  const std::size_t wanted = distractor_multiplier * forget_test_count;
  const std::size_t n_ids =
      (wanted + per_identity - 1) / std::max<std::size_t>(per_identity, 1);
  auto proto_rng = make_rng(ds.seed, kSaltDistractors);
  auto noise_rng = make_rng(ds.seed, mix_seed(kSaltDistractors, 1));
  plan.distractors = generate_samples(ds.params, ds.num_identities, n_ids,
                                      per_identity, proto_rng, noise_rng);
  if (plan.distractors.size() > wanted) plan.distractors.resize(wanted);
  return plan;
}

std::vector<std::size_t> sample_batch(const std::vector<LabeledSample>& pool,
                                      const std::vector<std::size_t>& pool_indices,
                                      std::size_t batch,
                                      std::size_t identities_per_batch,
                                      std::mt19937_64& rng) {
  if (pool_indices.empty())
    throw std::invalid_argument("sample_batch: empty pool");
  if (identities_per_batch == 0 || batch % identities_per_batch != 0)
    throw std::invalid_argument(
        "sample_batch: batch must be divisible by identities_per_batch");
  const std::size_t per_id = batch / identities_per_batch;
  if (per_id < 2)
    throw std::invalid_argument(
        "sample_batch: need at least 2 samples per identity for positives");

  std::unordered_map<std::size_t, std::vector<std::size_t>> by_id;
  for (std::size_t i : pool_indices) by_id[pool[i].label].push_back(i);
  if (by_id.size() < identities_per_batch)
    throw std::invalid_argument(
        "sample_batch: pool has fewer identities than identities_per_batch");

  std::vector<std::size_t> ids;
  ids.reserve(by_id.size());
  for (const auto& [id, _] : by_id) ids.push_back(id);
  std::sort(ids.begin(), ids.end());  // map order is not deterministic

  for (std::size_t i = 0; i < identities_per_batch; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }

  std::vector<std::size_t> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < identities_per_batch; ++i) {
    auto& members = by_id[ids[i]];
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t s = 0; s < per_id; ++s)
      out.push_back(members[s % members.size()]);
  }
  return out;
}

LeakageReport leakage_check(const ad::Tensor& forget_centroids,
                            const std::vector<std::size_t>& forget_ids,
                            const ad::Tensor& distractor_centroids,
                            const std::vector<std::size_t>& distractor_ids,
                            double threshold) {
  if (forget_centroids.cols() != distractor_centroids.cols())
    throw std::invalid_argument("leakage_check: dimension mismatch");
  LeakageReport rep;
  rep.histogram.assign(20, 0);
  const std::size_t d = forget_centroids.cols();
  const auto fv = forget_centroids.value();
  const auto dv = distractor_centroids.value();
  for (std::size_t i = 0; i < forget_centroids.rows(); ++i) {
    for (std::size_t j = 0; j < distractor_centroids.rows(); ++j) {
      double cosv = 0.0;
      for (std::size_t p = 0; p < d; ++p) cosv += fv[i * d + p] * dv[j * d + p];
      rep.max_cosine = std::max(rep.max_cosine, cosv);
      const auto bin = static_cast<std::size_t>(
          std::clamp((cosv + 1.0) / 2.0 * 20.0, 0.0, 19.0));
      ++rep.histogram[bin];
      if (cosv > threshold)
        rep.flagged.emplace_back(forget_ids[i], distractor_ids[j], cosv);
    }
  }
  return rep;
}

void save_dataset(const SyntheticDataset& ds, const std::string& path,
                  std::uint64_t config_hash) {
  io::BinaryWriter w(path);
  w.bytes(kDatasetMagic, 4);
  w.u32(kFormatVersion);
  w.u64(config_hash);
  w.u64(ds.num_identities);
  w.u64(ds.input_dim);
  w.u64(ds.seed);
  w.u64(ds.params.prototype_dim);
  w.f64(ds.params.intra_class_noise_std);
  w.f64(ds.params.duplicate_fraction);
  const auto& t = ds.params.world_transform;
  w.u64(t.in_dim);
  w.u64(t.hidden);
  w.u64(t.out_dim);
  w.doubles(t.w1);
  w.doubles(t.b1);
  w.doubles(t.w2);
  w.doubles(t.b2);
  w.u64(ds.samples.size());
  for (const auto& s : ds.samples) {
    w.u64(s.label);
    w.doubles(s.input);
  }
  w.close();
}

SyntheticDataset load_dataset(const std::string& path) {
  io::BinaryReader r(path);
  r.expect_magic(kDatasetMagic, kFormatVersion);
  r.u64();  // config hash, informational
  SyntheticDataset ds;
  ds.num_identities = r.u64();
  ds.input_dim = r.u64();
  ds.seed = r.u64();
  ds.params.prototype_dim = r.u64();
  ds.params.intra_class_noise_std = r.f64();
  ds.params.duplicate_fraction = r.f64();
  auto& t = ds.params.world_transform;
  t.in_dim = r.u64();
  t.hidden = r.u64();
  t.out_dim = r.u64();
  t.w1 = r.doubles(t.in_dim * t.hidden);
  t.b1 = r.doubles(t.hidden);
  t.w2 = r.doubles(t.hidden * t.out_dim);
  t.b2 = r.doubles(t.out_dim);
  const std::uint64_t n = r.u64();
  if (n > (1ull << 32) || ds.input_dim > (1ull << 20))
    throw std::runtime_error("corrupt or incompatible dataset file: " + path);
  ds.samples.resize(n);
  for (auto& s : ds.samples) {
    s.label = r.u64();
    s.input = r.doubles(ds.input_dim);
  }
  return ds;
}

void save_split(const SplitPlan& split, const std::string& path,
                std::uint64_t config_hash) {
  io::BinaryWriter w(path);
  w.bytes(kSplitMagic, 4);
  w.u32(kFormatVersion);
  w.u64(config_hash);
  w.u64(split.seed);
  w.f64(split.train_frac);
  w.u64(split.forget_identities.size());
  for (auto id : split.forget_identities) w.u64(id);
  w.u64(split.assignment.size());
  for (auto a : split.assignment) {
    const auto b = static_cast<std::uint8_t>(a);
    w.bytes(&b, 1);
  }
  w.u64(split.distractors.empty() ? 0 : split.distractors[0].input.size());
  w.u64(split.distractors.size());
  for (const auto& s : split.distractors) {
    w.u64(s.label);
    w.doubles(s.input);
  }
  w.close();
}

SplitPlan load_split(const std::string& path) {
  io::BinaryReader r(path);
  r.expect_magic(kSplitMagic, kFormatVersion);
  r.u64();  // config hash
  SplitPlan plan;
  plan.seed = r.u64();
  plan.train_frac = r.f64();
  const std::uint64_t n_forget = r.u64();
  if (n_forget > (1ull << 32))
    throw std::runtime_error("corrupt or incompatible split file: " + path);
  plan.forget_identities.resize(n_forget);
  for (auto& id : plan.forget_identities) id = r.u64();
  const std::uint64_t n_assign = r.u64();
  if (n_assign > (1ull << 32))
    throw std::runtime_error("corrupt or incompatible split file: " + path);
  plan.assignment.resize(n_assign);
  for (auto& a : plan.assignment) {
    std::uint8_t b;
    r.bytes(&b, 1);
    if (b > 3) throw std::runtime_error("corrupt split assignment in " + path);
    a = static_cast<Assignment>(b);
  }
  const std::uint64_t dim = r.u64();
  const std::uint64_t n_distract = r.u64();
  if (dim > (1ull << 20) || n_distract > (1ull << 32))
    throw std::runtime_error("corrupt or incompatible split file: " + path);
  plan.distractors.resize(n_distract);
  for (auto& s : plan.distractors) {
    s.label = r.u64();
    s.input = r.doubles(dim);
  }
  return plan;
}

ad::Tensor stack_inputs(const std::vector<LabeledSample>& samples,
                        const std::vector<std::size_t>& indices,
                        bool requires_grad) {
  if (indices.empty()) throw std::invalid_argument("stack_inputs: empty index set");
  const std::size_t d = samples[indices[0]].input.size();
  std::vector<double> data;
  data.reserve(indices.size() * d);
  for (std::size_t i : indices)
    data.insert(data.end(), samples[i].input.begin(), samples[i].input.end());
  return ad::Tensor::from(std::move(data), indices.size(), d, requires_grad);
}

std::vector<std::size_t> labels_of(const std::vector<LabeledSample>& samples,
                                   const std::vector<std::size_t>& indices) {
  std::vector<std::size_t> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices) labels.push_back(samples[i].label);
  return labels;
}

}  // namespace disperse::data
