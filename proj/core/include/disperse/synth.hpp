#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "disperse/tensor.hpp"

namespace disperse::data {

struct LabeledSample {
  std::vector<double> input;  // D_in features
  std::size_t label = 0;      // identity id
};

/// Fixed random two-layer nonlinear map applied to prototype-space points.
/// Weights are generated once per dataset and stored so regeneration is
/// bit-identical.
struct WorldTransform {
  std::size_t in_dim = 0;
  std::size_t hidden = 0;
  std::size_t out_dim = 0;
  std::vector<double> w1;  // in_dim x hidden
  std::vector<double> b1;  // hidden
  std::vector<double> w2;  // hidden x out_dim
  std::vector<double> b2;  // out_dim

  std::vector<double> apply(const std::vector<double>& z) const;
};

struct GeneratorParams {
  std::size_t prototype_dim = 16;
  double intra_class_noise_std = 0.3;  // expected L2 norm of the perturbation
  // Fraction of samples regenerated as near-duplicates of an earlier sample
  // of the same identity (mimics repeated gallery images). 0 disables.
  double duplicate_fraction = 0.0;
  WorldTransform world_transform;
};

/// Identity-clustered synthetic dataset: K unit prototypes on the sphere,
/// per-sample Gaussian perturbation, then a fixed nonlinear world transform.
struct SyntheticDataset {
  std::vector<LabeledSample> samples;
  std::size_t num_identities = 0;  // K
  std::size_t input_dim = 0;       // D_in
  std::uint64_t seed = 0;
  GeneratorParams params;

  std::vector<std::size_t> indices_of_identity(std::size_t id) const;
};

enum class Assignment : std::uint8_t {
  kForgetTrain = 0,
  kForgetTest = 1,
  kRetainTrain = 2,
  kRetainTest = 3,
};

/// Identity-level forget/retain partition plus per-sample train/test split
/// and the identity-disjoint distractor pool used by the retrieval galleries.
///
/// The train/test partition of each identity is derived from the dataset seed
/// so different forget-set draws share one original model; the split seed
/// only drives the choice of forget identities.
struct SplitPlan {
  std::vector<std::size_t> forget_identities;      // sorted ids
  std::vector<Assignment> assignment;              // one per dataset sample
  std::vector<LabeledSample> distractors;          // labels >= K, disjoint
  std::uint64_t seed = 0;
  double train_frac = 0.5;

  bool is_forget_identity(std::size_t id) const;
  std::vector<std::size_t> sample_indices(Assignment a) const;
};

SyntheticDataset generate(std::size_t num_identities, std::size_t per_identity,
                          std::size_t input_dim, std::uint64_t seed,
                          double noise_std, std::size_t prototype_dim = 0,
                          double duplicate_fraction = 0.0);

/// Reverses the feature order of each selected row; the fixed-permutation
/// stand-in for horizontal flipping. Used by training/unlearning when the
/// flip augmentation is enabled.
void flip_rows(ad::Tensor& batch, const std::vector<std::uint8_t>& selected);

/// Samples n_forget identities without replacement, splits each identity
/// train/test with ceil(count * train_frac) train samples, and generates the
/// distractor pool (distractor_multiplier x the forget-test sample count).
SplitPlan make_split(const SyntheticDataset& ds, std::size_t n_forget,
                     double train_frac, std::uint64_t seed,
                     std::size_t distractor_multiplier = 20);

/// PK batch sampler: identities_per_batch identities, batch/identities_per_batch
/// samples each (with replacement when an identity runs short), so every
/// anchor has at least one in-batch positive. Returns dataset sample indices.
std::vector<std::size_t> sample_batch(const std::vector<LabeledSample>& pool,
                                      const std::vector<std::size_t>& pool_indices,
                                      std::size_t batch,
                                      std::size_t identities_per_batch,
                                      std::mt19937_64& rng);

struct LeakageReport {
  double max_cosine = -1.0;
  std::vector<std::size_t> histogram;  // 20 bins over [-1, 1]
  // (forget identity, distractor identity, cosine) above threshold
  std::vector<std::tuple<std::size_t, std::size_t, double>> flagged;
};

/// Cross-set centroid similarity audit between forget identities and the
/// distractor pool. Centroids must be unit rows.
LeakageReport leakage_check(const ad::Tensor& forget_centroids,
                            const std::vector<std::size_t>& forget_ids,
                            const ad::Tensor& distractor_centroids,
                            const std::vector<std::size_t>& distractor_ids,
                            double threshold);

// Container files. Round-trips are lossless (raw IEEE-754 bytes).
void save_dataset(const SyntheticDataset& ds, const std::string& path,
                  std::uint64_t config_hash);
SyntheticDataset load_dataset(const std::string& path);
void save_split(const SplitPlan& split, const std::string& path,
                std::uint64_t config_hash);
SplitPlan load_split(const std::string& path);

/// Stacks the referenced samples into an n x D_in matrix.
ad::Tensor stack_inputs(const std::vector<LabeledSample>& samples,
                        const std::vector<std::size_t>& indices,
                        bool requires_grad = false);
std::vector<std::size_t> labels_of(const std::vector<LabeledSample>& samples,
                                   const std::vector<std::size_t>& indices);

}  // namespace disperse::data
