#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "disperse/encoder.hpp"
#include "disperse/synth.hpp"
#include "disperse/tensor.hpp"

namespace disperse::unlearn {

enum class Method {
  kDispersion,
  kHardDispersion,
  kRandomLabeling,
  kGradientAscent,
  kBoundaryShrink,
  kLipschitz,
  kContrastive,
};

enum class SaliencyLoss { kCosFaceGA, kLipschitz, kEmbNorm };

std::string method_name(Method m);
std::optional<Method> parse_method(const std::string& name);
std::string saliency_name(SaliencyLoss s);
std::optional<SaliencyLoss> parse_saliency(const std::string& name);

struct UnlearnConfig {
  Method method = Method::kDispersion;
  double lr = 1e-4;
  std::size_t iterations = 1000;
  std::size_t batch = 32;
  std::size_t identities_per_batch = 8;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double m_disp = 0.2;          // dispersion margin
  double lambda_retain = 0.0;   // weight of the retain CosFace term
  double epsilon_fgsm = 0.1;    // boundary-shrink perturbation size
  double lip_noise_std = 0.1;   // smoothness-loss noise std (per input coord)
  std::size_t lip_n = 25;       // smoothness-loss noise draws
  double salun_fraction = 0.0;  // 0 disables the saliency mask
  SaliencyLoss salun_loss = SaliencyLoss::kCosFaceGA;
  double tau = 0.1;             // contrastive temperature
  std::uint64_t seed = 0;
  bool head_freeze = false;
  bool augment_flip = false;  // coordinate-reversal augmentation on batches
};

struct UnlearnResult {
  model::EncoderModel model;
  std::vector<double> loss_trace;  // one entry per completed iteration
  UnlearnConfig config;
  double wall_time_sec = 0.0;
  std::string abort_reason;  // empty on clean completion
  std::size_t empty_positive_batches = 0;
};

/// Batch loss that pushes same-identity embeddings apart: mean over anchors
/// with an in-batch positive of the mean hinge(margin + cosine) over their
/// positives. Anchors without positives are excluded; an all-singleton batch
/// yields a constant 0 (reported via *empty_positive_set when given).
ad::Tensor dispersion_loss(const ad::Tensor& embeddings,
                           const std::vector<std::size_t>& labels,
                           double margin,
                           bool* empty_positive_set = nullptr);

/// Hard-positive variant: hinge(margin + max positive cosine) per anchor,
/// so gradient flows only through each anchor's most similar positive.
ad::Tensor hard_dispersion_loss(const ad::Tensor& embeddings,
                                const std::vector<std::size_t>& labels,
                                double margin,
                                bool* empty_positive_set = nullptr);

/// Pushes forget anchors away from their same-identity forget positives
/// relative to the retain batch: mean log of the softmax mass ratio
/// (positive pairs over retain pairs) at temperature tau.
ad::Tensor contrastive_unlearn_loss(const ad::Tensor& forget_embeddings,
                                    const ad::Tensor& retain_embeddings,
                                    const std::vector<std::size_t>& forget_labels,
                                    double tau,
                                    bool* empty_positive_set = nullptr);

/// Embedding-smoothness penalty: average over draws and samples of
/// ||f_hat(x + delta) - f_hat(x)|| / ||delta||, delta ~ N(0, noise_std^2 I).
ad::Tensor lipschitz_loss(const model::EncoderModel& m,
                          const ad::Tensor& inputs, double noise_std,
                          std::size_t n_draws, std::mt19937_64& rng);

/// One-step sign-gradient perturbation of the inputs toward higher CosFace
/// loss. sign(0) = 0. Model parameters (values and grads) are left untouched.
ad::Tensor fgsm_perturb(const model::EncoderModel& m, const ad::Tensor& inputs,
                        const std::vector<std::size_t>& labels,
                        double epsilon);

/// Adversarial labels for boundary shrink: argmax cosine class of each
/// perturbed embedding against the normalized head; ties pick the lowest id.
std::vector<std::size_t> adversarial_labels(const model::EncoderModel& m,
                                            const ad::Tensor& perturbed_inputs);

/// Saliency mask over the canonical parameter order: |gradient| of the chosen
/// loss accumulated over one pass of forget batches, then the top `fraction`
/// of all parameters by global ranking (ties prefer the lower flat index).
/// Exactly ceil(fraction * P) entries are selected.
std::vector<std::vector<std::uint8_t>> salun_mask(
    const model::EncoderModel& m, const std::vector<data::LabeledSample>& samples,
    const std::vector<std::size_t>& forget_train, const UnlearnConfig& cfg);

/// Runs the configured method from `original` and returns the unlearned model
/// with its loss trace. Pure apart from the clock: identical inputs and seeds
/// give identical models. Non-finite losses or parameters abort the loop and
/// set abort_reason instead of throwing.
UnlearnResult run_unlearn(const model::EncoderModel& original,
                          const std::vector<data::LabeledSample>& samples,
                          const data::SplitPlan& split,
                          const UnlearnConfig& cfg);

}  // namespace disperse::unlearn
