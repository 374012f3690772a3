#include "disperse/unlearn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "disperse/optim.hpp"
#include "disperse/rng.hpp"

namespace disperse::unlearn {

namespace {

enum : std::uint64_t {
  kSaltBatch = 0x20,
  kSaltLabels = 0x21,
  kSaltNoise = 0x22,
  kSaltRetain = 0x23,
  kSaltSalun = 0x24,
  kSaltFlip = 0x25,
};

// Positive-pair bookkeeping for a labeled batch.
struct PositiveSets {
  std::vector<std::uint8_t> mask;       // B x B, same identity and i != j
  std::vector<std::size_t> pos_count;   // |P_i|
  std::size_t anchors_with_positive = 0;
};

PositiveSets positive_sets(const std::vector<std::size_t>& labels) {
  const std::size_t b = labels.size();
  PositiveSets ps;
  ps.mask.assign(b * b, 0);
  ps.pos_count.assign(b, 0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      if (i == j || labels[i] != labels[j]) continue;
      ps.mask[i * b + j] = 1;
      ++ps.pos_count[i];
    }
  for (auto c : ps.pos_count)
    if (c > 0) ++ps.anchors_with_positive;
  return ps;
}

// Round-robin pass over a shuffled index pool; reshuffles when exhausted.
class BatchCycler {
 public:
  BatchCycler(std::vector<std::size_t> indices, std::uint64_t seed)
      : indices_(std::move(indices)), rng_(seed) {
    reshuffle();
  }

  std::vector<std::size_t> next(std::size_t n) {
    std::vector<std::size_t> out;
    out.reserve(n);
    while (out.size() < n) {
      if (cursor_ == indices_.size()) reshuffle();
      out.push_back(indices_[cursor_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    std::shuffle(indices_.begin(), indices_.end(), rng_);
    cursor_ = 0;
  }
  std::vector<std::size_t> indices_;
  std::mt19937_64 rng_;
  std::size_t cursor_ = 0;
};

std::vector<std::uint8_t> ones_mask(std::size_t n) {
  return std::vector<std::uint8_t>(n, 1);
}

bool finite_scalar(double v) { return std::isfinite(v); }

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::kDispersion: return "dispersion";
    case Method::kHardDispersion: return "hard-dispersion";
    case Method::kRandomLabeling: return "random-labeling";
    case Method::kGradientAscent: return "gradient-ascent";
    case Method::kBoundaryShrink: return "boundary-shrink";
    case Method::kLipschitz: return "lipschitz";
    case Method::kContrastive: return "contrastive";
  }
  return "unknown";
}

std::optional<Method> parse_method(const std::string& name) {
  for (Method m : {Method::kDispersion, Method::kHardDispersion,
                   Method::kRandomLabeling, Method::kGradientAscent,
                   Method::kBoundaryShrink, Method::kLipschitz,
                   Method::kContrastive})
    if (method_name(m) == name) return m;
  return std::nullopt;
}

std::string saliency_name(SaliencyLoss s) {
  switch (s) {
    case SaliencyLoss::kCosFaceGA: return "cosface-ga";
    case SaliencyLoss::kLipschitz: return "lipschitz";
    case SaliencyLoss::kEmbNorm: return "emb-norm";
  }
  return "unknown";
}

std::optional<SaliencyLoss> parse_saliency(const std::string& name) {
  for (SaliencyLoss s : {SaliencyLoss::kCosFaceGA, SaliencyLoss::kLipschitz,
                         SaliencyLoss::kEmbNorm})
    if (saliency_name(s) == name) return s;
  return std::nullopt;
}

ad::Tensor dispersion_loss(const ad::Tensor& embeddings,
                           const std::vector<std::size_t>& labels,
                           double margin, bool* empty_positive_set) {
  if (labels.size() != embeddings.rows())
    throw std::invalid_argument("dispersion_loss: one label per row required");
  const std::size_t b = labels.size();
  const PositiveSets ps = positive_sets(labels);
  if (empty_positive_set) *empty_positive_set = ps.anchors_with_positive == 0;
  if (ps.anchors_with_positive == 0) return ad::Tensor::scalar(0.0);

  const ad::Tensor cos = ad::cosine_matrix(embeddings, embeddings);
  const ad::Tensor h = ad::hinge(ad::add_scalar(cos, margin));
  std::vector<double> w(b * b, 0.0);
  const double anchor_w = 1.0 / static_cast<double>(ps.anchors_with_positive);
  for (std::size_t i = 0; i < b; ++i) {
    if (ps.pos_count[i] == 0) continue;
    const double wi = anchor_w / static_cast<double>(ps.pos_count[i]);
    for (std::size_t j = 0; j < b; ++j)
      if (ps.mask[i * b + j]) w[i * b + j] = wi;
  }
  return ad::weighted_sum(h, w);
}

ad::Tensor hard_dispersion_loss(const ad::Tensor& embeddings,
                                const std::vector<std::size_t>& labels,
                                double margin, bool* empty_positive_set) {
  if (labels.size() != embeddings.rows())
    throw std::invalid_argument(
        "hard_dispersion_loss: one label per row required");
  const std::size_t b = labels.size();
  const PositiveSets ps = positive_sets(labels);
  if (empty_positive_set) *empty_positive_set = ps.anchors_with_positive == 0;
  if (ps.anchors_with_positive == 0) return ad::Tensor::scalar(0.0);

  const ad::Tensor cos = ad::cosine_matrix(embeddings, embeddings);
  const ad::Tensor hardest = ad::row_max_masked(cos, ps.mask);
  const ad::Tensor h = ad::hinge(ad::add_scalar(hardest, margin));
  std::vector<double> w(b, 0.0);
  const double anchor_w = 1.0 / static_cast<double>(ps.anchors_with_positive);
  for (std::size_t i = 0; i < b; ++i)
    if (ps.pos_count[i] > 0) w[i] = anchor_w;
  return ad::weighted_sum(h, w);
}

ad::Tensor contrastive_unlearn_loss(const ad::Tensor& forget_embeddings,
                                    const ad::Tensor& retain_embeddings,
                                    const std::vector<std::size_t>& forget_labels,
                                    double tau, bool* empty_positive_set) {
  if (tau <= 0.0)
    throw std::invalid_argument("contrastive_unlearn_loss: tau must be > 0");
  if (retain_embeddings.rows() == 0)
    throw std::invalid_argument("contrastive_unlearn_loss: empty retain batch");
  const std::size_t b = forget_labels.size();
  const PositiveSets ps = positive_sets(forget_labels);
  if (empty_positive_set) *empty_positive_set = ps.anchors_with_positive == 0;
  if (ps.anchors_with_positive == 0) return ad::Tensor::scalar(0.0);

  const double inv_tau = 1.0 / tau;
  const ad::Tensor cos_ff =
      ad::cosine_matrix(forget_embeddings, forget_embeddings);
  const ad::Tensor cos_fr =
      ad::cosine_matrix(forget_embeddings, retain_embeddings);
  const ad::Tensor lse_pos = ad::row_lse_masked(cos_ff, ps.mask, inv_tau);
  const ad::Tensor lse_ret = ad::row_lse_masked(
      cos_fr, ones_mask(b * retain_embeddings.rows()), inv_tau);
  const ad::Tensor per_anchor = ad::sub(lse_pos, lse_ret);
  std::vector<double> w(b, 0.0);
  const double anchor_w = 1.0 / static_cast<double>(ps.anchors_with_positive);
  for (std::size_t i = 0; i < b; ++i)
    if (ps.pos_count[i] > 0) w[i] = anchor_w;
  return ad::weighted_sum(per_anchor, w);
}

ad::Tensor lipschitz_loss(const model::EncoderModel& m,
                          const ad::Tensor& inputs, double noise_std,
                          std::size_t n_draws, std::mt19937_64& rng) {
  if (n_draws == 0)
    throw std::invalid_argument("lipschitz_loss: n_draws must be >= 1");
  if (noise_std <= 0.0)
    throw std::invalid_argument("lipschitz_loss: noise_std must be > 0");
  const std::size_t b = inputs.rows(), d = inputs.cols();
  const ad::Tensor base = embed(m, inputs);
  std::normal_distribution<double> normal(0.0, noise_std);

  ad::Tensor total = ad::Tensor::scalar(0.0);
  for (std::size_t k = 0; k < n_draws; ++k) {
    std::vector<double> deltas(b * d);
    std::vector<double> delta_norm(b);
    for (std::size_t i = 0; i < b; ++i) {
      double sq = 0.0;
      do {  // a zero draw has probability ~0 but would break the ratio
        sq = 0.0;
        for (std::size_t p = 0; p < d; ++p) {
          const double delta = normal(rng);
          deltas[i * d + p] = delta;
          sq += delta * delta;
        }
      } while (sq < 1e-24);
      delta_norm[i] = std::sqrt(sq);
    }
    // x + delta as a tracked op so the loss also differentiates through the
    // perturbed branch when the inputs themselves carry gradients.
    const ad::Tensor pert =
        ad::add(inputs, ad::Tensor::from(std::move(deltas), b, d));
    const ad::Tensor diff_norm = ad::row_l2norm(ad::sub(embed(m, pert), base));
    std::vector<double> w(b);
    for (std::size_t i = 0; i < b; ++i)
      w[i] = 1.0 / (static_cast<double>(n_draws) * static_cast<double>(b) *
                    delta_norm[i]);
    total = ad::add(total, ad::weighted_sum(diff_norm, w));
  }
  return total;
}

ad::Tensor fgsm_perturb(const model::EncoderModel& m, const ad::Tensor& inputs,
                        const std::vector<std::size_t>& labels,
                        double epsilon) {
  if (epsilon < 0.0)
    throw std::invalid_argument("fgsm_perturb: epsilon must be >= 0");
  // Snapshot parameter grads; the input-gradient pass below must not leak
  // into the caller's accumulation.
  auto params = m.parameters();
  std::vector<std::vector<double>> saved;
  saved.reserve(params.size());
  for (auto& p : params) saved.emplace_back(p.grad().begin(), p.grad().end());

  ad::Tensor x = inputs.detached(true);
  ad::backward(cosface_loss(m, x, labels));
  const auto g = x.grad();
  std::vector<double> out(inputs.value().begin(), inputs.value().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (g[i] > 0.0)
      out[i] += epsilon;
    else if (g[i] < 0.0)
      out[i] -= epsilon;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].grad_mut();
    std::copy(saved[i].begin(), saved[i].end(), dst.begin());
  }
  return ad::Tensor::from(std::move(out), inputs.rows(), inputs.cols());
}

std::vector<std::size_t> adversarial_labels(const model::EncoderModel& m,
                                            const ad::Tensor& perturbed_inputs) {
  const ad::Tensor emb = embed(m, perturbed_inputs);
  const ad::Tensor head_n = ad::l2_normalize_rows(m.head);
  const ad::Tensor cos = ad::cosine_matrix(emb, head_n);
  const auto cv = cos.value();
  const std::size_t k = m.num_classes;
  std::vector<std::size_t> out(perturbed_inputs.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double best = cv[i * k];
    std::size_t bj = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (cv[i * k + j] > best) {  // strict: ties keep the lowest id
        best = cv[i * k + j];
        bj = j;
      }
    out[i] = bj;
  }
  return out;
}

std::vector<std::vector<std::uint8_t>> salun_mask(
    const model::EncoderModel& m, const std::vector<data::LabeledSample>& samples,
    const std::vector<std::size_t>& forget_train, const UnlearnConfig& cfg) {
  if (cfg.salun_fraction <= 0.0 || cfg.salun_fraction > 1.0)
    throw std::invalid_argument("salun_mask: fraction must be in (0, 1]");
  model::EncoderModel work = m.clone();
  auto params = work.parameters();
  for (auto& p : params) p.zero_grad();

  auto order_rng = make_rng(cfg.seed, kSaltSalun);
  std::vector<std::size_t> order(forget_train);
  std::shuffle(order.begin(), order.end(), order_rng);
  auto noise_rng = make_rng(cfg.seed, mix_seed(kSaltSalun, 1));

  // Accumulate |grad| of the saliency loss over one pass of forget batches.
  std::vector<std::vector<double>> saliency(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    saliency[i].assign(params[i].size(), 0.0);

  for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch) {
    const std::size_t hi = std::min(lo + cfg.batch, order.size());
    const std::vector<std::size_t> idx(order.begin() + lo, order.begin() + hi);
    const ad::Tensor x = data::stack_inputs(samples, idx);
    const auto y = data::labels_of(samples, idx);

    for (auto& p : params) p.zero_grad();
    ad::Tensor loss;
    switch (cfg.salun_loss) {
      case SaliencyLoss::kCosFaceGA:
        loss = ad::scale(cosface_loss(work, x, y), -1.0);
        break;
      case SaliencyLoss::kLipschitz:
        loss = lipschitz_loss(work, x, cfg.lip_noise_std, cfg.lip_n, noise_rng);
        break;
      case SaliencyLoss::kEmbNorm:
        loss = ad::mean_all(ad::row_l2norm(forward_raw(work, x)));
        break;
    }
    ad::backward(loss);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto g = params[i].grad();
      for (std::size_t j = 0; j < g.size(); ++j)
        saliency[i][j] += std::abs(g[j]);
    }
  }

  // Global ranking across all parameters; keep the top ceil(fraction * P).
  std::size_t total = 0;
  for (const auto& s : saliency) total += s.size();
  std::vector<std::pair<double, std::size_t>> ranked;  // (|grad|, flat index)
  ranked.reserve(total);
  std::size_t flat = 0;
  for (const auto& s : saliency)
    for (double v : s) ranked.emplace_back(v, flat++);
  const auto keep = static_cast<std::size_t>(
      std::ceil(cfg.salun_fraction * static_cast<double>(total)));
  std::nth_element(ranked.begin(), ranked.begin() + keep, ranked.end(),
                   [](const auto& a, const auto& b) {
                     if (a.first != b.first) return a.first > b.first;
                     return a.second < b.second;
                   });

  std::vector<std::vector<std::uint8_t>> mask(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    mask[i].assign(params[i].size(), 0);
  // Flat index -> (param, offset) via the canonical order.
  std::vector<std::size_t> offsets(params.size() + 1, 0);
  for (std::size_t i = 0; i < params.size(); ++i)
    offsets[i + 1] = offsets[i] + params[i].size();
  for (std::size_t r = 0; r < keep; ++r) {
    const std::size_t f = ranked[r].second;
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), f);
    const auto pi = static_cast<std::size_t>(it - offsets.begin()) - 1;
    mask[pi][f - offsets[pi]] = 1;
  }
  return mask;
}

UnlearnResult run_unlearn(const model::EncoderModel& original,
                          const std::vector<data::LabeledSample>& samples,
                          const data::SplitPlan& split,
                          const UnlearnConfig& cfg) {
  if (cfg.lr < 0.0) throw std::invalid_argument("run_unlearn: negative lr");
  if (cfg.lambda_retain < 0.0)
    throw std::invalid_argument("run_unlearn: negative lambda_retain");
  if (cfg.method == Method::kBoundaryShrink && cfg.epsilon_fgsm <= 0.0)
    throw std::invalid_argument("run_unlearn: boundary shrink needs epsilon > 0");
  if (cfg.method == Method::kLipschitz && cfg.lip_n == 0)
    throw std::invalid_argument("run_unlearn: lipschitz needs n >= 1");
  if (cfg.method == Method::kContrastive && cfg.tau <= 0.0)
    throw std::invalid_argument("run_unlearn: contrastive needs tau > 0");

  const auto t0 = std::chrono::steady_clock::now();

  UnlearnResult res;
  res.config = cfg;
  res.model = original.clone();
  auto params = res.model.parameters();

  const auto forget_train = split.sample_indices(data::Assignment::kForgetTrain);
  const auto retain_train = split.sample_indices(data::Assignment::kRetainTrain);
  if (forget_train.empty())
    throw std::invalid_argument("run_unlearn: empty forget-train pool");

  model::SgdOptimizer opt(cfg.momentum, cfg.weight_decay);
  const bool needs_mask = cfg.salun_fraction > 0.0 || cfg.head_freeze;
  if (needs_mask) {
    std::vector<std::vector<std::uint8_t>> mask;
    if (cfg.salun_fraction > 0.0) {
      mask = salun_mask(res.model, samples, forget_train, cfg);
    } else {
      mask.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i)
        mask[i] = ones_mask(params[i].size());
    }
    if (cfg.head_freeze)  // head is last in the canonical order
      std::fill(mask.back().begin(), mask.back().end(), 0);
    opt.set_mask(std::move(mask));
  }

  auto batch_rng = make_rng(cfg.seed, kSaltBatch);
  auto label_rng = make_rng(cfg.seed, kSaltLabels);
  auto noise_rng = make_rng(cfg.seed, kSaltNoise);
  auto flip_rng = make_rng(cfg.seed, kSaltFlip);
  std::bernoulli_distribution flip_coin(0.5);
  auto maybe_flip = [&](ad::Tensor& batch) {
    if (!cfg.augment_flip) return;
    std::vector<std::uint8_t> chosen(batch.rows());
    for (auto& c : chosen) c = flip_coin(flip_rng) ? 1 : 0;
    data::flip_rows(batch, chosen);
  };
  BatchCycler retain_batches(retain_train, mix_seed(cfg.seed, kSaltRetain));
  std::uniform_int_distribution<std::size_t> label_dist(
      0, res.model.num_classes - 1);

  const bool needs_retain_batch =
      cfg.method == Method::kContrastive || cfg.lambda_retain > 0.0;
  if (needs_retain_batch && retain_train.empty())
    throw std::invalid_argument("run_unlearn: method needs retain samples");

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto batch_idx =
        sample_batch(samples, forget_train, cfg.batch,
                     cfg.identities_per_batch, batch_rng);
    ad::Tensor x = data::stack_inputs(samples, batch_idx);
    maybe_flip(x);
    const auto y = data::labels_of(samples, batch_idx);

    std::vector<std::size_t> retain_idx;
    ad::Tensor xr;
    std::vector<std::size_t> yr;
    if (needs_retain_batch) {
      retain_idx = retain_batches.next(cfg.batch);
      xr = data::stack_inputs(samples, retain_idx);
      maybe_flip(xr);
      yr = data::labels_of(samples, retain_idx);
    }

    bool empty_pos = false;
    ad::Tensor loss;
    switch (cfg.method) {
      case Method::kDispersion:
        loss = dispersion_loss(embed(res.model, x), y, cfg.m_disp, &empty_pos);
        break;
      case Method::kHardDispersion:
        loss = hard_dispersion_loss(embed(res.model, x), y, cfg.m_disp,
                                    &empty_pos);
        break;
      case Method::kRandomLabeling: {
        std::vector<std::size_t> y_rand(y.size());
        for (auto& l : y_rand) l = label_dist(label_rng);
        loss = cosface_loss(res.model, x, y_rand);
        break;
      }
      case Method::kGradientAscent:
        loss = ad::scale(cosface_loss(res.model, x, y), -1.0);
        break;
      case Method::kBoundaryShrink: {
        const ad::Tensor xp = fgsm_perturb(res.model, x, y, cfg.epsilon_fgsm);
        loss = cosface_loss(res.model, x, adversarial_labels(res.model, xp));
        break;
      }
      case Method::kLipschitz:
        loss = lipschitz_loss(res.model, x, cfg.lip_noise_std, cfg.lip_n,
                              noise_rng);
        break;
      case Method::kContrastive:
        loss = contrastive_unlearn_loss(embed(res.model, x),
                                        embed(res.model, xr), y, cfg.tau,
                                        &empty_pos);
        break;
    }
    if (empty_pos) ++res.empty_positive_batches;

    if (cfg.lambda_retain > 0.0)
      loss = ad::add(loss, ad::scale(cosface_loss(res.model, xr, yr),
                                     cfg.lambda_retain));

    const double lv = loss.item();
    if (!finite_scalar(lv)) {
      res.abort_reason = "non-finite loss at iteration " + std::to_string(it);
      break;
    }
    opt.zero_grad(params);
    ad::backward(loss);
    opt.step(params, cfg.lr);
    res.loss_trace.push_back(lv);

    if (!res.model.finite()) {
      res.abort_reason =
          "non-finite parameters after iteration " + std::to_string(it);
      break;
    }
  }

  res.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return res;
}

}  // namespace disperse::unlearn
