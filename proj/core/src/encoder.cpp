#include "disperse/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "disperse/io.hpp"
#include "disperse/optim.hpp"
#include "disperse/synth.hpp"
#include "disperse/rng.hpp"

namespace disperse::model {

namespace {

constexpr char kModelMagic[4] = {'D', 'S', 'P', 'M'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr double kNormEps = 1e-12;

enum : std::uint64_t { kSaltInit = 0x10, kSaltShuffle = 0x11, kSaltFlip = 0x12 };

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

std::vector<ad::Tensor> EncoderModel::parameters() {
  std::vector<ad::Tensor> ps;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    ps.push_back(weights[i]);
    ps.push_back(biases[i]);
  }
  ps.push_back(head);
  return ps;
}

std::vector<ad::Tensor> EncoderModel::parameters() const {
  return const_cast<EncoderModel*>(this)->parameters();
}

std::size_t EncoderModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.size();
  return n;
}

EncoderModel EncoderModel::clone() const {
  EncoderModel c = *this;
  c.weights.clear();
  c.biases.clear();
  for (std::size_t i = 0; i < weights.size(); ++i) {
    c.weights.push_back(weights[i].detached(true));
    c.biases.push_back(biases[i].detached(true));
  }
  c.head = head.detached(true);
  return c;
}

bool EncoderModel::finite() const {
  for (const auto& p : parameters())
    if (!all_finite(p.value())) return false;
  return true;
}

EncoderModel make_encoder(std::size_t input_dim, std::size_t embed_dim,
                          std::size_t num_classes,
                          const std::vector<std::size_t>& hidden,
                          double scale_s, double margin_m, std::uint64_t seed) {
  if (input_dim == 0 || embed_dim == 0 || num_classes == 0)
    throw std::invalid_argument("make_encoder: zero dimension");
  if (scale_s <= 0.0) throw std::invalid_argument("make_encoder: s <= 0");
  if (margin_m < 0.0) throw std::invalid_argument("make_encoder: m < 0");

  EncoderModel m;
  m.input_dim = input_dim;
  m.embed_dim = embed_dim;
  m.num_classes = num_classes;
  m.hidden = hidden;
  m.scale_s = scale_s;
  m.margin_m = margin_m;
  m.seed = seed;

  auto rng = make_rng(seed, kSaltInit);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(embed_dim);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t fan_in = dims[l], fan_out = dims[l + 1];
    std::vector<double> w(fan_in * fan_out);
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : w) x = s * normal(rng);
    m.weights.push_back(
        ad::Tensor::from(std::move(w), fan_in, fan_out, true));
    m.biases.push_back(ad::Tensor::zeros(1, fan_out, true));
  }
  // Head rows start as small Gaussians; only their directions matter since
  // the loss renormalizes them.
  std::vector<double> h(num_classes * embed_dim);
  for (auto& x : h) x = 0.01 * normal(rng);
  m.head = ad::Tensor::from(std::move(h), num_classes, embed_dim, true);
  return m;
}

ad::Tensor forward_raw(const EncoderModel& m, const ad::Tensor& inputs) {
  if (inputs.cols() != m.input_dim)
    throw std::invalid_argument("forward_raw: input dimension mismatch");
  ad::Tensor h = inputs;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    h = ad::add_row_bias(ad::matmul(h, m.weights[l]), m.biases[l]);
    if (l + 1 < m.weights.size()) h = ad::tanh(h);
  }
  return h;
}

ad::Tensor embed(const EncoderModel& m, const ad::Tensor& inputs) {
  return ad::l2_normalize_rows(forward_raw(m, inputs), kNormEps);
}

ad::Tensor cosface_loss(const EncoderModel& m, const ad::Tensor& inputs,
                        const std::vector<std::size_t>& labels) {
  for (std::size_t l : labels)
    if (l >= m.num_classes)
      throw std::out_of_range("cosface_loss: label out of range");
  const ad::Tensor emb = embed(m, inputs);
  const ad::Tensor head_n = ad::l2_normalize_rows(m.head, kNormEps);
  const ad::Tensor cos = ad::cosine_matrix(emb, head_n);
  const ad::Tensor margined = ad::subtract_at(cos, labels, m.margin_m);
  return ad::log_sum_exp_ce(ad::scale(margined, m.scale_s), labels);
}

TrainResult train(const EncoderModel& start, const ad::Tensor& inputs,
                  const std::vector<std::size_t>& labels,
                  const TrainConfig& cfg) {
  if (labels.empty()) throw std::invalid_argument("train: empty training set");
  if (labels.size() != inputs.rows())
    throw std::invalid_argument("train: one label per row required");
  if (cfg.lr < 0.0) throw std::invalid_argument("train: negative lr");
  if (cfg.batch < 2) throw std::invalid_argument("train: batch must be >= 2");

  TrainResult res;
  res.model = start.clone();
  auto params = res.model.parameters();
  SgdOptimizer opt(cfg.momentum, cfg.weight_decay);

  auto rng = make_rng(cfg.seed, kSaltShuffle);
  auto flip_rng = make_rng(cfg.seed, kSaltFlip);
  std::bernoulli_distribution flip_coin(0.5);
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);

  const std::size_t n = labels.size();
  const std::size_t batches_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const std::size_t total_steps = cfg.epochs * batches_per_epoch;
  const auto xv = inputs.value();
  const std::size_t d = inputs.cols();

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b, ++step) {
      const std::size_t lo = b * cfg.batch;
      const std::size_t hi = std::min(lo + cfg.batch, n);
      std::vector<double> bx;
      bx.reserve((hi - lo) * d);
      std::vector<std::size_t> by;
      by.reserve(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) {
        const std::size_t row = order[i];
        bx.insert(bx.end(), xv.begin() + row * d, xv.begin() + (row + 1) * d);
        by.push_back(labels[row]);
      }
      auto bt = ad::Tensor::from(std::move(bx), hi - lo, d);
      if (cfg.augment_flip) {
        std::vector<std::uint8_t> chosen(hi - lo);
        for (auto& c : chosen) c = flip_coin(flip_rng) ? 1 : 0;
        data::flip_rows(bt, chosen);
      }

      opt.zero_grad(params);
      const ad::Tensor loss = cosface_loss(res.model, bt, by);
      const double lv = loss.item();
      if (!std::isfinite(lv))
        throw std::runtime_error(
            "train: non-finite loss at epoch " + std::to_string(epoch) +
            ", batch " + std::to_string(b));
      ad::backward(loss);
      double lr = cfg.lr;
      if (cfg.lr_schedule == LrSchedule::kLinearDecay)
        lr = cfg.lr * (1.0 - static_cast<double>(step) /
                                 static_cast<double>(total_steps));
      opt.step(params, lr);
      epoch_total += lv;
    }
    res.epoch_loss.push_back(epoch_total /
                             static_cast<double>(batches_per_epoch));
  }
  return res;
}

ad::Tensor class_centroids(const ad::Tensor& embeddings,
                           const std::vector<std::size_t>& labels,
                           const std::vector<std::size_t>& class_ids) {
  if (labels.size() != embeddings.rows())
    throw std::invalid_argument("class_centroids: one label per row required");
  const std::size_t d = embeddings.cols();
  const auto ev = embeddings.value();
  std::vector<double> cent(class_ids.size() * d, 0.0);
  for (std::size_t c = 0; c < class_ids.size(); ++c) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != class_ids[c]) continue;
      for (std::size_t p = 0; p < d; ++p) cent[c * d + p] += ev[i * d + p];
      ++count;
    }
    if (count == 0)
      throw std::invalid_argument("class_centroids: class " +
                                  std::to_string(class_ids[c]) +
                                  " has no embeddings");
    double sq = 0.0;
    for (std::size_t p = 0; p < d; ++p) sq += cent[c * d + p] * cent[c * d + p];
    const double inv = 1.0 / std::max(std::sqrt(sq), kNormEps);
    for (std::size_t p = 0; p < d; ++p) cent[c * d + p] *= inv;
  }
  return ad::Tensor::from(std::move(cent), class_ids.size(), d);
}

std::vector<std::size_t> centroid_classify(
    const ad::Tensor& train_embeddings,
    const std::vector<std::size_t>& train_labels,
    const ad::Tensor& test_embeddings) {
  std::vector<std::size_t> ids(train_labels);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  const ad::Tensor centroids =
      class_centroids(train_embeddings, train_labels, ids);

  const std::size_t d = test_embeddings.cols();
  const auto tv = test_embeddings.value();
  const auto cv = centroids.value();
  std::vector<std::size_t> pred(test_embeddings.rows());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double best = -2.0;
    std::size_t best_c = 0;
    for (std::size_t c = 0; c < ids.size(); ++c) {
      double cosv = 0.0;
      for (std::size_t p = 0; p < d; ++p)
        cosv += tv[i * d + p] * cv[c * d + p];
      if (cosv > best) {  // ids sorted ascending, so first win = lowest id
        best = cosv;
        best_c = c;
      }
    }
    pred[i] = ids[best_c];
  }
  return pred;
}

void save_model(const EncoderModel& m, const std::string& path,
                std::uint64_t config_hash) {
  io::BinaryWriter w(path);
  w.bytes(kModelMagic, 4);
  w.u32(kFormatVersion);
  w.u64(config_hash);
  w.u64(m.input_dim);
  w.u64(m.embed_dim);
  w.u64(m.num_classes);
  w.u64(m.hidden.size());
  for (auto h : m.hidden) w.u64(h);
  w.f64(m.scale_s);
  w.f64(m.margin_m);
  w.u64(m.seed);
  for (const auto& p : m.parameters()) {
    w.u64(p.rows());
    w.u64(p.cols());
    w.doubles({p.value().begin(), p.value().end()});
  }
  w.close();
}

EncoderModel load_model(const std::string& path) {
  io::BinaryReader r(path);
  r.expect_magic(kModelMagic, kFormatVersion);
  r.u64();  // config hash
  EncoderModel m;
  m.input_dim = r.u64();
  m.embed_dim = r.u64();
  m.num_classes = r.u64();
  const std::uint64_t n_hidden = r.u64();
  if (n_hidden > 64)
    throw std::runtime_error("corrupt or incompatible model file: " + path);
  m.hidden.resize(n_hidden);
  for (auto& h : m.hidden) h = r.u64();
  m.scale_s = r.f64();
  m.margin_m = r.f64();
  m.seed = r.u64();
  const std::size_t n_layers = m.hidden.size() + 1;
  auto read_tensor = [&r, &path]() {
    const std::size_t rows = r.u64();
    const std::size_t cols = r.u64();
    if (rows > (1ull << 24) || cols > (1ull << 24))
      throw std::runtime_error("corrupt or incompatible model file: " + path);
    return ad::Tensor::from(r.doubles(rows * cols), rows, cols, true);
  };
  for (std::size_t l = 0; l < n_layers; ++l) {
    m.weights.push_back(read_tensor());
    m.biases.push_back(read_tensor());
  }
  m.head = read_tensor();
  return m;
}

std::uint64_t snapshot_config_hash(const std::string& path) {
  io::BinaryReader r(path);
  r.expect_magic(kModelMagic, kFormatVersion);
  return r.u64();
}

}  // namespace disperse::model
