#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "disperse/tensor.hpp"

namespace disperse::model {

/// MLP embedding encoder with a CosFace classification head.
///
/// The trunk is input_dim -> hidden[0] -> ... -> embed_dim with tanh between
/// layers and a linear final layer; embeddings are used L2-normalized. The
/// head stores one weight row per identity and is re-normalized at use time.
/// There is no head bias.
struct EncoderModel {
  std::size_t input_dim = 0;
  std::size_t embed_dim = 0;
  std::size_t num_classes = 0;
  std::vector<std::size_t> hidden;  // widths of the hidden layers

  std::vector<ad::Tensor> weights;  // per layer, fan_in x fan_out
  std::vector<ad::Tensor> biases;   // per layer, 1 x fan_out
  ad::Tensor head;                  // num_classes x embed_dim

  double scale_s = 64.0;
  double margin_m = 0.4;
  std::uint64_t seed = 0;

  /// Parameters in canonical order: W0, b0, W1, b1, ..., head.
  std::vector<ad::Tensor> parameters();
  std::vector<ad::Tensor> parameters() const;
  std::size_t parameter_count() const;

  EncoderModel clone() const;

  /// True when every parameter value is finite.
  bool finite() const;
};

EncoderModel make_encoder(std::size_t input_dim, std::size_t embed_dim,
                          std::size_t num_classes,
                          const std::vector<std::size_t>& hidden,
                          double scale_s, double margin_m, std::uint64_t seed);

/// Forward pass before normalization (n x embed_dim).
ad::Tensor forward_raw(const EncoderModel& m, const ad::Tensor& inputs);

/// L2-normalized embeddings (unit rows).
ad::Tensor embed(const EncoderModel& m, const ad::Tensor& inputs);

/// Mean CosFace loss over the batch: scaled cosines against the normalized
/// head with the additive cosine margin subtracted from each target class.
ad::Tensor cosface_loss(const EncoderModel& m, const ad::Tensor& inputs,
                        const std::vector<std::size_t>& labels);

enum class LrSchedule { kConstant, kLinearDecay };

struct TrainConfig {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch = 128;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  LrSchedule lr_schedule = LrSchedule::kLinearDecay;
  // Coordinate-reversal augmentation (the horizontal-flip analog), applied
  // to each batch row with probability 1/2. Off by default.
  bool augment_flip = false;
};

struct TrainResult {
  EncoderModel model;
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

/// SGD with momentum and weight decay over shuffled batches. Deterministic in
/// cfg.seed. Throws on non-finite loss.
TrainResult train(const EncoderModel& start, const ad::Tensor& inputs,
                  const std::vector<std::size_t>& labels,
                  const TrainConfig& cfg);

/// Nearest-centroid classification; centroids are normalized per-class means
/// of the train embeddings. Ties break toward the lowest class id.
std::vector<std::size_t> centroid_classify(
    const ad::Tensor& train_embeddings,
    const std::vector<std::size_t>& train_labels,
    const ad::Tensor& test_embeddings);

/// Unit-row centroid matrix for the listed class ids (one row per id, in
/// order). Every id must have at least one embedding.
ad::Tensor class_centroids(const ad::Tensor& embeddings,
                           const std::vector<std::size_t>& labels,
                           const std::vector<std::size_t>& class_ids);

// Snapshot container (lossless, byte-stable across reruns).
void save_model(const EncoderModel& m, const std::string& path,
                std::uint64_t config_hash);
EncoderModel load_model(const std::string& path);
std::uint64_t snapshot_config_hash(const std::string& path);

}  // namespace disperse::model
