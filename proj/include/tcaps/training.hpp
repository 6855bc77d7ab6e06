#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tcaps/backbones.hpp"
#include "tcaps/data.hpp"
#include "tcaps/retrieval.hpp"
#include "tcaps/tensor.hpp"

namespace tcaps {

// mean_b max(0, |l_b - l+_b| - |l_b - l-_b| + margin) over rows of [B, E] inputs.
Tensor triplet_loss(const Tensor& anchor, const Tensor& positive, const Tensor& negative, Real margin);

// Index of the candidate closest to `anchor` among those whose category
// differs from anchor_category; ties resolve to the smaller index.
// candidates is row-major [count, anchor.size()].
std::size_t mine_hard_negative(std::span<const Real> anchor, std::span<const Real> candidates,
                               std::span<const std::uint64_t> candidate_categories,
                               std::uint64_t anchor_category);

// Every other record sharing the anchor's item id, ascending image id.
std::vector<std::uint64_t> enumerate_positives(std::uint64_t anchor_id, const std::vector<ManifestRecord>& records);

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  double margin = 0.2;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;  // triplets per step
  std::size_t epochs = 30;
  std::uint64_t seed = 7;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double sgd_momentum = 0.0;
  // Steps between refreshes of the mining embedding cache; 0 = once per epoch.
  std::size_t refresh_interval = 0;

  bool operator==(const TrainConfig&) const = default;
};

std::string train_config_to_json(const TrainConfig& cfg, int indent = 2);
TrainConfig train_config_from_json(std::string_view text);
void validate(const TrainConfig& cfg);

struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<std::vector<Real>> first_moment;   // Adam m, or SGD velocity
  std::vector<std::vector<Real>> second_moment;  // Adam v

  bool operator==(const OptimizerState&) const = default;
};

// One update of every parameter from its accumulated grad.
void optimizer_step(const std::vector<NamedTensor>& params, OptimizerState& state, const TrainConfig& cfg);

struct Triplet {
  std::size_t anchor = 0;  // row indices into the training ImageBatch
  std::size_t positive = 0;
  std::size_t negative = 0;
};

// Eval-mode, argmax-masked embeddings of every image in the batch.
std::vector<EmbeddingRecord> embed_images(Network& net, const ImageBatch& images, std::size_t chunk = 32);

struct EpochReport {
  std::uint64_t epoch = 0;  // 1-based
  double mean_loss = 0;
  std::size_t steps = 0;
};

class Trainer {
 public:
  // `train_images` must come from the train split; at least two categories
  // and one item with two or more views are required.
  Trainer(Network& net, ImageBatch train_images, TrainConfig cfg);

  EpochReport run_epoch();
  // Runs the remaining epochs up to cfg.epochs.
  std::vector<EpochReport> run(const std::function<void(const EpochReport&)>& on_epoch = {});

  // Loss of one (anchor, positive, negative) batch in train mode, with grads.
  Tensor batch_loss(std::span<const Triplet> batch);

  const std::vector<std::pair<std::size_t, std::size_t>>& pairs() const { return pairs_; }
  const TrainConfig& config() const { return cfg_; }
  OptimizerState& optimizer() { return optimizer_; }
  std::uint64_t epoch() const { return epoch_; }
  void restore(const OptimizerState& state, std::uint64_t epoch);

 private:
  void refresh_cache();
  Tensor gather(std::span<const std::size_t> rows) const;

  Network& net_;
  ImageBatch data_;
  TrainConfig cfg_;
  OptimizerState optimizer_;
  std::uint64_t epoch_ = 0;
  std::uint64_t steps_since_refresh_ = 0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;  // (anchor, positive) rows
  std::vector<Real> cache_;                                  // [N, embed_dim]
  std::size_t cache_dim_ = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainingState {
  TrainConfig config;
  OptimizerState optimizer;
  std::uint64_t epoch = 0;
};

struct LoadedCheckpoint {
  Network network;
  TrainingState state;
};

std::uint64_t config_digest(const NetworkConfig& cfg);

void save_checkpoint(Network& net, const TrainingState& state, const std::string& path);
std::string serialize_checkpoint(Network& net, const TrainingState& state);
LoadedCheckpoint load_checkpoint(const std::string& path);
LoadedCheckpoint deserialize_checkpoint(const std::string& bytes);
// Fails with a field-by-field diff when the stored config differs.
LoadedCheckpoint load_checkpoint(const std::string& path, const NetworkConfig& expected);

// Scalars stored in the parameter section of a checkpoint.
std::size_t checkpoint_param_scalars(const std::string& bytes);

}  // namespace tcaps
