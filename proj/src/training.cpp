#include "tcaps/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <json.hpp>

#include "tcaps/capsules.hpp"
#include "tcaps/error.hpp"
#include "tcaps/rng.hpp"

namespace tcaps {

Tensor triplet_loss(const Tensor& anchor, const Tensor& positive, const Tensor& negative, Real margin) {
  if (!(margin > 0)) fail(ErrorCode::invalid_argument, "triplet_loss: margin must be positive");
  if (anchor.shape() != positive.shape() || anchor.shape() != negative.shape()) {
    fail(ErrorCode::shape, "triplet_loss: embeddings differ in shape: " + shape_string(anchor.shape()) + ", " +
                               shape_string(positive.shape()) + ", " + shape_string(negative.shape()));
  }
  Tensor gap = sub(row_distance(anchor, positive), row_distance(anchor, negative));
  return mean(relu(add_scalar(gap, margin)));
}

std::size_t mine_hard_negative(std::span<const Real> anchor, std::span<const Real> candidates,
                               std::span<const std::uint64_t> candidate_categories, std::uint64_t anchor_category) {
  const std::size_t dim = anchor.size();
  if (dim == 0 || candidates.size() != candidate_categories.size() * dim) {
    fail(ErrorCode::shape, "mine_hard_negative: " + std::to_string(candidates.size()) +
                               " candidate values do not form rows of length " + std::to_string(dim) + " for " +
                               std::to_string(candidate_categories.size()) + " categories");
  }
  std::size_t best = candidate_categories.size();
  Real best_d = 0;
  for (std::size_t i = 0; i < candidate_categories.size(); ++i) {
    if (candidate_categories[i] == anchor_category) continue;
    Real acc = 0;
    for (std::size_t k = 0; k < dim; ++k) {
      const Real d = anchor[k] - candidates[i * dim + k];
      acc += d * d;
    }
    if (best == candidate_categories.size() || acc < best_d) {
      best = i;
      best_d = acc;
    }
  }
  if (best == candidate_categories.size()) {
    fail(ErrorCode::invalid_argument,
         "mine_hard_negative: no candidate outside category " + std::to_string(anchor_category) +
             "; the dataset must contain at least 2 categories");
  }
  return best;
}

std::vector<std::uint64_t> enumerate_positives(std::uint64_t anchor_id, const std::vector<ManifestRecord>& records) {
  const ManifestRecord* anchor = nullptr;
  for (const auto& r : records) {
    if (r.image_id == anchor_id) anchor = &r;
  }
  if (!anchor) fail(ErrorCode::invalid_argument, "enumerate_positives: unknown image " + std::to_string(anchor_id));
  std::vector<std::uint64_t> out;
  for (const auto& r : records) {
    if (r.item_id == anchor->item_id && r.image_id != anchor_id) out.push_back(r.image_id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------

void validate(const TrainConfig& cfg) {
  auto bad = [](const std::string& m) { fail(ErrorCode::config, "train config: " + m); };
  if (!(cfg.margin > 0)) bad("margin must be positive");
  if (!(cfg.learning_rate >= 0) || !std::isfinite(cfg.learning_rate)) bad("learning_rate must be >= 0");
  if (cfg.batch_size == 0) bad("batch_size must be positive");
  if (!(cfg.beta1 >= 0 && cfg.beta1 < 1) || !(cfg.beta2 >= 0 && cfg.beta2 < 1)) bad("betas must lie in [0,1)");
  if (!(cfg.adam_eps > 0)) bad("adam_eps must be positive");
  if (!(cfg.sgd_momentum >= 0 && cfg.sgd_momentum < 1)) bad("sgd_momentum must lie in [0,1)");
}

std::string train_config_to_json(const TrainConfig& cfg, int indent) {
  nlohmann::json j = {{"margin", cfg.margin},
                      {"learning_rate", cfg.learning_rate},
                      {"batch_size", cfg.batch_size},
                      {"epochs", cfg.epochs},
                      {"seed", cfg.seed},
                      {"optimizer", cfg.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
                      {"beta1", cfg.beta1},
                      {"beta2", cfg.beta2},
                      {"adam_eps", cfg.adam_eps},
                      {"sgd_momentum", cfg.sgd_momentum},
                      {"refresh_interval", cfg.refresh_interval}};
  return j.dump(indent);
}

TrainConfig train_config_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config, std::string("train config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::config, "train config: expected a JSON object");
  TrainConfig cfg;
  static const std::set<std::string> known = {"margin", "beta1", "beta2", "adam_eps", "sgd_momentum", "learning_rate",
                                              "batch_size", "epochs", "seed", "optimizer", "refresh_interval"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) fail(ErrorCode::config, "train config: unknown key '" + it.key() + "'");
  }
  try {
    auto real = [&](const char* k, double& v) {
      if (j.contains(k)) v = j.at(k).get<double>();
    };
    auto count = [&](const char* k, auto& v) {
      if (!j.contains(k)) return;
      if (!j.at(k).is_number_unsigned()) fail(ErrorCode::config, std::string("train config: ") + k + " must be a non-negative integer");
      v = j.at(k).get<std::remove_reference_t<decltype(v)>>();
    };
    real("margin", cfg.margin);
    real("learning_rate", cfg.learning_rate);
    real("beta1", cfg.beta1);
    real("beta2", cfg.beta2);
    real("adam_eps", cfg.adam_eps);
    real("sgd_momentum", cfg.sgd_momentum);
    count("batch_size", cfg.batch_size);
    count("epochs", cfg.epochs);
    count("seed", cfg.seed);
    count("refresh_interval", cfg.refresh_interval);
    if (j.contains("optimizer")) {
      const auto name = j.at("optimizer").get<std::string>();
      if (name == "adam") {
        cfg.optimizer = OptimizerKind::adam;
      } else if (name == "sgd") {
        cfg.optimizer = OptimizerKind::sgd;
      } else {
        fail(ErrorCode::config, "train config: optimizer must be 'adam' or 'sgd', got '" + name + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config, std::string("train config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

void optimizer_step(const std::vector<NamedTensor>& params, OptimizerState& state, const TrainConfig& cfg) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.tensor.numel(), Real(0));
      if (cfg.optimizer == OptimizerKind::adam) state.second_moment.emplace_back(p.tensor.numel(), Real(0));
    }
  }
  if (state.first_moment.size() != params.size()) {
    fail(ErrorCode::internal, "optimizer state tracks " + std::to_string(state.first_moment.size()) +
                                  " tensors, network has " + std::to_string(params.size()));
  }
  ++state.step;
  const Real lr = Real(cfg.learning_rate);
  const Real b1 = Real(cfg.beta1), b2 = Real(cfg.beta2);
  const Real c1 = 1 - std::pow(b1, Real(state.step));
  const Real c2 = 1 - std::pow(b2, Real(state.step));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor t = params[pi].tensor;
    if (!t.has_grad()) continue;
    const auto g = t.grad();
    auto w = t.mutable_values();
    auto& m = state.first_moment[pi];
    if (cfg.optimizer == OptimizerKind::adam) {
      auto& v = state.second_moment[pi];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (1 - b1) * g[i];
        v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
        w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + Real(cfg.adam_eps));
      }
    } else {
      const Real mu = Real(cfg.sgd_momentum);
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = mu * m[i] + g[i];
        w[i] -= lr * m[i];
      }
    }
  }
}

std::vector<EmbeddingRecord> embed_images(Network& net, const ImageBatch& images, std::size_t chunk) {
  NoGradGuard no_grad;
  const std::size_t n = images.images.dim(0);
  const std::size_t row = images.images.numel() / n;
  std::vector<EmbeddingRecord> out;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    Shape shape = images.images.shape();
    shape[0] = end - start;
    const auto vals = images.images.values();
    Tensor part = Tensor::from_values(shape, std::vector<Real>(vals.begin() + start * row, vals.begin() + end * row));
    const Tensor emb = embed_with_argmax(net.forward(part, Mode::eval));
    const std::size_t dim = emb.dim(1);
    for (std::size_t i = 0; i < end - start; ++i) {
      EmbeddingRecord r;
      r.image_id = images.image_ids[start + i];
      r.item_id = images.item_ids[start + i];
      r.category_id = images.category_ids[start + i];
      r.vector.assign(emb.values().begin() + i * dim, emb.values().begin() + (i + 1) * dim);
      out.push_back(std::move(r));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(Network& net, ImageBatch train_images, TrainConfig cfg)
    : net_(net), data_(std::move(train_images)), cfg_(std::move(cfg)) {
  validate(cfg_);
  const std::size_t n = data_.image_ids.size();
  std::set<std::uint64_t> categories(data_.category_ids.begin(), data_.category_ids.end());
  if (categories.size() < 2) fail(ErrorCode::invalid_argument, "train: dataset must contain at least 2 categories");
  for (auto c : categories) {
    if (c >= net_.config().num_classes) {
      fail(ErrorCode::config, "train: category " + std::to_string(c) + " outside the network's " +
                                  std::to_string(net_.config().num_classes) + " class capsules");
    }
  }
  std::map<std::uint64_t, std::size_t> row_of;
  for (std::size_t i = 0; i < n; ++i) row_of[data_.image_ids[i]] = i;
  std::vector<ManifestRecord> records(n);
  for (std::size_t i = 0; i < n; ++i) {
    records[i].image_id = data_.image_ids[i];
    records[i].item_id = data_.item_ids[i];
    records[i].category_id = data_.category_ids[i];
  }
  for (std::size_t a = 0; a < n; ++a) {
    for (auto pid : enumerate_positives(data_.image_ids[a], records)) pairs_.push_back({a, row_of.at(pid)});
  }
  if (pairs_.empty()) fail(ErrorCode::invalid_argument, "train: no item has two or more training views");
}

void Trainer::restore(const OptimizerState& state, std::uint64_t epoch) {
  optimizer_ = state;
  epoch_ = epoch;
}

Tensor Trainer::gather(std::span<const std::size_t> rows) const {
  Shape shape = data_.images.shape();
  const std::size_t row = data_.images.numel() / shape[0];
  shape[0] = rows.size();
  const auto vals = data_.images.values();
  std::vector<Real> out;
  out.reserve(rows.size() * row);
  for (auto r : rows) out.insert(out.end(), vals.begin() + r * row, vals.begin() + (r + 1) * row);
  return Tensor::from_values(shape, std::move(out));
}

void Trainer::refresh_cache() {
  const auto emb = embed_images(net_, data_);
  cache_dim_ = emb.front().vector.size();
  cache_.clear();
  for (const auto& e : emb) cache_.insert(cache_.end(), e.vector.begin(), e.vector.end());
  steps_since_refresh_ = 0;
}

Tensor Trainer::batch_loss(std::span<const Triplet> batch) {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> labels;
  for (int part = 0; part < 3; ++part) {
    for (const auto& t : batch) {
      const std::size_t r = part == 0 ? t.anchor : part == 1 ? t.positive : t.negative;
      rows.push_back(r);
      labels.push_back(static_cast<std::size_t>(data_.category_ids[r]));
    }
  }
  const std::size_t b = batch.size();
  const Tensor emb = embed_with_labels(net_.forward(gather(rows), Mode::train), labels);
  return triplet_loss(slice_rows(emb, 0, b), slice_rows(emb, b, 2 * b), slice_rows(emb, 2 * b, 3 * b),
                      Real(cfg_.margin));
}

EpochReport Trainer::run_epoch() {
  ++epoch_;
  std::vector<std::pair<std::size_t, std::size_t>> order = pairs_;
  Rng rng(cfg_.seed, 0x5eed0000ULL + epoch_);
  rng.shuffle(order.begin(), order.end());
  EpochReport rep;
  rep.epoch = epoch_;
  double total = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
    const std::uint64_t step = optimizer_.step + 1;
    try {
      const bool epoch_refresh = start == 0 && (cfg_.refresh_interval == 0 || cache_.empty());
      if (epoch_refresh || (cfg_.refresh_interval > 0 && steps_since_refresh_ >= cfg_.refresh_interval))
        refresh_cache();
      std::vector<Triplet> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg_.batch_size); ++i) {
        const auto [a, p] = order[i];
        const std::span<const Real> anchor(cache_.data() + a * cache_dim_, cache_dim_);
        const std::size_t neg = mine_hard_negative(anchor, cache_, data_.category_ids, data_.category_ids[a]);
        batch.push_back({a, p, neg});
      }
      Tensor loss = batch_loss(batch);
      if (!std::isfinite(loss.item())) fail(ErrorCode::numeric, "loss is not finite");
      backward(loss);
      optimizer_step(net_.parameters(), optimizer_, cfg_);
      net_.zero_grad();
      total += loss.item();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::numeric) throw;
      fail(ErrorCode::numeric, "training aborted at step " + std::to_string(step) + " (epoch " +
                                   std::to_string(epoch_) + "): " + e.what());
    }
    ++rep.steps;
    ++steps_since_refresh_;
  }
  rep.mean_loss = total / double(rep.steps);
  return rep;
}

std::vector<EpochReport> Trainer::run(const std::function<void(const EpochReport&)>& on_epoch) {
  std::vector<EpochReport> out;
  while (epoch_ < cfg_.epochs) {
    out.push_back(run_epoch());
    if (on_epoch) on_epoch(out.back());
  }
  return out;
}

}  // namespace tcaps
