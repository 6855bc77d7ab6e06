#include "tcaps/tcaps.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <new>
#include <string>

#include "tcaps/error.hpp"
#include "tcaps/training.hpp"

struct tcaps_model {
  tcaps::Network net;
  tcaps::TrainingState state;
};

struct tcaps_index {
  tcaps::GalleryIndex index;
};

struct tcaps_recall {
  tcaps::RecallReport report;
};

namespace {

thread_local std::string g_last_error;

tcaps_status to_status(tcaps::ErrorCode code) {
  switch (code) {
    case tcaps::ErrorCode::invalid_argument: return TCAPS_E_INVALID_ARGUMENT;
    case tcaps::ErrorCode::config: return TCAPS_E_CONFIG;
    case tcaps::ErrorCode::io: return TCAPS_E_IO;
    case tcaps::ErrorCode::format: return TCAPS_E_FORMAT;
    case tcaps::ErrorCode::checksum: return TCAPS_E_CHECKSUM;
    case tcaps::ErrorCode::version: return TCAPS_E_VERSION;
    case tcaps::ErrorCode::numeric: return TCAPS_E_NUMERIC;
    case tcaps::ErrorCode::shape: return TCAPS_E_SHAPE;
    default: return TCAPS_E_INTERNAL;
  }
}

template <typename F>
tcaps_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return TCAPS_OK;
  } catch (const tcaps::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return TCAPS_E_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return TCAPS_E_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) tcaps::fail(tcaps::ErrorCode::invalid_argument, std::string(what) + " must not be null");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

tcaps::Split split_or_fail(const char* token) {
  require(token, "split");
  try {
    return tcaps::parse_split(token);
  } catch (const tcaps::Error& e) {
    tcaps::fail(tcaps::ErrorCode::invalid_argument, e.what());
  }
}

tcaps::ImageBatch load_split(const tcaps::Network& net, const char* manifest_path, tcaps::Split split) {
  require(manifest_path, "manifest path");
  const auto manifest = tcaps::load_manifest(manifest_path);
  const auto records = manifest.split(split);
  if (records.empty()) {
    tcaps::fail(tcaps::ErrorCode::invalid_argument,
                std::string("manifest has no ") + tcaps::split_name(split) + " records");
  }
  const auto& bb = net.config().backbone;
  return tcaps::load_images(manifest, records, bb.input_height, bb.input_width);
}

}  // namespace

extern "C" {

const char* tcaps_last_error(void) { return g_last_error.c_str(); }

const char* tcaps_status_name(tcaps_status status) {
  switch (status) {
    case TCAPS_OK: return "ok";
    case TCAPS_E_INVALID_ARGUMENT: return "invalid_argument";
    case TCAPS_E_CONFIG: return "config";
    case TCAPS_E_IO: return "io";
    case TCAPS_E_FORMAT: return "format";
    case TCAPS_E_CHECKSUM: return "checksum";
    case TCAPS_E_VERSION: return "version";
    case TCAPS_E_NUMERIC: return "numeric";
    case TCAPS_E_SHAPE: return "shape";
    default: return "internal";
  }
}

const char* tcaps_version(void) { return "0.1.0"; }

void tcaps_free_string(char* s) { std::free(s); }

tcaps_status tcaps_config_resolve(const char* name_or_path, char** json_out) {
  return guarded([&] {
    require(name_or_path, "config");
    require(json_out, "json_out");
    *json_out = dup_string(tcaps::network_config_to_json(tcaps::resolve_network_config(name_or_path)));
  });
}

tcaps_status tcaps_builtin_names(char** names_out) {
  return guarded([&] {
    require(names_out, "names_out");
    std::string out;
    for (const auto& n : tcaps::builtin_config_names()) out += n + "\n";
    *names_out = dup_string(out);
  });
}

tcaps_status tcaps_train_config_normalize(const char* json, char** json_out) {
  return guarded([&] {
    require(json_out, "json_out");
    const tcaps::TrainConfig cfg =
        (json && *json) ? tcaps::train_config_from_json(json) : tcaps::TrainConfig{};
    *json_out = dup_string(tcaps::train_config_to_json(cfg));
  });
}

tcaps_status tcaps_write_file(const char* path, const char* data, size_t size) {
  return guarded([&] {
    require(path, "path");
    if (size) require(data, "data");
    tcaps::write_file_atomic(path, std::string(data ? data : "", size));
  });
}

tcaps_status tcaps_synth(size_t items, size_t views_per_item, size_t categories, size_t resolution, uint64_t seed,
                         const char* out_dir, char** manifest_path_out) {
  return guarded([&] {
    require(out_dir, "out_dir");
    tcaps::SynthParams p;
    p.items = items;
    p.views_per_item = views_per_item;
    p.categories = categories;
    p.resolution = resolution;
    p.seed = seed;
    const std::string path = tcaps::generate_synthetic(p, out_dir);
    if (manifest_path_out) *manifest_path_out = dup_string(path);
  });
}

tcaps_status tcaps_model_create(const char* network_config_json, uint64_t seed, tcaps_model** out) {
  return guarded([&] {
    require(network_config_json, "network config");
    require(out, "out");
    const auto cfg = tcaps::network_config_from_json(network_config_json);
    *out = new tcaps_model{tcaps::Network::build(cfg, seed), {}};
  });
}

tcaps_status tcaps_model_load(const char* checkpoint_path, tcaps_model** out) {
  return guarded([&] {
    require(checkpoint_path, "checkpoint path");
    require(out, "out");
    auto loaded = tcaps::load_checkpoint(checkpoint_path);
    *out = new tcaps_model{std::move(loaded.network), std::move(loaded.state)};
  });
}

void tcaps_model_free(tcaps_model* model) { delete model; }

tcaps_status tcaps_model_save(tcaps_model* model, const char* checkpoint_path) {
  return guarded([&] {
    require(model, "model");
    require(checkpoint_path, "checkpoint path");
    tcaps::save_checkpoint(model->net, model->state, checkpoint_path);
  });
}

tcaps_status tcaps_model_param_count(const tcaps_model* model, uint64_t* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = model->net.param_count();
  });
}

tcaps_status tcaps_model_epoch(const tcaps_model* model, uint64_t* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = model->state.epoch;
  });
}

tcaps_status tcaps_model_describe(const tcaps_model* model, char** table_out) {
  return guarded([&] {
    require(model, "model");
    require(table_out, "table_out");
    *table_out = dup_string(tcaps::format_layer_table(model->net));
  });
}

tcaps_status tcaps_model_config_json(const tcaps_model* model, char** json_out) {
  return guarded([&] {
    require(model, "model");
    require(json_out, "json_out");
    *json_out = dup_string(tcaps::network_config_to_json(model->net.config()));
  });
}

tcaps_status tcaps_model_train(tcaps_model* model, const char* manifest_path, const char* train_config_json,
                               tcaps_epoch_callback on_epoch, void* user) {
  return guarded([&] {
    require(model, "model");
    const tcaps::TrainConfig cfg = (train_config_json && *train_config_json)
                                       ? tcaps::train_config_from_json(train_config_json)
                                       : tcaps::TrainConfig{};
    if (model->state.epoch > 0 && cfg.optimizer != model->state.config.optimizer) {
      tcaps::fail(tcaps::ErrorCode::config, "cannot resume a checkpoint with a different optimizer");
    }
    tcaps::Trainer trainer(model->net, load_split(model->net, manifest_path, tcaps::Split::train), cfg);
    if (model->state.epoch > 0) trainer.restore(model->state.optimizer, model->state.epoch);
    try {
      trainer.run([&](const tcaps::EpochReport& r) {
        if (on_epoch) on_epoch(r.epoch, r.mean_loss, r.steps, user);
      });
    } catch (...) {
      model->state = {cfg, trainer.optimizer(), trainer.epoch()};
      throw;
    }
    model->state = {cfg, trainer.optimizer(), trainer.epoch()};
  });
}

tcaps_status tcaps_model_embed(tcaps_model* model, const char* manifest_path, const char* split,
                               const char* out_path, size_t* count_out) {
  return guarded([&] {
    require(model, "model");
    require(out_path, "out_path");
    const auto batch = load_split(model->net, manifest_path, split_or_fail(split));
    const auto records = tcaps::embed_images(model->net, batch);
    tcaps::save_embeddings(records, out_path);
    if (count_out) *count_out = records.size();
  });
}

tcaps_status tcaps_index_load(const char* embeddings_path, tcaps_index** out) {
  return guarded([&] {
    require(embeddings_path, "embeddings path");
    require(out, "out");
    *out = new tcaps_index{tcaps::GalleryIndex::build(tcaps::load_embeddings(embeddings_path))};
  });
}

void tcaps_index_free(tcaps_index* index) { delete index; }

tcaps_status tcaps_index_size(const tcaps_index* index, size_t* size_out, size_t* dim_out) {
  return guarded([&] {
    require(index, "index");
    if (size_out) *size_out = index->index.size();
    if (dim_out) *dim_out = index->index.dim();
  });
}

tcaps_status tcaps_index_query(const tcaps_index* index, const double* vector, size_t dim, size_t k,
                               uint64_t* ids_out, double* distances_out, size_t* count_out) {
  return guarded([&] {
    require(index, "index");
    require(vector, "vector");
    require(ids_out, "ids_out");
    const auto hits = index->index.query({vector, dim}, k);
    for (std::size_t i = 0; i < hits.size(); ++i) {
      ids_out[i] = hits[i].image_id;
      if (distances_out) distances_out[i] = hits[i].distance;
    }
    if (count_out) *count_out = hits.size();
  });
}

tcaps_status tcaps_recall_compute(const char* query_path, const char* gallery_path, const size_t* ks, size_t k_count,
                                  tcaps_recall** out) {
  return guarded([&] {
    require(query_path, "query path");
    require(gallery_path, "gallery path");
    require(out, "out");
    std::vector<std::size_t> k_list = tcaps::default_recall_ks();
    if (k_count) {
      require(ks, "ks");
      k_list.assign(ks, ks + k_count);
    }
    const auto index = tcaps::GalleryIndex::build(tcaps::load_embeddings(gallery_path));
    std::error_code ec;
    const bool same_file = std::filesystem::equivalent(query_path, gallery_path, ec);
    *out = new tcaps_recall{tcaps::recall_at_k(index, tcaps::load_embeddings(query_path), k_list, !same_file)};
  });
}

void tcaps_recall_free(tcaps_recall* report) { delete report; }

size_t tcaps_recall_k_count(const tcaps_recall* report) { return report ? report->report.ks.size() : 0; }

tcaps_status tcaps_recall_at(const tcaps_recall* report, size_t i, size_t* k_out, double* recall_out) {
  return guarded([&] {
    require(report, "report");
    if (i >= report->report.ks.size()) {
      tcaps::fail(tcaps::ErrorCode::invalid_argument, "recall index " + std::to_string(i) + " out of range");
    }
    if (k_out) *k_out = report->report.ks[i];
    if (recall_out) *recall_out = report->report.recall[i];
  });
}

tcaps_status tcaps_recall_json(const tcaps_recall* report, char** json_out) {
  return guarded([&] {
    require(report, "report");
    require(json_out, "json_out");
    *json_out = dup_string(tcaps::recall_report_to_json(report->report));
  });
}

tcaps_status tcaps_recall_table(const tcaps_recall* report, char** table_out) {
  return guarded([&] {
    require(report, "report");
    require(table_out, "table_out");
    *table_out = dup_string(tcaps::format_recall_table(report->report));
  });
}

}  // extern "C"
