// tcaps: synth / train / embed / eval / inspect front end over the C API.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tcaps/tcaps.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Failure {
  tcaps_status status;
  std::string message;
};

void check(tcaps_status st) {
  if (st != TCAPS_OK) throw Failure{st, tcaps_last_error()};
}

[[noreturn]] void usage_error(const std::string& msg) { throw Failure{TCAPS_E_INVALID_ARGUMENT, msg}; }

std::string take(char* s) {
  std::string out = s ? s : "";
  tcaps_free_string(s);
  return out;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{TCAPS_E_IO, "cannot open '" + path + "'"};
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json_file(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Failure{TCAPS_E_CONFIG, "'" + path + "' is not valid JSON: " + e.what()};
  }
}

std::string fmt_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

class ModelHandle {
 public:
  ModelHandle() = default;
  ModelHandle(const ModelHandle&) = delete;
  ModelHandle& operator=(const ModelHandle&) = delete;
  ~ModelHandle() { tcaps_model_free(p_); }
  tcaps_model** out() { return &p_; }
  tcaps_model* get() const { return p_; }

 private:
  tcaps_model* p_ = nullptr;
};

// Files are staged in memory and published only after the command's work has
// succeeded, so a failure leaves no partial outputs.
class Outputs {
 public:
  Outputs(std::string command, std::string dir) : command_(std::move(command)), dir_(std::move(dir)) {}

  void add(const std::string& name, std::string contents) { files_.emplace_back(name, std::move(contents)); }
  // Files written by the C API directly; recorded, not rewritten.
  void note(const std::string& name) { noted_.push_back(name); }
  std::string path(const std::string& name) const { return (fs::path(dir_) / name).string(); }
  void ensure_dir() const {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Failure{TCAPS_E_IO, "cannot create '" + dir_ + "': " + ec.message()};
  }

  void publish() {
    ensure_dir();
    json listing = {{"command", command_}, {"files", json::array()}};
    for (const auto& n : noted_) listing["files"].push_back(n);
    for (const auto& [name, data] : files_) {
      check(tcaps_write_file(path(name).c_str(), data.data(), data.size()));
      listing["files"].push_back(name);
    }
    listing["files"].push_back("outputs.json");
    const std::string text = listing.dump(2) + "\n";
    check(tcaps_write_file(path("outputs.json").c_str(), text.data(), text.size()));
  }

 private:
  std::string command_;
  std::string dir_;
  std::vector<std::pair<std::string, std::string>> files_;
  std::vector<std::string> noted_;
};

json load_run_config(const std::string& path, const std::string& command) {
  json rc = parse_json_file(path);
  if (!rc.is_object() || rc.value("command", "") != command) {
    throw Failure{TCAPS_E_CONFIG, "'" + path + "' is not a run config for '" + command + "'"};
  }
  return rc;
}

std::string resolve_network(const std::string& arch, const std::string& config_path) {
  if (!arch.empty() && !config_path.empty()) usage_error("--arch and --config are mutually exclusive");
  char* out = nullptr;
  check(tcaps_config_resolve(!arch.empty() ? arch.c_str() : config_path.c_str(), &out));
  return take(out);
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::size_t items = 20, views = 4, categories = 4, resolution = 32;
  std::uint64_t seed = 7;
  std::string out, run_config;
};

void cmd_synth(const SynthArgs& a, const CLI::App& sub) {
  json rc = {{"command", "synth"}, {"items", a.items}, {"views_per_item", a.views}, {"categories", a.categories},
             {"resolution", a.resolution}, {"seed", a.seed}};
  json saved = json::object();
  if (!a.run_config.empty()) {
    saved = load_run_config(a.run_config, "synth");
    for (const char* key : {"items", "views_per_item", "categories", "resolution", "seed"}) {
      const std::string flag = std::string("--") + (std::string(key) == "views_per_item" ? "views" : key);
      if (sub.count(flag) == 0 && saved.contains(key)) rc[key] = saved[key];
    }
  }
  const std::string out_dir = !a.out.empty() ? a.out : saved.value("out", "");
  if (out_dir.empty()) usage_error("--out is required");
  rc["out"] = out_dir;

  std::error_code ec;
  if (fs::exists(out_dir) && !(fs::is_directory(out_dir) && fs::is_empty(out_dir, ec))) {
    throw Failure{TCAPS_E_IO, "output directory '" + out_dir + "' exists and is not empty"};
  }
  const fs::path target(out_dir);
  const fs::path staging = target.string() + ".partial-" + std::to_string(::getpid());
  fs::remove_all(staging, ec);
  try {
    char* manifest = nullptr;
    check(tcaps_synth(rc["items"].get<std::size_t>(), rc["views_per_item"].get<std::size_t>(),
                      rc["categories"].get<std::size_t>(), rc["resolution"].get<std::size_t>(),
                      rc["seed"].get<std::uint64_t>(), staging.string().c_str(), &manifest));
    tcaps_free_string(manifest);
    Outputs out("synth", staging.string());
    out.note("manifest.tsv");
    out.note("images/");
    out.add("run_config.json", rc.dump(2) + "\n");
    out.publish();
    if (fs::exists(target)) fs::remove(target);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::rename(staging, target);
  } catch (...) {
    fs::remove_all(staging, ec);
    throw;
  }
  std::printf("wrote %s\n", (target / "manifest.tsv").string().c_str());
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string arch, config, train_config, data, out, run_config;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> margin, lr;
  std::optional<std::uint64_t> seed;
};

void on_epoch(uint64_t epoch, double loss, size_t steps, void* user) {
  auto* log = static_cast<std::string*>(user);
  *log += std::to_string(epoch) + "\t" + fmt_double(loss) + "\t" + std::to_string(steps) + "\n";
  std::printf("epoch %llu  loss %.6f  steps %zu\n", static_cast<unsigned long long>(epoch), loss, steps);
  std::fflush(stdout);
}

void cmd_train(const TrainArgs& a) {
  json rc = {{"command", "train"}};
  json saved = json::object();
  if (!a.run_config.empty()) saved = load_run_config(a.run_config, "train");

  if (!a.arch.empty() || !a.config.empty()) {
    rc["network"] = json::parse(resolve_network(a.arch, a.config));
  } else if (saved.contains("network")) {
    rc["network"] = saved["network"];
  } else {
    usage_error("one of --arch or --config is required");
  }

  json train = saved.value("train", json::object());
  if (!a.train_config.empty()) train = parse_json_file(a.train_config);
  if (a.epochs) train["epochs"] = *a.epochs;
  if (a.batch_size) train["batch_size"] = *a.batch_size;
  if (a.margin) train["margin"] = *a.margin;
  if (a.lr) train["learning_rate"] = *a.lr;
  if (a.seed) train["seed"] = *a.seed;
  char* normalized = nullptr;
  check(tcaps_train_config_normalize(train.dump().c_str(), &normalized));
  rc["train"] = json::parse(take(normalized));

  rc["data"] = !a.data.empty() ? a.data : saved.value("data", "");
  if (rc["data"].get<std::string>().empty()) usage_error("--data is required");
  rc["out"] = !a.out.empty() ? a.out : saved.value("out", "");
  if (rc["out"].get<std::string>().empty()) usage_error("--out is required");

  const std::uint64_t seed = rc["train"]["seed"].get<std::uint64_t>();
  ModelHandle model;
  check(tcaps_model_create(rc["network"].dump().c_str(), seed, model.out()));
  std::string log = "epoch\tmean_loss\tsteps\n";
  check(tcaps_model_train(model.get(), rc["data"].get<std::string>().c_str(), rc["train"].dump().c_str(), on_epoch,
                          &log));

  Outputs out("train", rc["out"].get<std::string>());
  out.ensure_dir();
  check(tcaps_model_save(model.get(), out.path("checkpoint.tcaps").c_str()));
  out.note("checkpoint.tcaps");
  out.add("loss_log.tsv", log);
  out.add("run_config.json", rc.dump(2) + "\n");
  out.publish();
  std::printf("wrote %s\n", out.path("checkpoint.tcaps").c_str());
}

// ---------------------------------------------------------------------------

struct EmbedArgs {
  std::string checkpoint, data, out, run_config;
  std::vector<std::string> splits;
};

void cmd_embed(const EmbedArgs& a) {
  json saved = json::object();
  if (!a.run_config.empty()) saved = load_run_config(a.run_config, "embed");
  json rc = {{"command", "embed"},
             {"checkpoint", !a.checkpoint.empty() ? a.checkpoint : saved.value("checkpoint", "")},
             {"data", !a.data.empty() ? a.data : saved.value("data", "")}};
  rc["splits"] = !a.splits.empty() ? json(a.splits)
                                   : saved.value("splits", json(std::vector<std::string>{"query", "gallery"}));
  if (rc["checkpoint"].get<std::string>().empty()) usage_error("--checkpoint is required");
  if (rc["data"].get<std::string>().empty()) usage_error("--data is required");
  rc["out"] = !a.out.empty() ? a.out : saved.value("out", "");
  if (rc["out"].get<std::string>().empty()) usage_error("--out is required");

  ModelHandle model;
  check(tcaps_model_load(rc["checkpoint"].get<std::string>().c_str(), model.out()));
  Outputs out("embed", rc["out"].get<std::string>());
  out.ensure_dir();
  std::vector<std::string> staged;
  try {
    for (const auto& split : rc["splits"]) {
      const std::string name = split.get<std::string>() + ".emb";
      std::size_t n = 0;
      staged.push_back(out.path(name) + ".partial");
      check(tcaps_model_embed(model.get(), rc["data"].get<std::string>().c_str(), split.get<std::string>().c_str(),
                              staged.back().c_str(), &n));
      out.note(name);
      std::printf("%s: %zu embeddings\n", name.c_str(), n);
    }
  } catch (...) {
    std::error_code ec;
    for (const auto& p : staged) fs::remove(p, ec);
    throw;
  }
  for (const auto& p : staged) fs::rename(p, p.substr(0, p.size() - 8));
  out.add("run_config.json", rc.dump(2) + "\n");
  out.publish();
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string query, gallery, out, run_config;
  std::vector<std::size_t> ks;
};

void cmd_eval(const EvalArgs& a) {
  json saved = json::object();
  if (!a.run_config.empty()) saved = load_run_config(a.run_config, "eval");
  json rc = {{"command", "eval"},
             {"query", !a.query.empty() ? a.query : saved.value("query", "")},
             {"gallery", !a.gallery.empty() ? a.gallery : saved.value("gallery", "")}};
  rc["ks"] = !a.ks.empty() ? json(a.ks) : saved.value("ks", json(std::vector<std::size_t>{1, 10, 20, 30, 40, 50}));
  if (rc["query"].get<std::string>().empty() || rc["gallery"].get<std::string>().empty()) {
    usage_error("--query and --gallery are required");
  }
  rc["out"] = !a.out.empty() ? a.out : saved.value("out", "");
  if (rc["out"].get<std::string>().empty()) usage_error("--out is required");

  const auto ks = rc["ks"].get<std::vector<std::size_t>>();
  tcaps_recall* report = nullptr;
  check(tcaps_recall_compute(rc["query"].get<std::string>().c_str(), rc["gallery"].get<std::string>().c_str(),
                             ks.data(), ks.size(), &report));
  std::string report_json, table;
  char* s = nullptr;
  tcaps_status st = tcaps_recall_json(report, &s);
  if (st == TCAPS_OK) {
    report_json = take(s);
    st = tcaps_recall_table(report, &s);
    if (st == TCAPS_OK) table = take(s);
  }
  tcaps_recall_free(report);
  check(st);

  Outputs out("eval", rc["out"].get<std::string>());
  out.add("recall.json", report_json + "\n");
  out.add("run_config.json", rc.dump(2) + "\n");
  out.publish();
  std::fputs(table.c_str(), stdout);
}

// ---------------------------------------------------------------------------

struct InspectArgs {
  std::string arch, config, checkpoint;
  bool json_out = false;
};

void cmd_inspect(const InspectArgs& a) {
  ModelHandle model;
  if (!a.checkpoint.empty()) {
    if (!a.arch.empty() || !a.config.empty()) usage_error("--checkpoint excludes --arch and --config");
    check(tcaps_model_load(a.checkpoint.c_str(), model.out()));
  } else {
    if (a.arch.empty() && a.config.empty()) usage_error("one of --arch, --config or --checkpoint is required");
    check(tcaps_model_create(resolve_network(a.arch, a.config).c_str(), 0, model.out()));
  }
  std::uint64_t params = 0;
  check(tcaps_model_param_count(model.get(), &params));
  char* s = nullptr;
  if (a.json_out) {
    check(tcaps_model_config_json(model.get(), &s));
    const json j = {{"config", json::parse(take(s))}, {"parameters", params}};
    std::printf("%s\n", j.dump(2).c_str());
    return;
  }
  check(tcaps_model_describe(model.get(), &s));
  std::fputs(take(s).c_str(), stdout);
}

std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Triplet capsule network retrieval toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", tcaps_version());

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate the synthetic multi-view dataset");
  s->add_option("--items", synth.items, "Number of items")->capture_default_str();
  s->add_option("--views", synth.views, "Views per item")->capture_default_str();
  s->add_option("--categories", synth.categories, "Number of categories")->capture_default_str();
  s->add_option("--resolution", synth.resolution, "Image side in pixels")->capture_default_str();
  s->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  s->add_option("--out", synth.out, "Output directory (must be new or empty)");
  s->add_option("--run-config", synth.run_config, "Replay a saved run_config.json");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a network with the triplet objective");
  t->add_option("--arch", train.arch, "Builtin architecture")
      ->check(CLI::IsMember({"sc-tiny", "rc-tiny", "sc-full", "rc-full"}));
  t->add_option("--config", train.config, "Network config JSON");
  t->add_option("--train-config", train.train_config, "Training config JSON");
  t->add_option("--data", train.data, "Dataset manifest");
  t->add_option("--epochs", train.epochs, "Epoch count");
  t->add_option("--margin", train.margin, "Triplet margin");
  t->add_option("--lr", train.lr, "Learning rate");
  t->add_option("--batch-size", train.batch_size, "Triplets per step");
  t->add_option("--seed", train.seed, "Seed for init and batch order");
  t->add_option("--out", train.out, "Output directory");
  t->add_option("--run-config", train.run_config, "Replay a saved run_config.json");

  EmbedArgs embed;
  auto* e = app.add_subcommand("embed", "Write argmax-masked embeddings of dataset splits");
  e->add_option("--checkpoint", embed.checkpoint, "Trained checkpoint");
  e->add_option("--data", embed.data, "Dataset manifest");
  e->add_option("--split", embed.splits, "Split to embed (repeatable; default query and gallery)")
      ->check(CLI::IsMember({"train", "query", "gallery"}));
  e->add_option("--out", embed.out, "Output directory");
  e->add_option("--run-config", embed.run_config, "Replay a saved run_config.json");

  EvalArgs eval;
  auto* v = app.add_subcommand("eval", "Recall@K of query embeddings against a gallery");
  v->add_option("--query", eval.query, "Query embeddings file");
  v->add_option("--gallery", eval.gallery, "Gallery embeddings file");
  v->add_option("--ks", eval.ks, "Comma-separated K values (default 1,10,20,30,40,50)")->delimiter(',');
  v->add_option("--out", eval.out, "Output directory");
  v->add_option("--run-config", eval.run_config, "Replay a saved run_config.json");

  InspectArgs inspect;
  auto* i = app.add_subcommand("inspect", "Print the layer table and parameter count");
  i->add_option("--arch", inspect.arch, "Builtin architecture")
      ->check(CLI::IsMember({"sc-tiny", "rc-tiny", "sc-full", "rc-full"}));
  i->add_option("--config", inspect.config, "Network config JSON");
  i->add_option("--checkpoint", inspect.checkpoint, "Inspect a checkpoint instead");
  i->add_flag("--json", inspect.json_out, "Emit config and parameter count as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::fprintf(stderr, "error: usage: %s\n", one_line(ex.what()).c_str());
    return 2;
  }

  try {
    if (*s) cmd_synth(synth, *s);
    if (*t) cmd_train(train);
    if (*e) cmd_embed(embed);
    if (*v) cmd_eval(eval);
    if (*i) cmd_inspect(inspect);
  } catch (const Failure& f) {
    std::fprintf(stderr, "error: %s: %s\n", tcaps_status_name(f.status), one_line(f.message).c_str());
    return static_cast<int>(f.status);
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: internal: %s\n", one_line(ex.what()).c_str());
    return static_cast<int>(TCAPS_E_INTERNAL);
  }
  return 0;
}
