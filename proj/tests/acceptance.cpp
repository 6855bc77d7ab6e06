// Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Tolerances below are fixed; do not loosen them.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "cli_support.hpp"
#include "instances.hpp"
#include "op_cases.hpp"
#include "oracles.hpp"
#include "support.hpp"
#include "tcaps/backbones.hpp"
#include "tcaps/capsules.hpp"
#include "tcaps/error.hpp"
#include "tcaps/retrieval.hpp"
#include "tcaps/training.hpp"

using namespace tcaps;
using namespace tcaps::test;

namespace {

constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr std::size_t kGradSeeds = 20;
constexpr double kGradBudgetSeconds = 120;
constexpr double kCouplingTol = 1e-6;
constexpr double kHandCaseTol = 1e-9;
constexpr double kCosineTol = 1e-9;
constexpr double kLossTol = 1e-9;
constexpr double kMinRecall1 = 0.90;
constexpr double kTrainBudgetSeconds = 15 * 60;
constexpr std::size_t kMaxEpochs = 30;

// Hyperparameters for the end-to-end run; everything else stays at defaults.
const char* const kTrainFlags = "--epochs 30 --margin 1.4 --lr 3e-3 --batch-size 4 --seed 1";

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail = why;
    pass = false;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

Outcome gradients() {
  Outcome out;
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::size_t checked = 0;
  for (const auto& op : op_cases()) {
    for (std::uint64_t seed = 1; seed <= kGradSeeds; ++seed) {
      auto prob = op.make(seed);
      const auto rep = gradcheck(prob.loss, prob.leaves, kGradStep);
      worst = std::max(worst, rep.max_rel);
      checked += rep.checked;
      if (rep.checked == 0) out.fail(op.name + " checked no coordinates");
      if (!(rep.max_rel < kGradTol))
        out.fail(op.name + " seed " + std::to_string(seed) + " error " + fmt(rep.max_rel) + " at " + rep.worst);
    }
  }

  // Whole sc-tiny network under the triplet loss: two triplets, label masking
  // as in training, batch statistics in train mode. A step of 1e-5 can carry
  // a leaky ReLU pre-activation across zero; such a check only counts as a
  // kink when the same coordinate agrees at a step of 1e-6.
  const auto cfg = builtin_config("sc-tiny");
  std::size_t kinks = 0, net_checks = 0;
  for (std::uint64_t seed = 1; seed <= kGradSeeds; ++seed) {
    auto net = Network::build(cfg, seed);
    Rng rng(seed, 0xA11);
    const Tensor images = random_tensor(rng, {6, 3, 32, 32}, false, 0, 1);
    std::vector<std::size_t> labels(6);
    for (std::size_t i = 0; i < 2; ++i) {
      labels[i] = labels[2 + i] = rng.below(cfg.num_classes);
      labels[4 + i] = (labels[i] + 1 + rng.below(cfg.num_classes - 1)) % cfg.num_classes;
    }
    auto loss_fn = [&] {
      const Tensor e = embed_with_labels(net.forward(images, Mode::train), labels);
      return triplet_loss(slice_rows(e, 0, 2), slice_rows(e, 2, 4), slice_rows(e, 4, 6), Real(2.0));
    };
    std::vector<Tensor> leaves;
    for (const auto& p : net.parameters()) leaves.push_back(p.tensor);
    for (auto& l : leaves) l.zero_grad();
    backward(loss_fn());
    std::vector<std::vector<Real>> grads;
    for (auto& l : leaves) grads.emplace_back(l.grad().begin(), l.grad().end());

    // Moves every leaf to saved + t * dir.
    auto along = [&](const std::vector<std::vector<Real>>& dir) {
      std::vector<std::vector<Real>> saved;
      for (auto& l : leaves) saved.emplace_back(l.values().begin(), l.values().end());
      return [&leaves, &dir, &loss_fn, saved](double t) {
        for (std::size_t li = 0; li < leaves.size(); ++li) {
          Tensor leaf = leaves[li];
          auto v = leaf.mutable_values();
          for (std::size_t i = 0; i < v.size(); ++i) v[i] = Real(saved[li][i] + t * dir[li][i]);
        }
        return t == 0 ? 0.0 : loss_fn().item();
      };
    };
    auto judge = [&](const std::vector<std::vector<Real>>& dir, const std::string& where) {
      double analytic = 0;
      for (std::size_t li = 0; li < leaves.size(); ++li)
        for (std::size_t i = 0; i < dir[li].size(); ++i) analytic += double(grads[li][i]) * double(dir[li][i]);
      auto f = along(dir);
      auto central = [&](double h) {
        const double up = f(h), down = f(-h);
        return (up - down) / (2 * h);
      };
      const double err = rel_error(analytic, central(kGradStep));
      double fine = 0;
      if (!(err < kGradTol)) fine = rel_error(analytic, central(kGradStep / 10));
      f(0);
      ++net_checks;
      ++checked;
      if (err < kGradTol) {
        worst = std::max(worst, err);
      } else if (fine < kGradTol) {
        ++kinks;
      } else {
        out.fail("sc-tiny seed " + std::to_string(seed) + " error " + fmt(err) + " at " + where);
      }
    };

    Rng pick(seed, 0x5A3F);
    std::vector<std::vector<Real>> dir;
    for (auto& l : leaves) dir.emplace_back(l.numel(), Real(0));
    for (std::size_t li = 0; li < leaves.size(); ++li) {
      for (int k = 0; k < 4; ++k) {
        const std::size_t i = pick.below(leaves[li].numel());
        dir[li][i] = 1;
        judge(dir, net.parameters()[li].name + "[" + std::to_string(i) + "]");
        dir[li][i] = 0;
      }
    }
    for (int k = 0; k < 4; ++k) {
      double norm2 = 0;
      for (auto& d : dir)
        for (auto& x : d) {
          x = Real(pick.normal());
          norm2 += double(x) * double(x);
        }
      for (auto& d : dir)
        for (auto& x : d) x = Real(x / std::sqrt(norm2));
      judge(dir, "direction " + std::to_string(k));
    }
  }
  if (kinks * 100 > net_checks) out.fail(std::to_string(kinks) + " of " + std::to_string(net_checks) + " network checks hit kinks");
  const double elapsed = seconds_since(t0);
  if (elapsed >= kGradBudgetSeconds) out.fail("took " + fmt(elapsed) + " s");
  if (out.pass)
    out.detail = std::to_string(checked) + " checks, worst " + fmt(worst) + ", " + std::to_string(kinks) +
                 " network checks straddled a kink and agreed at step 1e-6, " + fmt(elapsed) + " s";
  return out;
}

Tensor votes_tensor(const std::vector<std::vector<oracle::Vec>>& u) {
  std::vector<Real> v;
  for (const auto& row : u)
    for (const auto& vote : row)
      for (double x : vote) v.push_back(Real(x));
  return Tensor::from_values({1, u.size(), u[0].size(), u[0][0].size()}, std::move(v), false);
}

Outcome routing() {
  Outcome out;
  Rng rng(2, 0);
  double worst_sum = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 1 + rng.below(3), in = 1 + rng.below(20), outs = 1 + rng.below(8), dim = 1 + rng.below(8);
    const std::size_t iters = 1 + rng.below(5);
    const Tensor u = random_tensor(rng, {b, in, outs, dim}, false, -3, 3);
    RoutingTrace trace;
    dynamic_routing(u, iters, &trace);
    if (trace.couplings.size() != iters) out.fail("trace has wrong iteration count");
    for (const auto& c : trace.couplings)
      for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t i = 0; i < in; ++i) {
          double s = 0;
          for (std::size_t j = 0; j < outs; ++j) s += c.at({bi, i, j});
          worst_sum = std::max(worst_sum, std::fabs(s - 1));
        }
  }
  if (!(worst_sum <= kCouplingTol)) out.fail("coupling sums off by " + fmt(worst_sum));

  for (std::size_t iters = 1; iters <= 5; ++iters) {
    const Tensor u = random_tensor(rng, {3, 1, 1, 4}, false);
    RoutingTrace trace;
    const auto v = dynamic_routing(u, iters, &trace);
    const Tensor want = squash(reshape(u, {3, 1, 4}));
    for (std::size_t k = 0; k < want.numel(); ++k)
      if (v.poses.values()[k] != want.values()[k]) out.fail("single-output routing is not squash(vote)");
    for (const auto& c : trace.couplings)
      for (Real x : c.values())
        if (x != 1) out.fail("single-output coupling is not 1");
  }

  const std::vector<std::vector<oracle::Vec>> hand = {{{1.0, 0.5}, {-0.3, 0.8}}, {{0.2, -1.1}, {0.9, 0.4}}};
  const auto want = oracle::routing(hand, 3);
  RoutingTrace trace;
  const auto got = dynamic_routing(votes_tensor(hand), 3, &trace);
  double worst_hand = 0;
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t d = 0; d < 2; ++d) worst_hand = std::max(worst_hand, std::fabs(got.poses.at({0, j, d}) - want.v[j][d]));
  for (std::size_t it = 0; it < 3; ++it)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        worst_hand = std::max(worst_hand, std::fabs(trace.couplings[it].at({0, i, j}) - want.c[it][i][j]));
  if (!(worst_hand <= kHandCaseTol)) out.fail("2x2x2 case off by " + fmt(worst_hand));
  if (out.pass) out.detail = "coupling error " + fmt(worst_sum) + ", 2x2x2 error " + fmt(worst_hand);
  return out;
}

Outcome squash_properties() {
  Outcome out;
  Rng rng(3, 0);
  constexpr std::size_t n = 10000, dim = 16;
  std::vector<Real> v(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    const double target = std::pow(10.0, rng.uniform(-4, 4));
    double s = 0;
    for (std::size_t d = 0; d < dim; ++d) {
      v[i * dim + d] = Real(rng.normal());
      s += double(v[i * dim + d]) * double(v[i * dim + d]);
    }
    const double f = target / std::sqrt(s);
    for (std::size_t d = 0; d < dim; ++d) v[i * dim + d] = Real(v[i * dim + d] * f);
  }
  const Tensor s = Tensor::from_values({n, dim}, v, false);
  const Tensor q = squash(s);
  std::vector<std::pair<double, double>> norms(n);
  double worst_cos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double a = 0, b = 0, dot = 0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double x = s.values()[i * dim + d], y = q.values()[i * dim + d];
      a += x * x;
      b += y * y;
      dot += x * y;
    }
    norms[i] = {std::sqrt(a), std::sqrt(b)};
    if (!(norms[i].second >= 0 && norms[i].second < 1)) out.fail("output norm " + fmt(norms[i].second, 17));
    worst_cos = std::max(worst_cos, std::fabs(dot / (std::sqrt(a) * std::sqrt(b)) - 1));
  }
  if (!(worst_cos <= kCosineTol)) out.fail("cosine off by " + fmt(worst_cos));
  std::sort(norms.begin(), norms.end());
  for (std::size_t i = 1; i < n; ++i)
    if (norms[i].first > norms[i - 1].first && !(norms[i].second > norms[i - 1].second))
      out.fail("norm not increasing near input norm " + fmt(norms[i].first, 17));
  const Tensor zero = squash(Tensor::zeros({3, dim}));
  for (Real x : zero.values())
    if (x != 0) out.fail("squash(0) is not 0");
  if (out.pass) out.detail = "10000 vectors, worst cosine error " + fmt(worst_cos);
  return out;
}

Tensor rows_tensor(const std::vector<oracle::Vec>& r) {
  std::vector<Real> v;
  for (const auto& x : r) v.insert(v.end(), x.begin(), x.end());
  return Tensor::from_values({r.size(), r[0].size()}, v, false);
}

Outcome triplet_oracle() {
  Outcome out;
  Rng rng(4, 0);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t b = 1 + rng.below(8), d = 1 + rng.below(64);
    std::vector<oracle::Vec> a(b, oracle::Vec(d)), p = a, n = a;
    for (auto* set : {&a, &p, &n})
      for (auto& v : *set)
        for (auto& x : v) x = rng.normal();
    const double margin = rng.uniform(0.01, 3.0);
    const double got = triplet_loss(rows_tensor(a), rows_tensor(p), rows_tensor(n), Real(margin)).item();
    worst = std::max(worst, std::fabs(got - oracle::triplet_loss(a, p, n, margin)));
  }
  if (!(worst <= kLossTol)) out.fail("oracle error " + fmt(worst));

  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + rng.below(8), d = 1 + rng.below(64);
    std::vector<oracle::Vec> a(b, oracle::Vec(d));
    for (auto& v : a)
      for (auto& x : v) x = rng.normal();
    const Real margin = Real(rng.uniform(0.01, 3.0));
    // Each hinge term is exactly the margin; averaging b of them may round.
    if (triplet_loss(rows_tensor({a[0]}), rows_tensor({a[0]}), rows_tensor({a[0]}), margin).item() != margin)
      out.fail("coincident embeddings do not give the margin");
    const double batch = triplet_loss(rows_tensor(a), rows_tensor(a), rows_tensor(a), margin).item();
    if (std::fabs(batch - margin) > 4 * std::numeric_limits<double>::epsilon() * margin)
      out.fail("coincident batch gives " + fmt(batch, 17));

    // Negative pushed along a unit direction to exactly margin + d(a, p) or beyond.
    std::vector<oracle::Vec> p = a, n = a;
    for (std::size_t i = 0; i < b; ++i) {
      for (auto& x : p[i]) x += 0.1 * rng.normal();
      const double dp = oracle::distance(a[i], p[i]);
      const double reach = dp + double(margin) + rng.uniform(0, 1) + 1e-6;
      n[i] = a[i];
      n[i][0] += reach;
    }
    if (triplet_loss(rows_tensor(a), rows_tensor(p), rows_tensor(n), margin).item() != 0)
      out.fail("loss is not zero when negatives clear the margin");
  }
  if (out.pass) out.detail = "1000 triples, worst error " + fmt(worst);
  return out;
}

Outcome retrieval_oracle() {
  Outcome out;
  std::size_t ties = 0, queries = 0;
  const std::vector<std::size_t> ks = {1, 5, 10, 20, 30, 40, 50};
  for (std::uint64_t seed = 200; seed < 250; ++seed) {
    const auto inst = retrieval_instance(seed);
    ties += inst.tied;
    queries += inst.queries.size();
    const auto index = GalleryIndex::build(inst.gallery);
    const auto gallery = entries(inst.gallery);
    for (const auto& q : inst.queries) {
      const auto want = oracle::ranking(gallery, q.vector);
      const auto got = index.query(q.vector, inst.gallery.size());
      bool same = got.size() == want.size();
      for (std::size_t i = 0; same && i < got.size(); ++i)
        same = got[i].image_id == want[i].first && got[i].distance == want[i].second;
      if (!same) out.fail("ranking differs on instance " + std::to_string(seed));
    }
    const auto report = recall_at_k(index, inst.queries, ks);
    if (report.recall != oracle::recall(gallery, entries(inst.queries), ks))
      out.fail("recall differs on instance " + std::to_string(seed));
  }
  if (out.pass)
    out.detail = "50 instances (" + std::to_string(ties) + " with ties), " + std::to_string(queries) + " queries";
  return out;
}

Outcome mining_oracle() {
  Outcome out;
  for (std::uint64_t seed = 300; seed < 350; ++seed) {
    const auto inst = mining_instance(seed);
    const auto flat = flatten(inst.candidates);
    const std::vector<Real> cand(flat.begin(), flat.end());
    const std::vector<Real> anchor(inst.anchor.begin(), inst.anchor.end());
    const auto want = oracle::hard_negative(inst.anchor, inst.candidates, inst.categories, inst.anchor_category);
    const auto got = mine_hard_negative(anchor, cand, inst.categories, inst.anchor_category);
    if (!want || got != *want) out.fail("instance " + std::to_string(seed) + " disagrees with the oracle");
    if (inst.categories[got] == inst.anchor_category)
      out.fail("instance " + std::to_string(seed) + " returned a same-category candidate");
  }
  if (out.pass) out.detail = "50 instances";
  return out;
}

struct RunResult {
  bool ok = false;
  std::string error;
  double train_seconds = 0;
  std::vector<double> recall;  // R@1, R@10
  std::size_t epochs = 0;
};

RunResult pipeline(const std::string& root, const std::string& arch, bool with_synth) {
  RunResult r;
  auto step = [&](const std::string& args) {
    const auto res = run_cli(args);
    if (res.exit_code != 0) r.error = args.substr(0, args.find(' ')) + ": " + res.output;
    return res.exit_code == 0;
  };
  const std::string data = root + "/data";
  if (with_synth && !step("synth --items 20 --views 4 --categories 4 --resolution 32 --seed 7 --out " + data))
    return r;
  const std::string run = root + "/" + arch;
  const auto t0 = std::chrono::steady_clock::now();
  if (!step("train --arch " + arch + " --data " + data + "/manifest.tsv --out " + run + "/train " + kTrainFlags))
    return r;
  r.train_seconds = seconds_since(t0);
  if (!step("embed --checkpoint " + run + "/train/checkpoint.tcaps --data " + data + "/manifest.tsv --out " + run +
            "/embed"))
    return r;
  if (!step("eval --query " + run + "/embed/query.emb --gallery " + run + "/embed/gallery.emb --ks 1,10 --out " + run +
            "/eval"))
    return r;
  const auto report = nlohmann::json::parse(slurp(run + "/eval/recall.json"));
  r.recall = {report["recall"]["1"].get<double>(), report["recall"]["10"].get<double>()};
  std::istringstream log(slurp(run + "/train/loss_log.tsv"));
  std::string line;
  while (std::getline(log, line))
    if (!line.empty() && std::isdigit(static_cast<unsigned char>(line[0]))) ++r.epochs;
  r.ok = true;
  return r;
}

Outcome end_to_end(const std::string& root) {
  Outcome out;
  std::string detail;
  double r1[2] = {0, 0};
  const char* archs[] = {"sc-tiny", "rc-tiny"};
  for (int i = 0; i < 2; ++i) {
    const auto r = pipeline(root, archs[i], i == 0);
    if (!r.ok) {
      out.fail(std::string(archs[i]) + " pipeline failed: " + r.error);
      continue;
    }
    r1[i] = r.recall[0];
    if (r.epochs > kMaxEpochs) out.fail(std::string(archs[i]) + " trained " + std::to_string(r.epochs) + " epochs");
    if (r.train_seconds > kTrainBudgetSeconds) out.fail(std::string(archs[i]) + " training took " + fmt(r.train_seconds) + " s");
    if (!(r.recall[0] >= kMinRecall1) || r.recall[1] != 1.0)
      out.fail(std::string(archs[i]) + " R@1 " + fmt(r.recall[0]) + " R@10 " + fmt(r.recall[1]));
    if (!detail.empty()) detail += "; ";
    detail += std::string(archs[i]) + " R@1 " + fmt(r.recall[0]) + " R@10 " + fmt(r.recall[1]) + " in " +
              fmt(r.train_seconds) + " s";
  }
  detail += std::string("; rc >= sc at R@1: ") + (r1[1] >= r1[0] ? "yes" : "no") + " (not enforced)";
  if (out.pass)
    out.detail = detail;
  else
    out.detail += " [" + detail + "]";
  return out;
}

std::size_t inspected_params(const std::string& arch) {
  const auto r = run_cli("inspect --arch " + arch);
  const std::string key = "total parameters: ";
  const auto at = r.output.find(key);
  if (r.exit_code != 0 || at == std::string::npos) return 0;
  return std::stoull(r.output.substr(at + key.size()));
}

Outcome parameter_counts() {
  Outcome out;
  const double sc = double(inspected_params("sc-full")), rc = double(inspected_params("rc-full"));
  if (!(std::fabs(sc / 2.5e6 - 1) <= 0.2)) out.fail("sc-full has " + fmt(sc, 8));
  if (!(std::fabs(rc / 4.5e6 - 1) <= 0.2)) out.fail("rc-full has " + fmt(rc, 8));

  // conv = out*in*k*k + out, batch norm = 2*channels, class capsule weights
  // = input capsules * classes * dim_in * dim_out.
  auto conv = [](std::size_t in, std::size_t o, std::size_t k) { return o * in * k * k + o; };
  const std::size_t stem = conv(3, 16, 5) + 32 + conv(16, 32, 3) + 64;
  const std::size_t capsules = conv(32, 128, 3) + 32 * 4 * 16 * 16;
  const std::size_t sc_tiny = stem + conv(32, 32, 3) + 64 + capsules;
  const std::size_t rc_tiny = sc_tiny + conv(16, 32, 1) + 64;
  const std::size_t got_sc = inspected_params("sc-tiny"), got_rc = inspected_params("rc-tiny");
  if (got_sc != sc_tiny) out.fail("sc-tiny has " + std::to_string(got_sc) + ", expected " + std::to_string(sc_tiny));
  if (got_rc != rc_tiny) out.fail("rc-tiny has " + std::to_string(got_rc) + ", expected " + std::to_string(rc_tiny));
  for (const auto& arch : {"sc-tiny", "rc-tiny"}) {
    auto net = Network::build(builtin_config(arch), 1);
    std::size_t total = 0;
    for (const auto& p : net.parameters()) total += p.tensor.numel();
    if (total != net.param_count()) out.fail(std::string(arch) + " count disagrees with its tensors");
  }
  if (out.pass)
    out.detail = "sc-full " + fmt(sc, 8) + ", rc-full " + fmt(rc, 8) + ", sc-tiny " + std::to_string(got_sc) +
                 ", rc-tiny " + std::to_string(got_rc);
  return out;
}

Outcome determinism(const std::string& first_root, const std::string& second_root) {
  Outcome out;
  const auto again = pipeline(second_root, "sc-tiny", true);
  if (!again.ok) {
    out.fail("second pipeline failed: " + again.error);
    return out;
  }
  for (const char* rel : {"data/manifest.tsv", "sc-tiny/train/loss_log.tsv", "sc-tiny/train/checkpoint.tcaps",
                          "sc-tiny/embed/query.emb", "sc-tiny/embed/gallery.emb", "sc-tiny/eval/recall.json"}) {
    const auto a = slurp(first_root + "/" + rel), b = slurp(second_root + "/" + rel);
    if (a.empty() || a != b) out.fail(std::string(rel) + " differs between runs");
  }

  const std::string ckpt = first_root + "/sc-tiny/train/checkpoint.tcaps";
  auto loaded = load_checkpoint(ckpt);
  const std::string resaved = second_root + "/resaved.tcaps";
  save_checkpoint(loaded.network, loaded.state, resaved);
  if (slurp(resaved) != slurp(ckpt)) out.fail("load then save changes checkpoint bytes");
  auto reloaded = load_checkpoint(resaved);
  const auto pa = loaded.network.parameters(), pb = reloaded.network.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (std::memcmp(pa[i].tensor.values().data(), pb[i].tensor.values().data(), pa[i].tensor.numel() * sizeof(Real)))
      out.fail("parameter " + pa[i].name + " changed in a round trip");
  if (!(loaded.state.optimizer == reloaded.state.optimizer)) out.fail("optimizer state changed in a round trip");
  if (out.pass) out.detail = "6 artifacts identical, checkpoint round trip bit exact";
  return out;
}

}  // namespace

int main() {
  TempDir first("accept-a"), second("accept-b");
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", gradients},
      {2, "routing invariants", routing},
      {3, "squash properties", squash_properties},
      {4, "triplet loss oracle", triplet_oracle},
      {5, "retrieval oracle", retrieval_oracle},
      {6, "hard-negative mining oracle", mining_oracle},
      {7, "desk-scale end to end", [&] { return end_to_end(first.str()); }},
      {8, "parameter counts", parameter_counts},
      {9, "determinism", [&] { return determinism(first.str(), second.str()); }},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.fail(std::string("exception: ") + e.what());
    }
    failures += !o.pass;
    std::printf("criterion %d: %s  %s (%s)\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", int(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
