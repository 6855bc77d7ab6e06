#include <doctest.h>

#include <cmath>
#include <limits>

#include "instances.hpp"
#include "support.hpp"
#include "tcaps/error.hpp"
#include "tcaps/training.hpp"

using namespace tcaps;
using namespace tcaps::test;

namespace {

Tensor rows(std::vector<std::vector<Real>> r) {
  std::vector<Real> v;
  for (auto& x : r) v.insert(v.end(), x.begin(), x.end());
  return Tensor::from_values({r.size(), r[0].size()}, v, true);
}

ImageBatch train_batch(const SynthParams& p) {
  const auto ds = render_synthetic(p);
  ImageBatch b;
  std::vector<Real> pixels;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    if (ds.records[i].split != Split::train) continue;
    const auto t = image_to_tensor(ds.images[i]);
    pixels.insert(pixels.end(), t.values().begin(), t.values().end());
    b.image_ids.push_back(ds.records[i].image_id);
    b.item_ids.push_back(ds.records[i].item_id);
    b.category_ids.push_back(ds.records[i].category_id);
    ++n;
  }
  b.images = Tensor::from_values({n, 3, p.resolution, p.resolution}, pixels);
  return b;
}

std::vector<std::vector<Real>> snapshot(const Network& net) {
  std::vector<std::vector<Real>> out;
  for (const auto& p : net.parameters()) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.margin = 1.0;
  return cfg;
}

const SynthParams kSmall{8, 4, 4, 32, 7};

}  // namespace

TEST_CASE("triplet loss examples") {
  CHECK(triplet_loss(rows({{0, 0}}), rows({{0, 0}}), rows({{1, 0}}), Real(0.2)).item() == 0);
  CHECK(triplet_loss(rows({{1, 2}}), rows({{1, 2}}), rows({{1, 2}}), Real(0.2)).item() == Real(0.2));
  CHECK(triplet_loss(rows({{0, 0}}), rows({{3, 0}}), rows({{1, 0}}), Real(0.5)).item() == doctest::Approx(2.5));
  CHECK(triplet_loss(rows({{0, 0}, {0, 0}}), rows({{3, 0}, {0, 0}}), rows({{1, 0}, {5, 0}}), Real(0.5)).item() ==
        doctest::Approx(1.25));
  CHECK_THROWS_AS(triplet_loss(rows({{0, 0}}), rows({{0, 0}}), rows({{0}}), Real(0.2)), Error);
  CHECK_THROWS_AS(triplet_loss(rows({{0, 0}}), rows({{0, 0}}), rows({{1, 0}}), Real(0)), Error);
}

TEST_CASE("triplet loss matches the scalar oracle") {
  Rng rng(21, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t b = 1 + rng.below(5), d = 1 + rng.below(10);
    std::vector<oracle::Vec> a(b, oracle::Vec(d)), p = a, n = a;
    for (auto* set : {&a, &p, &n})
      for (auto& v : *set)
        for (auto& x : v) x = rng.normal() * 0.5;
    const double margin = rng.uniform(0.05, 2.0);
    auto to_tensor = [&](const std::vector<oracle::Vec>& vs) {
      std::vector<std::vector<Real>> r;
      for (const auto& v : vs) r.emplace_back(v.begin(), v.end());
      return rows(r);
    };
    const double got = triplet_loss(to_tensor(a), to_tensor(p), to_tensor(n), Real(margin)).item();
    CHECK(std::fabs(got - oracle::triplet_loss(a, p, n, margin)) < 1e-12);
  }
}

TEST_CASE("hard negative mining") {
  const std::vector<Real> anchor = {0, 0};
  const std::vector<Real> cands = {0.1, 0, 0.5, 0, 0.9, 0};
  const std::vector<std::uint64_t> cats = {1, 2, 3};
  CHECK(mine_hard_negative(anchor, cands, cats, 1) == 1);
  const std::vector<Real> far = {100, 0, 0.01, 0};
  const std::vector<std::uint64_t> far_cats = {2, 1};
  CHECK(mine_hard_negative(anchor, far, far_cats, 1) == 0);
  const std::vector<Real> tie = {1, 0, 0, 1, -1, 0};
  CHECK(mine_hard_negative(anchor, tie, cats, 0) == 0);
  const std::vector<std::uint64_t> same = {1, 1, 1};
  try {
    mine_hard_negative(anchor, cands, same, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("at least 2 categories") != std::string::npos);
  }
  CHECK_THROWS_AS(mine_hard_negative(anchor, std::vector<Real>{1, 2, 3}, cats, 0), Error);

  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto inst = mining_instance(seed);
    const auto flat = flatten(inst.candidates);
    const std::vector<Real> cand(flat.begin(), flat.end());
    const std::vector<Real> anch(inst.anchor.begin(), inst.anchor.end());
    const auto got = mine_hard_negative(anch, cand, inst.categories, inst.anchor_category);
    const auto want = oracle::hard_negative(inst.anchor, inst.candidates, inst.categories, inst.anchor_category);
    REQUIRE(want.has_value());
    CHECK(got == *want);
    CHECK(inst.categories[got] != inst.anchor_category);
  }
}

TEST_CASE("positive enumeration") {
  const std::vector<ManifestRecord> recs = {{"a", 3, 1, 0, Split::train},
                                            {"b", 1, 1, 0, Split::train},
                                            {"c", 2, 1, 0, Split::query},
                                            {"d", 4, 2, 0, Split::train}};
  CHECK(enumerate_positives(3, recs) == std::vector<std::uint64_t>{1, 2});
  CHECK(enumerate_positives(4, recs).empty());
  CHECK_THROWS_AS(enumerate_positives(9, recs), Error);

  const auto ds = render_synthetic({20, 4, 4, 32, 7});
  for (const auto& r : ds.records) CHECK(enumerate_positives(r.image_id, ds.records).size() == 3);
}

TEST_CASE("train config JSON") {
  TrainConfig cfg;
  cfg.margin = 0.7;
  cfg.optimizer = OptimizerKind::sgd;
  cfg.sgd_momentum = 0.5;
  cfg.refresh_interval = 3;
  CHECK(train_config_from_json(train_config_to_json(cfg)) == cfg);
  CHECK(train_config_from_json("{}") == TrainConfig{});
  CHECK(train_config_from_json(R"({"margin": 0.4})").margin == 0.4);
  CHECK_THROWS_AS(train_config_from_json(R"({"margn": 0.4})"), Error);
  CHECK_THROWS_AS(train_config_from_json(R"({"epochs": -1})"), Error);
  CHECK_THROWS_AS(train_config_from_json(R"({"optimizer": "rmsprop"})"), Error);
  CHECK_THROWS_AS(train_config_from_json(R"({"margin": -1})"), Error);
  CHECK_THROWS_AS(train_config_from_json("[1]"), Error);
  CHECK_THROWS_AS(train_config_from_json("{"), Error);
  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(validate(bad), Error);
  bad = TrainConfig{};
  bad.beta2 = 1.0;
  CHECK_THROWS_AS(validate(bad), Error);
}

TEST_CASE("optimizer updates") {
  Tensor w = Tensor::from_values({3}, {1, 2, 3}, true);
  Tensor idle = Tensor::from_values({1}, {5}, true);
  backward(sum(mul(w, Tensor::from_values({3}, {2, -4, 0}))));
  std::vector<NamedTensor> params = {{"w", w}, {"idle", idle}};
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  OptimizerState st;
  optimizer_step(params, st, cfg);
  // First Adam step moves every coordinate by lr * g / (|g| + eps).
  CHECK(w.values()[0] == doctest::Approx(1 - 0.1 * 2 / (2 + 1e-8)).epsilon(1e-14));
  CHECK(w.values()[1] == doctest::Approx(2 + 0.1 * 4 / (4 + 1e-8)).epsilon(1e-14));
  CHECK(w.values()[2] == 3);
  CHECK(idle.values()[0] == 5);
  CHECK(st.step == 1);

  Tensor s = Tensor::from_values({2}, {1, 1}, true);
  TrainConfig sgd;
  sgd.optimizer = OptimizerKind::sgd;
  sgd.learning_rate = 0.5;
  sgd.sgd_momentum = 0.9;
  OptimizerState sst;
  std::vector<NamedTensor> sp = {{"s", s}};
  for (int i = 0; i < 2; ++i) {
    s.zero_grad();
    backward(sum(s));
    optimizer_step(sp, sst, sgd);
  }
  // v1 = 1, v2 = 1.9; w = 1 - 0.5 - 0.95.
  CHECK(s.values()[0] == doctest::Approx(-0.45).epsilon(1e-14));
  CHECK(sst.second_moment.empty());
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  auto net = Network::build(builtin_config("sc-tiny"), 3);
  const auto before = snapshot(net);
  auto cfg = quick(2);
  cfg.learning_rate = 0;
  Trainer trainer(net, train_batch(kSmall), cfg);
  const auto reports = trainer.run();
  CHECK(reports.size() == 2);
  CHECK(reports[0].steps == (trainer.pairs().size() + 3) / 4);
  CHECK(snapshot(net) == before);
}

TEST_CASE("training is deterministic") {
  auto run = [] {
    auto net = Network::build(builtin_config("sc-tiny"), 3);
    Trainer trainer(net, train_batch(kSmall), quick(2));
    std::vector<double> losses;
    for (const auto& r : trainer.run()) losses.push_back(r.mean_loss);
    return std::make_pair(losses, snapshot(net));
  };
  const auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.first[0] > 0);
}

TEST_CASE("pairs cover all ordered positives") {
  auto net = Network::build(builtin_config("sc-tiny"), 3);
  Trainer trainer(net, train_batch({20, 4, 4, 32, 7}), quick(1));
  // 20 items with 2 training views each.
  CHECK(trainer.pairs().size() == 40);
  for (const auto& [a, p] : trainer.pairs()) CHECK(a != p);
}

TEST_CASE("a gradient step lowers the batch loss") {
  auto net = Network::build(builtin_config("sc-tiny"), 5);
  auto cfg = quick(1);
  cfg.margin = 3;
  cfg.optimizer = OptimizerKind::sgd;
  cfg.learning_rate = 1e-3;
  Trainer trainer(net, train_batch(kSmall), cfg);
  const std::vector<Triplet> batch = {{0, 1, 2}, {2, 3, 4}, {5, 4, 7}};
  Tensor before = trainer.batch_loss(batch);
  backward(before);
  optimizer_step(net.parameters(), trainer.optimizer(), cfg);
  net.zero_grad();
  // Batch statistics change with the weights, so compare on a fresh pass.
  Tensor after = trainer.batch_loss(batch);
  CHECK(after.item() < before.item());
}

TEST_CASE("trainer preconditions and numeric abort") {
  auto net = Network::build(builtin_config("sc-tiny"), 3);
  auto one_cat = train_batch(kSmall);
  for (auto& c : one_cat.category_ids) c = 0;
  CHECK_THROWS_AS(Trainer(net, one_cat, quick(1)), Error);

  auto out_of_range = train_batch(kSmall);
  out_of_range.category_ids[0] = 9;
  CHECK_THROWS_AS(Trainer(net, out_of_range, quick(1)), Error);

  auto singles = train_batch(kSmall);
  for (std::size_t i = 0; i < singles.item_ids.size(); ++i) singles.item_ids[i] = 100 + i;
  CHECK_THROWS_AS(Trainer(net, singles, quick(1)), Error);

  Trainer trainer(net, train_batch(kSmall), quick(1));
  Tensor w = net.parameters().back().tensor;
  w.mutable_values()[0] = std::numeric_limits<Real>::quiet_NaN();
  try {
    trainer.run_epoch();
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::numeric);
    CHECK(std::string(e.what()).find("training aborted at step 1 (epoch 1)") != std::string::npos);
  }
}

TEST_CASE("embed_images is chunk independent") {
  auto net = Network::build(builtin_config("rc-tiny"), 3);
  const auto batch = train_batch(kSmall);
  const auto a = embed_images(net, batch, 32);
  const auto b = embed_images(net, batch, 5);
  CHECK(a == b);
  CHECK(a.size() == batch.image_ids.size());
  CHECK(a[0].vector.size() == 4 * 16);
}
