#include <catch_amalgamated.hpp>

#include <algorithm>
#include <chrono>
#include <sstream>

#include "support.hpp"

using namespace nur;
using namespace nur::testing;

namespace {

std::string param_bytes(const Model& m) {
  std::ostringstream os(std::ios::binary);
  save_params(m.params(), os);
  return os.str();
}

std::vector<TrainingSample> small_stream(std::size_t cap) {
  WorldConfig w;
  w.users = 60;
  w.items = 20;
  w.candidates = 8;
  w.seed = 9;
  ItemSequenceStore store(cap);
  SyntheticWorld world(w);
  store.register_catalog(world.catalog());
  return ingest_all(store, world.generate(600));
}

TrainConfig quick(std::size_t steps) {
  TrainConfig t;
  t.batch_size = 8;
  t.steps = steps;
  return t;
}

}  // namespace

TEST_CASE("zero steps leaves the initialization untouched") {
  auto model = make_model(tiny_config());
  const auto before = param_bytes(*model);
  std::ostringstream log;
  auto stats = Trainer(*model, quick(0)).fit(small_stream(4), &log);
  CHECK(stats.empty());
  CHECK(log.str() == std::string(kTrainLogHeader) + "\n");
  CHECK(param_bytes(*model) == before);
  CHECK(param_bytes(*make_model(tiny_config())) == before);
}

TEST_CASE("all-zero loss weights give a constant zero loss") {
  auto cfg = tiny_config();
  cfg.lambda1 = cfg.lambda2 = cfg.lambda3 = 0.0;
  auto model = make_model(cfg);
  const auto before = param_bytes(*model);
  auto stats = Trainer(*model, quick(10)).fit(small_stream(4));
  REQUIRE(stats.size() == 10);
  for (const auto& s : stats) {
    CHECK(s.total == 0.0);
    CHECK(s.grad_norm == 0.0);
  }
  CHECK(param_bytes(*model) == before);
}

TEST_CASE("training logs are identical across reruns") {
  auto run = [] {
    auto model = make_model(tiny_config());
    std::ostringstream log;
    Trainer(*model, quick(50)).fit(small_stream(4), &log);
    return std::pair{log.str(), param_bytes(*model)};
  };
  auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(std::count(a.first.begin(), a.first.end(), '\n') == 51);
}

TEST_CASE("training lowers the loss on a small world") {
  auto model = make_model(tiny_config());
  auto stats = Trainer(*model, quick(150)).fit(small_stream(4));
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    first += stats[i].total;
    last += stats[stats.size() - 1 - i].total;
  }
  CHECK(last < first);
}

TEST_CASE("fit rejects fewer than two samples") {
  auto model = make_model(tiny_config());
  std::vector<TrainingSample> one{sample("i1", "c1", {}, "u1", 1)};
  CHECK_THROWS_AS(Trainer(*model, quick(1)).fit(one), DataError);
}

TEST_CASE("full-model gradient check for every variant") {
  const auto t0 = std::chrono::steady_clock::now();
  auto batch = grad_check_batch();
  for (int v = 0; v <= 5; ++v) {
    auto model = make_model(variant_config(tiny_config(6), v));
    const auto targets = current_targets(*model, batch);
    auto report = grad_check([&](Tape& t) { return loss_with_frozen_targets(*model, t, batch, targets); },
                             model->params(), {1e-5, 1e-4, {}});
    INFO("variant " << v << " max rel error " << report.max_rel_error());
    CHECK(report.passed());
    std::size_t total = 0;
    for (const auto& p : model->params()) total += p.trainable ? p.value.size() : 0;
    CHECK(report.coords_checked == total);
  }
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 60.0);
}

TEST_CASE("items with no interactions train and index") {
  auto model = make_model(tiny_config());
  std::vector<TrainingSample> cold;
  for (int i = 0; i < 6; ++i) {
    cold.push_back(sample("i" + std::to_string(i), "c1", {}, "u" + std::to_string(i), i % 2));
  }
  auto stats = Trainer(*model, quick(4)).fit(cold);
  REQUIRE(stats.size() == 4);
  for (const auto& s : stats) CHECK(std::isfinite(s.total));

  ItemSequenceStore store(4);
  for (int i = 0; i < 6; ++i) store.register_item("i" + std::to_string(i), "c1");
  auto pool = item_embeddings(*model, store);
  auto index = build_index(pool);
  CHECK(index.size() == 6);
  auto hits = index.search(model->user_embedding({"u1", {}}), 6, 6);
  CHECK(hits == brute_force_topk(pool, model->user_embedding({"u1", {}}), 6));
}
