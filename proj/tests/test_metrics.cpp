#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fedmlp/federation.hpp"
#include "fedmlp/metrics.hpp"
#include "fedmlp/rng.hpp"

using namespace fedmlp;
using namespace fedmlp::metrics;

namespace {

data::LabeledDataset balanced_toy(int classes, int per_class, int dim, uint64_t seed) {
  return data::synth_blobs(classes, dim, per_class, 0.1, seed);
}

}  // namespace

TEST_CASE("accuracy: zero parameters hit the argmax tie rule") {
  // Uniform logits always predict class 0, so accuracy equals the frequency
  // of class 0: 0.1 on 10 balanced classes.
  const auto ds = balanced_toy(10, 20, 4, 1);
  model::ModelConfig mc{4, 8, 4, 10};
  const auto zero = model::ModelParams::zeros(mc);
  const auto acc = accuracy(zero, ds);
  REQUIRE(acc.has_value());
  CHECK(*acc == doctest::Approx(0.1));
}

TEST_CASE("accuracy: empty filter gives a null marker, not zero") {
  const auto ds = balanced_toy(3, 5, 2, 2);
  model::ModelConfig mc{2, 4, 3, 3};
  const auto params = model::ModelParams::init(mc, 3);
  std::set<int> empty_filter;
  CHECK(!accuracy(params, ds, &empty_filter).has_value());
  CHECK(!accuracy(params, data::LabeledDataset{}).has_value());
  std::set<int> select_two = {2};
  const auto a = accuracy(params, ds, &select_two);
  REQUIRE(a.has_value());
}

TEST_CASE("accuracy: invariant under strictly monotone logit transforms") {
  const auto ds = balanced_toy(4, 10, 3, 5);
  model::ModelConfig mc{3, 6, 4, 4};
  const auto params = model::ModelParams::init(mc, 7);
  const auto base = accuracy(params, ds);

  // Apply 3*logit + 1 via hand-rolled argmax: predictions cannot change.
  long correct = 0;
  for (size_t i = 0; i < ds.size(); ++i) {
    const auto fw = model::forward(params, ds.features[i]);
    Vec t(fw.logits.size());
    for (size_t j = 0; j < t.size(); ++j) t[j] = 3.0 * fw.logits[j] + 1.0;
    int pred = 0;
    for (size_t j = 1; j < t.size(); ++j)
      if (t[j] > t[pred]) pred = static_cast<int>(j);
    if (pred == ds.labels[i]) ++correct;
  }
  CHECK(*base == doctest::Approx(static_cast<double>(correct) / ds.size()));
}

TEST_CASE("accuracy: perfect model scores 1") {
  // Train a tiny model to saturation on separable blobs, then check 1.0.
  const auto ds = data::synth_blobs(3, 4, 30, 0.02, 9);
  model::ModelConfig mc{4, 16, 8, 3};
  auto params = model::ModelParams::init(mc, 11);
  auto st = model::OptimizerState::zeros_like(params);
  model::Hyperparams h;
  h.lr = 0.05;
  model::ProtoContext ctx;
  model::BatchView b;
  b.dataset = &ds;
  b.indices.resize(ds.size());
  std::iota(b.indices.begin(), b.indices.end(), 0);
  for (int i = 0; i < 150; ++i) {
    const auto g = model::backward(b, params, ctx, h, model::LossToggles{false, false, false});
    model::sgd_step(params, g, st, h);
  }
  const auto acc = accuracy(params, ds);
  REQUIRE(acc.has_value());
  CHECK(*acc == doctest::Approx(1.0));
}

TEST_CASE("build_balanced_test: equal per-class counts at the minimum") {
  config::ExperimentConfig cfg;
  cfg.synth.classes = 5;
  cfg.synth.dim = 4;
  cfg.synth.per_class = 40;
  cfg.partition.num_clients = 4;
  cfg.partition.tasks_per_client = 2;
  cfg.partition.shards_per_task = 2;
  cfg.partition.gamma = 0.5;
  cfg.seed = 13;
  const auto env = federation::prepare_environment(cfg);
  const auto hist = env.balanced_test.label_histogram();
  REQUIRE(!hist.empty());
  const int first = hist.begin()->second;
  size_t total_min = SIZE_MAX;
  std::map<int, int> union_hist;
  for (const auto& st : env.streams)
    for (size_t i = 0; i < st.cumulative_tests.back().size(); ++i)
      union_hist[st.cumulative_tests.back().labels[i]]++;
  for (const auto& [cls, n] : union_hist) total_min = std::min<size_t>(total_min, n);
  for (const auto& [cls, n] : hist) CHECK(n == first);
  CHECK(static_cast<size_t>(first) == total_min);
}

TEST_CASE("evaluate_round: structural identities") {
  // Single client whose cumulative test equals the balanced set: A_sel = A_loc.
  config::ExperimentConfig cfg;
  cfg.synth.classes = 4;
  cfg.synth.dim = 3;
  cfg.synth.per_class = 30;
  cfg.partition.num_clients = 1;
  cfg.partition.tasks_per_client = 1;
  cfg.partition.shards_per_task = 4;
  cfg.seed = 17;
  auto env = federation::prepare_environment(cfg);
  const auto params = model::ModelParams::init(env.model_config, 19);

  // Force the balanced set to be exactly the client's cumulative test.
  const auto& cum = env.streams[0].cumulative_tests.back();
  const auto rec = evaluate_round(params, {&params}, env.streams, 1, cum, {});
  REQUIRE(rec.a_sel.has_value());
  REQUIRE(rec.a_loc.has_value());
  CHECK(*rec.a_sel == *rec.a_loc);
  // All client params equal to global params: A_loc = A_glo.
  REQUIRE(rec.a_glo.has_value());
  CHECK(*rec.a_loc == *rec.a_glo);
  // No minority set: null markers.
  CHECK(!rec.a_loc_minority.has_value());
  CHECK(!rec.a_glo_minority.has_value());
}

TEST_CASE("forgetting_delta: arithmetic and errors") {
  MetricsLog log;
  RoundRecord r1;
  r1.round = 1;
  r1.stage = 1;
  r1.a_sel = 0.90;
  RoundRecord r2;
  r2.round = 2;
  r2.stage = 2;
  r2.a_sel = 0.70;
  RoundRecord r3;
  r3.round = 3;
  r3.stage = 2;
  r3.a_sel = 0.95;
  log.records = {r1, r2, r3};

  CHECK(forgetting_delta(log, 2) == doctest::Approx(0.20));

  log.records[1].a_sel = 0.90;
  CHECK(forgetting_delta(log, 2) == doctest::Approx(0.0));

  CHECK_THROWS_AS(forgetting_delta(log, 1), std::invalid_argument);
  CHECK_THROWS_AS(forgetting_delta(log, 3), std::invalid_argument);
}

TEST_CASE("csv and jsonl: documented shape, null markers as empties") {
  MetricsLog log;
  RoundRecord r;
  r.round = 1;
  r.stage = 1;
  r.a_glo = 0.5;
  r.loss_total = 1.25;
  r.proto_bytes = 256;
  log.records.push_back(r);

  const auto csv = to_csv(log);
  CHECK(csv.find(csv_header()) == 0);
  CHECK(csv.find("\n1,1,,,0.5,,,1.25,0,0,0,0,256\n") != std::string::npos);

  const auto jsonl = to_jsonl(log);
  CHECK(jsonl.find("\"a_sel\":null") != std::string::npos);
  CHECK(jsonl.find("\"a_glo\":0.5") != std::string::npos);
  CHECK(jsonl.find("\"proto_bytes\":256") != std::string::npos);
}

TEST_CASE("final_summary: averages the last 10 rounds, skipping nulls") {
  MetricsLog log;
  for (int i = 0; i < 15; ++i) {
    RoundRecord r;
    r.round = i + 1;
    r.stage = 1;
    r.a_glo = i < 5 ? std::optional<double>() : std::optional<double>(i);
    log.records.push_back(r);
  }
  const auto s = final_summary(log);
  // Rounds 6..15 have a_glo = 5..14 -> mean 9.5.
  REQUIRE(s.at("a_glo").has_value());
  CHECK(*s.at("a_glo") == doctest::Approx(9.5));
  CHECK(!s.at("a_sel").has_value());
}
