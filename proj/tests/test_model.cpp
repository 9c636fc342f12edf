#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "fedmlp/dataset.hpp"
#include "fedmlp/gradcheck.hpp"
#include "fedmlp/model.hpp"
#include "fedmlp/rng.hpp"

using namespace fedmlp;
using namespace fedmlp::model;

namespace {

ModelConfig tiny_config() {
  ModelConfig mc;
  mc.input_dim = 3;
  mc.hidden_dim = 5;
  mc.feature_dim = 4;
  mc.num_classes = 3;
  return mc;
}

BatchView whole_batch(const data::LabeledDataset& ds) {
  BatchView b;
  b.dataset = &ds;
  b.indices.resize(ds.size());
  std::iota(b.indices.begin(), b.indices.end(), 0);
  return b;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  return a.w1.data == b.w1.data && a.b1 == b.b1 && a.w2.data == b.w2.data && a.b2 == b.b2 &&
         a.wc.data == b.wc.data && a.bc == b.bc;
}

}  // namespace

TEST_CASE("forward: zero parameters give uniform probabilities") {
  const auto params = ModelParams::zeros(tiny_config());
  const auto fw = forward(params, {1.0, -2.0, 0.5});
  for (double l : fw.logits) CHECK(l == 0.0);
  for (double p : fw.probs) CHECK(p == doctest::Approx(1.0 / 3));
  CHECK(fw.z.size() == 4);
}

TEST_CASE("forward: probabilities are a simplex for random inputs") {
  const auto params = ModelParams::init(tiny_config(), 42);
  auto rng = make_rng(1);
  std::normal_distribution<double> n(0, 2);
  for (int i = 0; i < 1000; ++i) {
    Vec x = {n(rng), n(rng), n(rng)};
    const auto fw = forward(params, x);
    const double sum = std::accumulate(fw.probs.begin(), fw.probs.end(), 0.0);
    CHECK(std::fabs(sum - 1.0) < 1e-9);
    for (double p : fw.probs) {
      CHECK(p > 0.0);
      CHECK(p < 1.0);
    }
  }
  CHECK_THROWS_AS(forward(params, {1.0}), std::invalid_argument);
}

TEST_CASE("cross_entropy: closed-form values") {
  CHECK(cross_entropy(Vec{0.0, 1.0, 0.0}, 1) == doctest::Approx(0.0));
  Vec uniform(10, 0.1);
  CHECK(cross_entropy(uniform, 3) == doctest::Approx(std::log(10.0)));
  CHECK(cross_entropy(Vec{0.5, 0.5}, 0) == doctest::Approx(std::log(2.0)));
  // The documented floor caps the loss instead of producing infinity.
  CHECK(cross_entropy(Vec{0.0, 1.0}, 0) == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("smooth_l1: piecewise values") {
  CHECK(smooth_l1({1.0, 2.0}, {1.0, 2.0}) == 0.0);
  CHECK(smooth_l1({0.5}, {0.0}) == doctest::Approx(0.125));
  CHECK(smooth_l1({2.0}, {0.0}) == doctest::Approx(1.5));
  CHECK(smooth_l1({-2.0}, {0.0}) == doctest::Approx(1.5));
  // Sums over dimensions.
  CHECK(smooth_l1({0.5, 2.0}, {0.0, 0.0}) == doctest::Approx(0.125 + 1.5));
  CHECK_THROWS_AS(smooth_l1({1.0}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("loss_prototype: skip rule and hand-composed mean") {
  std::map<int, Vec> protos = {{0, {1.0, 1.0}}, {1, {0.0, 0.0}}};

  // Features equal to their class prototypes.
  CHECK(loss_prototype({{1.0, 1.0}, {0.0, 0.0}}, {0, 1}, protos) == 0.0);
  // No prototypes at all (round 1).
  CHECK(loss_prototype({{1.0, 1.0}}, {0}, {}) == 0.0);

  // Two samples with per-sample smooth-L1 0.2 and 0.4 -> mean 0.3.
  // Inside the quadratic region 0.5 x^2 = v solves to x = sqrt(2v).
  const double x1 = std::sqrt(0.4), x2 = std::sqrt(0.8);
  const double v = loss_prototype({{1.0 + x1, 1.0}, {x2, 0.0}}, {0, 1}, protos);
  CHECK(v == doctest::Approx(0.3));

  // Classes lacking prototypes are excluded from the denominator.
  const double w = loss_prototype({{1.0 + x1, 1.0}, {5.0, 5.0}}, {0, 7}, protos);
  CHECK(w == doctest::Approx(0.2));
}

TEST_CASE("loss_semantic: minority filter") {
  std::vector<Vec> centroids = {{0.0, 0.0}, {2.0, 2.0}};
  std::map<int, int> cluster = {{0, 0}, {1, 1}, {2, 0}};

  CHECK(loss_semantic({{1.0, 1.0}}, {0}, centroids, cluster, {}) == 0.0);
  CHECK(loss_semantic({{2.0, 2.0}}, {1}, centroids, cluster, {1}) == 0.0);

  // One minority sample at smooth-L1 0.8 from its centroid (linear branch:
  // 1.3 - 0.5 = 0.8), one majority sample excluded by the filter.
  const double v =
      loss_semantic({{1.3, 0.0}, {9.0, 9.0}}, {0, 1}, centroids, cluster, {0});
  CHECK(v == doctest::Approx(0.8));

  // Unmapped minority class contributes nothing but is counted.
  long unmapped = 0;
  const double u = loss_semantic({{1.0, 1.0}}, {7}, centroids, cluster, {7}, 1.0, &unmapped);
  CHECK(u == 0.0);
  CHECK(unmapped == 1);
}

TEST_CASE("loss_intertask: KL oracle") {
  std::map<int, Vec> historical = {{0, {1.0, 0.0}}};
  proto::ReferenceResolver refs;
  refs.historical = &historical;

  // z equal to the reference: KL(p || p) = 0.
  CHECK(loss_intertask({{1.0, 0.0}}, {0}, refs, 1.0) == doctest::Approx(0.0));

  // No reference for the class (first task): skipped, loss 0.
  CHECK(loss_intertask({{1.0, 0.0}}, {5}, refs, 1.0) == 0.0);

  // z=[1,0] vs ref=[0,1], tau=1: oracle computes sigma and sum p log(p/q).
  historical[0] = {0.0, 1.0};
  const Vec z = {1.0, 0.0};
  const double e = std::exp(1.0);
  const Vec p = {e / (1 + e), 1 / (1 + e)};
  const Vec q = {1 / (1 + e), e / (1 + e)};
  double expected = 0.0;
  for (int j = 0; j < 2; ++j) expected += p[j] * std::log(p[j] / q[j]);
  CHECK(expected == doctest::Approx(0.462117).epsilon(1e-5));
  CHECK(loss_intertask({z}, {0}, refs, 1.0) == doctest::Approx(expected));
}

TEST_CASE("loss_intertask: invariant under shifting z and reference") {
  std::map<int, Vec> historical = {{0, {0.3, -0.7, 1.1}}};
  proto::ReferenceResolver refs;
  refs.historical = &historical;
  const double a = loss_intertask({{1.0, 2.0, -0.5}}, {0}, refs, 0.8);
  historical[0] = {0.3 + 5.0, -0.7 + 5.0, 1.1 + 5.0};
  const double b = loss_intertask({{1.0 + 5.0, 2.0 + 5.0, -0.5 + 5.0}}, {0}, refs, 0.8);
  CHECK(a == doctest::Approx(b));
}

TEST_CASE("total_loss: ablations and composition") {
  const auto mc = tiny_config();
  const auto params = ModelParams::init(mc, 7);
  data::LabeledDataset ds;
  ds.class_count = mc.num_classes;
  auto rng = make_rng(3);
  std::normal_distribution<double> n(0, 1);
  for (int i = 0; i < 6; ++i) {
    ds.features.push_back({n(rng), n(rng), n(rng)});
    ds.labels.push_back(i % 3);
  }
  const auto batch = whole_batch(ds);

  std::map<int, Vec> protos;
  std::map<int, Vec> historical;
  std::map<int, int> cluster;
  std::set<int> minority = {0, 1};
  std::vector<Vec> centroids = {{0.1, 0.1, 0.1, 0.1}, {-0.2, 0.0, 0.2, 0.0}};
  for (int k = 0; k < 3; ++k) {
    protos[k] = {0.1 * k, -0.1 * k, 0.05, 0.2};
    historical[k] = {0.2, 0.1 * k, -0.05, 0.0};
    cluster[k] = k % 2;
  }
  proto::ReferenceResolver refs;
  refs.historical = &historical;
  ProtoContext ctx;
  ctx.global_protos = &protos;
  ctx.semantic_centroids = &centroids;
  ctx.cluster_of_class = &cluster;
  ctx.minority = &minority;
  ctx.references = &refs;

  Hyperparams hyper;
  hyper.alpha = 0.7;

  // All regularizers disabled: total equals the cross entropy exactly.
  const auto off = total_loss(batch, params, ctx, hyper, LossToggles{false, false, false});
  CHECK(off.total == off.l_c);
  CHECK(off.l_p == 0.0);
  CHECK(off.l_i == 0.0);
  CHECK(off.l_s == 0.0);

  // Full objective composes the three component oracles.
  const auto full = total_loss(batch, params, ctx, hyper, LossToggles{true, true, true});
  std::vector<Vec> batch_z;
  for (size_t i = 0; i < ds.size(); ++i) batch_z.push_back(forward(params, ds.features[i]).z);
  const double lp = loss_prototype(batch_z, ds.labels, protos);
  const double ls = loss_semantic(batch_z, ds.labels, centroids, cluster, minority);
  const double li = loss_intertask(batch_z, ds.labels, refs, hyper.kl_temperature);
  CHECK(full.l_p == doctest::Approx(lp).epsilon(1e-12));
  CHECK(full.l_s == doctest::Approx(ls).epsilon(1e-12));
  CHECK(full.l_i == doctest::Approx(li).epsilon(1e-12));
  CHECK(full.total == doctest::Approx(off.l_c + lp + li + 0.7 * ls).epsilon(1e-12));
  CHECK(full.l_c == off.l_c);

  // alpha = 0 removes the semantic term from the total.
  Hyperparams h0 = hyper;
  h0.alpha = 0.0;
  const auto a0 = total_loss(batch, params, ctx, h0, LossToggles{true, true, true});
  CHECK(a0.total == doctest::Approx(off.l_c + lp + li).epsilon(1e-12));

  // Nonnegativity of every term.
  for (const auto& lb : {off, full, a0}) {
    CHECK(lb.l_c >= 0.0);
    CHECK(lb.l_p >= 0.0);
    CHECK(lb.l_i >= 0.0);
    CHECK(lb.l_s >= 0.0);
    CHECK(lb.total >= 0.0);
  }
}

TEST_CASE("backward: finite differences agree (quick oracle)") {
  gradcheck::Options o;
  o.instances = 4;
  o.seed = 11;
  const auto rep = gradcheck::run_gradient_check(o);
  INFO(rep.detail);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("backward: regularizers at their stationary point add exactly nothing") {
  const auto mc = tiny_config();
  const auto params = ModelParams::init(mc, 19);
  data::LabeledDataset ds;
  ds.class_count = mc.num_classes;
  ds.features.push_back({0.4, -0.2, 0.9});
  ds.labels.push_back(1);
  const auto batch = whole_batch(ds);

  // Prototypes and references equal to the current feature vector.
  const Vec z = forward(params, ds.features[0]).z;
  std::map<int, Vec> protos = {{1, z}};
  std::map<int, Vec> historical = {{1, z}};
  proto::ReferenceResolver refs;
  refs.historical = &historical;
  ProtoContext ctx;
  ctx.global_protos = &protos;
  ctx.references = &refs;

  Hyperparams hyper;
  const auto base = backward(batch, params, ctx, hyper, LossToggles{false, false, false});
  const auto reg = backward(batch, params, ctx, hyper, LossToggles{true, true, false});
  CHECK(params_equal(base, reg));
}

TEST_CASE("backward: gradient attributable to the semantic loss is linear in alpha") {
  const auto mc = tiny_config();
  const auto params = ModelParams::init(mc, 23);
  data::LabeledDataset ds;
  ds.class_count = mc.num_classes;
  auto rng = make_rng(29);
  std::normal_distribution<double> n(0, 1);
  for (int i = 0; i < 4; ++i) {
    ds.features.push_back({n(rng), n(rng), n(rng)});
    ds.labels.push_back(i % 3);
  }
  const auto batch = whole_batch(ds);
  std::vector<Vec> centroids = {{0.5, 0.0, -0.5, 0.2}};
  std::map<int, int> cluster = {{0, 0}, {1, 0}, {2, 0}};
  std::set<int> minority = {0, 2};
  ProtoContext ctx;
  ctx.semantic_centroids = &centroids;
  ctx.cluster_of_class = &cluster;
  ctx.minority = &minority;

  auto grad_at = [&](double alpha) {
    Hyperparams h;
    h.alpha = alpha;
    return backward(batch, params, ctx, h, LossToggles{false, false, true});
  };
  const auto g0 = grad_at(0.0);
  const auto g1 = grad_at(1.0);
  const auto g2 = grad_at(2.0);

  auto check_linear = [&](const Vec& a0, const Vec& a1, const Vec& a2) {
    for (size_t i = 0; i < a0.size(); ++i) {
      const double d1 = a1[i] - a0[i];
      const double d2 = a2[i] - a0[i];
      CHECK(d2 == doctest::Approx(2.0 * d1).epsilon(1e-9));
    }
  };
  check_linear(g0.w1.data, g1.w1.data, g2.w1.data);
  check_linear(g0.w2.data, g1.w2.data, g2.w2.data);
  check_linear(g0.wc.data, g1.wc.data, g2.wc.data);
}

TEST_CASE("sgd_step: closed-form updates") {
  const auto mc = tiny_config();
  auto params = ModelParams::zeros(mc);
  auto grads = ModelParams::zeros(mc);
  auto state = OptimizerState::zeros_like(params);

  Hyperparams h;
  h.momentum = 0.0;
  h.weight_decay = 0.0;

  // Zero gradient, zero velocity, zero weight decay: unchanged.
  auto before = params;
  sgd_step(params, grads, state, h);
  CHECK(params_equal(params, before));

  // One step without momentum: theta - lr * g.
  grads.w1(0, 0) = 2.0;
  sgd_step(params, grads, state, h);
  CHECK(params.w1(0, 0) == doctest::Approx(-0.02));

  // Two steps with momentum 0.9 and constant gradient g: displacement
  // lr*(g + 1.9 g).
  params = ModelParams::zeros(mc);
  state = OptimizerState::zeros_like(params);
  h.momentum = 0.9;
  sgd_step(params, grads, state, h);
  sgd_step(params, grads, state, h);
  CHECK(params.w1(0, 0) == doctest::Approx(-0.01 * (2.0 + 1.9 * 2.0)));
}

TEST_CASE("training on well-separated blobs reaches 99% with cross entropy alone") {
  const auto ds = data::synth_blobs(4, 8, 50, 0.05, 3);
  ModelConfig mc;
  mc.input_dim = 8;
  mc.hidden_dim = 16;
  mc.feature_dim = 8;
  mc.num_classes = 4;
  auto params = ModelParams::init(mc, 5);
  auto state = OptimizerState::zeros_like(params);
  Hyperparams h;
  h.lr = 0.05;
  ProtoContext ctx;
  const LossToggles off{false, false, false};

  auto rng = make_rng(17);
  std::vector<int> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  int steps = 0;
  BatchView batch;
  batch.dataset = &ds;
  while (steps < 200) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t from = 0; from < order.size() && steps < 200; from += 32) {
      const size_t to = std::min(order.size(), from + 32);
      batch.indices.assign(order.begin() + from, order.begin() + to);
      const auto g = backward(batch, params, ctx, h, off);
      sgd_step(params, g, state, h);
      ++steps;
    }
  }

  int correct = 0;
  for (size_t i = 0; i < ds.size(); ++i) {
    const auto fw = forward(params, ds.features[i]);
    int pred = 0;
    for (size_t j = 1; j < fw.logits.size(); ++j)
      if (fw.logits[j] > fw.logits[pred]) pred = static_cast<int>(j);
    if (pred == ds.labels[i]) ++correct;
  }
  CHECK(static_cast<double>(correct) / ds.size() >= 0.99);
}
