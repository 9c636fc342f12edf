#include "fedmlp/federation.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "fedmlp/parallel.hpp"
#include "fedmlp/rng.hpp"

namespace fedmlp::federation {

using config::AggregationScope;
using config::Strategy;

std::vector<int> select_clients(const std::vector<int>& all_clients, int m_active,
                                uint64_t seed, int round) {
  if (m_active < 1) throw std::invalid_argument("select_clients: m_active must be >= 1");
  if (m_active > static_cast<int>(all_clients.size()))
    throw std::invalid_argument("select_clients: m_active exceeds client count");
  auto rng = make_rng(seed, {tag("select"), static_cast<uint64_t>(round)});
  std::vector<int> pool = all_clients;
  for (int i = 0; i < m_active; ++i) {
    std::uniform_int_distribution<int> pick(i, static_cast<int>(pool.size()) - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(m_active);
  std::sort(pool.begin(), pool.end());
  return pool;
}

ServerSnapshot make_snapshot(const ServerState& server) {
  ServerSnapshot snap;
  snap.params = server.global_params;
  snap.global_protos = server.global_protos.protos;
  snap.semantic = server.global_semantic;
  snap.minority = server.minority.classes;
  return snap;
}

model::LossToggles effective_toggles(const config::StrategyConfig& strat) {
  model::LossToggles t{false, false, false};
  switch (strat.strategy) {
    case Strategy::FedAvg:
    case Strategy::FedProx:
      break;
    case Strategy::FedProto:
      t.prototype = true;
      break;
    case Strategy::FedMlp:
      t = strat.toggles;
      break;
  }
  return t;
}

bool uses_local_prototypes(const config::StrategyConfig& strat) {
  const auto t = effective_toggles(strat);
  return !t.all_off();
}

bool uploads_prototypes(const config::StrategyConfig& strat) {
  const auto t = effective_toggles(strat);
  // The server needs prototypes for the global prototype space (L_P) and for
  // the global semantic clusters (L_S). The inter-task term is client-local.
  return t.prototype || t.semantic;
}

namespace {

void adopt_params(model::ModelParams& dst, const model::ModelParams& src,
                  AggregationScope scope) {
  if (scope == AggregationScope::Full) {
    dst = src;
    return;
  }
  dst.w1 = src.w1;
  dst.b1 = src.b1;
  dst.w2 = src.w2;
  dst.b2 = src.b2;
}

void add_prox_term(model::Gradients& g, const model::ModelParams& theta,
                   const model::ModelParams& anchor, double mu) {
  auto add = [mu](Vec& grad, const Vec& t, const Vec& a) {
    for (size_t i = 0; i < grad.size(); ++i) grad[i] += mu * (t[i] - a[i]);
  };
  add(g.w1.data, theta.w1.data, anchor.w1.data);
  add(g.b1, theta.b1, anchor.b1);
  add(g.w2.data, theta.w2.data, anchor.w2.data);
  add(g.b2, theta.b2, anchor.b2);
  add(g.wc.data, theta.wc.data, anchor.wc.data);
  add(g.bc, theta.bc, anchor.bc);
}

proto::LocalPrototypeSet compute_local_prototypes(const model::ModelParams& params,
                                                  const data::LabeledDataset& task,
                                                  int client_id, int stage) {
  std::map<int, std::vector<Vec>> feats;
  for (size_t i = 0; i < task.size(); ++i)
    feats[task.labels[i]].push_back(model::forward(params, task.features[i]).z);
  proto::LocalPrototypeSet out;
  out.client_id = client_id;
  out.stage = stage;
  for (auto& [cls, fs] : feats)
    out.protos[cls] = {proto::compute_class_prototype(fs), static_cast<int>(fs.size())};
  return out;
}

}  // namespace

RoundReport local_update(ClientState& client, const ServerSnapshot& snapshot,
                         const config::StrategyConfig& strat,
                         const config::PrototypeConfig& pcfg,
                         const model::Hyperparams& hyper, int rounds_local,
                         uint64_t run_seed, int round) {
  if (client.stage < 1 || client.stage > static_cast<int>(client.stream.tasks.size()))
    throw std::invalid_argument("local_update: client stage out of range");
  const data::LabeledDataset& task = client.stream.tasks[client.stage - 1];

  RoundReport rep;
  rep.client_id = client.client_id;
  rep.samples_total = static_cast<int>(task.size());
  for (int y : task.labels) rep.class_counts[y]++;

  if (task.empty()) {
    rep.params = client.params;
    return rep;
  }

  if (strat.strategy != Strategy::FedProto)
    adopt_params(client.params, snapshot.params, strat.scope);

  const model::LossToggles toggles = effective_toggles(strat);

  model::ProtoContext ctx;
  if (toggles.prototype) ctx.global_protos = &snapshot.global_protos;
  if (toggles.semantic) {
    ctx.semantic_centroids = &snapshot.semantic.centroids;
    ctx.cluster_of_class = &snapshot.semantic.assignment;
    ctx.minority = &snapshot.minority;
  }
  proto::ReferenceResolver resolver;
  std::map<int, Vec> class_mean_refs;
  const std::map<int, Vec>& historical = client.reference_at_stage[client.stage];
  if (toggles.intertask) {
    resolver.historical = &historical;
    resolver.semantic_centroids = &client.local_semantic.centroids;
    ctx.references = &resolver;
  }

  const bool prox = strat.strategy == Strategy::FedProx && strat.fedprox_mu != 0.0;
  model::ModelParams anchor;
  if (prox) anchor = client.params;

  auto rng = make_rng(run_seed, {tag("client"), static_cast<uint64_t>(client.client_id),
                                 static_cast<uint64_t>(round)});
  std::vector<int> order(task.size());
  std::iota(order.begin(), order.end(), 0);

  model::LossBreakdown acc;
  int steps = 0;
  model::BatchView batch;
  batch.dataset = &task;
  for (int epoch = 0; epoch < rounds_local; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t from = 0; from < order.size(); from += hyper.batch_size) {
      const size_t to = std::min(order.size(), from + hyper.batch_size);
      batch.indices.assign(order.begin() + from, order.begin() + to);

      if (pcfg.class_mean_init && toggles.intertask &&
          !client.local_semantic.centroids.empty()) {
        // Per-class-mean initialization: new classes in this batch share the
        // centroid nearest to their mean feature vector.
        class_mean_refs.clear();
        std::map<int, std::vector<Vec>> zs;
        for (int idx : batch.indices) {
          const int y = task.labels[idx];
          if (historical.count(y)) continue;
          zs[y].push_back(model::forward(client.params, task.features[idx]).z);
        }
        for (auto& [cls, fs] : zs) {
          const Vec mean = proto::compute_class_prototype(fs);
          proto::ReferenceResolver nearest;
          nearest.semantic_centroids = &client.local_semantic.centroids;
          if (const Vec* c = nearest.resolve(cls, mean)) class_mean_refs[cls] = *c;
        }
        resolver.overrides = &class_mean_refs;
      }

      model::LossBreakdown lb;
      model::Gradients g = model::backward(batch, client.params, ctx, hyper, toggles, &lb);
      if (prox) add_prox_term(g, client.params, anchor, strat.fedprox_mu);
      model::sgd_step(client.params, g, client.opt, hyper);

      acc.l_c += lb.l_c;
      acc.l_p += lb.l_p;
      acc.l_i += lb.l_i;
      acc.l_s += lb.l_s;
      acc.total += lb.total;
      acc.unmapped_minority += lb.unmapped_minority;
      ++steps;
    }
  }
  if (steps > 0) {
    acc.l_c /= steps;
    acc.l_p /= steps;
    acc.l_i /= steps;
    acc.l_s /= steps;
    acc.total /= steps;
  }
  rep.mean_losses = acc;
  rep.steps = steps;

  if (uses_local_prototypes(strat)) {
    proto::LocalPrototypeSet current =
        compute_local_prototypes(client.params, task, client.client_id, client.stage);
    client.memory.client_id = client.client_id;
    client.memory.stage = client.stage;
    for (const auto& [cls, cp] : current.protos) client.memory.protos[cls] = cp;

    const int u = pcfg.local_clusters > 0
                      ? pcfg.local_clusters
                      : proto::default_local_clusters(static_cast<int>(client.memory.protos.size()));
    client.local_semantic = proto::local_semantic(
        client.memory, u,
        derive_seed(run_seed, {tag("osem"), static_cast<uint64_t>(client.client_id),
                               static_cast<uint64_t>(round)}));

    if (uploads_prototypes(strat)) {
      rep.protos = std::move(current);
      rep.uploaded_protos = true;
    }
  }

  rep.params = client.params;
  return rep;
}

void aggregate(ServerState& server, std::vector<RoundReport> reports,
               const config::PrototypeConfig& pcfg, uint64_t run_seed) {
  if (reports.empty()) return;
  std::sort(reports.begin(), reports.end(),
            [](const RoundReport& a, const RoundReport& b) { return a.client_id < b.client_id; });

  double weight_sum = 0.0;
  for (const auto& r : reports) weight_sum += r.samples_total;
  if (reports.size() == 1 && reports[0].samples_total > 0) {
    // Single reporter: exact copy rather than multiply-divide round trip.
    server.global_params = reports[0].params;
  } else if (weight_sum > 0.0) {
    model::ModelParams sum = reports[0].params;
    sum.visit([](Vec& t) { std::fill(t.begin(), t.end(), 0.0); });
    for (const auto& r : reports) {
      if (r.samples_total <= 0) continue;
      const double w = r.samples_total;
      auto acc = [&](Vec& dst, const Vec& src) {
        for (size_t i = 0; i < dst.size(); ++i) dst[i] += w * src[i];
      };
      acc(sum.w1.data, r.params.w1.data);
      acc(sum.b1, r.params.b1);
      acc(sum.w2.data, r.params.w2.data);
      acc(sum.b2, r.params.b2);
      acc(sum.wc.data, r.params.wc.data);
      acc(sum.bc, r.params.bc);
    }
    sum.visit([&](Vec& t) {
      for (double& x : t) x /= weight_sum;
    });
    server.global_params = std::move(sum);
  }

  std::vector<proto::LocalPrototypeSet> uploads;
  for (auto& r : reports)
    if (r.uploaded_protos && !r.protos.empty()) uploads.push_back(r.protos);
  if (!uploads.empty())
    server.global_protos = proto::aggregate_global(server.global_protos, std::move(uploads),
                                                   pcfg.weighted_aggregation);

  for (const auto& r : reports)
    for (const auto& [cls, n] : r.class_counts) server.cumulative_class_counts[cls] += n;
  server.minority = proto::minority_classes(server.cumulative_class_counts);

  if (!server.global_protos.empty()) {
    const int v = pcfg.global_clusters > 0
                      ? pcfg.global_clusters
                      : proto::default_global_clusters(
                            static_cast<int>(server.global_protos.protos.size()));
    server.global_semantic = proto::global_semantic(
        server.global_protos, v,
        derive_seed(run_seed, {tag("psem"), static_cast<uint64_t>(server.round_index)}));
  }
}

Environment prepare_environment(const config::ExperimentConfig& cfg) {
  Environment env;
  switch (cfg.source) {
    case config::DataSource::Synth:
      env.base = data::synth_blobs(cfg.synth.classes, cfg.synth.dim, cfg.synth.per_class,
                                   cfg.synth.spread, derive_seed(cfg.seed, {tag("data")}));
      break;
    case config::DataSource::Idx:
      env.base = data::load_idx(cfg.idx_images, cfg.idx_labels);
      break;
    case config::DataSource::Csv:
      env.base = data::load_csv(cfg.csv_path);
      break;
  }
  if (cfg.partition.gamma < 1.0)
    env.base = data::apply_longtail(env.base, cfg.partition.gamma,
                                    derive_seed(cfg.seed, {tag("longtail")}));

  const int num_partitions = cfg.partition.num_clients * cfg.partition.tasks_per_client;
  std::vector<data::LabeledDataset> parts;
  if (cfg.partition.strategy == data::PartitionStrategy::Sharding) {
    parts = data::partition_sharding(env.base, num_partitions, cfg.partition.shards_per_task,
                                     derive_seed(cfg.seed, {tag("partition")}));
  } else {
    parts = data::partition_dirichlet(env.base, num_partitions, cfg.partition.beta,
                                      derive_seed(cfg.seed, {tag("partition")}));
  }
  env.streams =
      data::build_task_streams(parts, cfg.partition.num_clients, cfg.partition.tasks_per_client,
                               cfg.test_fraction, derive_seed(cfg.seed, {tag("split")}));
  env.balanced_test =
      metrics::build_balanced_test(env.streams, derive_seed(cfg.seed, {tag("balanced")}));

  env.model_config.input_dim = env.base.dim();
  env.model_config.hidden_dim = cfg.hidden_dim;
  env.model_config.feature_dim = cfg.feature_dim;
  env.model_config.num_classes = env.base.class_count;
  return env;
}

namespace {

void enter_stage(ClientState& client, int stage) {
  if (!client.reference_at_stage.count(stage)) {
    std::map<int, Vec> snapshot;
    for (const auto& [cls, cp] : client.memory.protos) snapshot[cls] = cp.value;
    client.reference_at_stage[stage] = std::move(snapshot);
  }
  client.stage = stage;
}

}  // namespace

ExperimentResult run_experiment(const config::ExperimentConfig& cfg) {
  Environment env = prepare_environment(cfg);

  ExperimentResult result;
  result.balanced_test = env.balanced_test;
  ServerState& server = result.server;
  server.global_params = model::ModelParams::init(env.model_config, cfg.seed);

  auto& clients = result.clients;
  clients.resize(env.streams.size());
  std::vector<int> ids(env.streams.size());
  for (size_t m = 0; m < env.streams.size(); ++m) {
    clients[m].client_id = static_cast<int>(m);
    clients[m].params = server.global_params;
    clients[m].opt = model::OptimizerState::zeros_like(server.global_params);
    clients[m].stream = env.streams[m];
    ids[m] = static_cast<int>(m);
  }

  const int num_stages = cfg.partition.tasks_per_client;
  auto run_round = [&](int stage) {
    server.round_index++;
    const int round = server.round_index;
    for (auto& c : clients) enter_stage(c, stage);

    const std::vector<int> selected = select_clients(ids, cfg.m_active, cfg.seed, round);
    const ServerSnapshot snapshot = make_snapshot(server);

    std::vector<RoundReport> reports(selected.size());
    parallel_for(static_cast<int>(selected.size()), cfg.threads, [&](int i) {
      reports[i] = local_update(clients[selected[i]], snapshot, cfg.strategy, cfg.proto,
                                cfg.hyper, cfg.rounds_local, cfg.seed, round);
    });

    long long proto_bytes = 0;
    model::LossBreakdown mean;
    int reporters = 0;
    for (const auto& r : reports) {
      if (r.uploaded_protos)
        proto_bytes += static_cast<long long>(r.protos.protos.size()) *
                       env.model_config.feature_dim * static_cast<long long>(sizeof(double));
      if (r.steps > 0) {
        mean.l_c += r.mean_losses.l_c;
        mean.l_p += r.mean_losses.l_p;
        mean.l_i += r.mean_losses.l_i;
        mean.l_s += r.mean_losses.l_s;
        mean.total += r.mean_losses.total;
        ++reporters;
      }
    }

    aggregate(server, std::move(reports), cfg.proto, cfg.seed);

    std::vector<const model::ModelParams*> client_params;
    client_params.reserve(clients.size());
    for (const auto& c : clients) client_params.push_back(&c.params);
    metrics::RoundRecord rec =
        metrics::evaluate_round(server.global_params, client_params, env.streams, stage,
                                env.balanced_test, server.minority.classes, cfg.threads);
    rec.round = round;
    rec.stage = stage;
    if (reporters > 0) {
      rec.loss_ce = mean.l_c / reporters;
      rec.loss_prototype = mean.l_p / reporters;
      rec.loss_intertask = mean.l_i / reporters;
      rec.loss_semantic = mean.l_s / reporters;
      rec.loss_total = mean.total / reporters;
    }
    rec.proto_bytes = proto_bytes;
    result.log.records.push_back(rec);
  };

  if (cfg.schedule == config::Schedule::Sequential) {
    for (int stage = 1; stage <= num_stages; ++stage)
      for (int e = 0; e < cfg.epochs; ++e) run_round(stage);
  } else {
    for (int e = 0; e < cfg.epochs; ++e)
      for (int stage = 1; stage <= num_stages; ++stage) run_round(stage);
  }

  return result;
}

}  // namespace fedmlp::federation
