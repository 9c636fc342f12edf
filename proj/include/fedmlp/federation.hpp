#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "fedmlp/config.hpp"
#include "fedmlp/dataset.hpp"
#include "fedmlp/metrics.hpp"
#include "fedmlp/model.hpp"
#include "fedmlp/prototypes.hpp"

namespace fedmlp::federation {

// One client's upload at the end of a round.
struct RoundReport {
  int client_id = -1;
  model::ModelParams params;
  proto::LocalPrototypeSet protos;   // empty unless the strategy uploads them
  std::map<int, int> class_counts;
  int samples_total = 0;
  model::LossBreakdown mean_losses;  // averaged over this round's SGD steps
  int steps = 0;
  bool uploaded_protos = false;
};

struct ServerState {
  model::ModelParams global_params;
  proto::GlobalPrototypeSet global_protos;
  proto::SemanticPrototypeSet global_semantic;
  proto::MinoritySet minority;
  std::map<int, long long> cumulative_class_counts;
  int round_index = 0;
};

// The immutable view clients train against during a round.
struct ServerSnapshot {
  model::ModelParams params;
  std::map<int, Vec> global_protos;
  proto::SemanticPrototypeSet semantic;
  std::set<int> minority;
};

struct ClientState {
  int client_id = -1;
  model::ModelParams params;
  model::OptimizerState opt;
  data::TaskStream stream;
  int stage = 1;
  proto::LocalPrototypeSet memory;  // cumulative over all stages trained so far
  proto::SemanticPrototypeSet local_semantic;
  // Prototype memory frozen at the first entry into each stage; the
  // inter-task references for stage t come from stages < t.
  std::map<int, std::map<int, Vec>> reference_at_stage;
};

// Uniform sample without replacement from a per-round seeded stream,
// returned sorted ascending.
std::vector<int> select_clients(const std::vector<int>& all_clients, int m_active,
                                uint64_t seed, int round);

ServerSnapshot make_snapshot(const ServerState& server);

// Runs rounds_local epochs of mini-batch SGD on the client's current task
// under the given strategy, recomputes its prototypes from post-training
// features, refreshes its local semantic set, and emits the upload.
RoundReport local_update(ClientState& client, const ServerSnapshot& snapshot,
                         const config::StrategyConfig& strat,
                         const config::PrototypeConfig& pcfg,
                         const model::Hyperparams& hyper, int rounds_local,
                         uint64_t run_seed, int round);

// Weighted parameter averaging, prototype aggregation, minority-set refresh,
// and global semantic re-clustering. Reports are reduced in canonical
// client-id order; an empty list leaves the state unchanged.
void aggregate(ServerState& server, std::vector<RoundReport> reports,
               const config::PrototypeConfig& pcfg, uint64_t run_seed);

// The strategy's local objective: which regularizers are live.
model::LossToggles effective_toggles(const config::StrategyConfig& strat);

// Whether clients compute prototypes at all, and whether they upload them.
bool uses_local_prototypes(const config::StrategyConfig& strat);
bool uploads_prototypes(const config::StrategyConfig& strat);

// The prepared data environment of an experiment, exposed so tests can
// reproduce trajectories against the same inputs.
struct Environment {
  data::LabeledDataset base;
  std::vector<data::TaskStream> streams;
  data::LabeledDataset balanced_test;
  model::ModelConfig model_config;
};

Environment prepare_environment(const config::ExperimentConfig& cfg);

struct ExperimentResult {
  metrics::MetricsLog log;
  ServerState server;
  std::vector<ClientState> clients;
  data::LabeledDataset balanced_test;
};

// Full schedule: stages advance sequentially (or interleaved), epochs rounds
// per stage, one evaluation record per round. Deterministic for a fixed
// config and seed, for any thread count.
ExperimentResult run_experiment(const config::ExperimentConfig& cfg);

}  // namespace fedmlp::federation
