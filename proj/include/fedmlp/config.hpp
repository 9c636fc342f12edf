#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedmlp/dataset.hpp"
#include "fedmlp/model.hpp"

namespace fedmlp::config {

enum class Strategy { FedAvg, FedProx, FedProto, FedMlp };
enum class AggregationScope { Full, ExtractorOnly };
enum class Schedule { Sequential, Interleaved };
enum class DataSource { Synth, Idx, Csv };

struct StrategyConfig {
  Strategy strategy = Strategy::FedMlp;
  double fedprox_mu = 0.01;
  model::LossToggles toggles;  // only meaningful for fedmlp
  AggregationScope scope = AggregationScope::Full;
};

struct PrototypeConfig {
  int local_clusters = 0;    // u; 0 = auto
  int global_clusters = 0;   // v; 0 = auto
  bool weighted_aggregation = false;
  bool class_mean_init = false;
};

struct SynthConfig {
  int classes = 10;
  int dim = 16;
  int per_class = 200;
  double spread = 0.3;
};

struct ExperimentConfig {
  DataSource source = DataSource::Synth;
  std::string idx_images;
  std::string idx_labels;
  std::string csv_path;
  SynthConfig synth;

  data::PartitionSpec partition;
  double test_fraction = 0.2;

  StrategyConfig strategy;
  PrototypeConfig proto;
  model::Hyperparams hyper;
  int hidden_dim = 64;
  int feature_dim = 32;

  Schedule schedule = Schedule::Sequential;
  int epochs = 50;
  int rounds_local = 20;
  int m_active = 10;
  uint64_t seed = 1;
  int threads = 1;
  std::string output_dir;
};

// All validation problems at once, so the user fixes them in one pass.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  std::vector<std::string> problems;
};

// Flat "key = value" document; '#' starts a comment. Empty path = defaults.
// Overrides are applied on top of the file before validation.
ExperimentConfig parse_config(const std::string& file_path,
                              const std::map<std::string, std::string>& flag_overrides = {});

// Serializes every knob, sorted by key, with round-trippable doubles. Parsing
// the result reproduces the config exactly.
std::string resolved_config(const ExperimentConfig& cfg);

const char* strategy_name(Strategy s);

}  // namespace fedmlp::config
