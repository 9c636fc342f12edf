#include "fedmlp/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace fedmlp::config {

namespace {

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Collects typed lookups and every problem found along the way.
struct Reader {
  std::map<std::string, std::string> kv;
  std::set<std::string> consumed;
  std::vector<std::string> problems;

  bool has(const std::string& key) {
    return kv.count(key) != 0;
  }

  std::string raw(const std::string& key) {
    consumed.insert(key);
    return kv.at(key);
  }

  void get(const std::string& key, std::string& out) {
    if (has(key)) out = raw(key);
  }

  void get(const std::string& key, int& out) {
    if (!has(key)) return;
    const std::string v = raw(key);
    try {
      size_t pos = 0;
      const long parsed = std::stol(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing");
      out = static_cast<int>(parsed);
    } catch (const std::exception&) {
      problems.push_back(key + ": expected integer, got '" + v + "'");
    }
  }

  void get(const std::string& key, uint64_t& out) {
    if (!has(key)) return;
    const std::string v = raw(key);
    try {
      size_t pos = 0;
      const unsigned long long parsed = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing");
      out = parsed;
    } catch (const std::exception&) {
      problems.push_back(key + ": expected unsigned integer, got '" + v + "'");
    }
  }

  void get(const std::string& key, double& out) {
    if (!has(key)) return;
    const std::string v = raw(key);
    try {
      size_t pos = 0;
      const double parsed = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing");
      out = parsed;
    } catch (const std::exception&) {
      problems.push_back(key + ": expected number, got '" + v + "'");
    }
  }

  void get(const std::string& key, bool& out) {
    if (!has(key)) return;
    const std::string v = raw(key);
    if (v == "true" || v == "1") {
      out = true;
    } else if (v == "false" || v == "0") {
      out = false;
    } else {
      problems.push_back(key + ": expected true/false, got '" + v + "'");
    }
  }

  template <class Enum>
  void get_enum(const std::string& key, Enum& out,
                const std::vector<std::pair<std::string, Enum>>& values) {
    if (!has(key)) return;
    const std::string v = raw(key);
    for (const auto& [name, e] : values) {
      if (v == name) {
        out = e;
        return;
      }
    }
    std::vector<std::string> names;
    for (const auto& p : values) names.push_back(p.first);
    problems.push_back(key + ": expected one of {" + join(names, ", ") + "}, got '" + v + "'");
  }
};

}  // namespace

ConfigError::ConfigError(std::vector<std::string> probs)
    : std::runtime_error("config: " + join(probs, "; ")), problems(std::move(probs)) {}

ExperimentConfig parse_config(const std::string& file_path,
                              const std::map<std::string, std::string>& flag_overrides) {
  Reader r;
  if (!file_path.empty()) {
    std::ifstream f(file_path);
    if (!f) throw ConfigError({"cannot open config file " + file_path});
    std::string line;
    size_t line_no = 0;
    while (std::getline(f, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        r.problems.push_back("line " + std::to_string(line_no) + ": expected key = value");
        continue;
      }
      r.kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
  }
  for (const auto& [k, v] : flag_overrides) r.kv[k] = v;

  ExperimentConfig c;
  r.get_enum("dataset.source", c.source,
             {{"synth", DataSource::Synth}, {"idx", DataSource::Idx}, {"csv", DataSource::Csv}});
  r.get("dataset.images", c.idx_images);
  r.get("dataset.labels", c.idx_labels);
  r.get("dataset.csv", c.csv_path);
  r.get("synth.classes", c.synth.classes);
  r.get("synth.dim", c.synth.dim);
  r.get("synth.per_class", c.synth.per_class);
  r.get("synth.spread", c.synth.spread);

  r.get_enum("partition.strategy", c.partition.strategy,
             {{"sharding", data::PartitionStrategy::Sharding},
              {"dirichlet", data::PartitionStrategy::Dirichlet}});
  r.get("partition.shards_per_task", c.partition.shards_per_task);
  r.get("partition.beta", c.partition.beta);
  r.get("partition.gamma", c.partition.gamma);
  r.get("partition.clients", c.partition.num_clients);
  r.get("partition.tasks", c.partition.tasks_per_client);
  r.get("partition.test_fraction", c.test_fraction);

  r.get_enum("strategy", c.strategy.strategy,
             {{"fedavg", Strategy::FedAvg},
              {"fedprox", Strategy::FedProx},
              {"fedproto", Strategy::FedProto},
              {"fedmlp", Strategy::FedMlp}});
  r.get("fedprox.mu", c.strategy.fedprox_mu);
  r.get("loss.prototype", c.strategy.toggles.prototype);
  r.get("loss.intertask", c.strategy.toggles.intertask);
  r.get("loss.semantic", c.strategy.toggles.semantic);
  r.get_enum("aggregation.scope", c.strategy.scope,
             {{"full", AggregationScope::Full},
              {"extractor_only", AggregationScope::ExtractorOnly}});

  r.get("proto.local_clusters", c.proto.local_clusters);
  r.get("proto.global_clusters", c.proto.global_clusters);
  r.get("proto.weighted_aggregation", c.proto.weighted_aggregation);
  r.get("proto.class_mean_init", c.proto.class_mean_init);

  r.get("hyper.alpha", c.hyper.alpha);
  r.get("hyper.lr", c.hyper.lr);
  r.get("hyper.momentum", c.hyper.momentum);
  r.get("hyper.weight_decay", c.hyper.weight_decay);
  r.get("hyper.batch_size", c.hyper.batch_size);
  r.get("hyper.kl_temperature", c.hyper.kl_temperature);
  r.get("hyper.smooth_l1_delta", c.hyper.smooth_l1_delta);
  r.get("model.hidden", c.hidden_dim);
  r.get("model.feature_dim", c.feature_dim);

  r.get_enum("schedule", c.schedule,
             {{"sequential", Schedule::Sequential}, {"interleaved", Schedule::Interleaved}});
  r.get("run.epochs", c.epochs);
  r.get("run.rounds_local", c.rounds_local);
  r.get("run.m_active", c.m_active);
  r.get("run.seed", c.seed);
  r.get("run.threads", c.threads);
  r.get("output.dir", c.output_dir);

  for (const auto& [k, v] : r.kv)
    if (!r.consumed.count(k)) r.problems.push_back("unknown key '" + k + "'");

  // Cross-field validation; every violation is reported.
  auto& p = r.problems;
  if (c.source == DataSource::Idx && (c.idx_images.empty() || c.idx_labels.empty()))
    p.push_back("dataset.source=idx requires dataset.images and dataset.labels");
  if (c.source == DataSource::Csv && c.csv_path.empty())
    p.push_back("dataset.source=csv requires dataset.csv");
  if (c.synth.classes < 2) p.push_back("synth.classes must be >= 2");
  if (c.synth.dim < 1) p.push_back("synth.dim must be >= 1");
  if (c.synth.per_class < 1) p.push_back("synth.per_class must be >= 1");
  if (!(c.synth.spread > 0)) p.push_back("synth.spread must be > 0");
  if (c.partition.shards_per_task < 1) p.push_back("partition.shards_per_task must be >= 1");
  if (!(c.partition.beta > 0)) p.push_back("partition.beta must be > 0");
  if (!(c.partition.gamma > 0) || c.partition.gamma > 1)
    p.push_back("partition.gamma must be in (0, 1]");
  if (c.partition.num_clients < 1) p.push_back("partition.clients must be >= 1");
  if (c.partition.tasks_per_client < 1) p.push_back("partition.tasks must be >= 1");
  if (!(c.test_fraction > 0 && c.test_fraction < 1))
    p.push_back("partition.test_fraction must be in (0, 1)");
  if (!(c.strategy.fedprox_mu >= 0)) p.push_back("fedprox.mu must be >= 0");
  if (c.proto.local_clusters < 0) p.push_back("proto.local_clusters must be >= 0");
  if (c.proto.global_clusters < 0) p.push_back("proto.global_clusters must be >= 0");
  if (!(c.hyper.alpha >= 0)) p.push_back("hyper.alpha must be >= 0");
  if (!(c.hyper.lr > 0)) p.push_back("hyper.lr must be > 0");
  if (!(c.hyper.momentum >= 0)) p.push_back("hyper.momentum must be >= 0");
  if (!(c.hyper.weight_decay >= 0)) p.push_back("hyper.weight_decay must be >= 0");
  if (c.hyper.batch_size < 1) p.push_back("hyper.batch_size must be >= 1");
  if (!(c.hyper.kl_temperature > 0)) p.push_back("hyper.kl_temperature must be > 0");
  if (!(c.hyper.smooth_l1_delta > 0)) p.push_back("hyper.smooth_l1_delta must be > 0");
  if (c.hidden_dim < 1) p.push_back("model.hidden must be >= 1");
  if (c.feature_dim < 1) p.push_back("model.feature_dim must be >= 1");
  if (c.epochs < 1) p.push_back("run.epochs must be >= 1");
  if (c.rounds_local < 1) p.push_back("run.rounds_local must be >= 1");
  if (c.m_active < 1) p.push_back("run.m_active must be >= 1");
  if (c.m_active > c.partition.num_clients)
    p.push_back("run.m_active (" + std::to_string(c.m_active) +
                ") exceeds partition.clients (" + std::to_string(c.partition.num_clients) + ")");
  if (c.threads < 1) p.push_back("run.threads must be >= 1");

  if (!p.empty()) throw ConfigError(p);
  return c;
}

namespace {

std::string fmt_double(double v) {
  if (v == std::floor(v) && std::fabs(v) < 1e15) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
  }
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::FedAvg: return "fedavg";
    case Strategy::FedProx: return "fedprox";
    case Strategy::FedProto: return "fedproto";
    case Strategy::FedMlp: return "fedmlp";
  }
  return "?";
}

std::string resolved_config(const ExperimentConfig& c) {
  std::map<std::string, std::string> kv;
  kv["dataset.source"] = c.source == DataSource::Synth ? "synth"
                         : c.source == DataSource::Idx ? "idx"
                                                       : "csv";
  kv["dataset.images"] = c.idx_images;
  kv["dataset.labels"] = c.idx_labels;
  kv["dataset.csv"] = c.csv_path;
  kv["synth.classes"] = std::to_string(c.synth.classes);
  kv["synth.dim"] = std::to_string(c.synth.dim);
  kv["synth.per_class"] = std::to_string(c.synth.per_class);
  kv["synth.spread"] = fmt_double(c.synth.spread);
  kv["partition.strategy"] =
      c.partition.strategy == data::PartitionStrategy::Sharding ? "sharding" : "dirichlet";
  kv["partition.shards_per_task"] = std::to_string(c.partition.shards_per_task);
  kv["partition.beta"] = fmt_double(c.partition.beta);
  kv["partition.gamma"] = fmt_double(c.partition.gamma);
  kv["partition.clients"] = std::to_string(c.partition.num_clients);
  kv["partition.tasks"] = std::to_string(c.partition.tasks_per_client);
  kv["partition.test_fraction"] = fmt_double(c.test_fraction);
  kv["strategy"] = strategy_name(c.strategy.strategy);
  kv["fedprox.mu"] = fmt_double(c.strategy.fedprox_mu);
  kv["loss.prototype"] = c.strategy.toggles.prototype ? "true" : "false";
  kv["loss.intertask"] = c.strategy.toggles.intertask ? "true" : "false";
  kv["loss.semantic"] = c.strategy.toggles.semantic ? "true" : "false";
  kv["aggregation.scope"] =
      c.strategy.scope == AggregationScope::Full ? "full" : "extractor_only";
  kv["proto.local_clusters"] = std::to_string(c.proto.local_clusters);
  kv["proto.global_clusters"] = std::to_string(c.proto.global_clusters);
  kv["proto.weighted_aggregation"] = c.proto.weighted_aggregation ? "true" : "false";
  kv["proto.class_mean_init"] = c.proto.class_mean_init ? "true" : "false";
  kv["hyper.alpha"] = fmt_double(c.hyper.alpha);
  kv["hyper.lr"] = fmt_double(c.hyper.lr);
  kv["hyper.momentum"] = fmt_double(c.hyper.momentum);
  kv["hyper.weight_decay"] = fmt_double(c.hyper.weight_decay);
  kv["hyper.batch_size"] = std::to_string(c.hyper.batch_size);
  kv["hyper.kl_temperature"] = fmt_double(c.hyper.kl_temperature);
  kv["hyper.smooth_l1_delta"] = fmt_double(c.hyper.smooth_l1_delta);
  kv["model.hidden"] = std::to_string(c.hidden_dim);
  kv["model.feature_dim"] = std::to_string(c.feature_dim);
  kv["schedule"] = c.schedule == Schedule::Sequential ? "sequential" : "interleaved";
  kv["run.epochs"] = std::to_string(c.epochs);
  kv["run.rounds_local"] = std::to_string(c.rounds_local);
  kv["run.m_active"] = std::to_string(c.m_active);
  kv["run.seed"] = std::to_string(c.seed);
  kv["run.threads"] = std::to_string(c.threads);
  kv["output.dir"] = c.output_dir;

  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
  return os.str();
}

}  // namespace fedmlp::config
