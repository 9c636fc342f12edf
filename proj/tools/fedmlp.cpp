#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fedmlp/config.hpp"
#include "fedmlp/federation.hpp"
#include "fedmlp/gradcheck.hpp"
#include "fedmlp/metrics.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace fedmlp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 1;
constexpr int kExitRuntimeError = 2;

struct CommonOpts {
  std::string config_file;
  std::vector<std::string> sets;
  std::string output_dir;
  // Convenience overrides for the most-used knobs.
  std::string gamma, seed, strategy, epochs, threads;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_output) {
  cmd->add_option("--config", o.config_file, "flat key=value config file");
  cmd->add_option("--set", o.sets, "override any config key, e.g. --set hyper.alpha=0.5");
  cmd->add_option("--gamma", o.gamma, "override partition.gamma");
  cmd->add_option("--seed", o.seed, "override run.seed");
  cmd->add_option("--strategy", o.strategy, "override strategy");
  cmd->add_option("--epochs", o.epochs, "override run.epochs");
  cmd->add_option("--threads", o.threads, "override run.threads");
  if (with_output) cmd->add_option("--output", o.output_dir, "output directory");
}

std::map<std::string, std::string> collect_overrides(const CommonOpts& o) {
  std::map<std::string, std::string> kv;
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw config::ConfigError({"--set expects key=value, got '" + s + "'"});
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  if (!o.gamma.empty()) kv["partition.gamma"] = o.gamma;
  if (!o.seed.empty()) kv["run.seed"] = o.seed;
  if (!o.strategy.empty()) kv["strategy"] = o.strategy;
  if (!o.epochs.empty()) kv["run.epochs"] = o.epochs;
  if (!o.threads.empty()) kv["run.threads"] = o.threads;
  if (!o.output_dir.empty()) kv["output.dir"] = o.output_dir;
  return kv;
}

fs::path resolve_output_dir(const std::string& dir) {
  if (dir.empty()) throw config::ConfigError({"output directory required (--output)"});
  fs::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv("FEDMLP_OUTPUT_ROOT")) p = fs::path(root) / p;
  }
  return p;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << content;
}

json prototypes_json(const federation::ServerState& server) {
  json j;
  json global = json::object();
  for (const auto& [cls, vec] : server.global_protos.protos)
    global[std::to_string(cls)] = vec;
  j["global"] = global;
  json semantic;
  semantic["centroids"] = server.global_semantic.centroids;
  json assignment = json::object();
  for (const auto& [cls, idx] : server.global_semantic.assignment)
    assignment[std::to_string(cls)] = idx;
  semantic["cluster_of_class"] = assignment;
  j["semantic"] = semantic;
  j["minority"] = std::vector<int>(server.minority.classes.begin(),
                                   server.minority.classes.end());
  return j;
}

json summary_json(const metrics::MetricsLog& log) {
  json j;
  j["rounds"] = log.records.size();
  j["window"] = 10;
  j["note"] = "final metrics are the mean over the last 10 rounds";
  json m = json::object();
  for (const auto& [key, val] : metrics::final_summary(log)) {
    if (val)
      m[key] = *val;
    else
      m[key] = nullptr;
  }
  j["final"] = m;
  return j;
}

std::string embeddings_csv(const model::ModelParams& params,
                           const data::LabeledDataset& dataset) {
  std::string out = "sample_id,label";
  const int d = params.feature_dim();
  for (int j = 0; j < d; ++j) out += ",z" + std::to_string(j);
  out += "\n";
  char buf[40];
  for (size_t i = 0; i < dataset.size(); ++i) {
    const auto fw = model::forward(params, dataset.features[i]);
    out += std::to_string(i) + "," + std::to_string(dataset.labels[i]);
    for (int j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof(buf), "%.10g", fw.z[j]);
      out += ",";
      out += buf;
    }
    out += "\n";
  }
  return out;
}

// Runs one experiment and writes the standard output files. The .incomplete
// marker stays behind if anything throws mid-way.
federation::ExperimentResult run_into(const config::ExperimentConfig& cfg,
                                      const fs::path& dir, bool with_embeddings) {
  fs::create_directories(dir);
  write_file(dir / ".incomplete", "");
  write_file(dir / "config.resolved", config::resolved_config(cfg));

  auto result = federation::run_experiment(cfg);
  write_file(dir / "metrics.csv", metrics::to_csv(result.log));
  write_file(dir / "metrics.jsonl", metrics::to_jsonl(result.log));
  write_file(dir / "summary.json", summary_json(result.log).dump(2) + "\n");
  write_file(dir / "prototypes.json", prototypes_json(result.server).dump(2) + "\n");
  if (with_embeddings)
    write_file(dir / "embeddings.csv",
               embeddings_csv(result.server.global_params, result.balanced_test));
  fs::remove(dir / ".incomplete");
  return result;
}

std::vector<uint64_t> parse_seed_list(const std::string& s) {
  std::vector<uint64_t> seeds;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      if (!cur.empty()) {
        seeds.push_back(std::stoull(cur));
        cur.clear();
      }
    } else {
      cur += c;
    }
  }
  if (seeds.empty()) throw config::ConfigError({"--seeds expects a comma-separated list"});
  return seeds;
}

int cmd_run(const CommonOpts& opts, bool with_embeddings) {
  const auto cfg = config::parse_config(opts.config_file, collect_overrides(opts));
  const fs::path dir = resolve_output_dir(cfg.output_dir);
  const auto result = run_into(cfg, dir, with_embeddings);
  const auto final = metrics::final_summary(result.log);
  std::cout << "run complete: " << result.log.records.size() << " rounds -> " << dir.string()
            << "\n";
  if (final.at("a_glo"))
    std::cout << "final a_glo (last-10 mean): " << *final.at("a_glo") << "\n";
  return kExitOk;
}

int cmd_sweep(const CommonOpts& opts, const std::string& seeds_arg) {
  const auto overrides = collect_overrides(opts);
  const auto seeds = parse_seed_list(seeds_arg);
  auto base_cfg = config::parse_config(opts.config_file, overrides);
  const fs::path root = resolve_output_dir(base_cfg.output_dir);
  fs::create_directories(root);
  write_file(root / ".incomplete", "");

  std::map<std::string, std::vector<double>> columns;
  for (uint64_t s : seeds) {
    auto cfg = base_cfg;
    cfg.seed = s;
    const fs::path dir = root / ("seed_" + std::to_string(s));
    cfg.output_dir = dir.string();
    const auto result = run_into(cfg, dir, false);
    for (const auto& [key, val] : metrics::final_summary(result.log))
      if (val) columns[key].push_back(*val);
    std::cout << "seed " << s << " done\n";
  }

  json j;
  j["seeds"] = seeds;
  json stats = json::object();
  for (const auto& [key, vals] : columns) {
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= vals.size();
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    const double stddev = vals.size() > 1 ? std::sqrt(var / (vals.size() - 1)) : 0.0;
    stats[key] = {{"mean", mean}, {"std", stddev}, {"values", vals}};
  }
  j["metrics"] = stats;
  write_file(root / "sweep_summary.json", j.dump(2) + "\n");
  fs::remove(root / ".incomplete");
  std::cout << "sweep complete: " << seeds.size() << " runs -> " << root.string() << "\n";
  return kExitOk;
}

int cmd_check_grad(int instances, uint64_t seed) {
  gradcheck::Options o;
  o.instances = instances;
  o.seed = seed;
  const auto rep = gradcheck::run_gradient_check(o);
  std::printf("gradient check: %d instances x %d toggle combos, %ld parameters\n",
              rep.instances, rep.combos, rep.parameters_checked);
  std::printf("max relative error %.3g (tolerance %.3g), %.2fs\n", rep.max_rel_err,
              o.tolerance, rep.seconds);
  if (!rep.pass) {
    std::printf("FAILED: %s\n", rep.detail.c_str());
    return kExitRuntimeError;
  }
  std::printf("OK\n");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated multi-level prototype learning simulator"};
  app.require_subcommand(1);

  CommonOpts run_opts;
  auto* run = app.add_subcommand("run", "run one experiment and write metrics");
  add_common(run, run_opts, true);

  CommonOpts sweep_opts;
  std::string seeds_arg;
  auto* sweep = app.add_subcommand("sweep", "run a seed list and summarize mean/std");
  add_common(sweep, sweep_opts, true);
  sweep->add_option("--seeds", seeds_arg, "comma-separated seed list")->required();

  int gc_instances = 20;
  uint64_t gc_seed = 1;
  auto* check = app.add_subcommand("check-grad", "finite-difference gradient oracle");
  check->add_option("--instances", gc_instances, "random instances to check");
  check->add_option("--seed", gc_seed, "oracle seed");

  CommonOpts dump_opts;
  auto* dump = app.add_subcommand("dump-embeddings",
                                  "run an experiment and dump balanced-test embeddings");
  add_common(dump, dump_opts, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_opts, false);
    if (sweep->parsed()) return cmd_sweep(sweep_opts, seeds_arg);
    if (check->parsed()) return cmd_check_grad(gc_instances, gc_seed);
    if (dump->parsed()) return cmd_run(dump_opts, true);
  } catch (const config::ConfigError& e) {
    std::cerr << "config error:\n";
    for (const auto& p : e.problems) std::cerr << "  - " << p << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
  return kExitOk;
}
