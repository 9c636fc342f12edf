#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "fedmlp/config.hpp"

using namespace fedmlp;
using namespace fedmlp::config;

namespace {

std::string write_tmp(const std::string& name, const std::string& content) {
  const auto path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream f(path);
  f << content;
  return path;
}

}  // namespace

TEST_CASE("parse_config: empty input yields the stock defaults") {
  const auto cfg = parse_config("");
  CHECK(cfg.hyper.lr == 0.01);
  CHECK(cfg.hyper.momentum == 0.9);
  CHECK(cfg.hyper.weight_decay == 1e-5);
  CHECK(cfg.hyper.batch_size == 32);
  CHECK(cfg.partition.tasks_per_client == 5);
  CHECK(cfg.m_active == 10);
  CHECK(cfg.epochs == 50);
  CHECK(cfg.rounds_local == 20);
  CHECK(cfg.partition.num_clients == 20);
  CHECK(cfg.strategy.strategy == Strategy::FedMlp);
  CHECK(cfg.strategy.toggles.prototype);
  CHECK(cfg.strategy.toggles.intertask);
  CHECK(cfg.strategy.toggles.semantic);
}

TEST_CASE("parse_config: file values and flag overrides") {
  const auto path = write_tmp("fedmlp_cfg1", R"(
# comment
partition.gamma = 1.0
strategy = fedprox
run.epochs = 7          # trailing comment
hyper.alpha = 0.25
)");
  const auto cfg = parse_config(path);
  CHECK(cfg.partition.gamma == 1.0);
  CHECK(cfg.strategy.strategy == Strategy::FedProx);
  CHECK(cfg.epochs == 7);
  CHECK(cfg.hyper.alpha == 0.25);

  // The flag wins over the file.
  const auto cfg2 = parse_config(path, {{"partition.gamma", "0.5"}});
  CHECK(cfg2.partition.gamma == 0.5);
}

TEST_CASE("parse_config: all problems reported at once") {
  const auto path = write_tmp("fedmlp_cfg2", R"(
run.m_active = 30
partition.clients = 20
partition.gamma = 2.0
no.such.key = 1
hyper.batch_size = zero
)");
  try {
    parse_config(path);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.problems.size() >= 4);
    bool cross = false, unknown = false, type = false, range = false;
    for (const auto& p : e.problems) {
      if (p.find("run.m_active") != std::string::npos &&
          p.find("partition.clients") != std::string::npos)
        cross = true;
      if (p.find("no.such.key") != std::string::npos) unknown = true;
      if (p.find("hyper.batch_size") != std::string::npos) type = true;
      if (p.find("partition.gamma") != std::string::npos) range = true;
    }
    CHECK(cross);
    CHECK(unknown);
    CHECK(type);
    CHECK(range);
  }
}

TEST_CASE("parse_config: missing file and malformed lines") {
  CHECK_THROWS_AS(parse_config("/nonexistent/fedmlp.cfg"), ConfigError);
  const auto path = write_tmp("fedmlp_cfg3", "just words\n");
  CHECK_THROWS_AS(parse_config(path), ConfigError);
}

TEST_CASE("resolved_config: round-trips to the identical config") {
  std::map<std::string, std::string> overrides = {
      {"partition.gamma", "0.37"},        {"hyper.alpha", "1.5"},
      {"hyper.weight_decay", "3.7e-06"},  {"strategy", "fedmlp"},
      {"loss.semantic", "false"},         {"run.seed", "987654321"},
      {"synth.spread", "0.123456789012345"},
  };
  const auto cfg = parse_config("", overrides);
  const auto echoed = resolved_config(cfg);
  const auto path = write_tmp("fedmlp_cfg4", echoed);
  const auto cfg2 = parse_config(path);
  CHECK(resolved_config(cfg2) == echoed);
  CHECK(cfg2.partition.gamma == cfg.partition.gamma);
  CHECK(cfg2.hyper.weight_decay == cfg.hyper.weight_decay);
  CHECK(cfg2.synth.spread == cfg.synth.spread);
  CHECK(cfg2.seed == cfg.seed);
  CHECK(!cfg2.strategy.toggles.semantic);
}
