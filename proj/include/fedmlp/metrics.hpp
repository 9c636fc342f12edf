#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedmlp/dataset.hpp"
#include "fedmlp/model.hpp"

namespace fedmlp::metrics {

// One evaluation record per communication round. Accuracies are optional:
// an undefined value (empty test set, empty class filter) is a null marker,
// never a zero.
struct RoundRecord {
  int round = 0;
  int stage = 0;
  std::optional<double> a_sel;
  std::optional<double> a_loc;
  std::optional<double> a_glo;
  std::optional<double> a_loc_minority;
  std::optional<double> a_glo_minority;
  double loss_total = 0.0;
  double loss_ce = 0.0;
  double loss_prototype = 0.0;
  double loss_intertask = 0.0;
  double loss_semantic = 0.0;
  long long proto_bytes = 0;
};

struct MetricsLog {
  std::vector<RoundRecord> records;
};

// Top-1 accuracy, argmax ties resolved to the lowest class id. class_filter
// restricts to samples whose label is in the set; nullptr means no filter.
// Returns nullopt when no samples remain.
std::optional<double> accuracy(const model::ModelParams& params,
                               const data::LabeledDataset& dataset,
                               const std::set<int>* class_filter = nullptr);

// Balanced global test set: an equal per-class sample (the minimum class
// test count) stratified from the union of every client's test shards.
data::LabeledDataset build_balanced_test(const std::vector<data::TaskStream>& streams,
                                         uint64_t seed);

// A_sel / A_loc / A_glo and the minority variants for one frozen round.
// client_params[i] pairs with streams[i]; stage is 1-based.
RoundRecord evaluate_round(const model::ModelParams& global_params,
                           const std::vector<const model::ModelParams*>& client_params,
                           const std::vector<data::TaskStream>& streams, int stage,
                           const data::LabeledDataset& balanced_test,
                           const std::set<int>& minority, int threads = 1);

// A_sel just before the stage boundary minus A_sel after the first round of
// the new stage; positive means forgetting.
double forgetting_delta(const MetricsLog& log, int stage_boundary);

std::string csv_header();
std::string to_csv(const MetricsLog& log);
std::string to_jsonl(const MetricsLog& log);

// Per-metric mean over the last `window` rounds (the reported final
// performance). Null records are skipped; all-null yields nullopt.
std::map<std::string, std::optional<double>> final_summary(const MetricsLog& log,
                                                           int window = 10);

}  // namespace fedmlp::metrics
