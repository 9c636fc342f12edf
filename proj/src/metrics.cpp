#include "fedmlp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "fedmlp/parallel.hpp"
#include "fedmlp/rng.hpp"

namespace fedmlp::metrics {

std::optional<double> accuracy(const model::ModelParams& params,
                               const data::LabeledDataset& dataset,
                               const std::set<int>* class_filter) {
  long correct = 0, total = 0;
  for (size_t i = 0; i < dataset.size(); ++i) {
    const int y = dataset.labels[i];
    if (class_filter && !class_filter->count(y)) continue;
    const auto fw = model::forward(params, dataset.features[i]);
    int pred = 0;
    for (size_t j = 1; j < fw.logits.size(); ++j)
      if (fw.logits[j] > fw.logits[pred]) pred = static_cast<int>(j);
    ++total;
    if (pred == y) ++correct;
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(correct) / total;
}

data::LabeledDataset build_balanced_test(const std::vector<data::TaskStream>& streams,
                                         uint64_t seed) {
  data::LabeledDataset out;
  std::map<int, std::vector<std::pair<int, int>>> by_class;  // class -> (stream, sample)
  for (size_t m = 0; m < streams.size(); ++m) {
    if (streams[m].cumulative_tests.empty()) continue;
    const auto& all = streams[m].cumulative_tests.back();
    out.class_count = std::max(out.class_count, all.class_count);
    for (size_t i = 0; i < all.size(); ++i)
      by_class[all.labels[i]].emplace_back(static_cast<int>(m), static_cast<int>(i));
  }
  if (by_class.empty()) return out;

  size_t min_count = SIZE_MAX;
  for (const auto& [cls, v] : by_class) min_count = std::min(min_count, v.size());

  for (auto& [cls, v] : by_class) {
    auto rng = make_rng(seed, {tag("balanced"), static_cast<uint64_t>(cls)});
    std::shuffle(v.begin(), v.end(), rng);
    for (size_t i = 0; i < min_count; ++i) {
      const auto& src = streams[v[i].first].cumulative_tests.back();
      out.features.push_back(src.features[v[i].second]);
      out.labels.push_back(src.labels[v[i].second]);
    }
  }
  return out;
}

namespace {

std::optional<double> mean_of(const std::vector<std::optional<double>>& xs) {
  double sum = 0.0;
  int n = 0;
  for (const auto& x : xs) {
    if (!x) continue;
    sum += *x;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

}  // namespace

RoundRecord evaluate_round(const model::ModelParams& global_params,
                           const std::vector<const model::ModelParams*>& client_params,
                           const std::vector<data::TaskStream>& streams, int stage,
                           const data::LabeledDataset& balanced_test,
                           const std::set<int>& minority, int threads) {
  if (client_params.size() != streams.size())
    throw std::invalid_argument("evaluate_round: clients/streams size mismatch");
  const int m = static_cast<int>(client_params.size());

  std::vector<std::optional<double>> sel(m), loc(m), loc_min(m);
  parallel_for(m, threads, [&](int i) {
    const auto& tests = streams[i].cumulative_tests;
    if (stage >= 1 && stage <= static_cast<int>(tests.size()))
      sel[i] = accuracy(*client_params[i], tests[stage - 1]);
    loc[i] = accuracy(*client_params[i], balanced_test);
    if (!minority.empty())
      loc_min[i] = accuracy(*client_params[i], balanced_test, &minority);
  });

  RoundRecord rec;
  rec.stage = stage;
  rec.a_sel = mean_of(sel);
  rec.a_loc = mean_of(loc);
  rec.a_loc_minority = mean_of(loc_min);
  rec.a_glo = accuracy(global_params, balanced_test);
  rec.a_glo_minority =
      minority.empty() ? std::nullopt : accuracy(global_params, balanced_test, &minority);
  return rec;
}

double forgetting_delta(const MetricsLog& log, int stage_boundary) {
  if (stage_boundary < 2)
    throw std::invalid_argument("forgetting_delta: boundary must be >= 2");
  const RoundRecord* before = nullptr;
  const RoundRecord* after = nullptr;
  for (const auto& r : log.records) {
    if (r.stage == stage_boundary - 1) before = &r;
    if (r.stage == stage_boundary && !after) after = &r;
  }
  if (!before || !after)
    throw std::invalid_argument("forgetting_delta: boundary out of range");
  if (!before->a_sel || !after->a_sel)
    throw std::invalid_argument("forgetting_delta: A_sel undefined at boundary");
  return *before->a_sel - *after->a_sel;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::string fmt_json(const std::optional<double>& v) { return v ? fmt(*v) : std::string("null"); }

}  // namespace

std::string csv_header() {
  return "round,stage,a_sel,a_loc,a_glo,a_loc_minority,a_glo_minority,"
         "loss_total,loss_ce,loss_prototype,loss_intertask,loss_semantic,proto_bytes";
}

std::string to_csv(const MetricsLog& log) {
  std::ostringstream os;
  os << csv_header() << "\n";
  for (const auto& r : log.records) {
    os << r.round << ',' << r.stage << ',' << fmt(r.a_sel) << ',' << fmt(r.a_loc) << ','
       << fmt(r.a_glo) << ',' << fmt(r.a_loc_minority) << ',' << fmt(r.a_glo_minority) << ','
       << fmt(r.loss_total) << ',' << fmt(r.loss_ce) << ',' << fmt(r.loss_prototype) << ','
       << fmt(r.loss_intertask) << ',' << fmt(r.loss_semantic) << ',' << r.proto_bytes
       << "\n";
  }
  return os.str();
}

std::string to_jsonl(const MetricsLog& log) {
  std::ostringstream os;
  for (const auto& r : log.records) {
    os << "{\"round\":" << r.round << ",\"stage\":" << r.stage
       << ",\"a_sel\":" << fmt_json(r.a_sel) << ",\"a_loc\":" << fmt_json(r.a_loc)
       << ",\"a_glo\":" << fmt_json(r.a_glo)
       << ",\"a_loc_minority\":" << fmt_json(r.a_loc_minority)
       << ",\"a_glo_minority\":" << fmt_json(r.a_glo_minority)
       << ",\"loss_total\":" << fmt(r.loss_total) << ",\"loss_ce\":" << fmt(r.loss_ce)
       << ",\"loss_prototype\":" << fmt(r.loss_prototype)
       << ",\"loss_intertask\":" << fmt(r.loss_intertask)
       << ",\"loss_semantic\":" << fmt(r.loss_semantic)
       << ",\"proto_bytes\":" << r.proto_bytes << "}\n";
  }
  return os.str();
}

std::map<std::string, std::optional<double>> final_summary(const MetricsLog& log,
                                                           int window) {
  const int n = static_cast<int>(log.records.size());
  const int from = std::max(0, n - window);
  auto collect = [&](auto&& get) -> std::optional<double> {
    double sum = 0.0;
    int cnt = 0;
    for (int i = from; i < n; ++i) {
      const auto v = get(log.records[i]);
      if (!v) continue;
      sum += *v;
      ++cnt;
    }
    if (cnt == 0) return std::nullopt;
    return sum / cnt;
  };
  std::map<std::string, std::optional<double>> out;
  out["a_sel"] = collect([](const RoundRecord& r) { return r.a_sel; });
  out["a_loc"] = collect([](const RoundRecord& r) { return r.a_loc; });
  out["a_glo"] = collect([](const RoundRecord& r) { return r.a_glo; });
  out["a_loc_minority"] = collect([](const RoundRecord& r) { return r.a_loc_minority; });
  out["a_glo_minority"] = collect([](const RoundRecord& r) { return r.a_glo_minority; });
  out["loss_total"] =
      collect([](const RoundRecord& r) { return std::optional<double>(r.loss_total); });
  return out;
}

}  // namespace fedmlp::metrics
