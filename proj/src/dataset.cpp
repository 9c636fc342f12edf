#include "fedmlp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fedmlp/rng.hpp"

namespace fedmlp::data {

void LabeledDataset::validate() const {
  if (features.size() != labels.size())
    throw std::invalid_argument("dataset: features/labels length mismatch");
  if (class_count <= 0 && !labels.empty())
    throw std::invalid_argument("dataset: class_count must be positive");
  const int d = dim();
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= class_count)
      throw std::invalid_argument("dataset: label out of range at index " + std::to_string(i));
    if (static_cast<int>(features[i].size()) != d)
      throw std::invalid_argument("dataset: inconsistent feature dimension at index " +
                                  std::to_string(i));
  }
  if (!labels.empty() && d <= 0)
    throw std::invalid_argument("dataset: feature dimension must be positive");
}

std::map<int, int> LabeledDataset::label_histogram() const {
  std::map<int, int> h;
  for (int y : labels) h[y]++;
  return h;
}

LabeledDataset synth_blobs(int num_classes, int d_in, int per_class, double spread,
                           uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("synth_blobs: num_classes must be >= 2");
  if (d_in < 1) throw std::invalid_argument("synth_blobs: d_in must be >= 1");
  if (per_class < 1) throw std::invalid_argument("synth_blobs: per_class must be >= 1");
  if (!(spread > 0.0)) throw std::invalid_argument("synth_blobs: spread must be > 0");

  auto rng = make_rng(seed, {tag("blobs")});
  std::uniform_real_distribution<double> mean_dist(-1.0, 1.0);
  std::vector<Vec> means(num_classes, Vec(d_in));
  for (auto& m : means)
    for (double& x : m) x = mean_dist(rng);

  std::normal_distribution<double> noise(0.0, spread);
  LabeledDataset out;
  out.class_count = num_classes;
  out.features.reserve(static_cast<size_t>(num_classes) * per_class);
  out.labels.reserve(static_cast<size_t>(num_classes) * per_class);
  for (int k = 0; k < num_classes; ++k) {
    for (int i = 0; i < per_class; ++i) {
      Vec x(d_in);
      for (int j = 0; j < d_in; ++j) x[j] = means[k][j] + noise(rng);
      out.features.push_back(std::move(x));
      out.labels.push_back(k);
    }
  }
  return out;
}

namespace {

uint32_t read_be32(const unsigned char* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IdxError(IdxError::Kind::Io, "idx: cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(f),
                                    std::istreambuf_iterator<char>());
}

}  // namespace

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  constexpr uint32_t kImagesMagic = 0x00000803;
  constexpr uint32_t kLabelsMagic = 0x00000801;

  const auto img = read_file(images_path);
  if (img.size() < 16) throw IdxError(IdxError::Kind::Truncated, "idx: image header truncated");
  if (read_be32(img.data()) != kImagesMagic)
    throw IdxError(IdxError::Kind::BadMagic, "idx: bad image magic in " + images_path);
  const uint32_t n_images = read_be32(img.data() + 4);
  const uint32_t rows = read_be32(img.data() + 8);
  const uint32_t cols = read_be32(img.data() + 12);
  const size_t pixels = static_cast<size_t>(rows) * cols;
  if (pixels == 0) throw IdxError(IdxError::Kind::Truncated, "idx: zero image dimensions");
  if (img.size() < 16 + static_cast<size_t>(n_images) * pixels)
    throw IdxError(IdxError::Kind::Truncated, "idx: image data truncated");

  const auto lab = read_file(labels_path);
  if (lab.size() < 8) throw IdxError(IdxError::Kind::Truncated, "idx: label header truncated");
  if (read_be32(lab.data()) != kLabelsMagic)
    throw IdxError(IdxError::Kind::BadMagic, "idx: bad label magic in " + labels_path);
  const uint32_t n_labels = read_be32(lab.data() + 4);
  if (n_labels != n_images)
    throw IdxError(IdxError::Kind::CountMismatch,
                   "idx: image count " + std::to_string(n_images) + " != label count " +
                       std::to_string(n_labels));
  if (lab.size() < 8 + static_cast<size_t>(n_labels))
    throw IdxError(IdxError::Kind::Truncated, "idx: label data truncated");

  LabeledDataset out;
  out.features.resize(n_images);
  out.labels.resize(n_images);
  int max_label = 0;
  for (uint32_t i = 0; i < n_images; ++i) {
    Vec x(pixels);
    const unsigned char* p = img.data() + 16 + static_cast<size_t>(i) * pixels;
    for (size_t j = 0; j < pixels; ++j) x[j] = p[j] / 255.0;
    out.features[i] = std::move(x);
    out.labels[i] = lab[8 + i];
    max_label = std::max(max_label, out.labels[i]);
  }
  out.class_count = max_label + 1;
  return out;
}

LabeledDataset load_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw CsvError("csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw CsvError("csv: empty file " + path);

  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(s);
    while (std::getline(ss, cell, ',')) {
      const auto b = cell.find_first_not_of(" \t\r");
      const auto e = cell.find_last_not_of(" \t\r");
      cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    return cells;
  };

  const auto header = split(line);
  int label_col = -1;
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == "label") label_col = static_cast<int>(i);
  if (label_col < 0) throw CsvError("csv: no column named \"label\" in header");

  LabeledDataset out;
  int max_label = -1;
  size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split(line);
    if (cells.size() != header.size())
      throw CsvError("csv: line " + std::to_string(line_no) + " has " +
                     std::to_string(cells.size()) + " cells, expected " +
                     std::to_string(header.size()));
    Vec x;
    x.reserve(header.size() - 1);
    int y = -1;
    for (size_t i = 0; i < cells.size(); ++i) {
      double v;
      try {
        size_t pos = 0;
        v = std::stod(cells[i], &pos);
        if (pos != cells[i].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw CsvError("csv: bad number '" + cells[i] + "' at line " + std::to_string(line_no));
      }
      if (static_cast<int>(i) == label_col) {
        if (v < 0 || v != std::floor(v))
          throw CsvError("csv: label must be a nonnegative integer at line " +
                         std::to_string(line_no));
        y = static_cast<int>(v);
      } else {
        x.push_back(v);
      }
    }
    out.features.push_back(std::move(x));
    out.labels.push_back(y);
    max_label = std::max(max_label, y);
  }
  out.class_count = max_label + 1;
  out.validate();
  return out;
}

LabeledDataset apply_longtail(const LabeledDataset& dataset, double gamma, uint64_t seed) {
  if (!(gamma > 0.0) || gamma > 1.0)
    throw std::invalid_argument("apply_longtail: gamma must be in (0, 1]");
  if (dataset.empty()) throw std::invalid_argument("apply_longtail: dataset is empty");

  // Classes with samples, ranked by descending count (ties: lower id first).
  const auto hist = dataset.label_histogram();
  std::vector<std::pair<int, int>> ranked(hist.begin(), hist.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const int k = static_cast<int>(ranked.size());
  if (k == 1 || gamma == 1.0) return dataset;

  const double n_max = ranked[0].second;
  std::map<int, int> keep;
  for (int i = 0; i < k; ++i) {
    const double target = n_max * std::pow(gamma, static_cast<double>(i) / (k - 1));
    keep[ranked[i].first] = std::min<int>(ranked[i].second,
                                          static_cast<int>(std::llround(target)));
  }

  // Per-class seeded subsample without replacement, preserving input order.
  std::map<int, std::vector<int>> by_class;
  for (size_t i = 0; i < dataset.size(); ++i) by_class[dataset.labels[i]].push_back(i);
  std::vector<char> retained(dataset.size(), 0);
  for (auto& [cls, idxs] : by_class) {
    auto rng = make_rng(seed, {tag("longtail"), static_cast<uint64_t>(cls)});
    std::shuffle(idxs.begin(), idxs.end(), rng);
    for (int i = 0; i < keep[cls]; ++i) retained[idxs[i]] = 1;
  }

  LabeledDataset out;
  out.class_count = dataset.class_count;
  for (size_t i = 0; i < dataset.size(); ++i) {
    if (!retained[i]) continue;
    out.features.push_back(dataset.features[i]);
    out.labels.push_back(dataset.labels[i]);
  }
  return out;
}

namespace {

LabeledDataset gather(const LabeledDataset& src, const std::vector<int>& idxs) {
  LabeledDataset out;
  out.class_count = src.class_count;
  out.features.reserve(idxs.size());
  out.labels.reserve(idxs.size());
  for (int i : idxs) {
    out.features.push_back(src.features[i]);
    out.labels.push_back(src.labels[i]);
  }
  return out;
}

}  // namespace

std::vector<LabeledDataset> partition_sharding(const LabeledDataset& dataset,
                                               int num_partitions, int s, uint64_t seed) {
  if (num_partitions < 1 || s < 1)
    throw std::invalid_argument("partition_sharding: partitions and s must be >= 1");
  const int num_shards = num_partitions * s;
  const int shard_size = static_cast<int>(dataset.size()) / num_shards;
  if (shard_size < 1)
    throw std::invalid_argument("partition_sharding: too few samples for " +
                                std::to_string(num_shards) + " shards");

  // Stable label sort; remainder samples fall off the tail.
  std::vector<int> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dataset.labels[a] < dataset.labels[b]; });

  std::vector<int> shard_ids(num_shards);
  std::iota(shard_ids.begin(), shard_ids.end(), 0);
  auto rng = make_rng(seed, {tag("sharding")});
  std::shuffle(shard_ids.begin(), shard_ids.end(), rng);

  std::vector<LabeledDataset> parts(num_partitions);
  for (int p = 0; p < num_partitions; ++p) {
    std::vector<int> idxs;
    idxs.reserve(static_cast<size_t>(s) * shard_size);
    for (int j = 0; j < s; ++j) {
      const int shard = shard_ids[p * s + j];
      for (int i = shard * shard_size; i < (shard + 1) * shard_size; ++i)
        idxs.push_back(order[i]);
    }
    parts[p] = gather(dataset, idxs);
  }
  return parts;
}

Vec dirichlet_proportions(std::mt19937_64& rng, int n, double beta) {
  std::gamma_distribution<double> g(beta, 1.0);
  Vec w(n);
  double sum = 0.0;
  for (double& x : w) {
    x = g(rng);
    sum += x;
  }
  if (sum <= 0.0) {
    // All gamma draws underflowed to zero; collapse onto one random index.
    std::uniform_int_distribution<int> pick(0, n - 1);
    std::fill(w.begin(), w.end(), 0.0);
    w[pick(rng)] = 1.0;
    return w;
  }
  for (double& x : w) x /= sum;
  return w;
}

namespace {

// Largest-remainder apportionment of n into integer counts ~ proportions.
std::vector<int> apportion(const Vec& proportions, int n) {
  const int p = static_cast<int>(proportions.size());
  std::vector<int> counts(p);
  std::vector<std::pair<double, int>> remainders(p);
  int assigned = 0;
  for (int i = 0; i < p; ++i) {
    const double quota = proportions[i] * n;
    counts[i] = static_cast<int>(std::floor(quota));
    assigned += counts[i];
    remainders[i] = {quota - counts[i], i};
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int r = 0; r < n - assigned; ++r) counts[remainders[r].second]++;
  return counts;
}

}  // namespace

std::vector<LabeledDataset> partition_dirichlet(const LabeledDataset& dataset,
                                                int num_partitions, double beta,
                                                uint64_t seed) {
  if (num_partitions < 1)
    throw std::invalid_argument("partition_dirichlet: partitions must be >= 1");
  if (!(beta > 0.0)) throw std::invalid_argument("partition_dirichlet: beta must be > 0");

  std::map<int, std::vector<int>> by_class;
  for (size_t i = 0; i < dataset.size(); ++i) by_class[dataset.labels[i]].push_back(i);

  std::vector<std::vector<int>> member(num_partitions);
  for (auto& [cls, idxs] : by_class) {
    auto rng = make_rng(seed, {tag("dirichlet"), static_cast<uint64_t>(cls)});
    const Vec w = dirichlet_proportions(rng, num_partitions, beta);
    const auto counts = apportion(w, static_cast<int>(idxs.size()));
    std::shuffle(idxs.begin(), idxs.end(), rng);
    int cursor = 0;
    for (int p = 0; p < num_partitions; ++p) {
      for (int j = 0; j < counts[p]; ++j) member[p].push_back(idxs[cursor++]);
    }
  }

  std::vector<LabeledDataset> parts(num_partitions);
  for (int p = 0; p < num_partitions; ++p) {
    std::sort(member[p].begin(), member[p].end());
    parts[p] = gather(dataset, member[p]);
  }
  return parts;
}

std::vector<TaskStream> build_task_streams(const std::vector<LabeledDataset>& partitions,
                                           int num_clients, int tasks_per_client,
                                           double test_fraction, uint64_t seed) {
  if (static_cast<int>(partitions.size()) != num_clients * tasks_per_client)
    throw std::invalid_argument("build_task_streams: expected " +
                                std::to_string(num_clients * tasks_per_client) +
                                " partitions, got " + std::to_string(partitions.size()));
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("build_task_streams: test_fraction must be in (0, 1)");

  std::vector<TaskStream> streams(num_clients);
  for (int m = 0; m < num_clients; ++m) {
    TaskStream& st = streams[m];
    st.client_id = m;
    LabeledDataset cumulative;
    std::set<int> seen;
    for (int t = 0; t < tasks_per_client; ++t) {
      const LabeledDataset& part = partitions[t * num_clients + m];
      cumulative.class_count = part.class_count;

      // Stratified train/test split: every class with >= 2 samples keeps at
      // least one sample on each side.
      std::map<int, std::vector<int>> by_class;
      for (size_t i = 0; i < part.size(); ++i) by_class[part.labels[i]].push_back(i);
      std::vector<char> is_test(part.size(), 0);
      for (auto& [cls, idxs] : by_class) {
        const int n = static_cast<int>(idxs.size());
        if (n < 2) continue;
        int n_test = static_cast<int>(std::llround(test_fraction * n));
        n_test = std::clamp(n_test, 1, n - 1);
        auto rng = make_rng(seed, {tag("split"), static_cast<uint64_t>(m),
                                   static_cast<uint64_t>(t), static_cast<uint64_t>(cls)});
        std::shuffle(idxs.begin(), idxs.end(), rng);
        for (int i = 0; i < n_test; ++i) is_test[idxs[i]] = 1;
      }

      LabeledDataset train, test;
      train.class_count = test.class_count = part.class_count;
      for (size_t i = 0; i < part.size(); ++i) {
        auto& dst = is_test[i] ? test : train;
        dst.features.push_back(part.features[i]);
        dst.labels.push_back(part.labels[i]);
      }

      for (int y : train.labels) seen.insert(y);
      for (size_t i = 0; i < test.size(); ++i) {
        cumulative.features.push_back(test.features[i]);
        cumulative.labels.push_back(test.labels[i]);
      }
      st.tasks.push_back(std::move(train));
      st.cumulative_tests.push_back(cumulative);
      st.seen_classes.push_back(seen);
    }
  }
  return streams;
}

}  // namespace fedmlp::data
