#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedmlp/linalg.hpp"

namespace fedmlp::data {

// Feature vectors with integer class labels; the unit of partitioning
// and training.
struct LabeledDataset {
  std::vector<Vec> features;
  std::vector<int> labels;
  int class_count = 0;

  size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  int dim() const { return features.empty() ? 0 : static_cast<int>(features[0].size()); }

  // Throws std::invalid_argument if any structural invariant is violated.
  void validate() const;

  std::map<int, int> label_histogram() const;
};

// Per-client ordered task stream: T train tasks, cumulative test sets
// (entry t is the union of test shards for tasks 1..t+1), and the running
// union of train label sets.
struct TaskStream {
  int client_id = -1;
  std::vector<LabeledDataset> tasks;
  std::vector<LabeledDataset> cumulative_tests;
  std::vector<std::set<int>> seen_classes;
};

enum class PartitionStrategy { Sharding, Dirichlet };

struct PartitionSpec {
  PartitionStrategy strategy = PartitionStrategy::Sharding;
  int shards_per_task = 4;      // s
  double beta = 1.0;            // Dirichlet concentration
  double gamma = 1.0;           // imbalance rate, (0, 1]
  int num_clients = 20;         // M_total
  int tasks_per_client = 5;     // T
  uint64_t seed = 1;
};

// Distinct failure modes of the IDX reader.
class IdxError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, CountMismatch, Truncated };
  IdxError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  Kind kind;
};

class CsvError : public std::runtime_error {
 public:
  explicit CsvError(const std::string& what) : std::runtime_error(what) {}
};

// Gaussian blobs with distinct seeded means; deterministic for a fixed seed.
LabeledDataset synth_blobs(int num_classes, int d_in, int per_class, double spread,
                           uint64_t seed);

// Big-endian IDX pair (magic 0x00000803 images / 0x00000801 labels).
// Pixels are scaled to [0,1] and flattened row-major.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

// CSV with a header row; the label column is named "label", every other
// column is a real-valued feature.
LabeledDataset load_csv(const std::string& path);

// Imposes the exponential long-tail profile n_i = n_max * gamma^{i/(|K|-1)}
// over classes in descending-frequency order, subsampling without
// replacement. gamma = 1 keeps everything.
LabeledDataset apply_longtail(const LabeledDataset& dataset, double gamma, uint64_t seed);

// Label-sorted equal shards, s per partition, dealt by seeded permutation.
// The equal-split remainder is dropped from the tail of the sorted order.
std::vector<LabeledDataset> partition_sharding(const LabeledDataset& dataset,
                                               int num_partitions, int s, uint64_t seed);

// Per class, split that class's samples across partitions by proportions
// drawn from Dirichlet(beta), with largest-remainder rounding.
std::vector<LabeledDataset> partition_dirichlet(const LabeledDataset& dataset,
                                                int num_partitions, double beta,
                                                uint64_t seed);

// One Dirichlet(beta * 1_n) draw; exposed so tests can check the simplex
// property before rounding.
Vec dirichlet_proportions(std::mt19937_64& rng, int n, double beta);

// Deals partitions round-robin (client m, task t <- partitions[t*M + m]),
// splits each task train/test stratified per class, and builds cumulative
// test sets and seen-class sets.
std::vector<TaskStream> build_task_streams(const std::vector<LabeledDataset>& partitions,
                                           int num_clients, int tasks_per_client,
                                           double test_fraction, uint64_t seed);

}  // namespace fedmlp::data
