#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "fedmlp/linalg.hpp"

namespace fedmlp::proto {

struct ClassPrototype {
  Vec value;
  int sample_count = 0;
};

// One client's per-class prototypes for a stage (or its cumulative memory).
struct LocalPrototypeSet {
  int client_id = -1;
  int stage = 0;
  std::map<int, ClassPrototype> protos;

  bool empty() const { return protos.empty(); }
};

struct GlobalPrototypeSet {
  std::map<int, Vec> protos;
  std::map<int, int> contributing_clients;

  bool empty() const { return protos.empty(); }
};

enum class SemanticScope { Local, Global };

// Centroids of clustered prototypes plus the class -> centroid map.
struct SemanticPrototypeSet {
  std::vector<Vec> centroids;
  std::map<int, int> assignment;
  SemanticScope scope = SemanticScope::Local;
  bool k_clamped = false;

  bool empty() const { return centroids.empty(); }
};

struct MinoritySet {
  std::set<int> classes;

  bool contains(int k) const { return classes.count(k) != 0; }
  bool empty() const { return classes.empty(); }
};

struct KMeansResult {
  std::vector<Vec> centroids;
  std::vector<int> labels;       // per input point
  double sse = 0.0;
  int iterations = 0;
  bool k_clamped = false;
  std::vector<double> sse_history;  // SSE after each assignment step
};

// Arithmetic mean of the class's feature vectors.
Vec compute_class_prototype(const std::vector<Vec>& features_of_class);

// Per class, the unweighted mean over this round's reporting clients;
// classes nobody reported this round keep their previous global prototype.
// Reports are reduced in canonical client-id order, so the result is
// bit-identical under input permutation. count_weighted switches to a
// sample-count-weighted mean (ablation flag, default off).
GlobalPrototypeSet aggregate_global(const GlobalPrototypeSet& previous,
                                    std::vector<LocalPrototypeSet> reports,
                                    bool count_weighted = false);

// Lloyd's algorithm with k-means++ seeding; empty clusters are re-seeded to
// the farthest point. Runs `restarts` independent seeded inits and keeps the
// lowest-SSE solution. Deterministic for a fixed seed. k > #points clamps k
// and sets k_clamped.
KMeansResult kmeans(const std::vector<Vec>& points, int k, uint64_t seed,
                    int max_iters = 50, double tol = 1e-6, int restarts = 10);

// Clusters a client's class prototypes into at most u local semantic
// prototypes (O).
SemanticPrototypeSet local_semantic(const LocalPrototypeSet& protos, int u, uint64_t seed);

// Clusters the global prototypes into at most v global semantic prototypes
// (P); the assignment doubles as cluster_of_class. Empty input yields an
// empty set.
SemanticPrototypeSet global_semantic(const GlobalPrototypeSet& global_set, int v,
                                     uint64_t seed);

// Classes in the lower 50% by count: sort ascending (ties: lower id first)
// and take the first floor(|K|/2).
MinoritySet minority_classes(const std::map<int, long long>& class_counts);

// Reference prototype for the inter-task loss: the stored prototype when the
// class has history, otherwise the local semantic centroid nearest to z
// (ties to the lowest centroid index). No history and no centroids ->
// nullopt, meaning the caller skips the term.
std::optional<Vec> resolve_reference(int class_k, const LocalPrototypeSet& previous_protos,
                                     const SemanticPrototypeSet& local_semantic_set,
                                     const Vec& sample_z);

// Pointer-based resolver used on the training hot path; same rules as
// resolve_reference, plus an optional per-class override map (per-class-mean
// initialization of new classes).
struct ReferenceResolver {
  const std::map<int, Vec>* historical = nullptr;
  const std::vector<Vec>* semantic_centroids = nullptr;
  const std::map<int, Vec>* overrides = nullptr;

  const Vec* resolve(int class_k, const Vec& z) const;
};

// Default cluster counts when the config leaves u/v at 0 (auto).
int default_local_clusters(int num_classes);
int default_global_clusters(int num_classes);

}  // namespace fedmlp::proto
