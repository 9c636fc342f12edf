#include "fedmlp/prototypes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "fedmlp/rng.hpp"

namespace fedmlp::proto {

Vec compute_class_prototype(const std::vector<Vec>& features_of_class) {
  if (features_of_class.empty())
    throw std::invalid_argument("compute_class_prototype: empty feature set");
  const size_t d = features_of_class[0].size();
  Vec mean(d, 0.0);
  for (const Vec& f : features_of_class) {
    if (f.size() != d)
      throw std::invalid_argument("compute_class_prototype: dimension mismatch");
    for (size_t j = 0; j < d; ++j) mean[j] += f[j];
  }
  for (double& x : mean) x /= static_cast<double>(features_of_class.size());
  return mean;
}

GlobalPrototypeSet aggregate_global(const GlobalPrototypeSet& previous,
                                    std::vector<LocalPrototypeSet> reports,
                                    bool count_weighted) {
  std::sort(reports.begin(), reports.end(),
            [](const LocalPrototypeSet& a, const LocalPrototypeSet& b) {
              return a.client_id < b.client_id;
            });

  GlobalPrototypeSet out = previous;  // stale classes are retained
  std::map<int, Vec> sums;
  std::map<int, double> weights;
  std::map<int, int> reporters;
  for (const auto& rep : reports) {
    for (const auto& [cls, cp] : rep.protos) {
      const double w = count_weighted ? static_cast<double>(cp.sample_count) : 1.0;
      auto it = sums.find(cls);
      if (it == sums.end()) {
        sums[cls] = scaled(cp.value, w);
      } else {
        if (it->second.size() != cp.value.size())
          throw std::invalid_argument("aggregate_global: prototype dimension mismatch");
        for (size_t j = 0; j < cp.value.size(); ++j) it->second[j] += w * cp.value[j];
      }
      weights[cls] += w;
      reporters[cls]++;
    }
  }
  for (auto& [cls, sum] : sums) {
    if (weights[cls] <= 0.0) continue;
    for (double& x : sum) x /= weights[cls];
    out.protos[cls] = std::move(sum);
    out.contributing_clients[cls] = reporters[cls];
  }
  return out;
}

namespace {

int nearest_centroid(const std::vector<Vec>& centroids, const Vec& p) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(centroids[c], p);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

}  // namespace

namespace {

KMeansResult kmeans_single(const std::vector<Vec>& points, int k, std::mt19937_64& rng,
                           int max_iters, double tol) {
  const int n = static_cast<int>(points.size());
  KMeansResult res;

  // k-means++ seeding.
  std::vector<Vec> centroids;
  centroids.reserve(k);
  std::uniform_int_distribution<int> first(0, n - 1);
  centroids.push_back(points[first(rng)]);
  Vec d2(n);
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      d2[i] = squared_distance(points[i], centroids[nearest_centroid(centroids, points[i])]);
      total += d2[i];
    }
    int chosen;
    if (total <= 0.0) {
      chosen = std::uniform_int_distribution<int>(0, n - 1)(rng);
    } else {
      const double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      double acc = 0.0;
      chosen = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= r) {
          chosen = i;
          break;
        }
      }
    }
    centroids.push_back(points[chosen]);
  }

  std::vector<int> labels(n, 0);
  for (int iter = 0; iter < max_iters; ++iter) {
    res.iterations = iter + 1;

    double sse = 0.0;
    for (int i = 0; i < n; ++i) {
      labels[i] = nearest_centroid(centroids, points[i]);
      sse += squared_distance(points[i], centroids[labels[i]]);
    }
    res.sse_history.push_back(sse);

    std::vector<Vec> next(k, Vec(points[0].size(), 0.0));
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      counts[labels[i]]++;
      for (size_t j = 0; j < points[i].size(); ++j) next[labels[i]][j] += points[i][j];
    }
    std::vector<char> taken(n, 0);
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        for (double& x : next[c]) x /= counts[c];
      } else {
        // Re-seed to the point farthest from its assigned centroid.
        int far_i = -1;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          if (taken[i]) continue;
          const double d = squared_distance(points[i], centroids[labels[i]]);
          if (d > far_d) {
            far_d = d;
            far_i = i;
          }
        }
        next[c] = points[far_i];
        taken[far_i] = 1;
      }
    }

    double shift = 0.0;
    for (int c = 0; c < k; ++c) shift = std::max(shift, distance(next[c], centroids[c]));
    centroids = std::move(next);
    if (shift < tol) break;
  }

  // Final assignment against the converged centroids.
  res.sse = 0.0;
  for (int i = 0; i < n; ++i) {
    labels[i] = nearest_centroid(centroids, points[i]);
    res.sse += squared_distance(points[i], centroids[labels[i]]);
  }
  res.centroids = std::move(centroids);
  res.labels = std::move(labels);
  return res;
}

}  // namespace

KMeansResult kmeans(const std::vector<Vec>& points, int k, uint64_t seed, int max_iters,
                    double tol, int restarts) {
  const int n = static_cast<int>(points.size());
  if (n == 0) throw std::invalid_argument("kmeans: no points");
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (restarts < 1) throw std::invalid_argument("kmeans: restarts must be >= 1");

  const bool clamped = k > n;
  if (clamped) k = n;

  KMeansResult best;
  for (int r = 0; r < restarts; ++r) {
    auto rng = make_rng(seed, {tag("kmeans"), static_cast<uint64_t>(r)});
    KMeansResult cur = kmeans_single(points, k, rng, max_iters, tol);
    if (r == 0 || cur.sse < best.sse) best = std::move(cur);
  }
  best.k_clamped = clamped;
  return best;
}

SemanticPrototypeSet local_semantic(const LocalPrototypeSet& protos, int u, uint64_t seed) {
  if (protos.empty()) throw std::invalid_argument("local_semantic: empty prototype set");
  std::vector<Vec> points;
  std::vector<int> class_ids;
  for (const auto& [cls, cp] : protos.protos) {
    points.push_back(cp.value);
    class_ids.push_back(cls);
  }
  const int k = std::min<int>(std::max(u, 1), static_cast<int>(points.size()));
  const auto km = kmeans(points, k, seed);

  SemanticPrototypeSet out;
  out.scope = SemanticScope::Local;
  out.centroids = km.centroids;
  out.k_clamped = u > static_cast<int>(points.size());
  for (size_t i = 0; i < class_ids.size(); ++i) out.assignment[class_ids[i]] = km.labels[i];
  return out;
}

SemanticPrototypeSet global_semantic(const GlobalPrototypeSet& global_set, int v,
                                     uint64_t seed) {
  SemanticPrototypeSet out;
  out.scope = SemanticScope::Global;
  if (global_set.empty()) return out;

  std::vector<Vec> points;
  std::vector<int> class_ids;
  for (const auto& [cls, p] : global_set.protos) {
    points.push_back(p);
    class_ids.push_back(cls);
  }
  const int k = std::min<int>(std::max(v, 1), static_cast<int>(points.size()));
  const auto km = kmeans(points, k, seed);
  out.centroids = km.centroids;
  out.k_clamped = v > static_cast<int>(points.size());
  for (size_t i = 0; i < class_ids.size(); ++i) out.assignment[class_ids[i]] = km.labels[i];
  return out;
}

MinoritySet minority_classes(const std::map<int, long long>& class_counts) {
  std::vector<std::pair<long long, int>> order;
  order.reserve(class_counts.size());
  for (const auto& [cls, n] : class_counts) order.emplace_back(n, cls);
  std::sort(order.begin(), order.end());
  MinoritySet out;
  const size_t take = order.size() / 2;
  for (size_t i = 0; i < take; ++i) out.classes.insert(order[i].second);
  return out;
}

const Vec* ReferenceResolver::resolve(int class_k, const Vec& z) const {
  if (historical) {
    auto it = historical->find(class_k);
    if (it != historical->end()) return &it->second;
  }
  if (overrides) {
    auto it = overrides->find(class_k);
    if (it != overrides->end()) return &it->second;
  }
  if (semantic_centroids && !semantic_centroids->empty()) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t c = 0; c < semantic_centroids->size(); ++c) {
      const double d = squared_distance((*semantic_centroids)[c], z);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    return &(*semantic_centroids)[best];
  }
  return nullptr;
}

std::optional<Vec> resolve_reference(int class_k, const LocalPrototypeSet& previous_protos,
                                     const SemanticPrototypeSet& local_semantic_set,
                                     const Vec& sample_z) {
  auto it = previous_protos.protos.find(class_k);
  if (it != previous_protos.protos.end()) return it->second.value;
  if (local_semantic_set.empty()) return std::nullopt;
  ReferenceResolver r;
  r.semantic_centroids = &local_semantic_set.centroids;
  const Vec* v = r.resolve(class_k, sample_z);
  if (!v) return std::nullopt;
  return *v;
}

int default_local_clusters(int num_classes) {
  return std::max(2, (num_classes + 2) / 3);
}

int default_global_clusters(int num_classes) {
  return std::max(2, (num_classes + 4) / 5);
}

}  // namespace fedmlp::proto
