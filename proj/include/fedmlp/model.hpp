#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "fedmlp/dataset.hpp"
#include "fedmlp/linalg.hpp"
#include "fedmlp/prototypes.hpp"

namespace fedmlp::model {

struct Hyperparams {
  double alpha = 1.0;            // weight of the semantic-prototype loss
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  int batch_size = 32;
  double kl_temperature = 1.0;
  double smooth_l1_delta = 1.0;
};

struct LossToggles {
  bool prototype = true;   // L_P
  bool intertask = true;   // L_I
  bool semantic = true;    // L_S

  bool all_off() const { return !prototype && !intertask && !semantic; }
};

struct ModelConfig {
  int input_dim = 0;
  int hidden_dim = 64;
  int feature_dim = 32;   // d
  int num_classes = 0;    // |K|, the global class set
};

// Two-part model: extractor f (input -> hidden, ReLU, hidden -> feature)
// and affine classifier g (feature -> logits).
struct ModelParams {
  Matrix w1;
  Vec b1;
  Matrix w2;
  Vec b2;
  Matrix wc;
  Vec bc;

  static ModelParams zeros(const ModelConfig& cfg);
  // Glorot-uniform weights, zero biases; deterministic for a fixed seed.
  static ModelParams init(const ModelConfig& cfg, uint64_t seed);

  int input_dim() const { return w1.cols; }
  int feature_dim() const { return w2.rows; }
  int num_classes() const { return wc.rows; }
  size_t parameter_count() const;

  // Visits every tensor in a fixed order (w1, b1, w2, b2, wc, bc).
  template <class F>
  void visit(F&& f) {
    f(w1.data);
    f(b1);
    f(w2.data);
    f(b2);
    f(wc.data);
    f(bc);
  }
  template <class F>
  void visit(F&& f) const {
    f(w1.data);
    f(b1);
    f(w2.data);
    f(b2);
    f(wc.data);
    f(bc);
  }
};

using Gradients = ModelParams;

struct LossBreakdown {
  double l_c = 0.0;
  double l_p = 0.0;
  double l_i = 0.0;
  double l_s = 0.0;
  double total = 0.0;
  long unmapped_minority = 0;  // diagnostics: minority samples without a cluster
};

struct ForwardResult {
  Vec z;
  Vec logits;
  Vec probs;
};

ForwardResult forward(const ModelParams& params, const Vec& x);

// -log(probs[y]), floored at 1e-12.
double cross_entropy(const Vec& probs, int y);
double cross_entropy(const std::vector<Vec>& batch_probs, const std::vector<int>& batch_y);

// sum_d phi(z_d - c_d), phi(x) = 0.5 x^2 inside delta, delta(|x| - delta/2) outside.
double smooth_l1(const Vec& z, const Vec& c, double delta = 1.0);

// Mean Smooth-L1 distance to the class's global prototype, over samples whose
// class has one; 0 when none do.
double loss_prototype(const std::vector<Vec>& batch_z, const std::vector<int>& batch_y,
                      const std::map<int, Vec>& global_protos, double delta = 1.0);

// Mean Smooth-L1 distance of minority-class samples to their cluster's
// semantic prototype; samples of unmapped minority classes are skipped and
// counted in *unmapped when given.
double loss_semantic(const std::vector<Vec>& batch_z, const std::vector<int>& batch_y,
                     const std::vector<Vec>& semantic_centroids,
                     const std::map<int, int>& cluster_of_class,
                     const std::set<int>& minority_set, double delta = 1.0,
                     long* unmapped = nullptr);

// Mean KL(softmax(z/tau) || softmax(ref/tau)) over samples with a resolvable
// reference; samples without one are skipped.
double loss_intertask(const std::vector<Vec>& batch_z, const std::vector<int>& batch_y,
                      const proto::ReferenceResolver& references, double kl_temperature);

// Everything total_loss/backward need to evaluate the regularizers. Null
// members read as "not available" (the corresponding samples are skipped).
struct ProtoContext {
  const std::map<int, Vec>* global_protos = nullptr;
  const std::vector<Vec>* semantic_centroids = nullptr;
  const std::map<int, int>* cluster_of_class = nullptr;
  const std::set<int>* minority = nullptr;
  const proto::ReferenceResolver* references = nullptr;
};

// View of a mini-batch as indices into a dataset.
struct BatchView {
  const data::LabeledDataset* dataset = nullptr;
  std::vector<int> indices;

  int size() const { return static_cast<int>(indices.size()); }
};

// total = L_C + L_P + L_I + alpha * L_S, with toggled-off terms exactly 0.
LossBreakdown total_loss(const BatchView& batch, const ModelParams& params,
                         const ProtoContext& ctx, const Hyperparams& hyper,
                         const LossToggles& toggles);

// Analytic gradient of total_loss w.r.t. every parameter. Reference
// prototypes are treated as constants; the KL gradient flows through
// softmax(z/tau) only.
Gradients backward(const BatchView& batch, const ModelParams& params,
                   const ProtoContext& ctx, const Hyperparams& hyper,
                   const LossToggles& toggles, LossBreakdown* out_loss = nullptr);

struct OptimizerState {
  Gradients velocity;

  static OptimizerState zeros_like(const ModelParams& params);
};

// v <- momentum*v + grad + weight_decay*theta; theta <- theta - lr*v.
void sgd_step(ModelParams& params, const Gradients& grads, OptimizerState& state,
              const Hyperparams& hyper);

}  // namespace fedmlp::model
