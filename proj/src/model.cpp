#include "fedmlp/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fedmlp/rng.hpp"

namespace fedmlp::model {

namespace {
constexpr double kLogFloor = 1e-12;
}

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
  ModelParams p;
  p.w1 = Matrix(cfg.hidden_dim, cfg.input_dim);
  p.b1 = Vec(cfg.hidden_dim, 0.0);
  p.w2 = Matrix(cfg.feature_dim, cfg.hidden_dim);
  p.b2 = Vec(cfg.feature_dim, 0.0);
  p.wc = Matrix(cfg.num_classes, cfg.feature_dim);
  p.bc = Vec(cfg.num_classes, 0.0);
  return p;
}

ModelParams ModelParams::init(const ModelConfig& cfg, uint64_t seed) {
  ModelParams p = zeros(cfg);
  auto rng = make_rng(seed, {tag("init")});
  auto glorot = [&](Matrix& w) {
    const double limit = std::sqrt(6.0 / (w.rows + w.cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& x : w.data) x = dist(rng);
  };
  glorot(p.w1);
  glorot(p.w2);
  glorot(p.wc);
  return p;
}

size_t ModelParams::parameter_count() const {
  size_t n = 0;
  visit([&](const Vec& t) { n += t.size(); });
  return n;
}

namespace {

struct ForwardCache {
  Vec a1;      // pre-activation of the hidden layer
  Vec h;       // relu(a1)
  Vec z;       // feature vector
  Vec logits;
  Vec probs;
};

void forward_cached(const ModelParams& p, const Vec& x, ForwardCache& c) {
  if (static_cast<int>(x.size()) != p.w1.cols)
    throw std::invalid_argument("forward: input dimension mismatch");
  matvec(p.w1, x, c.a1);
  for (size_t i = 0; i < c.a1.size(); ++i) c.a1[i] += p.b1[i];
  c.h = c.a1;
  for (double& v : c.h) v = std::max(0.0, v);
  matvec(p.w2, c.h, c.z);
  for (size_t i = 0; i < c.z.size(); ++i) c.z[i] += p.b2[i];
  matvec(p.wc, c.z, c.logits);
  for (size_t i = 0; i < c.logits.size(); ++i) c.logits[i] += p.bc[i];
  c.probs = softmax(c.logits);
}

double smooth_l1_term(double x, double delta) {
  const double a = std::fabs(x);
  return a < delta ? 0.5 * x * x : delta * (a - 0.5 * delta);
}

double smooth_l1_grad(double x, double delta) {
  if (std::fabs(x) < delta) return x;
  return x > 0 ? delta : -delta;
}

}  // namespace

ForwardResult forward(const ModelParams& params, const Vec& x) {
  ForwardCache c;
  forward_cached(params, x, c);
  return {std::move(c.z), std::move(c.logits), std::move(c.probs)};
}

double cross_entropy(const Vec& probs, int y) {
  if (y < 0 || y >= static_cast<int>(probs.size()))
    throw std::invalid_argument("cross_entropy: label out of range");
  return -std::log(std::max(probs[y], kLogFloor));
}

double cross_entropy(const std::vector<Vec>& batch_probs, const std::vector<int>& batch_y) {
  if (batch_probs.size() != batch_y.size() || batch_probs.empty())
    throw std::invalid_argument("cross_entropy: bad batch");
  double sum = 0.0;
  for (size_t i = 0; i < batch_y.size(); ++i) sum += cross_entropy(batch_probs[i], batch_y[i]);
  return sum / static_cast<double>(batch_y.size());
}

double smooth_l1(const Vec& z, const Vec& c, double delta) {
  if (z.size() != c.size()) throw std::invalid_argument("smooth_l1: dimension mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < z.size(); ++i) acc += smooth_l1_term(z[i] - c[i], delta);
  return acc;
}

double loss_prototype(const std::vector<Vec>& batch_z, const std::vector<int>& batch_y,
                      const std::map<int, Vec>& global_protos, double delta) {
  double sum = 0.0;
  int n = 0;
  for (size_t i = 0; i < batch_y.size(); ++i) {
    auto it = global_protos.find(batch_y[i]);
    if (it == global_protos.end()) continue;
    sum += smooth_l1(batch_z[i], it->second, delta);
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

double loss_semantic(const std::vector<Vec>& batch_z, const std::vector<int>& batch_y,
                     const std::vector<Vec>& semantic_centroids,
                     const std::map<int, int>& cluster_of_class,
                     const std::set<int>& minority_set, double delta, long* unmapped) {
  double sum = 0.0;
  int n = 0;
  for (size_t i = 0; i < batch_y.size(); ++i) {
    if (!minority_set.count(batch_y[i])) continue;
    auto it = cluster_of_class.find(batch_y[i]);
    if (it == cluster_of_class.end() ||
        it->second >= static_cast<int>(semantic_centroids.size())) {
      if (unmapped) ++*unmapped;
      continue;
    }
    sum += smooth_l1(batch_z[i], semantic_centroids[it->second], delta);
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

namespace {

// KL(softmax(z/tau) || softmax(ref/tau)).
double kl_scaled_softmax(const Vec& z, const Vec& ref, double tau) {
  const Vec lp = log_softmax(scaled(z, 1.0 / tau));
  const Vec lq = log_softmax(scaled(ref, 1.0 / tau));
  double kl = 0.0;
  for (size_t j = 0; j < lp.size(); ++j) kl += std::exp(lp[j]) * (lp[j] - lq[j]);
  return std::max(kl, 0.0);
}

}  // namespace

double loss_intertask(const std::vector<Vec>& batch_z, const std::vector<int>& batch_y,
                      const proto::ReferenceResolver& references, double kl_temperature) {
  if (!(kl_temperature > 0.0))
    throw std::invalid_argument("loss_intertask: temperature must be > 0");
  double sum = 0.0;
  int n = 0;
  for (size_t i = 0; i < batch_y.size(); ++i) {
    const Vec* ref = references.resolve(batch_y[i], batch_z[i]);
    if (!ref) continue;
    sum += kl_scaled_softmax(batch_z[i], *ref, kl_temperature);
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

namespace {

struct SamplePlan {
  const Vec* proto = nullptr;      // global prototype (L_P)
  const Vec* semantic = nullptr;   // cluster centroid (L_S)
  const Vec* reference = nullptr;  // inter-task reference (L_I)
};

// Decides, per sample, which regularizers apply, and counts participants.
struct BatchPlan {
  std::vector<SamplePlan> samples;
  int n_proto = 0;
  int n_semantic = 0;
  int n_intertask = 0;
  long unmapped_minority = 0;
};

BatchPlan plan_batch(const BatchView& batch, const std::vector<ForwardCache>& caches,
                     const ProtoContext& ctx, const LossToggles& toggles) {
  BatchPlan plan;
  plan.samples.resize(batch.indices.size());
  for (size_t i = 0; i < batch.indices.size(); ++i) {
    const int y = batch.dataset->labels[batch.indices[i]];
    SamplePlan& sp = plan.samples[i];
    if (toggles.prototype && ctx.global_protos) {
      auto it = ctx.global_protos->find(y);
      if (it != ctx.global_protos->end()) {
        sp.proto = &it->second;
        plan.n_proto++;
      }
    }
    if (toggles.semantic && ctx.minority && ctx.minority->count(y)) {
      bool mapped = false;
      if (ctx.cluster_of_class && ctx.semantic_centroids) {
        auto it = ctx.cluster_of_class->find(y);
        if (it != ctx.cluster_of_class->end() &&
            it->second < static_cast<int>(ctx.semantic_centroids->size())) {
          sp.semantic = &(*ctx.semantic_centroids)[it->second];
          plan.n_semantic++;
          mapped = true;
        }
      }
      if (!mapped) plan.unmapped_minority++;
    }
    if (toggles.intertask && ctx.references) {
      sp.reference = ctx.references->resolve(y, caches[i].z);
      if (sp.reference) plan.n_intertask++;
    }
  }
  return plan;
}

}  // namespace

LossBreakdown total_loss(const BatchView& batch, const ModelParams& params,
                         const ProtoContext& ctx, const Hyperparams& hyper,
                         const LossToggles& toggles) {
  if (batch.size() == 0) throw std::invalid_argument("total_loss: empty batch");
  const int n = batch.size();
  std::vector<ForwardCache> caches(n);
  for (int i = 0; i < n; ++i)
    forward_cached(params, batch.dataset->features[batch.indices[i]], caches[i]);
  const BatchPlan plan = plan_batch(batch, caches, ctx, toggles);

  LossBreakdown lb;
  lb.unmapped_minority = plan.unmapped_minority;
  for (int i = 0; i < n; ++i) {
    const int y = batch.dataset->labels[batch.indices[i]];
    lb.l_c += cross_entropy(caches[i].probs, y);
    const SamplePlan& sp = plan.samples[i];
    if (sp.proto) lb.l_p += smooth_l1(caches[i].z, *sp.proto, hyper.smooth_l1_delta);
    if (sp.semantic) lb.l_s += smooth_l1(caches[i].z, *sp.semantic, hyper.smooth_l1_delta);
    if (sp.reference)
      lb.l_i += kl_scaled_softmax(caches[i].z, *sp.reference, hyper.kl_temperature);
  }
  lb.l_c /= n;
  lb.l_p = plan.n_proto > 0 ? lb.l_p / plan.n_proto : 0.0;
  lb.l_s = plan.n_semantic > 0 ? lb.l_s / plan.n_semantic : 0.0;
  lb.l_i = plan.n_intertask > 0 ? lb.l_i / plan.n_intertask : 0.0;
  lb.total = lb.l_c + lb.l_p + lb.l_i + hyper.alpha * lb.l_s;
  return lb;
}

Gradients backward(const BatchView& batch, const ModelParams& params,
                   const ProtoContext& ctx, const Hyperparams& hyper,
                   const LossToggles& toggles, LossBreakdown* out_loss) {
  if (batch.size() == 0) throw std::invalid_argument("backward: empty batch");
  const int n = batch.size();
  const double tau = hyper.kl_temperature;
  const double delta = hyper.smooth_l1_delta;

  std::vector<ForwardCache> caches(n);
  for (int i = 0; i < n; ++i)
    forward_cached(params, batch.dataset->features[batch.indices[i]], caches[i]);
  const BatchPlan plan = plan_batch(batch, caches, ctx, toggles);

  Gradients g;
  g.w1 = Matrix(params.w1.rows, params.w1.cols);
  g.b1 = Vec(params.b1.size(), 0.0);
  g.w2 = Matrix(params.w2.rows, params.w2.cols);
  g.b2 = Vec(params.b2.size(), 0.0);
  g.wc = Matrix(params.wc.rows, params.wc.cols);
  g.bc = Vec(params.bc.size(), 0.0);

  LossBreakdown lb;
  lb.unmapped_minority = plan.unmapped_minority;

  const int d = params.feature_dim();
  const int classes = params.num_classes();
  Vec dlogits(classes), dz(d), dh(params.w2.cols), da1(params.w1.rows);

  for (int i = 0; i < n; ++i) {
    const ForwardCache& c = caches[i];
    const Vec& x = batch.dataset->features[batch.indices[i]];
    const int y = batch.dataset->labels[batch.indices[i]];
    const SamplePlan& sp = plan.samples[i];

    // Cross entropy through softmax; a clamped sample has zero gradient.
    lb.l_c += cross_entropy(c.probs, y);
    std::fill(dlogits.begin(), dlogits.end(), 0.0);
    if (c.probs[y] > kLogFloor) {
      for (int j = 0; j < classes; ++j) dlogits[j] = c.probs[j] / n;
      dlogits[y] -= 1.0 / n;
    }

    std::fill(dz.begin(), dz.end(), 0.0);
    matvec_transposed_add(params.wc, dlogits, dz);

    if (sp.proto) {
      lb.l_p += smooth_l1(c.z, *sp.proto, delta);
      const double scale = 1.0 / plan.n_proto;
      for (int j = 0; j < d; ++j)
        dz[j] += scale * smooth_l1_grad(c.z[j] - (*sp.proto)[j], delta);
    }
    if (sp.semantic) {
      lb.l_s += smooth_l1(c.z, *sp.semantic, delta);
      if (hyper.alpha != 0.0) {
        const double scale = hyper.alpha / plan.n_semantic;
        for (int j = 0; j < d; ++j)
          dz[j] += scale * smooth_l1_grad(c.z[j] - (*sp.semantic)[j], delta);
      }
    }
    if (sp.reference) {
      // d KL / d z_j = (1/tau) p_j (log(p_j/q_j) - KL), p = softmax(z/tau).
      const Vec lp = log_softmax(scaled(c.z, 1.0 / tau));
      const Vec lq = log_softmax(scaled(*sp.reference, 1.0 / tau));
      double kl = 0.0;
      for (int j = 0; j < d; ++j) kl += std::exp(lp[j]) * (lp[j] - lq[j]);
      kl = std::max(kl, 0.0);
      lb.l_i += kl;
      const double scale = 1.0 / (plan.n_intertask * tau);
      for (int j = 0; j < d; ++j)
        dz[j] += scale * std::exp(lp[j]) * ((lp[j] - lq[j]) - kl);
    }

    // Classifier.
    for (int r = 0; r < classes; ++r) {
      if (dlogits[r] == 0.0) continue;
      double* row = g.wc.data.data() + static_cast<size_t>(r) * d;
      for (int j = 0; j < d; ++j) row[j] += dlogits[r] * c.z[j];
      g.bc[r] += dlogits[r];
    }

    // Extractor.
    std::fill(dh.begin(), dh.end(), 0.0);
    matvec_transposed_add(params.w2, dz, dh);
    for (int r = 0; r < params.w2.rows; ++r) {
      if (dz[r] == 0.0) continue;
      double* row = g.w2.data.data() + static_cast<size_t>(r) * params.w2.cols;
      for (int j = 0; j < params.w2.cols; ++j) row[j] += dz[r] * c.h[j];
      g.b2[r] += dz[r];
    }
    for (size_t j = 0; j < da1.size(); ++j) da1[j] = c.a1[j] > 0.0 ? dh[j] : 0.0;
    for (int r = 0; r < params.w1.rows; ++r) {
      if (da1[r] == 0.0) continue;
      double* row = g.w1.data.data() + static_cast<size_t>(r) * params.w1.cols;
      for (int j = 0; j < params.w1.cols; ++j) row[j] += da1[r] * x[j];
      g.b1[r] += da1[r];
    }
  }

  lb.l_c /= n;
  lb.l_p = plan.n_proto > 0 ? lb.l_p / plan.n_proto : 0.0;
  lb.l_s = plan.n_semantic > 0 ? lb.l_s / plan.n_semantic : 0.0;
  lb.l_i = plan.n_intertask > 0 ? lb.l_i / plan.n_intertask : 0.0;
  lb.total = lb.l_c + lb.l_p + lb.l_i + hyper.alpha * lb.l_s;
  if (out_loss) *out_loss = lb;
  return g;
}

OptimizerState OptimizerState::zeros_like(const ModelParams& params) {
  OptimizerState s;
  s.velocity.w1 = Matrix(params.w1.rows, params.w1.cols);
  s.velocity.b1 = Vec(params.b1.size(), 0.0);
  s.velocity.w2 = Matrix(params.w2.rows, params.w2.cols);
  s.velocity.b2 = Vec(params.b2.size(), 0.0);
  s.velocity.wc = Matrix(params.wc.rows, params.wc.cols);
  s.velocity.bc = Vec(params.bc.size(), 0.0);
  return s;
}

void sgd_step(ModelParams& params, const Gradients& grads, OptimizerState& state,
              const Hyperparams& hyper) {
  auto step = [&](Vec& theta, const Vec& g, Vec& v) {
    if (theta.size() != g.size() || theta.size() != v.size())
      throw std::invalid_argument("sgd_step: shape mismatch");
    for (size_t i = 0; i < theta.size(); ++i) {
      v[i] = hyper.momentum * v[i] + g[i] + hyper.weight_decay * theta[i];
      theta[i] -= hyper.lr * v[i];
    }
  };
  step(params.w1.data, grads.w1.data, state.velocity.w1.data);
  step(params.b1, grads.b1, state.velocity.b1);
  step(params.w2.data, grads.w2.data, state.velocity.w2.data);
  step(params.b2, grads.b2, state.velocity.b2);
  step(params.wc.data, grads.wc.data, state.velocity.wc.data);
  step(params.bc, grads.bc, state.velocity.bc);
}

}  // namespace fedmlp::model
