#include "fedmlp/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "fedmlp/model.hpp"
#include "fedmlp/rng.hpp"

namespace fedmlp::gradcheck {

namespace {

std::vector<double*> flatten(model::ModelParams& p) {
  std::vector<double*> out;
  p.visit([&](Vec& t) {
    for (double& x : t) out.push_back(&x);
  });
  return out;
}

std::vector<double> flatten_values(const model::ModelParams& p) {
  std::vector<double> out;
  p.visit([&](const Vec& t) { out.insert(out.end(), t.begin(), t.end()); });
  return out;
}

}  // namespace

Report run_gradient_check(const Options& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  Report rep;
  rep.combos = 8;

  for (int inst = 0; inst < opts.instances; ++inst) {
    auto rng = make_rng(opts.seed, {tag("gradcheck"), static_cast<uint64_t>(inst)});
    auto uniform_int = [&](int lo, int hi) {
      return std::uniform_int_distribution<int>(lo, hi)(rng);
    };
    std::normal_distribution<double> normal(0.0, 1.0);

    model::ModelConfig mc;
    mc.input_dim = uniform_int(2, 8);
    mc.hidden_dim = uniform_int(2, 16);
    mc.feature_dim = uniform_int(2, 8);
    mc.num_classes = uniform_int(2, 5);
    model::ModelParams params =
        model::ModelParams::init(mc, derive_seed(opts.seed, {tag("gcp"), (uint64_t)inst}));

    data::LabeledDataset ds;
    ds.class_count = mc.num_classes;
    const int n = uniform_int(3, 8);
    for (int i = 0; i < n; ++i) {
      Vec x(mc.input_dim);
      for (double& v : x) v = normal(rng);
      ds.features.push_back(std::move(x));
      ds.labels.push_back(uniform_int(0, mc.num_classes - 1));
    }
    model::BatchView batch;
    batch.dataset = &ds;
    batch.indices.resize(n);
    for (int i = 0; i < n; ++i) batch.indices[i] = i;

    auto random_vec = [&](double scale) {
      Vec v(mc.feature_dim);
      for (double& x : v) x = scale * normal(rng);
      return v;
    };

    std::map<int, Vec> global_protos;
    std::map<int, Vec> historical;
    std::map<int, int> cluster_of_class;
    std::set<int> minority;
    for (int k = 0; k < mc.num_classes; ++k) {
      if (uniform_int(0, 9) < 7) global_protos[k] = random_vec(0.5);
      if (uniform_int(0, 9) < 5) historical[k] = random_vec(0.5);
      cluster_of_class[k] = uniform_int(0, 2);
      if (uniform_int(0, 1)) minority.insert(k);
    }
    std::vector<Vec> semantic_centroids;
    for (int c = 0; c < 3; ++c) semantic_centroids.push_back(random_vec(0.6));
    // Centroids for the new-class fallback are kept far apart so the argmin
    // selection cannot flip under the finite-difference perturbation.
    std::vector<Vec> local_centroids;
    for (int c = 0; c < 2; ++c) {
      Vec v(mc.feature_dim, c == 0 ? 5.0 : -5.0);
      v[0] += normal(rng);
      local_centroids.push_back(std::move(v));
    }

    proto::ReferenceResolver resolver;
    resolver.historical = &historical;
    resolver.semantic_centroids = &local_centroids;

    model::ProtoContext ctx;
    ctx.global_protos = &global_protos;
    ctx.semantic_centroids = &semantic_centroids;
    ctx.cluster_of_class = &cluster_of_class;
    ctx.minority = &minority;
    ctx.references = &resolver;

    model::Hyperparams hyper;
    const double taus[] = {0.7, 1.0, 2.0};
    const double alphas[] = {0.5, 1.0, 2.0};
    hyper.kl_temperature = taus[uniform_int(0, 2)];
    hyper.alpha = alphas[uniform_int(0, 2)];

    for (int combo = 0; combo < 8; ++combo) {
      model::LossToggles toggles;
      toggles.prototype = combo & 1;
      toggles.intertask = combo & 2;
      toggles.semantic = combo & 4;

      const model::Gradients analytic =
          model::backward(batch, params, ctx, hyper, toggles);
      const std::vector<double> ga = flatten_values(analytic);
      const std::vector<double*> slots = flatten(params);

      for (size_t j = 0; j < slots.size(); ++j) {
        const double orig = *slots[j];
        *slots[j] = orig + opts.step;
        const double up = model::total_loss(batch, params, ctx, hyper, toggles).total;
        *slots[j] = orig - opts.step;
        const double down = model::total_loss(batch, params, ctx, hyper, toggles).total;
        *slots[j] = orig;
        const double fd = (up - down) / (2.0 * opts.step);

        const double rel = std::fabs(ga[j] - fd) /
                           std::max({1e-3, std::fabs(ga[j]), std::fabs(fd)});
        rep.max_rel_err = std::max(rep.max_rel_err, rel);
        ++rep.parameters_checked;
        if (rel >= opts.tolerance && rep.detail.empty()) {
          std::ostringstream os;
          os << "instance " << inst << " combo " << combo << " param " << j
             << ": analytic " << ga[j] << " vs fd " << fd << " (rel " << rel << ")";
          rep.detail = os.str();
        }
      }
    }
    ++rep.instances;
  }

  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rep.pass = rep.max_rel_err < opts.tolerance;
  return rep;
}

}  // namespace fedmlp::gradcheck
