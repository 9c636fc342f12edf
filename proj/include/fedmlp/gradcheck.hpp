#pragma once

#include <cstdint>
#include <string>

namespace fedmlp::gradcheck {

struct Options {
  int instances = 20;
  uint64_t seed = 1;
  double step = 1e-4;       // central-difference step
  double tolerance = 1e-4;  // relative error bound
};

struct Report {
  int instances = 0;
  int combos = 0;             // loss-toggle combinations exercised per instance
  long parameters_checked = 0;
  double max_rel_err = 0.0;
  double seconds = 0.0;
  bool pass = false;
  std::string detail;         // set when a check fails
};

// Compares analytic backward() gradients against central finite differences
// of total_loss() on random small models, for all 8 on/off combinations of
// the three regularizers. The finite-difference side never touches
// backward(), so it is an independent oracle.
Report run_gradient_check(const Options& opts = {});

}  // namespace fedmlp::gradcheck
