#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace copo {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tol = 0.0;
  bool pass = false;
};

// Finite-difference verification of the differentiable surfaces: the mixture
// density, the attention score chain, and every trainer loss, on small
// randomized instances with frozen noise.
std::vector<GradCheckResult> run_gradient_checks(std::uint64_t seed = 1234);

}  // namespace copo
