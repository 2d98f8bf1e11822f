#pragma once

#include <functional>
#include <vector>

namespace metatune {

struct LevMarOptions {
  int max_iters = 200;
  double grad_tol = 1e-10;      // on the normalized-coordinate gradient 2-norm
  double lambda0 = 1e-3;
  double lambda_shrink = 1.0 / 3.0;
  double lambda_grow = 3.0;
  double lambda_min = 1e-12;
  double lambda_max = 1e12;     // damping blow-up means no further progress
  double fd_step = 1e-6;        // forward-difference step, normalized coords
  double bound_tol = 1e-9;      // normalized distance counting as "pinned"
  // When true, first-order optimality is tested against the Gaussian
  // maximum-likelihood criterion V = (n/2) log(SSE/n) instead of the raw
  // sum of squares; its gradient is n * J'r / SSE (same minimizer, but the
  // tolerance is measured on the statistically scaled gradient).
  bool likelihood_gradient = false;
};

struct LevMarResult {
  std::vector<double> x;        // solution, original coordinates
  double cost = 0.0;            // sum of squared residuals
  double grad_norm = 0.0;
  int iters = 0;
  bool converged = false;       // gradient tolerance met
  bool at_bound = false;        // some coordinate pinned to its box bound
};

using ResidualFn = std::function<std::vector<double>(const std::vector<double>&)>;

/// Box-constrained Levenberg-Marquardt: work happens in coordinates scaled to
/// [0,1] over [lo, hi]; the Jacobian is forward finite differences of the
/// residual; candidate steps solve (J'J + lambda diag(J'J)) d = -J'r and are
/// clipped to the box; steps are accepted only on cost decrease.  The solver
/// stops only when the gradient-norm tolerance is met or the iteration budget
/// is exhausted.
LevMarResult levmar(const ResidualFn& residual, std::vector<double> x0,
                    std::vector<double> lo, std::vector<double> hi,
                    const LevMarOptions& opt = {});

}  // namespace metatune
