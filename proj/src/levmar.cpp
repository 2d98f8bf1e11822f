#include "metatune/levmar.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

namespace metatune {

LevMarResult levmar(const ResidualFn& residual, std::vector<double> x0, std::vector<double> lo,
                    std::vector<double> hi, const LevMarOptions& opt) {
  const int p = static_cast<int>(x0.size());
  if (p == 0 || lo.size() != x0.size() || hi.size() != x0.size())
    throw std::invalid_argument("levmar: x0, lo, hi must have equal nonzero length");
  for (int j = 0; j < p; ++j)
    if (!(hi[j] > lo[j])) throw std::invalid_argument("levmar: box must have hi > lo");

  const auto denorm = [&](const Eigen::VectorXd& s) {
    std::vector<double> x(p);
    for (int j = 0; j < p; ++j) x[j] = lo[j] + s[j] * (hi[j] - lo[j]);
    return x;
  };
  const auto eval = [&](const Eigen::VectorXd& s) {
    const std::vector<double> r = residual(denorm(s));
    return Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size())).eval();
  };

  Eigen::VectorXd s(p);
  for (int j = 0; j < p; ++j)
    s[j] = std::clamp((x0[j] - lo[j]) / (hi[j] - lo[j]), 0.0, 1.0);

  Eigen::VectorXd r = eval(s);
  const Eigen::Index n = r.size();
  if (n == 0) throw std::invalid_argument("levmar: residual function returned no residuals");
  double cost = r.squaredNorm();
  double lambda = opt.lambda0;

  LevMarResult out;
  Eigen::MatrixXd J(n, p);
  for (; out.iters < opt.max_iters; ++out.iters) {
    // Forward-difference Jacobian about the current iterate (one residual
    // evaluation per parameter; the base residual is already in hand).
    for (int j = 0; j < p; ++j) {
      Eigen::VectorXd sp = s;
      sp[j] += opt.fd_step;
      J.col(j) = (eval(sp) - r) / opt.fd_step;
    }
    const Eigen::VectorXd g = J.transpose() * r;
    // First-order optimality: either the raw least-squares gradient J'r, or
    // the gradient of the Gaussian ML criterion (n/2) log(SSE/n), which is
    // n J'r / SSE (same minimizer, noise-scaled measure).
    out.grad_norm = opt.likelihood_gradient
                        ? (cost > 0.0 ? static_cast<double>(n) * g.norm() / cost
                                      : std::numeric_limits<double>::infinity())
                        : g.norm();
    if (out.grad_norm < opt.grad_tol) {
      out.converged = true;
      break;
    }
    const Eigen::MatrixXd H = J.transpose() * J;
    // Damping ladder: retry with stiffer regularization until a step lowers
    // the cost or lambda tops out. Termination is governed solely by the
    // gradient tolerance and the iteration cap, so an exhausted ladder leaves
    // the iterate (and lambda) in place for the next pass.
    while (lambda <= opt.lambda_max) {
      Eigen::MatrixXd Hd = H;
      for (int j = 0; j < p; ++j) Hd(j, j) += lambda * (H(j, j) + 1e-12);
      const Eigen::VectorXd d = -Hd.ldlt().solve(g);
      Eigen::VectorXd sn = s + d;
      for (int j = 0; j < p; ++j) sn[j] = std::clamp(sn[j], 0.0, 1.0);
      const Eigen::VectorXd rn = eval(sn);
      const double cn = rn.squaredNorm();
      if (std::isfinite(cn) && cn < cost) {
        s = sn;
        r = rn;
        cost = cn;
        lambda = std::max(lambda * opt.lambda_shrink, opt.lambda_min);
        break;
      }
      lambda *= opt.lambda_grow;
    }
    lambda = std::min(lambda, opt.lambda_max);
  }

  out.x = denorm(s);
  out.cost = cost;
  for (int j = 0; j < p; ++j)
    if (s[j] < opt.bound_tol || s[j] > 1.0 - opt.bound_tol) out.at_bound = true;
  return out;
}

}  // namespace metatune
