#include "bfflow/linalg.hpp"

#include <cmath>

#include "bfflow/errors.hpp"

namespace bfflow {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

CgResult conjugate_gradient(const LinearOperator& op, std::span<const double> b, std::span<double> x,
                            const CgOptions& opts, const LinearOperator& precond) {
  const std::size_t n = b.size();
  std::vector<double> r(n), z(n), p(n), q(n);

  op(x, q);
  for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - q[i];

  const double bnorm = norm2(b);
  const double scale = bnorm > 0.0 ? bnorm : 1.0;
  const double target = std::max(opts.rel_tol * scale, opts.abs_tol);

  std::vector<double> history;
  double rnorm = norm2(r);
  history.push_back(rnorm / scale);
  if (!std::isfinite(rnorm)) throw ConvergenceError(opts.label + ": non-finite residual", history);
  if (rnorm <= target) return {0, rnorm / scale};

  auto apply_precond = [&](std::span<const double> in, std::span<double> out) {
    if (precond)
      precond(in, out);
    else
      std::copy(in.begin(), in.end(), out.begin());
  };

  apply_precond(r, z);
  p = z;
  double rz = dot(r, z);
  for (int it = 1; it <= opts.max_iter; ++it) {
    op(p, q);
    const double pq = dot(p, q);
    if (!(pq > 0.0)) {
      // Operator is (numerically) singular along p; the residual cannot improve.
      throw ConvergenceError(opts.label + ": operator not positive definite along search direction", history);
    }
    const double alpha = rz / pq;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * q[i];
    }
    rnorm = norm2(r);
    history.push_back(rnorm / scale);
    if (rnorm <= target) return {it, rnorm / scale};

    apply_precond(r, z);
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  throw ConvergenceError(opts.label + ": no convergence after " + std::to_string(opts.max_iter) +
                             " iterations, residual " + std::to_string(rnorm / scale),
                         history);
}

}  // namespace bfflow
