#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace bfflow {

/// y = Op(x); both spans have the operator's dimension.
using LinearOperator = std::function<void(std::span<const double>, std::span<double>)>;

struct CgOptions {
  double rel_tol = 1e-10;   // on ||r|| / ||b||
  double abs_tol = 0.0;     // on ||r||
  int max_iter = 2000;
  std::string label = "cg";
};

struct CgResult {
  int iterations = 0;
  double residual = 0.0;    // final ||r|| / ||b|| (absolute when b = 0)
};

/// Preconditioned conjugate gradients for a symmetric positive definite
/// operator. x holds the initial guess on entry. Throws ConvergenceError with
/// the residual history when max_iter is reached.
CgResult conjugate_gradient(const LinearOperator& op, std::span<const double> b, std::span<double> x,
                            const CgOptions& opts, const LinearOperator& precond = {});

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

}  // namespace bfflow
