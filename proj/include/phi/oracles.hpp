#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace phi {

// Closed-form minimizer of the squared-residual surrogate
//   f(rho) = beta ||L phi - rho||^2 + (a + 1/2 phi' rho)^2
// over rho, with t* the coefficient of phi removed from L phi.
struct InnerMinimizerResult {
  double t_star = 0;
  std::vector<double> rho_star;
  double objective_at_star = 0;
};

// Dense symmetric n x n matrices, row-major.
double surrogate_objective(const std::vector<double>& L, int n, const std::vector<double>& phi,
                           const std::vector<double>& rho, double a, double beta);
// A(phi) = a + 1/2 phi' L phi.
double amplitude(const std::vector<double>& L, int n, const std::vector<double>& phi, double a);
InnerMinimizerResult inner_minimizer(const std::vector<double>& L, int n,
                                     const std::vector<double>& phi, double a, double beta);
// A(phi)^2 * 4 beta / (4 beta + ||phi||^2); checked against the objective at
// rho* to 1e-12 internally.
double reduced_objective(const std::vector<double>& L, int n, const std::vector<double>& phi,
                         double a, double beta);
// Conjugate-gradient minimization of f(rho) from a zero start; strictly
// convex, so this is an independent oracle for rho*.
std::vector<double> numerical_inner_minimizer(const std::vector<double>& L, int n,
                                              const std::vector<double>& phi, double a,
                                              double beta, int steps = 500);

// Residual beta||.||^2 gradients for the two charge parameterizations:
// aligned  rho = U Lambda alpha_rho  -> grads +/- 2 beta Lambda^2 (a_phi - a_rho)
// plain    rho = U alpha_rho         -> grads 2 beta Lambda (Lambda a_phi - a_rho)
//                                       and   -2 beta (Lambda a_phi - a_rho)
struct GradientSymmetryReport {
  std::vector<double> aligned_grad_phi, aligned_grad_rho;  // tape gradients
  std::vector<double> plain_grad_phi, plain_grad_rho;
  double max_aligned_dev = 0;  // tape vs analytic, both parameter blocks
  double max_plain_dev = 0;
  std::vector<double> asymmetry_ratio;  // plain: grad_phi_i / -grad_rho_i
};
GradientSymmetryReport gradient_symmetry_check(const std::vector<double>& lambda,
                                               const std::vector<double>& alpha_phi,
                                               const std::vector<double>& alpha_rho, double beta);

// Expected best validation score after n independent trials, for n = 1..n_max,
// over the empirical distribution of `values` (larger is better; ties exact).
std::vector<double> evp_curve(const std::vector<double>& values, int n_max);

struct VerifyCheck {
  std::string name;
  double deviation = 0;
  double tolerance = 0;
  bool pass = false;
};

// Full oracle suite: closed forms vs hand values and numerical minimization,
// objective bounds, Hessian positivity, gradient symmetry, EVP formula, and
// the span-restricted variants.
std::vector<VerifyCheck> run_verification_checks(uint64_t seed = 0);

}  // namespace phi
