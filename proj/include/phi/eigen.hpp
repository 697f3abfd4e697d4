#pragma once

#include "phi/graph.hpp"

#include <cstdint>
#include <vector>

namespace phi {

// Full decomposition of a small dense symmetric matrix (test oracle and
// Rayleigh-Ritz workhorse). vectors is n×n row-major; column j pairs with
// values[j]; values ascend.
struct DenseEig {
  int n = 0;
  std::vector<double> values;
  std::vector<double> vectors;
};

// Cyclic Jacobi rotations until the off-diagonal Frobenius norm is <= 1e-12.
// Guarded to n <= 512.
DenseEig dense_eig_oracle(std::vector<double> A, int n);

// Partial eigenbasis of one graph Laplacian: U n×k row-major with orthonormal
// columns, eigenvalues ascending, per-column residual norms ||L u - lambda u||.
struct SpectralBasis {
  int n = 0, k = 0;
  std::vector<double> U;
  std::vector<double> lambda;
  std::vector<double> residual_norms;
  int graph_id = 0;
};

struct EigOptions {
  double tol = 1e-8;
  int max_iter = 200;
  uint64_t seed = 0;
  bool largest = false;  // default returns the smallest-k modes
};

// Locally optimal block preconditioned CG for the k extremal eigenpairs of a
// sparse symmetric PSD matrix. Falls back to the dense oracle when k >= n or
// k > n/4. Deterministic for a fixed seed.
SpectralBasis lobpcg(const SparseSym& L, int k, const EigOptions& opt = {});

// Independent per-block solves; k is clamped to each block size. `threads`
// bounds the OpenMP parallelism across blocks (results are identical for any
// thread count).
std::vector<SpectralBasis> batched_spectral_basis(const BatchedLaplacian& batch, int k,
                                                  const EigOptions& opt = {}, int threads = 1);

}  // namespace phi
