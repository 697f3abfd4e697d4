#include "phi/eigen.hpp"

#include "phi/rng.hpp"
#include "phi/tensor.hpp"  // NumericError

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace phi {

namespace {

double off_diag_frob2(const std::vector<double>& A, int n) {
  double s = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) s += A[size_t(i) * n + j] * A[size_t(i) * n + j];
  return s;
}

}  // namespace

DenseEig dense_eig_oracle(std::vector<double> A, int n) {
  if (n < 1 || int64_t(n) * n != int64_t(A.size()))
    throw std::invalid_argument("dense eig: bad dimensions");
  if (n > 512) throw std::invalid_argument("dense eig: n exceeds the 512 guard");
  double amax = 0;
  for (double v : A) amax = std::max(amax, std::fabs(v));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      if (std::fabs(A[size_t(i) * n + j] - A[size_t(j) * n + i]) > 1e-10 * std::max(1.0, amax))
        throw std::invalid_argument("dense eig: matrix is not symmetric");
      const double m = 0.5 * (A[size_t(i) * n + j] + A[size_t(j) * n + i]);
      A[size_t(i) * n + j] = A[size_t(j) * n + i] = m;
    }

  DenseEig out;
  out.n = n;
  out.vectors.assign(size_t(n) * n, 0.0);
  for (int i = 0; i < n; ++i) out.vectors[size_t(i) * n + i] = 1.0;
  auto& V = out.vectors;

  for (int sweep = 0; sweep < 100; ++sweep) {
    if (off_diag_frob2(A, n) <= 1e-24) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = A[size_t(p) * n + q];
        if (std::fabs(apq) < 1e-300) continue;
        const double tau = (A[size_t(q) * n + q] - A[size_t(p) * n + p]) / (2 * apq);
        const double t = (tau >= 0 ? 1.0 : -1.0) / (std::fabs(tau) + std::sqrt(1 + tau * tau));
        const double c = 1.0 / std::sqrt(1 + t * t);
        const double s = t * c;
        A[size_t(p) * n + p] -= t * apq;
        A[size_t(q) * n + q] += t * apq;
        A[size_t(p) * n + q] = A[size_t(q) * n + p] = 0.0;
        for (int i = 0; i < n; ++i) {
          if (i != p && i != q) {
            const double aip = A[size_t(i) * n + p], aiq = A[size_t(i) * n + q];
            A[size_t(i) * n + p] = A[size_t(p) * n + i] = c * aip - s * aiq;
            A[size_t(i) * n + q] = A[size_t(q) * n + i] = s * aip + c * aiq;
          }
          const double vip = V[size_t(i) * n + p], viq = V[size_t(i) * n + q];
          V[size_t(i) * n + p] = c * vip - s * viq;
          V[size_t(i) * n + q] = s * vip + c * viq;
        }
      }
  }
  if (off_diag_frob2(A, n) > 1e-24)
    throw NumericError("dense eig: rotations failed to annihilate the off-diagonal");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return A[size_t(a) * n + a] < A[size_t(b) * n + b]; });
  out.values.resize(size_t(n));
  std::vector<double> Vs(size_t(n) * n);
  for (int j = 0; j < n; ++j) {
    out.values[size_t(j)] = A[size_t(order[size_t(j)]) * n + order[size_t(j)]];
    for (int i = 0; i < n; ++i) Vs[size_t(i) * n + j] = V[size_t(i) * n + order[size_t(j)]];
  }
  out.vectors = std::move(Vs);
  return out;
}

namespace {

using Cols = std::vector<std::vector<double>>;  // each entry one n-vector column

double col_dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Modified Gram-Schmidt of `block` against `fixed` then internally, run twice;
// columns with remaining norm below 1e-10 are dropped.
void mgs(Cols& block, const Cols& fixed) {
  for (int pass = 0; pass < 2; ++pass) {
    for (size_t c = 0; c < block.size(); ++c) {
      auto& v = block[c];
      for (const auto& q : fixed) {
        const double d = col_dot(q, v);
        for (size_t i = 0; i < v.size(); ++i) v[i] -= d * q[i];
      }
      for (size_t c2 = 0; c2 < c; ++c2) {
        const double d = col_dot(block[c2], v);
        for (size_t i = 0; i < v.size(); ++i) v[i] -= d * block[c2][i];
      }
      const double nrm = std::sqrt(col_dot(v, v));
      if (nrm < 1e-10) {
        v.clear();  // mark for removal
        continue;
      }
      for (auto& x : v) x /= nrm;
    }
    block.erase(std::remove_if(block.begin(), block.end(),
                               [](const std::vector<double>& v) { return v.empty(); }),
                block.end());
  }
}

void check_symmetric(const SparseSym& L) {
  for (int i = 0; i < L.n; ++i)
    for (int k = L.row_ptr[size_t(i)]; k < L.row_ptr[size_t(i) + 1]; ++k) {
      const int j = L.col[size_t(k)];
      const double v = L.val[size_t(k)];
      if (std::fabs(L.at(j, i) - v) > 1e-12 * std::max(1.0, std::fabs(v)))
        throw std::invalid_argument("eigensolver: matrix is not symmetric");
    }
}

SpectralBasis from_dense(const SparseSym& L, int k, bool largest) {
  const DenseEig full = dense_eig_oracle(L.dense(), L.n);
  const int n = L.n;
  SpectralBasis out;
  out.n = n;
  out.k = k;
  out.U.assign(size_t(n) * size_t(k), 0.0);
  out.lambda.resize(size_t(k));
  // Take k from the requested end of the spectrum, reported ascending.
  const int base = largest ? n - k : 0;
  for (int j = 0; j < k; ++j) {
    out.lambda[size_t(j)] = full.values[size_t(base + j)];
    for (int i = 0; i < n; ++i)
      out.U[size_t(i) * size_t(k) + size_t(j)] = full.vectors[size_t(i) * n + base + j];
  }
  out.residual_norms.assign(size_t(k), 0.0);
  std::vector<double> x(n), y(n);
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < n; ++i) x[size_t(i)] = out.U[size_t(i) * size_t(k) + size_t(j)];
    L.multiply(x.data(), y.data());
    double s = 0;
    for (int i = 0; i < n; ++i) {
      const double r = y[size_t(i)] - out.lambda[size_t(j)] * x[size_t(i)];
      s += r * r;
    }
    out.residual_norms[size_t(j)] = std::sqrt(s);
  }
  return out;
}

}  // namespace

SpectralBasis lobpcg(const SparseSym& L, int k, const EigOptions& opt) {
  if (k < 1) throw std::invalid_argument("eigensolver: k must be at least 1");
  check_symmetric(L);
  const int n = L.n;
  if (k >= n || k > n / 4) return from_dense(L, std::min(k, n), opt.largest);

  // The largest-k variant runs on 2I - A (spectrum stays in [0,2] for a
  // normalized Laplacian) and maps eigenvalues back at the end.
  auto apply = [&](const std::vector<double>& x, std::vector<double>& y) {
    L.multiply(x.data(), y.data());
    if (opt.largest)
      for (int i = 0; i < n; ++i) y[size_t(i)] = 2.0 * x[size_t(i)] - y[size_t(i)];
  };

  Cols X(k, std::vector<double>(n));
  for (int j = 0; j < k; ++j) {
    Rng rng = derive_rng(opt.seed, "eig-init", uint64_t(j));
    for (int i = 0; i < n; ++i) X[size_t(j)][size_t(i)] = rng.normal();
  }
  mgs(X, {});
  if (int(X.size()) != k) throw NumericError("eigensolver: failed to seed an orthonormal block");

  Cols P;
  std::vector<double> theta(size_t(k), 0.0), resnorm(size_t(k), 0.0);
  Cols AX(k, std::vector<double>(n));

  auto rayleigh_ritz_x = [&]() {
    for (int j = 0; j < k; ++j) apply(X[size_t(j)], AX[size_t(j)]);
    std::vector<double> T(size_t(k) * size_t(k));
    for (int a = 0; a < k; ++a)
      for (int b = a; b < k; ++b)
        T[size_t(a) * size_t(k) + size_t(b)] = T[size_t(b) * size_t(k) + size_t(a)] =
            col_dot(X[size_t(a)], AX[size_t(b)]);
    const DenseEig small = dense_eig_oracle(T, k);
    Cols Xn(k, std::vector<double>(n, 0.0));
    Cols AXn(k, std::vector<double>(n, 0.0));
    for (int j = 0; j < k; ++j) {
      theta[size_t(j)] = small.values[size_t(j)];
      for (int a = 0; a < k; ++a) {
        const double c = small.vectors[size_t(a) * size_t(k) + size_t(j)];
        for (int i = 0; i < n; ++i) {
          Xn[size_t(j)][size_t(i)] += c * X[size_t(a)][size_t(i)];
          AXn[size_t(j)][size_t(i)] += c * AX[size_t(a)][size_t(i)];
        }
      }
    }
    X = std::move(Xn);
    AX = std::move(AXn);
  };

  std::vector<std::vector<double>> R(k, std::vector<double>(n));
  for (int iter = 0; iter < opt.max_iter; ++iter) {
    rayleigh_ritz_x();
    bool all_ok = true;
    for (int j = 0; j < k; ++j) {
      double s = 0;
      for (int i = 0; i < n; ++i) {
        R[size_t(j)][size_t(i)] = AX[size_t(j)][size_t(i)] - theta[size_t(j)] * X[size_t(j)][size_t(i)];
        s += R[size_t(j)][size_t(i)] * R[size_t(j)][size_t(i)];
      }
      resnorm[size_t(j)] = std::sqrt(s);
      if (resnorm[size_t(j)] > opt.tol) all_ok = false;
    }
    if (all_ok) break;

    // Soft locking: converged columns stay in X but contribute no new search
    // direction. The normalized Laplacian has a unit diagonal, so the Jacobi
    // preconditioner is the identity.
    Cols W;
    for (int j = 0; j < k; ++j)
      if (resnorm[size_t(j)] > opt.tol) W.push_back(R[size_t(j)]);
    Cols fixed = X;
    for (const auto& p : P) fixed.push_back(p);
    mgs(W, fixed);
    if (W.empty() && P.empty()) break;  // stagnation: report actual residuals

    Cols S = X;
    for (auto& w : W) S.push_back(std::move(w));
    for (auto& p : P) S.push_back(p);
    const int m = int(S.size());
    Cols AS(m, std::vector<double>(n));
    for (int j = 0; j < m; ++j) apply(S[size_t(j)], AS[size_t(j)]);
    std::vector<double> G(size_t(m) * size_t(m));
    for (int a = 0; a < m; ++a)
      for (int b = a; b < m; ++b)
        G[size_t(a) * size_t(m) + size_t(b)] = G[size_t(b) * size_t(m) + size_t(a)] =
            col_dot(S[size_t(a)], AS[size_t(b)]);
    const DenseEig small = dense_eig_oracle(G, m);

    Cols Xn(k, std::vector<double>(n, 0.0));
    Cols Pn(k, std::vector<double>(n, 0.0));
    for (int j = 0; j < k; ++j) {
      for (int a = 0; a < m; ++a) {
        const double c = small.vectors[size_t(a) * size_t(m) + size_t(j)];
        for (int i = 0; i < n; ++i) Xn[size_t(j)][size_t(i)] += c * S[size_t(a)][size_t(i)];
        if (a >= k)  // correction built from the W and P parts only
          for (int i = 0; i < n; ++i) Pn[size_t(j)][size_t(i)] += c * S[size_t(a)][size_t(i)];
      }
    }
    X = std::move(Xn);
    mgs(X, {});
    while (int(X.size()) < k) {
      // Re-seed any column lost to numerics; deterministic continuation.
      Rng rng = derive_rng(opt.seed, "eig-reseed", uint64_t(iter) * 1000 + X.size());
      std::vector<double> v(n);
      for (auto& x : v) x = rng.normal();
      Cols one{std::move(v)};
      mgs(one, X);
      if (one.empty()) throw NumericError("eigensolver: cannot maintain block rank");
      X.push_back(std::move(one[0]));
    }
    mgs(Pn, X);
    P = std::move(Pn);
  }

  // Final Rayleigh-Ritz and true residuals.
  rayleigh_ritz_x();
  for (int j = 0; j < k; ++j) {
    double s = 0;
    for (int i = 0; i < n; ++i) {
      const double r = AX[size_t(j)][size_t(i)] - theta[size_t(j)] * X[size_t(j)][size_t(i)];
      s += r * r;
    }
    resnorm[size_t(j)] = std::sqrt(s);
  }

  SpectralBasis out;
  out.n = n;
  out.k = k;
  out.U.assign(size_t(n) * size_t(k), 0.0);
  out.lambda.resize(size_t(k));
  out.residual_norms.resize(size_t(k));
  // theta ascends for the transformed operator; for largest mode map back
  // lambda = 2 - theta and flip to keep the ascending contract.
  for (int j = 0; j < k; ++j) {
    const int dst = opt.largest ? k - 1 - j : j;
    out.lambda[size_t(dst)] = opt.largest ? 2.0 - theta[size_t(j)] : theta[size_t(j)];
    out.residual_norms[size_t(dst)] = resnorm[size_t(j)];
    for (int i = 0; i < n; ++i)
      out.U[size_t(i) * size_t(k) + size_t(dst)] = X[size_t(j)][size_t(i)];
  }
  return out;
}

std::vector<SpectralBasis> batched_spectral_basis(const BatchedLaplacian& batch, int k,
                                                  const EigOptions& opt, int threads) {
  const int nb = int(batch.blocks.size());
  std::vector<SpectralBasis> out(nb);
  if (threads < 1) threads = 1;
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1)
  for (int b = 0; b < nb; ++b) {
    const SparseSym& blk = batch.blocks[size_t(b)];
    EigOptions o = opt;
    o.seed = derive_rng(opt.seed, "eig-block", uint64_t(b)).next_u64();
    SpectralBasis sb = lobpcg(blk, std::min(k, blk.n), o);
    sb.graph_id = b;
    out[size_t(b)] = std::move(sb);
  }
  return out;
}

}  // namespace phi
