#pragma once

#include "phi/system.hpp"

#include <vector>

namespace phi {

// Directed edge list, symmetric as a set: (i,j) present iff (j,i) present.
struct RadiusGraph {
  int n_nodes = 0;
  std::vector<int> src, dst;  // parallel arrays, sorted by (src, dst)
  std::vector<double> dist;   // Å per edge; dist for (i,j) equals dist for (j,i)
  double cutoff = 0.0;
  int max_neighbors = 0;
};

// Sparse symmetric matrix, compressed rows, both triangles stored,
// column indices sorted within each row.
struct SparseSym {
  int n = 0;
  std::vector<int> row_ptr;  // n+1
  std::vector<int> col;
  std::vector<double> val;

  void multiply(const double* x, double* y) const;  // y = A x
  double quad(const double* x) const;               // x' A x
  double at(int i, int j) const;                    // 0 if absent
  std::vector<double> dense() const;                // n*n row-major
  int64_t nnz() const { return int64_t(col.size()); }
};

struct BatchedLaplacian {
  std::vector<SparseSym> blocks;
  std::vector<int> offsets;  // size blocks+1; block b covers [offsets[b], offsets[b+1])
};

// Neighbors within r_c, at most max_neighbors nearest per atom, then
// symmetrized by union. Grid binning, deterministic edge order.
RadiusGraph build_radius_graph(const AtomicSystem& sys, double r_c, int max_neighbors);

// L = I - D^{-1/2} W D^{-1/2} with W_ij = d_ij; rows of isolated nodes are zero.
SparseSym build_weighted_laplacian(const RadiusGraph& g);

BatchedLaplacian block_diag_batch(std::vector<SparseSym> blocks);

}  // namespace phi
