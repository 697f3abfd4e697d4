#include "phi/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace phi {

void SparseSym::multiply(const double* x, double* y) const {
#pragma omp parallel for schedule(static) if (nnz() > 16384)
  for (int i = 0; i < n; ++i) {
    double s = 0;
    for (int k = row_ptr[size_t(i)]; k < row_ptr[size_t(i) + 1]; ++k)
      s += val[size_t(k)] * x[col[size_t(k)]];
    y[i] = s;
  }
}

double SparseSym::quad(const double* x) const {
  double s = 0;
  for (int i = 0; i < n; ++i)
    for (int k = row_ptr[size_t(i)]; k < row_ptr[size_t(i) + 1]; ++k)
      s += val[size_t(k)] * x[i] * x[col[size_t(k)]];
  return s;
}

double SparseSym::at(int i, int j) const {
  for (int k = row_ptr[size_t(i)]; k < row_ptr[size_t(i) + 1]; ++k)
    if (col[size_t(k)] == j) return val[size_t(k)];
  return 0.0;
}

std::vector<double> SparseSym::dense() const {
  std::vector<double> d(size_t(n) * size_t(n), 0.0);
  for (int i = 0; i < n; ++i)
    for (int k = row_ptr[size_t(i)]; k < row_ptr[size_t(i) + 1]; ++k)
      d[size_t(i) * size_t(n) + size_t(col[size_t(k)])] = val[size_t(k)];
  return d;
}

RadiusGraph build_radius_graph(const AtomicSystem& sys, double r_c, int max_neighbors) {
  if (r_c <= 0) throw std::invalid_argument("cutoff must be positive");
  if (max_neighbors < 1) throw std::invalid_argument("max_neighbors must be at least 1");
  const int n = sys.n_atoms();
  const auto& p = sys.positions;

  // Bin atoms into cells of side r_c; all neighbors of an atom live in the
  // surrounding 3x3x3 cell cube.
  double mn[3];
  for (int c = 0; c < 3; ++c) {
    mn[c] = p[size_t(c)];
    for (int i = 1; i < n; ++i) mn[c] = std::min(mn[c], p[size_t(i) * 3 + size_t(c)]);
  }
  auto cell_of = [&](int i, int c) {
    return int64_t(std::floor((p[size_t(i) * 3 + size_t(c)] - mn[c]) / r_c));
  };
  auto cell_key = [](int64_t ix, int64_t iy, int64_t iz) {
    // cells are non-negative and bounded by extent/r_c; 21 bits per axis is ample
    return (ix << 42) | (iy << 21) | iz;
  };
  std::unordered_map<int64_t, std::vector<int>> grid;
  grid.reserve(size_t(n));
  for (int i = 0; i < n; ++i)
    grid[cell_key(cell_of(i, 0), cell_of(i, 1), cell_of(i, 2))].push_back(i);

  std::unordered_set<int64_t> chosen;
  chosen.reserve(size_t(n) * 8);
  std::vector<std::pair<double, int>> cand;
  for (int i = 0; i < n; ++i) {
    cand.clear();
    const int64_t ix = cell_of(i, 0), iy = cell_of(i, 1), iz = cell_of(i, 2);
    for (int64_t dx = -1; dx <= 1; ++dx)
      for (int64_t dy = -1; dy <= 1; ++dy)
        for (int64_t dz = -1; dz <= 1; ++dz) {
          auto it = grid.find(cell_key(ix + dx, iy + dy, iz + dz));
          if (it == grid.end()) continue;
          for (int j : it->second) {
            if (j == i) continue;
            const double ddx = p[size_t(i) * 3] - p[size_t(j) * 3];
            const double ddy = p[size_t(i) * 3 + 1] - p[size_t(j) * 3 + 1];
            const double ddz = p[size_t(i) * 3 + 2] - p[size_t(j) * 3 + 2];
            const double d = std::sqrt(ddx * ddx + ddy * ddy + ddz * ddz);
            if (d <= r_c) cand.emplace_back(d, j);
          }
        }
    std::sort(cand.begin(), cand.end());
    const size_t keep = std::min(cand.size(), size_t(max_neighbors));
    for (size_t k = 0; k < keep; ++k)
      chosen.insert(int64_t(i) * n + cand[k].second);
  }

  // Union symmetrization: keep the pair if either direction was chosen.
  RadiusGraph g;
  g.n_nodes = n;
  g.cutoff = r_c;
  g.max_neighbors = max_neighbors;
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(chosen.size());
  for (int64_t key : chosen) {
    const int i = int(key / n), j = int(key % n);
    const int a = std::min(i, j), b = std::max(i, j);
    pairs.emplace_back(a, b);
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

  std::vector<std::tuple<int, int, double>> edges;
  edges.reserve(pairs.size() * 2);
  for (auto [a, b] : pairs) {
    const double ddx = p[size_t(a) * 3] - p[size_t(b) * 3];
    const double ddy = p[size_t(a) * 3 + 1] - p[size_t(b) * 3 + 1];
    const double ddz = p[size_t(a) * 3 + 2] - p[size_t(b) * 3 + 2];
    const double d = std::sqrt(ddx * ddx + ddy * ddy + ddz * ddz);
    edges.emplace_back(a, b, d);
    edges.emplace_back(b, a, d);
  }
  std::sort(edges.begin(), edges.end());
  g.src.reserve(edges.size());
  g.dst.reserve(edges.size());
  g.dist.reserve(edges.size());
  for (auto& [s, d, w] : edges) {
    g.src.push_back(s);
    g.dst.push_back(d);
    g.dist.push_back(w);
  }
  return g;
}

SparseSym build_weighted_laplacian(const RadiusGraph& g) {
  const int n = g.n_nodes;
  std::vector<double> deg(size_t(n), 0.0);
  for (size_t e = 0; e < g.src.size(); ++e) {
    if (g.dist[e] < 0) throw std::invalid_argument("negative edge distance");
    deg[size_t(g.src[e])] += g.dist[e];
  }

  SparseSym L;
  L.n = n;
  L.row_ptr.assign(size_t(n) + 1, 0);
  // Row i holds its neighbors plus a unit diagonal when the node has any
  // weighted degree; rows of isolated nodes stay empty (all-zero convention).
  std::vector<int> row_count(size_t(n), 0);
  for (size_t e = 0; e < g.src.size(); ++e) ++row_count[size_t(g.src[e])];
  for (int i = 0; i < n; ++i)
    if (deg[size_t(i)] > 0) ++row_count[size_t(i)];
  for (int i = 0; i < n; ++i) L.row_ptr[size_t(i) + 1] = L.row_ptr[size_t(i)] + row_count[size_t(i)];
  L.col.assign(size_t(L.row_ptr[size_t(n)]), 0);
  L.val.assign(size_t(L.row_ptr[size_t(n)]), 0.0);

  std::vector<int> cursor(L.row_ptr.begin(), L.row_ptr.end() - 1);
  size_t e = 0;
  for (int i = 0; i < n; ++i) {
    bool diag_done = deg[size_t(i)] <= 0;  // isolated: no diagonal entry
    while (e < g.src.size() && g.src[e] == i) {
      const int j = g.dst[e];
      if (!diag_done && j > i) {
        L.col[size_t(cursor[size_t(i)])] = i;
        L.val[size_t(cursor[size_t(i)])] = 1.0;
        ++cursor[size_t(i)];
        diag_done = true;
      }
      // Same expression for (i,j) and (j,i): entries mirror bit-for-bit.
      L.col[size_t(cursor[size_t(i)])] = j;
      L.val[size_t(cursor[size_t(i)])] =
          -g.dist[e] / std::sqrt(deg[size_t(i)] * deg[size_t(j)]);
      ++cursor[size_t(i)];
      ++e;
    }
    if (!diag_done) {
      L.col[size_t(cursor[size_t(i)])] = i;
      L.val[size_t(cursor[size_t(i)])] = 1.0;
      ++cursor[size_t(i)];
    }
  }
  return L;
}

BatchedLaplacian block_diag_batch(std::vector<SparseSym> blocks) {
  BatchedLaplacian b;
  b.offsets.push_back(0);
  for (auto& m : blocks) b.offsets.push_back(b.offsets.back() + m.n);
  b.blocks = std::move(blocks);
  return b;
}

}  // namespace phi
