#pragma once

#include <limits>
#include <memory>
#include <vector>

#include "phi/electro.hpp"
#include "phi/graph.hpp"
#include "phi/system.hpp"
#include "phi/tensor.hpp"

namespace phi {

struct HostConfig {
  int feature_width = 64;  // F
  int n_layers = 3;
  int n_rbf = 32;
  double cutoff = 6.0;  // Angstrom
  int max_neighbors = 50;
  int z_max = 54;
  void validate() const;
};

struct LayerParams {
  Tensor filter_w;  // n_rbf x F; bias-free so messages vanish smoothly at the cutoff
  Tensor w1, b1;    // F x F, F
  Tensor w2, b2;    // F x F, F
};

struct HostParams {
  Tensor embedding;  // (z_max+1) x F, row Z for element Z
  std::vector<LayerParams> layers;
  Tensor readout_w;  // F x 1
  Tensor readout_b;  // 1

  static HostParams init(const HostConfig& cfg, uint64_t seed);
  static HostParams zeros(const HostConfig& cfg);
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  void set_requires_grad(bool v);
};

// A batch of systems flattened into one node/edge list (global indices).
struct HostBatch {
  std::vector<int> z;
  Tensor positions;  // {n_total, 3}
  std::vector<int> edge_src, edge_dst;
  std::vector<int> graph_index;   // n_total
  std::vector<int> node_offsets;  // G+1
  std::vector<RadiusGraph> graphs;
  int n_total = 0;
  int n_graphs = 0;
};

HostBatch make_host_batch(const std::vector<AtomicSystem>& systems, const HostConfig& cfg);

// Row lookup into the element table; rows are grad-flagged with the table.
Tensor embed(Tape& tape, const std::vector<int>& z, const HostParams& params);

// m_i = sum_{j in N(i)} h_j * filter(e_ij); h' = h + mlp(m).
// `rbf` is the {E, n_rbf} radial expansion shared across layers.
Tensor interaction_step(Tape& tape, const Tensor& h, const Tensor& rbf,
                        const std::vector<int>& edge_src, const std::vector<int>& edge_dst,
                        const LayerParams& layer);

// Per-atom affine head, summed per graph -> {G}.
Tensor readout_energy(Tape& tape, const Tensor& h, const std::vector<int>& graph_index,
                      int n_graphs, const HostParams& params);

struct ForwardResult {
  Tensor e_model;  // {G}
  Tensor e_es;     // {G}; zero when the charge head is off
  Tensor e_hat;    // {G}
  Tensor l_pde;    // scalar
  Tensor l_net;    // {G}
  PhiState state;
  std::shared_ptr<const SpectralBatch> sb;
};

// Full model forward. `alpha == nullptr` runs the bare host. A prebuilt
// spectral batch (cached bases) may be passed; otherwise one is built from
// the batch graphs.
ForwardResult phi_forward(Tape& tape, const HostBatch& batch, const HostParams& host,
                          const AlphaNetParams* alpha, const HostConfig& cfg,
                          const PhiConfig& phi_cfg,
                          std::shared_ptr<const SpectralBatch> sb = nullptr);

double total_energy(const AtomicSystem& sys, const HostParams& host, const AlphaNetParams* alpha,
                    const HostConfig& cfg, const PhiConfig& phi_cfg);

enum class ForceMode { Autodiff, FdOracle };

struct ForceResult {
  std::vector<std::vector<double>> forces;  // per system, 3n flat (x0 y0 z0 x1 ...)
  std::vector<double> energies;             // per system total energy
  bool fd_fallback = false;  // an autodiff call hit a near-degenerate spectrum
  double min_gap = std::numeric_limits<double>::infinity();
};

// Autodiff mode: tape gradients through the host and the charge head plus
// analytic eigenvalue derivatives (valid for simple eigenvalues; falls back
// to finite differences with a warning when any used gap < 1e-8).
// FdOracle mode: central differences of the total energy, step 1e-4 A;
// takes a single system per call.
ForceResult compute_forces(const std::vector<AtomicSystem>& systems, const HostParams& host,
                           const AlphaNetParams* alpha, const HostConfig& cfg,
                           const PhiConfig& phi_cfg, ForceMode mode,
                           bool warn_on_fallback = true);

}  // namespace phi
