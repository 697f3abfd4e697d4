#pragma once

#include "phi/eigen.hpp"
#include "phi/graph.hpp"
#include "phi/tensor.hpp"

#include <memory>
#include <utility>
#include <vector>

namespace phi {

struct PhiConfig {
  int k = 8;                // spectral modes per graph
  double beta = 1e-2;       // PDE-residual loss weight
  double gamma = 1e-4;      // net-charge loss weight
  int kernel_size = 1;      // 1 keeps permutation invariance; 3 optional
  int hidden_channels = 0;  // 0 -> F/2 at parameter init
  void validate() const;
};

// One batch of graphs with Laplacians and their partial eigenbases. Built once
// per batch (or assembled from per-molecule caches); every tensor op that
// needs U, Lambda, or L captures this object by shared_ptr.
struct SpectralBatch {
  BatchedLaplacian lap;
  std::vector<SpectralBasis> bases;
  int k = 0;        // requested modes; block g actually has min(k, n_g)
  int n_total = 0;
  std::vector<int> graph_index;   // node -> graph
  std::vector<int> node_offsets;  // == lap.offsets
  Tensor mode_mask;   // {G,k}: 1 where the mode exists for that graph
  Tensor lambda_pad;  // {G,k}: eigenvalues, zero beyond each block's modes

  int n_graphs() const { return int(bases.size()); }
};

SpectralBatch make_spectral_batch(BatchedLaplacian lap, int k, const EigOptions& opt = {},
                                  int threads = 1);
// Reassemble from per-graph pieces computed earlier (basis caching).
SpectralBatch assemble_spectral_batch(std::vector<SparseSym> blocks,
                                      std::vector<SpectralBasis> bases, int k);

struct AlphaNetParams {
  Tensor conv1_w;  // K x F x C
  Tensor conv1_b;  // C
  Tensor conv2_w;  // K x C x C
  Tensor conv2_b;  // C
  Tensor head_phi_w;  // C x k
  Tensor head_phi_b;  // k
  Tensor head_rho_w;  // C x k
  Tensor head_rho_b;  // k

  static AlphaNetParams init(int feature_width, const PhiConfig& cfg, uint64_t seed);
  static AlphaNetParams zeros(int feature_width, const PhiConfig& cfg);
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  void set_requires_grad(bool v);
};

// conv -> act -> conv -> act -> global mean pool -> two affine heads.
// Returns per-graph coefficients ({G,k}, {G,k}).
std::pair<Tensor, Tensor> alpha_net_forward(Tape& tape, const Tensor& h,
                                            const AlphaNetParams& params,
                                            const std::shared_ptr<const SpectralBatch>& sb);

// Potential / charge fields over one batch, kept in node space and spectral
// space simultaneously (phi = U a_phi, rho = U Lambda a_rho per graph).
struct PhiState {
  Tensor phi, rho;                      // {n_total}
  Tensor alpha_phi_acc, alpha_rho_acc;  // {G,k}
};

PhiState phi_state_zero(const SpectralBatch& sb);

// phi += U a_phi, rho += U Lambda a_rho; accumulators updated to match.
PhiState accumulate(Tape& tape, const PhiState& state,
                    const std::shared_ptr<const SpectralBatch>& sb, const Tensor& alpha_phi,
                    const Tensor& alpha_rho);

// ||L phi - rho||_2 over the whole batch, node space (trainable form).
Tensor pde_residual(Tape& tape, const PhiState& state,
                    const std::shared_ptr<const SpectralBatch>& sb);
// ||Lambda (a_phi - a_rho)||_2, the equivalent spectral form.
Tensor pde_residual_spectral(Tape& tape, const PhiState& state,
                             const std::shared_ptr<const SpectralBatch>& sb);

// |sum_i rho_i| per graph -> {G}.
Tensor net_charge_penalty(Tape& tape, const PhiState& state,
                          const std::shared_ptr<const SpectralBatch>& sb);

// (1/2) sum_i rho_i phi_i per graph -> {G}.
Tensor electrostatic_energy(Tape& tape, const PhiState& state,
                            const std::shared_ptr<const SpectralBatch>& sb);

}  // namespace phi
