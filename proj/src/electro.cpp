#include "phi/electro.hpp"

#include "phi/rng.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace phi {

void PhiConfig::validate() const {
  if (k < 1) throw std::invalid_argument("phi config: k must be at least 1");
  if (beta < 0) throw std::invalid_argument("phi config: beta must be non-negative");
  if (gamma < 0) throw std::invalid_argument("phi config: gamma must be non-negative");
  if (kernel_size != 1 && kernel_size != 3)
    throw std::invalid_argument("phi config: kernel size must be 1 or 3");
  if (hidden_channels < 0)
    throw std::invalid_argument("phi config: hidden channels must be non-negative");
}

SpectralBatch assemble_spectral_batch(std::vector<SparseSym> blocks,
                                      std::vector<SpectralBasis> bases, int k) {
  if (blocks.size() != bases.size())
    throw std::invalid_argument("spectral batch: block/basis count mismatch");
  SpectralBatch sb;
  sb.lap = block_diag_batch(std::move(blocks));
  sb.bases = std::move(bases);
  sb.k = k;
  sb.node_offsets = sb.lap.offsets;
  sb.n_total = sb.node_offsets.back();
  const int G = int(sb.bases.size());
  sb.graph_index.resize(size_t(sb.n_total));
  for (int g = 0; g < G; ++g) {
    if (sb.bases[size_t(g)].graph_id != g) sb.bases[size_t(g)].graph_id = g;
    if (sb.bases[size_t(g)].n != sb.lap.blocks[size_t(g)].n)
      throw std::invalid_argument("spectral batch: basis size does not match block");
    for (int i = sb.node_offsets[size_t(g)]; i < sb.node_offsets[size_t(g) + 1]; ++i)
      sb.graph_index[size_t(i)] = g;
  }
  Tensor mask({G, k});
  Tensor lam({G, k});
  auto& m = mask.mutable_data();
  auto& l = lam.mutable_data();
  for (int g = 0; g < G; ++g)
    for (int j = 0; j < sb.bases[size_t(g)].k; ++j) {
      m[size_t(g) * size_t(k) + size_t(j)] = 1.0;
      l[size_t(g) * size_t(k) + size_t(j)] = sb.bases[size_t(g)].lambda[size_t(j)];
    }
  sb.mode_mask = std::move(mask);
  sb.lambda_pad = std::move(lam);
  return sb;
}

SpectralBatch make_spectral_batch(BatchedLaplacian lap, int k, const EigOptions& opt,
                                  int threads) {
  auto bases = batched_spectral_basis(lap, k, opt, threads);
  return assemble_spectral_batch(std::move(lap.blocks), std::move(bases), k);
}

namespace {

Tensor uniform_tensor(Shape shape, double scale, uint64_t seed, const char* label) {
  Tensor t(shape);
  Rng rng = derive_rng(seed, label);
  auto& d = t.mutable_data();
  for (auto& v : d) v = rng.uniform(-scale, scale);
  return t;
}

int resolve_channels(int feature_width, const PhiConfig& cfg) {
  const int c = cfg.hidden_channels > 0 ? cfg.hidden_channels : std::max(1, feature_width / 2);
  return c;
}

// alpha ({G*k} flat) -> nodes: out[off_g + i] = sum_j U_g[i,j] * a[g*k + j],
// optionally weighting mode j by lambda_j. Transpose maps node grads back.
std::shared_ptr<const LinearOp> basis_op(const std::shared_ptr<const SpectralBatch>& sb,
                                         bool with_lambda) {
  auto op = std::make_shared<LinearOp>();
  const int G = sb->n_graphs(), k = sb->k;
  op->in_size = int64_t(G) * k;
  op->out_size = sb->n_total;
  op->apply = [sb, with_lambda, k](const double* a, double* out) {
    for (int g = 0; g < sb->n_graphs(); ++g) {
      const SpectralBasis& B = sb->bases[size_t(g)];
      const int off = sb->node_offsets[size_t(g)];
      for (int i = 0; i < B.n; ++i) {
        double s = 0;
        for (int j = 0; j < B.k; ++j) {
          const double w = with_lambda ? B.lambda[size_t(j)] : 1.0;
          s += B.U[size_t(i) * size_t(B.k) + size_t(j)] * w * a[size_t(g) * size_t(k) + size_t(j)];
        }
        out[off + i] = s;
      }
    }
  };
  op->apply_transposed = [sb, with_lambda, k](const double* gout, double* ga) {
    for (int g = 0; g < sb->n_graphs(); ++g) {
      const SpectralBasis& B = sb->bases[size_t(g)];
      const int off = sb->node_offsets[size_t(g)];
      for (int j = 0; j < B.k; ++j) {
        const double w = with_lambda ? B.lambda[size_t(j)] : 1.0;
        double s = 0;
        for (int i = 0; i < B.n; ++i)
          s += B.U[size_t(i) * size_t(B.k) + size_t(j)] * gout[off + i];
        ga[size_t(g) * size_t(k) + size_t(j)] = w * s;
      }
    }
  };
  return op;
}

std::shared_ptr<const LinearOp> laplacian_op(const std::shared_ptr<const SpectralBatch>& sb) {
  auto op = std::make_shared<LinearOp>();
  op->in_size = sb->n_total;
  op->out_size = sb->n_total;
  auto apply = [sb](const double* x, double* y) {
    for (int g = 0; g < sb->n_graphs(); ++g) {
      const int off = sb->node_offsets[size_t(g)];
      sb->lap.blocks[size_t(g)].multiply(x + off, y + off);
    }
  };
  op->apply = apply;
  op->apply_transposed = apply;  // symmetric
  return op;
}

}  // namespace

AlphaNetParams AlphaNetParams::init(int feature_width, const PhiConfig& cfg, uint64_t seed) {
  cfg.validate();
  const int F = feature_width, K = cfg.kernel_size, k = cfg.k;
  const int C = resolve_channels(feature_width, cfg);
  AlphaNetParams p;
  p.conv1_w = uniform_tensor({K, F, C}, 1.0 / std::sqrt(double(K) * F), seed, "alpha.conv1_w");
  p.conv1_b = Tensor::zeros({C});
  p.conv2_w = uniform_tensor({K, C, C}, 1.0 / std::sqrt(double(K) * C), seed, "alpha.conv2_w");
  p.conv2_b = Tensor::zeros({C});
  p.head_phi_w = uniform_tensor({C, k}, 1.0 / std::sqrt(double(C)), seed, "alpha.head_phi_w");
  p.head_phi_b = Tensor::zeros({k});
  p.head_rho_w = uniform_tensor({C, k}, 1.0 / std::sqrt(double(C)), seed, "alpha.head_rho_w");
  p.head_rho_b = Tensor::zeros({k});
  return p;
}

AlphaNetParams AlphaNetParams::zeros(int feature_width, const PhiConfig& cfg) {
  cfg.validate();
  const int F = feature_width, K = cfg.kernel_size, k = cfg.k;
  const int C = resolve_channels(feature_width, cfg);
  AlphaNetParams p;
  p.conv1_w = Tensor::zeros({K, F, C});
  p.conv1_b = Tensor::zeros({C});
  p.conv2_w = Tensor::zeros({K, C, C});
  p.conv2_b = Tensor::zeros({C});
  p.head_phi_w = Tensor::zeros({C, k});
  p.head_phi_b = Tensor::zeros({k});
  p.head_rho_w = Tensor::zeros({C, k});
  p.head_rho_b = Tensor::zeros({k});
  return p;
}

std::vector<Tensor*> AlphaNetParams::parameters() {
  return {&conv1_w, &conv1_b, &conv2_w, &conv2_b,
          &head_phi_w, &head_phi_b, &head_rho_w, &head_rho_b};
}

std::vector<const Tensor*> AlphaNetParams::parameters() const {
  return {&conv1_w, &conv1_b, &conv2_w, &conv2_b,
          &head_phi_w, &head_phi_b, &head_rho_w, &head_rho_b};
}

void AlphaNetParams::set_requires_grad(bool v) {
  for (Tensor* t : parameters()) t->set_requires_grad(v);
}

std::pair<Tensor, Tensor> alpha_net_forward(Tape& tape, const Tensor& h,
                                            const AlphaNetParams& params,
                                            const std::shared_ptr<const SpectralBatch>& sb) {
  if (h.rank() != 2 || h.dim(0) != sb->n_total)
    throw ShapeError("alpha net: node feature shape mismatch");
  if (h.dim(1) != params.conv1_w.dim(1))
    throw ShapeError("alpha net: feature width does not match parameters");
  Tensor y = tape.conv1d_nodes(h, params.conv1_w, sb->node_offsets);
  y = tape.add_rowvec(y, params.conv1_b);
  y = tape.activation(y, Act::ShiftedSoftplus);
  y = tape.conv1d_nodes(y, params.conv2_w, sb->node_offsets);
  y = tape.add_rowvec(y, params.conv2_b);
  y = tape.activation(y, Act::ShiftedSoftplus);
  Tensor pooled = tape.global_mean_pool(y, sb->graph_index, sb->n_graphs());
  Tensor a_phi = tape.add_rowvec(tape.matmul(pooled, params.head_phi_w), params.head_phi_b);
  Tensor a_rho = tape.add_rowvec(tape.matmul(pooled, params.head_rho_w), params.head_rho_b);
  return {a_phi, a_rho};
}

PhiState phi_state_zero(const SpectralBatch& sb) {
  PhiState s;
  s.phi = Tensor::zeros({sb.n_total});
  s.rho = Tensor::zeros({sb.n_total});
  s.alpha_phi_acc = Tensor::zeros({sb.n_graphs(), sb.k});
  s.alpha_rho_acc = Tensor::zeros({sb.n_graphs(), sb.k});
  return s;
}

PhiState accumulate(Tape& tape, const PhiState& state,
                    const std::shared_ptr<const SpectralBatch>& sb, const Tensor& alpha_phi,
                    const Tensor& alpha_rho) {
  if (alpha_phi.shape() != Shape{sb->n_graphs(), sb->k} || alpha_phi.shape() != alpha_rho.shape())
    throw ShapeError("accumulate: coefficient shape mismatch");
  PhiState out;
  out.phi = tape.add(state.phi, tape.linmap(basis_op(sb, false), alpha_phi, {sb->n_total}));
  out.rho = tape.add(state.rho, tape.linmap(basis_op(sb, true), alpha_rho, {sb->n_total}));
  // Masked so accumulators track exactly the coefficients that reached node
  // space (blocks with fewer than k modes ignore the tail).
  out.alpha_phi_acc = tape.add(state.alpha_phi_acc, tape.mul(alpha_phi, sb->mode_mask));
  out.alpha_rho_acc = tape.add(state.alpha_rho_acc, tape.mul(alpha_rho, sb->mode_mask));
  return out;
}

Tensor pde_residual(Tape& tape, const PhiState& state,
                    const std::shared_ptr<const SpectralBatch>& sb) {
  Tensor lphi = tape.linmap(laplacian_op(sb), state.phi, {sb->n_total});
  Tensor r = tape.l2norm(tape.sub(lphi, state.rho));
#ifndef NDEBUG
  {
    // Cross-check against the spectral form; the basis residual bounds the gap.
    Tape scratch;
    const double spec = pde_residual_spectral(scratch, state, sb).value();
    double worst_res = 0, coef = 0;
    for (const auto& b : sb->bases)
      for (double rn : b.residual_norms) worst_res = std::max(worst_res, rn);
    for (double v : state.alpha_phi_acc.data()) coef = std::max(coef, std::fabs(v));
    for (double v : state.alpha_rho_acc.data()) coef = std::max(coef, std::fabs(v));
    const double bound =
        1e-9 + 4.0 * worst_res * coef * std::sqrt(double(sb->n_graphs()) * sb->k);
    assert(std::fabs(r.value() - spec) <= bound && "pde residual forms disagree");
  }
#endif
  return r;
}

Tensor pde_residual_spectral(Tape& tape, const PhiState& state,
                             const std::shared_ptr<const SpectralBatch>& sb) {
  Tensor d = tape.sub(state.alpha_phi_acc, state.alpha_rho_acc);
  return tape.l2norm(tape.mul(d, sb->lambda_pad));
}

Tensor net_charge_penalty(Tape& tape, const PhiState& state,
                          const std::shared_ptr<const SpectralBatch>& sb) {
  Tensor sums = tape.segment_sum(state.rho, sb->graph_index, sb->n_graphs());
  return tape.abs(sums);
}

Tensor electrostatic_energy(Tape& tape, const PhiState& state,
                            const std::shared_ptr<const SpectralBatch>& sb) {
  Tensor prod = tape.mul(state.rho, state.phi);
  return tape.scale(tape.segment_sum(prod, sb->graph_index, sb->n_graphs()), 0.5);
}

}  // namespace phi
