#include "phi/host.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "phi/rng.hpp"

namespace phi {

void HostConfig::validate() const {
  if (feature_width < 1) throw std::invalid_argument("host: feature_width must be positive");
  if (n_layers < 1) throw std::invalid_argument("host: n_layers must be positive");
  if (n_rbf < 2) throw std::invalid_argument("host: n_rbf must be at least 2");
  if (!(cutoff > 0)) throw std::invalid_argument("host: cutoff must be positive");
  if (max_neighbors < 1) throw std::invalid_argument("host: max_neighbors must be positive");
  if (z_max < 1) throw std::invalid_argument("host: z_max must be positive");
}

namespace {

Tensor uniform_fan_in(Shape shape, int fan_in, Rng rng) {
  Tensor t(shape);
  const double b = 1.0 / std::sqrt(double(fan_in));
  auto& d = t.mutable_data();
  for (auto& v : d) v = rng.uniform(-b, b);
  return t;
}

}  // namespace

HostParams HostParams::init(const HostConfig& cfg, uint64_t seed) {
  cfg.validate();
  const int F = cfg.feature_width;
  HostParams p;
  p.embedding = Tensor({cfg.z_max + 1, F});
  {
    Rng rng = derive_rng(seed, "host.embedding");
    auto& d = p.embedding.mutable_data();
    for (auto& v : d) v = rng.normal();
  }
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerParams lp;
    lp.filter_w = uniform_fan_in({cfg.n_rbf, F}, cfg.n_rbf, derive_rng(seed, "host.filter_w", uint64_t(l)));
    lp.w1 = uniform_fan_in({F, F}, F, derive_rng(seed, "host.w1", uint64_t(l)));
    lp.b1 = Tensor({F});
    lp.w2 = uniform_fan_in({F, F}, F, derive_rng(seed, "host.w2", uint64_t(l)));
    lp.b2 = Tensor({F});
    p.layers.push_back(std::move(lp));
  }
  p.readout_w = uniform_fan_in({F, 1}, F, derive_rng(seed, "host.readout"));
  p.readout_b = Tensor({1});
  return p;
}

HostParams HostParams::zeros(const HostConfig& cfg) {
  cfg.validate();
  const int F = cfg.feature_width;
  HostParams p;
  p.embedding = Tensor({cfg.z_max + 1, F});
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerParams lp;
    lp.filter_w = Tensor({cfg.n_rbf, F});
    lp.w1 = Tensor({F, F});
    lp.b1 = Tensor({F});
    lp.w2 = Tensor({F, F});
    lp.b2 = Tensor({F});
    p.layers.push_back(std::move(lp));
  }
  p.readout_w = Tensor({F, 1});
  p.readout_b = Tensor({1});
  return p;
}

std::vector<Tensor*> HostParams::parameters() {
  std::vector<Tensor*> out{&embedding};
  for (auto& l : layers) {
    out.push_back(&l.filter_w);
    out.push_back(&l.w1);
    out.push_back(&l.b1);
    out.push_back(&l.w2);
    out.push_back(&l.b2);
  }
  out.push_back(&readout_w);
  out.push_back(&readout_b);
  return out;
}

std::vector<const Tensor*> HostParams::parameters() const {
  std::vector<const Tensor*> out;
  for (Tensor* t : const_cast<HostParams*>(this)->parameters()) out.push_back(t);
  return out;
}

void HostParams::set_requires_grad(bool v) {
  for (Tensor* t : parameters()) t->set_requires_grad(v);
}

HostBatch make_host_batch(const std::vector<AtomicSystem>& systems, const HostConfig& cfg) {
  cfg.validate();
  HostBatch b;
  b.node_offsets.push_back(0);
  std::vector<double> pos;
  for (const auto& s : systems) {
    const int off = b.n_total;
    for (int i = 0; i < s.n_atoms(); ++i) {
      b.z.push_back(s.atomic_numbers[size_t(i)]);
      b.graph_index.push_back(b.n_graphs);
    }
    pos.insert(pos.end(), s.positions.begin(), s.positions.end());
    RadiusGraph g = build_radius_graph(s, cfg.cutoff, cfg.max_neighbors);
    for (size_t e = 0; e < g.src.size(); ++e) {
      b.edge_src.push_back(off + g.src[e]);
      b.edge_dst.push_back(off + g.dst[e]);
    }
    b.graphs.push_back(std::move(g));
    b.n_total += s.n_atoms();
    b.n_graphs += 1;
    b.node_offsets.push_back(b.n_total);
  }
  b.positions = Tensor({b.n_total, 3}, std::move(pos));
  return b;
}

Tensor embed(Tape& tape, const std::vector<int>& z, const HostParams& params) {
  const int zmax = params.embedding.dim(0) - 1;
  for (int v : z)
    if (v < 1 || v > zmax) throw std::invalid_argument("embed: element outside the table");
  return tape.gather_rows(params.embedding, z);
}

Tensor interaction_step(Tape& tape, const Tensor& h, const Tensor& rbf,
                        const std::vector<int>& edge_src, const std::vector<int>& edge_dst,
                        const LayerParams& layer) {
  const int n = h.dim(0);
  Tensor filt = tape.matmul(rbf, layer.filter_w);               // {E, F}
  Tensor msg = tape.mul(tape.gather_rows(h, edge_dst), filt);   // {E, F}
  Tensor m = tape.scatter_sum_rows(msg, edge_src, n);           // {n, F}
  Tensor u = tape.add_rowvec(tape.matmul(m, layer.w1), layer.b1);
  u = tape.activation(u, Act::ShiftedSoftplus);
  u = tape.add_rowvec(tape.matmul(u, layer.w2), layer.b2);
  return tape.add(h, u);
}

Tensor readout_energy(Tape& tape, const Tensor& h, const std::vector<int>& graph_index,
                      int n_graphs, const HostParams& params) {
  Tensor per_atom = tape.add_rowvec(tape.matmul(h, params.readout_w), params.readout_b);
  Tensor summed = tape.segment_sum(per_atom, graph_index, n_graphs);  // {G, 1}
  return tape.reshape(summed, {n_graphs});
}

ForwardResult phi_forward(Tape& tape, const HostBatch& batch, const HostParams& host,
                          const AlphaNetParams* alpha, const HostConfig& cfg,
                          const PhiConfig& phi_cfg, std::shared_ptr<const SpectralBatch> sb) {
  const int G = batch.n_graphs;
  Tensor h = embed(tape, batch.z, host);
  Tensor xs = tape.gather_rows(batch.positions, batch.edge_src);
  Tensor xd = tape.gather_rows(batch.positions, batch.edge_dst);
  Tensor dist = tape.row_norm3(tape.sub(xs, xd));
  Tensor rbf = tape.rbf_expand(dist, cfg.n_rbf, cfg.cutoff);

  const bool with_phi = alpha != nullptr;
  if (with_phi && !sb) {
    std::vector<SparseSym> blocks;
    blocks.reserve(batch.graphs.size());
    for (const auto& g : batch.graphs) blocks.push_back(build_weighted_laplacian(g));
    sb = std::make_shared<SpectralBatch>(
        make_spectral_batch(block_diag_batch(std::move(blocks)), phi_cfg.k));
  }

  PhiState state;
  if (with_phi) state = phi_state_zero(*sb);
  for (int l = 0; l < cfg.n_layers; ++l) {
    h = interaction_step(tape, h, rbf, batch.edge_src, batch.edge_dst, host.layers[size_t(l)]);
    if (with_phi) {
      auto [a_phi, a_rho] = alpha_net_forward(tape, h, *alpha, sb);
      state = accumulate(tape, state, sb, a_phi, a_rho);
    }
  }

  ForwardResult out;
  out.e_model = readout_energy(tape, h, batch.graph_index, G, host);
  if (with_phi) {
    out.e_es = electrostatic_energy(tape, state, sb);
    out.e_hat = tape.add(out.e_model, out.e_es);
    out.l_pde = pde_residual(tape, state, sb);
    out.l_net = net_charge_penalty(tape, state, sb);
    out.state = state;
    out.sb = std::move(sb);
  } else {
    out.e_es = Tensor::zeros({G});
    out.e_hat = out.e_model;
    out.l_pde = Tensor::zeros({1});
    out.l_net = Tensor::zeros({G});
  }
  return out;
}

namespace {

SpectralBasis truncate_basis(const SpectralBasis& b, int k) {
  if (k >= b.k) return b;
  SpectralBasis out;
  out.n = b.n;
  out.k = k;
  out.graph_id = b.graph_id;
  out.U.resize(size_t(b.n) * size_t(k));
  for (int i = 0; i < b.n; ++i)
    for (int j = 0; j < k; ++j)
      out.U[size_t(i) * size_t(k) + size_t(j)] = b.U[size_t(i) * size_t(b.k) + size_t(j)];
  out.lambda.assign(b.lambda.begin(), b.lambda.begin() + k);
  out.residual_norms.assign(b.residual_norms.begin(), b.residual_norms.begin() + k);
  return out;
}

// d(E_es)/dx through the explicit eigenvalue dependence. For a simple
// eigenvalue of L = I - D^{-1/2} W D^{-1/2} with symmetric weight w_pq:
//   dlambda/dw_pq = -2 u_p u_q / sqrt(d_p d_q)
//                   + (1 - lambda) (u_p^2 / d_p + u_q^2 / d_q),
// and w_pq is the interatomic distance, so dw_pq/dx_p = (x_p - x_q)/w_pq.
void add_eigenvalue_terms(std::vector<double>& grad_e, const ForwardResult& out,
                          const HostBatch& batch) {
  const SpectralBasis& b = out.sb->bases[0];
  const RadiusGraph& g = batch.graphs[0];
  const int k = b.k;
  std::vector<double> deg(size_t(b.n), 0.0);
  for (size_t e = 0; e < g.src.size(); ++e) deg[size_t(g.src[e])] += g.dist[e];
  std::vector<double> c(size_t(k), 0.0);
  for (int j = 0; j < k; ++j)
    c[size_t(j)] = 0.5 * out.state.alpha_phi_acc.at(0, j) * out.state.alpha_rho_acc.at(0, j);
  const auto& x = batch.positions.data();
  for (size_t e = 0; e < g.src.size(); ++e) {
    const int p = g.src[e], q = g.dst[e];
    if (p >= q) continue;  // visit each pair once
    const double w = g.dist[e];
    double gw = 0.0;
    for (int j = 0; j < k; ++j) {
      const double up = b.U[size_t(p) * size_t(k) + size_t(j)];
      const double uq = b.U[size_t(q) * size_t(k) + size_t(j)];
      gw += c[size_t(j)] *
            (-2.0 * up * uq / std::sqrt(deg[size_t(p)] * deg[size_t(q)]) +
             (1.0 - b.lambda[size_t(j)]) *
                 (up * up / deg[size_t(p)] + uq * uq / deg[size_t(q)]));
    }
    for (int d = 0; d < 3; ++d) {
      const double dir = (x[size_t(p) * 3 + size_t(d)] - x[size_t(q) * 3 + size_t(d)]) / w;
      grad_e[size_t(p) * 3 + size_t(d)] += gw * dir;
      grad_e[size_t(q) * 3 + size_t(d)] -= gw * dir;
    }
  }
}

}  // namespace

double total_energy(const AtomicSystem& sys, const HostParams& host, const AlphaNetParams* alpha,
                    const HostConfig& cfg, const PhiConfig& phi_cfg) {
  Tape tape;
  HostBatch b = make_host_batch({sys}, cfg);
  std::shared_ptr<const SpectralBatch> sb;
  if (alpha) {
    std::vector<SparseSym> blocks{build_weighted_laplacian(b.graphs[0])};
    sb = std::make_shared<SpectralBatch>(
        make_spectral_batch(block_diag_batch(std::move(blocks)), phi_cfg.k,
                            {1e-10, 400, 0, false}));
  }
  ForwardResult out = phi_forward(tape, b, host, alpha, cfg, phi_cfg, std::move(sb));
  return tape.sum(out.e_hat).value();
}

ForceResult compute_forces(const std::vector<AtomicSystem>& systems, const HostParams& host,
                           const AlphaNetParams* alpha, const HostConfig& cfg,
                           const PhiConfig& phi_cfg, ForceMode mode, bool warn_on_fallback) {
  if (mode == ForceMode::FdOracle && systems.size() != 1)
    throw std::invalid_argument("finite-difference force mode takes a single system");
  ForceResult res;
  for (const auto& sys : systems) {
    const int n = sys.n_atoms();
    std::vector<double> f(size_t(n) * 3, 0.0);
    double energy = 0.0;
    bool use_fd = (mode == ForceMode::FdOracle);

    if (!use_fd) {
      HostBatch b = make_host_batch({sys}, cfg);
      b.positions.set_requires_grad(true);
      std::shared_ptr<const SpectralBatch> sb;
      if (alpha) {
        SparseSym lap = build_weighted_laplacian(b.graphs[0]);
        // One extra mode so the gap at the truncation boundary is visible.
        const int k_req = std::min(lap.n, phi_cfg.k + 1);
        SpectralBatch wide = make_spectral_batch(block_diag_batch({lap}), k_req,
                                                 {1e-10, 400, 0, false});
        const auto& lam = wide.bases[0].lambda;
        double gap = std::numeric_limits<double>::infinity();
        for (size_t j = 1; j < lam.size(); ++j) gap = std::min(gap, lam[j] - lam[j - 1]);
        res.min_gap = std::min(res.min_gap, gap);
        if (gap < 1e-8) {
          use_fd = true;
          res.fd_fallback = true;
          if (warn_on_fallback)
            std::fprintf(stderr,
                         "warning: eigenvalue gap %.3e < 1e-8; "
                         "falling back to finite-difference forces\n",
                         gap);
        } else {
          const int k_model = std::min(phi_cfg.k, lap.n);
          sb = std::make_shared<SpectralBatch>(assemble_spectral_batch(
              {std::move(lap)}, {truncate_basis(wide.bases[0], k_model)}, phi_cfg.k));
        }
      }
      if (!use_fd) {
        Tape tape;
        ForwardResult out = phi_forward(tape, b, host, alpha, cfg, phi_cfg, std::move(sb));
        Tensor e_total = tape.sum(out.e_hat);
        energy = e_total.value();
        tape.backward(e_total);
        f = tape.grad(b.positions);
        if (alpha) add_eigenvalue_terms(f, out, b);
        for (auto& v : f) v = -v;
      }
    }

    if (use_fd) {
      energy = total_energy(sys, host, alpha, cfg, phi_cfg);
      const double step = 1e-4;
      AtomicSystem pert = sys;
      for (int i = 0; i < 3 * n; ++i) {
        pert.positions[size_t(i)] = sys.positions[size_t(i)] + step;
        const double ep = total_energy(pert, host, alpha, cfg, phi_cfg);
        pert.positions[size_t(i)] = sys.positions[size_t(i)] - step;
        const double em = total_energy(pert, host, alpha, cfg, phi_cfg);
        pert.positions[size_t(i)] = sys.positions[size_t(i)];
        f[size_t(i)] = -(ep - em) / (2.0 * step);
      }
    }

    res.energies.push_back(energy);
    res.forces.push_back(std::move(f));
  }
  return res;
}

}  // namespace phi
