// Acceptance gate: one test case per shipping criterion, each printing a
// single "criterion NN [PASS|FAIL]" verdict line plus its supporting
// measurements. Training runs are cached under acceptance_cache/ so the
// criteria that share models (07-10) do not retrain; every cached entry is
// keyed by the frozen experiment configuration and recomputed when absent.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "phi/bench.hpp"
#include "phi/datagen.hpp"
#include "phi/eigen.hpp"
#include "phi/electro.hpp"
#include "phi/graph.hpp"
#include "phi/host.hpp"
#include "phi/md.hpp"
#include "phi/oracles.hpp"
#include "phi/rng.hpp"
#include "phi/system.hpp"
#include "phi/tensor.hpp"
#include "phi/trainer.hpp"

using namespace phi;

namespace {

// ---------------------------------------------------------------------------
// Frozen experiment configuration. Changing any value invalidates the cache.

constexpr uint64_t kDatasetSeed = 101;
constexpr int kNMolecules = 2000;
constexpr int kAtomsMin = 8, kAtomsMax = 16;
constexpr double kBox = 6.0;
const std::vector<uint64_t> kSeeds = {1, 2, 3};
constexpr int kFullEpochs = 40;
// Fractional runs keep the gradient-step budget roughly constant, so every
// model is trained to comparable convergence: epochs = 40 / fraction.
const std::vector<std::pair<double, int>> kFractions = {{0.05, 800}, {0.25, 160}, {0.5, 80}};

const char* kCacheKey =
    "acceptance-v1 data=101/2000/8-16/box6/neutral-pairs host=16/2/16/cut6/nb50 "
    "phi=k8/b0.01/g1e-4 train=lr0.003/bs32/clip1e3 seeds=1,2,3 epochs=40 "
    "fracs=0.05:800,0.25:160,0.5:80";

HostConfig frozen_host() {
  HostConfig h;
  h.feature_width = 16;
  h.n_layers = 2;
  h.n_rbf = 16;
  h.cutoff = 6.0;
  h.max_neighbors = 50;
  return h;
}

TrainConfig frozen_train(uint64_t seed, bool with_phi) {
  TrainConfig c;
  c.host = frozen_host();
  c.phi.k = 8;
  c.phi.beta = 1e-2;
  c.phi.gamma = 1e-4;
  c.with_phi = with_phi;
  c.epochs = kFullEpochs;
  c.batch_size = 32;
  c.lr = 3e-3;
  c.grad_clip = 1e3;
  c.seed = seed;
  c.data_fraction = 1.0;
  return c;
}

// ---------------------------------------------------------------------------
// Reporting helpers.

void metric(const char* fmt, ...) {
  std::printf("    ");
  va_list ap;
  va_start(ap, fmt);
  std::vprintf(fmt, ap);
  va_end(ap);
  std::printf("\n");
  std::fflush(stdout);
}

void verdict(int id, const char* title, bool ok) {
  std::printf("criterion %02d [%s] %s\n", id, ok ? "PASS" : "FAIL", title);
  std::fflush(stdout);
  CHECK(ok);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Shared dataset and cached training runs.

const std::vector<AtomicSystem>& acceptance_dataset() {
  static const std::vector<AtomicSystem> data = [] {
    SyntheticSpec spec;
    spec.n_molecules = kNMolecules;
    spec.atoms_min = kAtomsMin;
    spec.atoms_max = kAtomsMax;
    spec.box = kBox;
    spec.seed = kDatasetSeed;
    spec.charge_scheme = ChargeScheme::NeutralPairs;
    return gen_point_charge_set(spec);
  }();
  return data;
}

std::filesystem::path cache_dir() { return std::filesystem::path("acceptance_cache"); }

void ensure_cache() {
  const auto dir = cache_dir();
  const auto key_path = dir / "key.txt";
  std::string existing;
  {
    std::ifstream in(key_path);
    std::getline(in, existing);
  }
  if (existing == kCacheKey) return;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  std::ofstream out(key_path);
  out << kCacheKey << "\n";
}

struct RunResult {
  double test_mae = 0;
  double wall_s = 0;
};

// Trains (or loads) one tagged configuration and reports its test MAE and
// training wall time. With keep_ckpt the best model is also stored so other
// criteria can reload it.
RunResult ensure_run(const std::string& tag, const TrainConfig& cfg, bool keep_ckpt = false) {
  ensure_cache();
  const auto run_path = cache_dir() / ("run_" + tag + ".txt");
  const auto ckpt_path = cache_dir() / (tag + ".ckpt");
  {
    std::ifstream in(run_path);
    RunResult r;
    if (in >> r.test_mae >> r.wall_s) {
      if (!keep_ckpt || std::filesystem::exists(ckpt_path)) return r;
    }
  }
  const auto& data = acceptance_dataset();
  const DataSplit split = split_dataset(int(data.size()), cfg.seed);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult tr = train_run(cfg, data, split);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EvalMetrics em = evaluate(tr.best, data, split.test, cfg.batch_size);
  RunResult r{em.mae, wall};
  if (keep_ckpt) save_checkpoint(ckpt_path.string(), tr.best, tag);
  std::ofstream out(run_path);
  out.precision(17);
  out << r.test_mae << " " << r.wall_s << "\n";
  return r;
}

// ---------------------------------------------------------------------------
// Random problem instances for the closed-form oracles.

AtomicSystem random_cloud(int n, uint64_t seed, double box) {
  Rng rng(seed);
  AtomicSystem sys;
  for (int i = 0; i < n; ++i) {
    sys.atomic_numbers.push_back(6);
    for (int c = 0; c < 3; ++c) sys.positions.push_back(rng.uniform(0.0, box));
  }
  return sys;
}

SparseSym cloud_laplacian(int n, uint64_t seed, double cutoff = 2.5, int max_nb = 12) {
  const double box = 2.2 * std::cbrt(double(n));
  return build_weighted_laplacian(build_radius_graph(random_cloud(n, seed, box), cutoff, max_nb));
}

struct Instance {
  int n = 0;
  std::vector<double> L;  // dense n x n
  std::vector<double> phi;
  double a = 0, beta = 0;
};

Instance random_instance(uint64_t seed) {
  Rng rng(seed);
  Instance inst;
  inst.n = rng.uniform_int(2, 16);
  inst.L = cloud_laplacian(inst.n, seed * 2 + 1).dense();
  inst.phi.resize(size_t(inst.n));
  for (auto& v : inst.phi) v = rng.normal();
  inst.a = rng.normal();
  inst.beta = std::pow(10.0, rng.uniform(-3.0, 0.0));
  return inst;
}

// ---------------------------------------------------------------------------
// Structural relaxation on the learned surface (steepest-descent with the
// FIRE velocity mixing rule), used to prepare a bound state for the NVE leg.

ForceResult model_forces(const AtomicSystem& sys, Model& model) {
  return compute_forces({sys}, model.host, model.with_phi ? &model.alpha : nullptr, model.host_cfg,
                        model.phi_cfg, ForceMode::Autodiff, false);
}

double max_abs(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

AtomicSystem relax_fire(AtomicSystem sys, Model& model, int max_iter, double ftol,
                        double* fmax_out) {
  const int n3 = 3 * sys.n_atoms();
  std::vector<double> v(size_t(n3), 0.0);
  double dt = 0.02, alpha = 0.1;
  int since_uphill = 0;
  ForceResult cur = model_forces(sys, model);
  double fmax = max_abs(cur.forces[0]);
  for (int it = 0; it < max_iter && fmax > ftol; ++it) {
    const std::vector<double>& f = cur.forces[0];
    double p = 0;
    for (int i = 0; i < n3; ++i) p += f[size_t(i)] * v[size_t(i)];
    if (p > 0) {
      double vn = 0, fn = 0;
      for (int i = 0; i < n3; ++i) {
        vn += v[size_t(i)] * v[size_t(i)];
        fn += f[size_t(i)] * f[size_t(i)];
      }
      vn = std::sqrt(vn);
      fn = std::sqrt(std::max(fn, 1e-300));
      for (int i = 0; i < n3; ++i)
        v[size_t(i)] = (1 - alpha) * v[size_t(i)] + alpha * vn * f[size_t(i)] / fn;
      if (++since_uphill > 5) {
        dt = std::min(dt * 1.1, 0.2);
        alpha *= 0.99;
      }
    } else {
      std::fill(v.begin(), v.end(), 0.0);
      dt *= 0.5;
      alpha = 0.1;
      since_uphill = 0;
    }
    for (int i = 0; i < n3; ++i) {
      v[size_t(i)] += dt * f[size_t(i)];
      sys.positions[size_t(i)] += dt * v[size_t(i)];
    }
    cur = model_forces(sys, model);
    fmax = max_abs(cur.forces[0]);
  }
  *fmax_out = fmax;
  return sys;
}

// Smallest |d_ij - cutoff| over all atom pairs: the safety margin before any
// graph edge appears or vanishes (the edge set must stay fixed for a smooth
// energy surface along the trajectory).
double cutoff_margin(const AtomicSystem& s, double cutoff) {
  double m = 1e300;
  for (int i = 0; i < s.n_atoms(); ++i)
    for (int j = i + 1; j < s.n_atoms(); ++j) {
      double d2 = 0;
      for (int d = 0; d < 3; ++d) {
        const double dd = s.positions[size_t(3 * i + d)] - s.positions[size_t(3 * j + d)];
        d2 += dd * dd;
      }
      m = std::min(m, std::fabs(std::sqrt(d2) - cutoff));
    }
  return m;
}

}  // namespace

// ===========================================================================

TEST_CASE("criterion 01: closed-form inner minimizer matches the numerical convex solver") {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_obj = 0, worst_rho = 0;
  const int n_instances = 1000;
  for (int t = 0; t < n_instances; ++t) {
    const Instance inst = random_instance(1000 + uint64_t(t));
    const InnerMinimizerResult closed = inner_minimizer(inst.L, inst.n, inst.phi, inst.a, inst.beta);
    // Accelerated descent converges linearly at a rate set by sqrt(kappa),
    // kappa = 1 + |phi|^2 / (4 beta); budget the iterations from it, then
    // escalate if the match is not yet inside tolerance.
    double phi2 = 0;
    for (double v : inst.phi) phi2 += v * v;
    const double kappa = 1.0 + phi2 / (4.0 * inst.beta);
    int steps = int(std::min(2e5, std::max(2000.0, 100.0 * std::sqrt(kappa))));
    std::vector<double> rho_num;
    double gap = 0, dn = 0;
    for (int attempt = 0; attempt < 3; ++attempt) {
      rho_num = numerical_inner_minimizer(inst.L, inst.n, inst.phi, inst.a, inst.beta, steps);
      gap = std::fabs(surrogate_objective(inst.L, inst.n, inst.phi, rho_num, inst.a, inst.beta) -
                      closed.objective_at_star);
      dn = 0;
      for (int i = 0; i < inst.n; ++i) {
        const double d = rho_num[size_t(i)] - closed.rho_star[size_t(i)];
        dn += d * d;
      }
      dn = std::sqrt(dn);
      if (gap <= 5e-7 && dn <= 5e-7) break;
      steps *= 4;
    }
    worst_obj = std::max(worst_obj, gap);
    worst_rho = std::max(worst_rho, dn);
  }
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  metric("%d instances (n in [2,16], beta in [1e-3,1])", n_instances);
  metric("worst objective gap %.3e, worst rho deviation %.3e (tolerance 1e-6)", worst_obj, worst_rho);
  metric("elapsed %.2f s (budget 30 s)", elapsed);
  verdict(1, "closed-form inner minimizer matches the numerical convex solver",
          worst_obj <= 1e-6 && worst_rho <= 1e-6 && elapsed < 30.0);
}

TEST_CASE("criterion 02: reduced objective equals the minimized surrogate and obeys its bound") {
  double worst_eq = 0, worst_bound = -1e300, worst_zero_amp = 0, worst_zero_phi = 0;
  const int n_instances = 300;
  for (int t = 0; t < n_instances; ++t) {
    const Instance inst = random_instance(7000 + uint64_t(t));
    const InnerMinimizerResult closed = inner_minimizer(inst.L, inst.n, inst.phi, inst.a, inst.beta);
    const double reduced = reduced_objective(inst.L, inst.n, inst.phi, inst.a, inst.beta);
    const double at_star =
        surrogate_objective(inst.L, inst.n, inst.phi, closed.rho_star, inst.a, inst.beta);
    const double amp = amplitude(inst.L, inst.n, inst.phi, inst.a);
    worst_eq = std::max(worst_eq, std::fabs(reduced - at_star));
    worst_bound = std::max(worst_bound, reduced - amp * amp);

    // Witness with vanishing amplitude: shift a so A(phi) = 0 exactly.
    const double a0 = inst.a - amplitude(inst.L, inst.n, inst.phi, inst.a);
    const double reduced0 = reduced_objective(inst.L, inst.n, inst.phi, a0, inst.beta);
    const double amp0 = amplitude(inst.L, inst.n, inst.phi, a0);
    worst_zero_amp = std::max(worst_zero_amp, std::fabs(reduced0 - amp0 * amp0));
    worst_zero_amp = std::max(worst_zero_amp, std::fabs(reduced0));

    // Witness with phi = 0: the bound is tight, reduced == a^2.
    const std::vector<double> zphi(size_t(inst.n), 0.0);
    const double reduced_z = reduced_objective(inst.L, inst.n, zphi, inst.a, inst.beta);
    worst_zero_phi = std::max(worst_zero_phi, std::fabs(reduced_z - inst.a * inst.a));
  }
  metric("%d instances", n_instances);
  metric("worst |reduced - surrogate(rho*)| = %.3e (tolerance 1e-12)", worst_eq);
  metric("worst (reduced - amplitude^2) = %.3e (must be <= 1e-12)", worst_bound);
  metric("zero-amplitude witness deviation %.3e, zero-phi witness deviation %.3e", worst_zero_amp,
         worst_zero_phi);
  verdict(2, "reduced objective equals the minimized surrogate and obeys its bound",
          worst_eq <= 1e-12 && worst_bound <= 1e-12 && worst_zero_amp <= 1e-12 &&
              worst_zero_phi <= 1e-12);
}

TEST_CASE("criterion 03: residual gradient symmetry and eigenvalue-scaled asymmetry") {
  double worst_opp = 0, worst_ratio = 0, worst_tape = 0;
  const int n_instances = 200;
  for (int t = 0; t < n_instances; ++t) {
    Rng rng(3000 + uint64_t(t));
    const int k = rng.uniform_int(1, 8);
    std::vector<double> lambda(size_t(k), 0.0), a_phi(size_t(k), 0.0), a_rho(size_t(k), 0.0);
    for (int i = 0; i < k; ++i) {
      lambda[size_t(i)] = rng.uniform(0.05, 2.0);
      // Keep the per-mode residual away from zero so the gradient ratio is
      // well conditioned.
      do {
        a_phi[size_t(i)] = rng.normal();
        a_rho[size_t(i)] = rng.normal();
      } while (std::fabs(lambda[size_t(i)] * a_phi[size_t(i)] - a_rho[size_t(i)]) < 1e-3);
    }
    const double beta = std::pow(10.0, rng.uniform(-3.0, 0.0));
    const GradientSymmetryReport rep = gradient_symmetry_check(lambda, a_phi, a_rho, beta);
    for (int i = 0; i < k; ++i) {
      worst_opp = std::max(worst_opp,
                           std::fabs(rep.aligned_grad_phi[size_t(i)] + rep.aligned_grad_rho[size_t(i)]));
      worst_ratio = std::max(worst_ratio,
                             std::fabs(rep.asymmetry_ratio[size_t(i)] - lambda[size_t(i)]));
    }
    worst_tape = std::max({worst_tape, rep.max_aligned_dev, rep.max_plain_dev});
  }
  metric("%d instances (k in [1,8])", n_instances);
  metric("worst aligned |grad_phi + grad_rho| = %.3e (tolerance 1e-12)", worst_opp);
  metric("worst |ratio - lambda| = %.3e (tolerance 1e-10)", worst_ratio);
  metric("worst analytic-vs-tape deviation %.3e (tolerance 1e-10)", worst_tape);
  verdict(3, "residual gradient symmetry and eigenvalue-scaled asymmetry",
          worst_opp <= 1e-12 && worst_ratio <= 1e-10 && worst_tape <= 1e-10);
}

TEST_CASE("criterion 04: iterative eigensolver matches the dense oracle on random graphs") {
  double worst_val = 0, worst_proj = 0, worst_union = 0;
  int compared_clusters = 0;
  std::vector<SparseSym> batch_blocks;
  std::vector<SpectralBasis> solo_bases;
  for (int t = 0; t < 50; ++t) {
    Rng rng(4000 + uint64_t(t));
    const int n = rng.uniform_int(4, 64);
    const int k = rng.uniform_int(1, 8);
    const AtomicSystem sys = random_cloud(n, 4100 + uint64_t(t) * 3, 8.0);
    const SparseSym L = build_weighted_laplacian(build_radius_graph(sys, 3.5, 50));
    EigOptions opt;
    opt.seed = 11 + uint64_t(t);
    const SpectralBasis it_basis = lobpcg(L, std::min(k, n), opt);
    const DenseEig dense = dense_eig_oracle(L.dense(), n);
    const int kk = it_basis.k;
    for (int j = 0; j < kk; ++j)
      worst_val = std::max(worst_val, std::fabs(it_basis.lambda[size_t(j)] - dense.values[size_t(j)]));
    // Spectral projectors, cluster by cluster. Clusters are grouped on the
    // oracle spectrum; a cluster truncated by k spans different subspaces in
    // the two solvers, so only fully contained clusters are comparable.
    int start = 0;
    while (start < kk) {
      int end = start + 1;
      while (end < n && std::fabs(dense.values[size_t(end)] - dense.values[size_t(end - 1)]) < 1e-6)
        ++end;
      if (end > kk) break;
      double dev = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          double pa = 0, pb = 0;
          for (int c = start; c < end; ++c) {
            pa += it_basis.U[size_t(i) * size_t(kk) + size_t(c)] *
                  it_basis.U[size_t(j) * size_t(kk) + size_t(c)];
            pb += dense.vectors[size_t(i) * size_t(n) + size_t(c)] *
                  dense.vectors[size_t(j) * size_t(n) + size_t(c)];
          }
          dev = std::max(dev, std::fabs(pa - pb));
        }
      worst_proj = std::max(worst_proj, dev);
      compared_clusters += (end - start > 1);
      start = end;
    }
    if (t < 6) {
      batch_blocks.push_back(L);
      solo_bases.push_back(it_basis);
    }
  }
  // A batched solve over the first six graphs must reproduce the union of the
  // standalone block spectra.
  {
    BatchedLaplacian batch = block_diag_batch(batch_blocks);
    std::vector<EigOptions> opts(6);
    for (int b = 0; b < 6; ++b) {
      EigOptions opt;
      opt.seed = 11 + uint64_t(b);
      const std::vector<SpectralBasis> got =
          batched_spectral_basis(batch, solo_bases[size_t(b)].k, opt, 1);
      // Blocks solved with one shared option set: compare this block only.
      for (int j = 0; j < got[size_t(b)].k && j < solo_bases[size_t(b)].k; ++j)
        worst_union = std::max(worst_union, std::fabs(got[size_t(b)].lambda[size_t(j)] -
                                                      solo_bases[size_t(b)].lambda[size_t(j)]));
    }
  }
  metric("50 graphs (n in [4,64], k in [1,8]); %d degenerate clusters compared", compared_clusters);
  metric("worst eigenvalue deviation %.3e (tolerance 1e-8)", worst_val);
  metric("worst projector deviation %.3e (tolerance 1e-6)", worst_proj);
  metric("worst batched-vs-block eigenvalue deviation %.3e (tolerance 1e-8)", worst_union);
  verdict(4, "iterative eigensolver matches the dense oracle on random graphs",
          worst_val <= 1e-8 && worst_proj <= 1e-6 && worst_union <= 1e-8 &&
              compared_clusters >= 3);
}

TEST_CASE("criterion 05: node-space and spectral forms of energy and residual agree") {
  // Graph 1: two far-apart equilateral triangles in one system, giving exact
  // eigenvalue clusters {0, 0} and {1.5, 1.5, 1.5, 1.5}. Graph 2: a random
  // 5-node cloud.
  AtomicSystem tri;
  const double s3 = std::sqrt(3.0) / 2.0;
  const double tri_pts[6][3] = {{0, 0, 0},    {1, 0, 0},    {0.5, s3, 0},
                                {20, 0, 0},   {21, 0, 0},   {20.5, s3, 0}};
  for (const auto& p : tri_pts) {
    tri.atomic_numbers.push_back(6);
    tri.positions.insert(tri.positions.end(), {p[0], p[1], p[2]});
  }
  const SparseSym L1 = build_weighted_laplacian(build_radius_graph(tri, 2.0, 10));
  const SparseSym L2 = cloud_laplacian(5, 505);
  const int k = 6;
  SpectralBatch sb0 = make_spectral_batch(block_diag_batch({L1, L2}), k);
  auto sb = std::make_shared<const SpectralBatch>(sb0);

  Rng rng(77);
  std::vector<double> av_phi(size_t(2 * k)), av_rho(size_t(2 * k));
  for (int g = 0; g < 2; ++g)
    for (int j = 0; j < k; ++j) {
      const double m = sb->mode_mask.at(g, j);
      av_phi[size_t(g * k + j)] = m * rng.normal();
      av_rho[size_t(g * k + j)] = m * rng.normal();
    }

  auto run = [&](const std::shared_ptr<const SpectralBatch>& batch, const std::vector<double>& vp,
                 const std::vector<double>& vr) {
    Tape tape;
    const Tensor a_phi({2, k}, vp), a_rho({2, k}, vr);
    const PhiState st = accumulate(tape, phi_state_zero(*batch), batch, a_phi, a_rho);
    const Tensor e = electrostatic_energy(tape, st, batch);
    const Tensor r = pde_residual(tape, st, batch);
    const Tensor rs = pde_residual_spectral(tape, st, batch);
    return std::tuple<double, double, double, double>(e.at(0), e.at(1), r.value(), rs.value());
  };

  auto [e0, e1, res, res_spec] = run(sb, av_phi, av_rho);

  // Hand values straight from the eigenvalues and coefficients.
  double hand_e[2] = {0, 0}, hand_r2 = 0;
  for (int g = 0; g < 2; ++g)
    for (int j = 0; j < k; ++j) {
      const double lam = sb->lambda_pad.at(g, j);
      const double ap = av_phi[size_t(g * k + j)], ar = av_rho[size_t(g * k + j)];
      hand_e[g] += 0.5 * lam * ar * ap;
      const double d = lam * (ap - ar);
      hand_r2 += d * d;
    }
  const double dev_e = std::max(std::fabs(e0 - hand_e[0]), std::fabs(e1 - hand_e[1]));
  const double dev_r = std::fabs(res - std::sqrt(hand_r2));
  const double dev_rs = std::fabs(res_spec - std::sqrt(hand_r2));

  // Invariance: rotate inside both exact clusters of graph 1, flip signs of
  // two columns, and transform the coefficients to describe the same fields.
  std::vector<SpectralBasis> bases2 = sb->bases;
  std::vector<double> q(size_t(k) * size_t(k), 0.0);
  for (int i = 0; i < k; ++i) q[size_t(i) * size_t(k) + size_t(i)] = 1.0;
  auto rotate = [&](int a, int b, double th) {
    for (int i = 0; i < k; ++i) {
      const double xa = q[size_t(i) * size_t(k) + size_t(a)];
      const double xb = q[size_t(i) * size_t(k) + size_t(b)];
      q[size_t(i) * size_t(k) + size_t(a)] = std::cos(th) * xa - std::sin(th) * xb;
      q[size_t(i) * size_t(k) + size_t(b)] = std::sin(th) * xa + std::cos(th) * xb;
    }
  };
  rotate(0, 1, 0.7);   // kernel cluster
  rotate(2, 3, 1.1);   // inside the 1.5 cluster
  rotate(4, 5, -0.4);  // inside the 1.5 cluster
  rotate(3, 4, 0.9);   // still inside the 1.5 cluster
  for (int i = 0; i < k; ++i) {
    q[size_t(i) * size_t(k) + 2] = -q[size_t(i) * size_t(k) + 2];  // sign flips
    q[size_t(i) * size_t(k) + 5] = -q[size_t(i) * size_t(k) + 5];
  }
  SpectralBasis& b1 = bases2[0];
  const std::vector<double> u_old = b1.U;
  for (int i = 0; i < b1.n; ++i)
    for (int j = 0; j < k; ++j) {
      double s = 0;
      for (int c = 0; c < k; ++c)
        s += u_old[size_t(i) * size_t(k) + size_t(c)] * q[size_t(c) * size_t(k) + size_t(j)];
      b1.U[size_t(i) * size_t(k) + size_t(j)] = s;
    }
  // Coefficients in the rotated basis: alpha' = Q^T alpha (graph 1 only).
  std::vector<double> av_phi2 = av_phi, av_rho2 = av_rho;
  for (int j = 0; j < k; ++j) {
    double sp = 0, sr = 0;
    for (int c = 0; c < k; ++c) {
      sp += q[size_t(c) * size_t(k) + size_t(j)] * av_phi[size_t(c)];
      sr += q[size_t(c) * size_t(k) + size_t(j)] * av_rho[size_t(c)];
    }
    av_phi2[size_t(j)] = sp;
    av_rho2[size_t(j)] = sr;
  }
  SpectralBatch sb2 = assemble_spectral_batch({L1, L2}, bases2, k);
  auto [f0, f1, res2, res_spec2] =
      run(std::make_shared<const SpectralBatch>(sb2), av_phi2, av_rho2);
  const double dev_inv = std::max({std::fabs(f0 - e0), std::fabs(f1 - e1), std::fabs(res2 - res)});

  metric("energy node-vs-spectral deviation %.3e, residual %.3e / %.3e (tolerance 1e-10)", dev_e,
         dev_r, dev_rs);
  metric("invariance under sign flips and degenerate rotations: deviation %.3e", dev_inv);
  verdict(5, "node-space and spectral forms of energy and residual agree",
          dev_e <= 1e-10 && dev_r <= 1e-10 && dev_rs <= 1e-10 && dev_inv <= 1e-10);
}

TEST_CASE("criterion 06: end-to-end parameter gradients match central finite differences") {
  SyntheticSpec spec;
  spec.n_molecules = 2;
  spec.atoms_min = 4;
  spec.atoms_max = 8;
  spec.box = 5.0;
  spec.seed = 42;
  const std::vector<AtomicSystem> systems = gen_point_charge_set(spec);
  std::vector<double> targets;
  for (const auto& s : systems) targets.push_back(*s.energy);

  TrainConfig cfg;
  cfg.host = frozen_host();
  cfg.host.feature_width = 8;
  cfg.host.n_rbf = 8;
  cfg.host.max_neighbors = 12;
  cfg.phi.k = 3;
  cfg.phi.beta = 1e-2;
  cfg.phi.gamma = 1e-4;
  cfg.seed = 11;
  Model model = Model::init(cfg);
  const HostBatch batch = make_host_batch(systems, cfg.host);

  std::vector<double> flat;
  for (Tensor* t : model.parameters())
    flat.insert(flat.end(), t->data().begin(), t->data().end());

  auto eval = [&](const std::vector<double>& x, std::vector<double>* grads) {
    size_t pos = 0;
    for (Tensor* t : model.parameters()) {
      auto& d = t->mutable_data();
      for (auto& v : d) v = x[pos++];
    }
    for (Tensor* t : model.parameters()) t->set_requires_grad(grads != nullptr);
    Tape tape;
    const ForwardResult fr =
        phi_forward(tape, batch, model.host, &model.alpha, cfg.host, cfg.phi);
    const Tensor loss =
        total_loss(tape, fr.e_hat, targets, fr.l_pde, fr.l_net, cfg.phi.beta, cfg.phi.gamma);
    const double v = loss.value();
    if (grads) {
      tape.backward(loss);
      grads->clear();
      for (Tensor* t : model.parameters()) {
        const auto g = tape.grad(*t);
        grads->insert(grads->end(), g.begin(), g.end());
      }
    }
    return v;
  };

  std::vector<double> grads;
  eval(flat, &grads);
  REQUIRE(grads.size() == flat.size());
  const double h = 1e-5;
  double worst = 0;
  for (size_t i = 0; i < flat.size(); ++i) {
    auto xp = flat;
    xp[i] += h;
    auto xm = flat;
    xm[i] -= h;
    const double fd = (eval(xp, nullptr) - eval(xm, nullptr)) / (2 * h);
    const double rel =
        std::fabs(grads[i] - fd) / std::max({std::fabs(grads[i]), std::fabs(fd), 1e-6});
    worst = std::max(worst, rel);
  }
  metric("%zu parameters over a 2-molecule batch (4-8 atoms)", flat.size());
  metric("worst relative gradient error %.3e (tolerance 1e-4)", worst);
  verdict(6, "end-to-end parameter gradients match central finite differences", worst <= 1e-4);
}

TEST_CASE("criterion 07: augmented host beats the bare host on the synthetic set") {
  std::vector<double> improvements, overheads;
  double total_wall = 0;
  int wins = 0;
  for (uint64_t s : kSeeds) {
    const RunResult with_phi =
        ensure_run("phi_s" + std::to_string(s), frozen_train(s, true), s == 1);
    const RunResult bare = ensure_run("bare_s" + std::to_string(s), frozen_train(s, false));
    const double improvement = (bare.test_mae - with_phi.test_mae) / bare.test_mae;
    const double overhead = (with_phi.wall_s - bare.wall_s) / bare.wall_s;
    improvements.push_back(improvement);
    overheads.push_back(overhead);
    total_wall += with_phi.wall_s + bare.wall_s;
    wins += with_phi.test_mae < bare.test_mae;
    metric("seed %llu: test MAE %.4f (augmented) vs %.4f (bare), improvement %.1f%%, overhead %.1f%%",
           (unsigned long long)s, with_phi.test_mae, bare.test_mae, 100 * improvement,
           100 * overhead);
  }
  const double med_impr = median(improvements), med_over = median(overheads);
  metric("wins %d/3, median improvement %.1f%% (needs >= 5%%), median per-epoch overhead %.1f%% "
         "(needs <= 25%%)",
         wins, 100 * med_impr, 100 * med_over);
  metric("total training wall %.0f s (budget 7200 s)", total_wall);
  verdict(7, "augmented host beats the bare host on the synthetic set",
          wins == 3 && med_impr >= 0.05 && med_over <= 0.25 && total_wall < 7200.0);
}

TEST_CASE("criterion 08: augmented host keeps its margin at 5/25/50% data fractions") {
  bool all_ok = true;
  for (const auto& [frac, epochs] : kFractions) {
    std::vector<double> phi_maes, bare_maes;
    const std::string fr_tag = "_f" + std::to_string(int(frac * 100));
    for (uint64_t s : kSeeds) {
      TrainConfig cp = frozen_train(s, true);
      cp.data_fraction = frac;
      cp.epochs = epochs;
      TrainConfig cb = frozen_train(s, false);
      cb.data_fraction = frac;
      cb.epochs = epochs;
      phi_maes.push_back(ensure_run("phi_s" + std::to_string(s) + fr_tag, cp).test_mae);
      bare_maes.push_back(ensure_run("bare_s" + std::to_string(s) + fr_tag, cb).test_mae);
    }
    const double mp = median(phi_maes), mb = median(bare_maes);
    metric("fraction %.0f%% (epochs %d): median test MAE %.4f (augmented) vs %.4f (bare) -> %s",
           100 * frac, epochs, mp, mb, mp < mb ? "better" : "WORSE");
    all_ok = all_ok && (mp < mb);
  }
  verdict(8, "augmented host keeps its margin at 5/25/50% data fractions", all_ok);
}

TEST_CASE("criterion 09: ablations underperform the full module") {
  std::vector<double> full_maes, rl_maes, nr_maes;
  for (uint64_t s : kSeeds) {
    full_maes.push_back(ensure_run("phi_s" + std::to_string(s), frozen_train(s, true)).test_mae);
    TrainConfig crl = frozen_train(s, true);
    crl.ablation = Ablation::RandomLaplacian;
    rl_maes.push_back(ensure_run("abl_rl_s" + std::to_string(s), crl).test_mae);
    TrainConfig cnr = frozen_train(s, true);
    cnr.ablation = Ablation::NoResidual;
    nr_maes.push_back(ensure_run("abl_nr_s" + std::to_string(s), cnr).test_mae);
  }
  const double mf = median(full_maes), mrl = median(rl_maes), mnr = median(nr_maes);
  const bool rl_worse = mrl > mf, nr_worse = mnr > mf;
  metric("median test MAE: full %.4f, random-graph-operator %.4f (%s), no-residual %.4f (%s)", mf,
         mrl, rl_worse ? "worse, as required" : "NOT worse", mnr,
         nr_worse ? "worse, as required" : "NOT worse");
  if (!nr_worse)
    metric("the no-residual arm outperforms the full module on noise-free synthetic labels at "
           "every tried setting; see the decisions ledger for the sweep evidence and analysis");
  verdict(9, "ablations underperform the full module", rl_worse && nr_worse);
}

TEST_CASE("criterion 10: velocity-Verlet stability on the oscillator and the learned surface") {
  // Part 1: harmonic oscillator, 1e4 steps. Energy error must stay bounded
  // with no secular growth (the second half must not exceed the first).
  bool ho_ok = false;
  double ho_max = 0, ho_ratio = 0;
  {
    MDState st;
    st.positions = {1.0, 0.0, 0.0};
    st.velocities = {0.0, 0.0, 0.0};
    st.masses = {1.0};
    const ForceFn spring = [](const std::vector<double>& x) {
      ForceEval fe;
      fe.forces = {-x[0], -x[1], -x[2]};
      fe.potential = 0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
      return fe;
    };
    const MDState out = nve_run(st, spring, 10000, 0.5);
    const double e0 = out.trace.front().total();
    double max1 = 0, max2 = 0;
    for (size_t i = 0; i < out.trace.size(); ++i) {
      const double d = std::fabs(out.trace[i].total() - e0) / std::fabs(e0);
      (i < out.trace.size() / 2 ? max1 : max2) = std::max(i < out.trace.size() / 2 ? max1 : max2, d);
    }
    ho_max = std::max(max1, max2);
    ho_ratio = max2 / std::max(max1, 1e-300);
    ho_ok = ho_max <= 1e-3 && ho_ratio <= 1.05;
    metric("oscillator: max |dE|/E %.3e (tolerance 1e-3), second/first-half ratio %.3f (<= 1.05)",
           ho_max, ho_ratio);
  }

  // Part 2: 10 ps NVE on the trained model. The starting point is the first
  // test molecule that relaxes to a bound state with every pair distance well
  // clear of the neighbor cutoff (crossing it would make the energy surface
  // discontinuous, measuring the graph construction rather than the
  // integrator).
  ensure_run("phi_s1", frozen_train(1, true), true);
  Model model = load_checkpoint((cache_dir() / "phi_s1.ckpt").string());
  const auto& data = acceptance_dataset();
  const DataSplit split = split_dataset(int(data.size()), 1);
  AtomicSystem start;
  int chosen = -1;
  for (int t = 0; t < 12 && chosen < 0; ++t) {
    const int mol = split.test[size_t(t)];
    double fmax = 0;
    AtomicSystem rel = relax_fire(data[size_t(mol)], model, 5000, 1e-3, &fmax);
    if (fmax <= 1e-3 && cutoff_margin(rel, model.host_cfg.cutoff) >= 0.4) {
      chosen = mol;
      start = rel;
    }
  }
  REQUIRE(chosen >= 0);
  const int steps = 20000;
  const MDRun run = nve_run(start, model, steps, 0.5, ForceMode::Autodiff, 50.0, 1, steps);
  const DriftReport naive = energy_drift(run.state.trace);

  // Trend test on batch means: per-step energies are strongly autocorrelated,
  // so the plain OLS standard error is meaningless. Ten 1-ps block means are
  // effectively independent samples of the drift level.
  const auto& trace = run.state.trace;
  const double e0 = trace.front().total();
  const int blocks = 10;
  std::vector<double> bx(blocks), by(blocks);
  const size_t per = trace.size() / size_t(blocks);
  for (int b = 0; b < blocks; ++b) {
    double sum = 0, tsum = 0;
    for (size_t i = size_t(b) * per; i < size_t(b + 1) * per; ++i) {
      sum += (trace[i].total() - e0) / std::fabs(e0);
      tsum += trace[i].t;
    }
    by[size_t(b)] = sum / double(per);
    bx[size_t(b)] = tsum / double(per) / 1000.0;  // ps
  }
  double mx = 0, my = 0;
  for (int b = 0; b < blocks; ++b) {
    mx += bx[size_t(b)];
    my += by[size_t(b)];
  }
  mx /= blocks;
  my /= blocks;
  double sxx = 0, sxy = 0;
  for (int b = 0; b < blocks; ++b) {
    sxx += (bx[size_t(b)] - mx) * (bx[size_t(b)] - mx);
    sxy += (bx[size_t(b)] - mx) * (by[size_t(b)] - my);
  }
  const double slope = sxy / sxx;
  double ss = 0;
  for (int b = 0; b < blocks; ++b) {
    const double r = by[size_t(b)] - my - slope * (bx[size_t(b)] - mx);
    ss += r * r;
  }
  const double stderr_slope = std::sqrt(ss / (blocks - 2) / sxx);
  const double t975_8 = 2.306;  // two-sided 95% quantile, 8 degrees of freedom
  const bool stat_zero = std::fabs(slope) <= t975_8 * stderr_slope;
  const bool negligible = std::fabs(slope) <= 1e-6;  // < 1 ppm of E per ps
  metric("model NVE: molecule %d, %d steps at 0.5 fs, T=50 K, max |drift| %.3e", chosen, steps,
         naive.max_drift);
  metric("drift trend %.3e/ps (batch-means stderr %.3e): statistically zero %s, below 1e-6/ps %s",
         slope, stderr_slope, stat_zero ? "yes" : "no", negligible ? "yes" : "no");
  verdict(10, "velocity-Verlet stability on the oscillator and the learned surface",
          ho_ok && (stat_zero || negligible) && naive.max_drift < 1e-3);
}

TEST_CASE("criterion 11: expected-best-of-n curve matches resampling and is monotone") {
  Rng rng(1111);
  std::vector<double> values(40);
  for (auto& v : values) v = rng.uniform();
  const int n_max = 12;
  const std::vector<double> closed = evp_curve(values, n_max);
  REQUIRE(int(closed.size()) == n_max);
  double worst = 0;
  bool monotone = true;
  Rng mc(2222);
  for (int n = 1; n <= n_max; ++n) {
    const int reps = 20000;
    double acc = 0;
    for (int r = 0; r < reps; ++r) {
      double best = -1e300;
      for (int d = 0; d < n; ++d)
        best = std::max(best, values[size_t(mc.uniform_int(0, int(values.size()) - 1))]);
      acc += best;
    }
    worst = std::max(worst, std::fabs(acc / reps - closed[size_t(n - 1)]));
    if (n > 1) monotone = monotone && closed[size_t(n - 1)] >= closed[size_t(n - 2)] - 1e-12;
  }
  metric("closed form vs %d-resample Monte Carlo over n in [1,%d]: worst deviation %.3e "
         "(tolerance 1e-2)",
         20000, n_max, worst);
  metric("curve monotone nondecreasing: %s", monotone ? "yes" : "no");
  verdict(11, "expected-best-of-n curve matches resampling and is monotone",
          worst <= 1e-2 && monotone);
}

TEST_CASE("criterion 12: memory scales linearly in chain length and at most linearly in modes") {
  // Chain-length sweep under an explicit linear byte budget (10 KiB per atom
  // for every phase).
  std::vector<BenchRecord> merged;
  bool all_ok = true;
  for (int n : {1000, 10000, 100000}) {
    BenchOptions opt;
    opt.reps = 3;
    opt.memory_budget = int64_t(10240) * n;
    const std::vector<BenchRecord> recs = scale_sweep({n}, {8}, opt);
    for (const BenchRecord& r : recs) {
      all_ok = all_ok && r.status == BenchStatus::Ok;
      merged.push_back(r);
    }
  }
  bool slopes_ok = true;
  for (const char* phase : {"laplacian", "eigensolve", "forward"}) {
    const double slope = memory_scaling_slope(merged, phase, 8);
    metric("phase %s: log-log slope %.4f (required [0.9, 1.2])", phase, slope);
    slopes_ok = slopes_ok && slope >= 0.9 && slope <= 1.2;
  }
  metric("all 9 sweep rows inside the 10 KiB/atom budget: %s", all_ok ? "yes" : "no");

  // Mode sweep at fixed n: peak bytes may grow at most linearly in k.
  BenchOptions kopt;
  kopt.reps = 3;
  const std::vector<BenchRecord> krecs = scale_sweep({1000}, {2, 4, 8, 16, 32}, kopt);
  bool k_ok = true;
  for (const char* phase : {"laplacian", "eigensolve", "forward"}) {
    int64_t peak2 = 0, peak32 = 0;
    for (const BenchRecord& r : krecs)
      if (r.phase == phase) {
        if (r.k == 2) peak2 = r.peak_bytes;
        if (r.k == 32) peak32 = r.peak_bytes;
      }
    const bool ok = double(peak32) <= 1.5 * 16.0 * double(peak2) + 262144.0;
    metric("phase %s: peak %lld B at k=2 vs %lld B at k=32 -> %s", phase, (long long)peak2,
           (long long)peak32, ok ? "at most linear" : "SUPERLINEAR");
    k_ok = k_ok && ok;
  }
  verdict(12, "memory scales linearly in chain length and at most linearly in modes",
          all_ok && slopes_ok && k_ok);
}

TEST_CASE("criterion 13: zero-initialized charge head reproduces bare training exactly") {
  TrainConfig with = frozen_train(1, true);
  with.zero_alpha_init = true;
  with.phi.beta = 0;
  with.phi.gamma = 0;
  with.epochs = 5;
  with.data_fraction = 0.05;
  TrainConfig bare = frozen_train(1, false);
  bare.epochs = 5;
  bare.data_fraction = 0.05;

  const auto& data = acceptance_dataset();
  const DataSplit split = split_dataset(int(data.size()), 1);
  const TrainResult ra = train_run(with, data, split);
  const TrainResult rb = train_run(bare, data, split);

  REQUIRE(ra.history.size() == rb.history.size());
  double worst_hist = 0;
  for (size_t i = 0; i < ra.history.size(); ++i) {
    worst_hist = std::max(worst_hist,
                          std::fabs(ra.history[i].train_mae - rb.history[i].train_mae));
    worst_hist = std::max(worst_hist, std::fabs(ra.history[i].val_mae - rb.history[i].val_mae));
  }
  double worst_param = 0;
  Model ma = ra.last, mb = rb.last;
  auto pa = ma.host.parameters();
  auto pb = mb.host.parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i]->numel() == pb[i]->numel());
    for (int64_t j = 0; j < pa[i]->numel(); ++j)
      worst_param = std::max(worst_param, std::fabs(pa[i]->at(int(j)) - pb[i]->at(int(j))));
  }
  metric("%d epochs at 5%% data: worst per-epoch metric deviation %.3e, worst final host "
         "parameter deviation %.3e (tolerance 1e-10)",
         with.epochs, worst_hist, worst_param);
  verdict(13, "zero-initialized charge head reproduces bare training exactly",
          worst_hist <= 1e-10 && worst_param <= 1e-10);
}
