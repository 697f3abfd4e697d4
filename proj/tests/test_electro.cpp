#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "phi/electro.hpp"
#include "phi/rng.hpp"
#include "phi/system.hpp"

#include <cmath>
#include <memory>

using namespace phi;

namespace {

AtomicSystem random_system(int n, uint64_t seed, double box = 6.0) {
  Rng rng(seed);
  AtomicSystem sys;
  for (int i = 0; i < n; ++i) {
    sys.atomic_numbers.push_back(6);
    for (int c = 0; c < 3; ++c) sys.positions.push_back(rng.uniform(0.0, box));
  }
  sys.validate();
  return sys;
}

std::shared_ptr<const SpectralBatch> batch_of(const std::vector<AtomicSystem>& systems, int k,
                                              double r_c = 6.0) {
  std::vector<SparseSym> blocks;
  for (const auto& s : systems)
    blocks.push_back(build_weighted_laplacian(build_radius_graph(s, r_c, 50)));
  return std::make_shared<SpectralBatch>(
      make_spectral_batch(block_diag_batch(std::move(blocks)), k, {1e-12, 400, 1, false}));
}

std::shared_ptr<const SpectralBatch> two_atom_batch() {
  AtomicSystem sys;
  sys.atomic_numbers = {1, 1};
  sys.positions = {0, 0, 0, 2, 0, 0};
  return batch_of({sys}, 2);
}

Tensor coeffs(const std::vector<double>& v, int G, int k) { return Tensor({G, k}, v); }

}  // namespace

TEST_CASE("config validation") {
  PhiConfig ok;
  ok.validate();
  PhiConfig bad = ok;
  bad.k = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ok;
  bad.beta = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ok;
  bad.kernel_size = 2;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("spectral batch bookkeeping") {
  auto sb = batch_of({random_system(4, 1), random_system(3, 2)}, 6);
  CHECK(sb->n_graphs() == 2);
  CHECK(sb->n_total == 7);
  CHECK(sb->node_offsets == std::vector<int>{0, 4, 7});
  CHECK(sb->graph_index == std::vector<int>{0, 0, 0, 0, 1, 1, 1});
  // blocks smaller than k clamp their mode count; the mask records it
  CHECK(sb->bases[0].k == 4);
  CHECK(sb->bases[1].k == 3);
  CHECK(sb->mode_mask.at(0, 3) == 1.0);
  CHECK(sb->mode_mask.at(0, 4) == 0.0);
  CHECK(sb->mode_mask.at(1, 2) == 1.0);
  CHECK(sb->mode_mask.at(1, 3) == 0.0);
}

TEST_CASE("alpha net: zero features with zero biases give zero coefficients") {
  auto sb = batch_of({random_system(5, 3)}, 3);
  PhiConfig cfg;
  cfg.k = 3;
  AlphaNetParams p = AlphaNetParams::init(8, cfg, 42);  // biases start at zero
  Tape tape;
  auto [a_phi, a_rho] = alpha_net_forward(tape, Tensor::zeros({5, 8}), p, sb);
  for (int j = 0; j < 3; ++j) {
    CHECK(a_phi.at(0, j) == 0.0);
    CHECK(a_rho.at(0, j) == 0.0);
  }
}

TEST_CASE("alpha net: kernel 1 is permutation invariant, kernel 3 is not") {
  const int n = 5, F = 6;
  Rng rng(7);
  std::vector<double> hv(size_t(n) * F);
  for (auto& v : hv) v = rng.normal();
  std::vector<int> perm = {3, 0, 4, 1, 2};
  std::vector<double> hp(hv.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < F; ++j)
      hp[size_t(perm[size_t(i)]) * F + size_t(j)] = hv[size_t(i) * F + size_t(j)];
  auto sb = batch_of({random_system(n, 4)}, 3);

  PhiConfig c1;
  c1.k = 3;
  c1.kernel_size = 1;
  AlphaNetParams p1 = AlphaNetParams::init(F, c1, 11);
  Tape t;
  auto [a, b] = alpha_net_forward(t, Tensor({n, F}, hv), p1, sb);
  auto [ap, bp] = alpha_net_forward(t, Tensor({n, F}, hp), p1, sb);
  for (int j = 0; j < 3; ++j) {
    CHECK(std::fabs(a.at(0, j) - ap.at(0, j)) <= 1e-12);
    CHECK(std::fabs(b.at(0, j) - bp.at(0, j)) <= 1e-12);
  }

  PhiConfig c3 = c1;
  c3.kernel_size = 3;
  AlphaNetParams p3 = AlphaNetParams::init(F, c3, 11);
  auto [a3, b3] = alpha_net_forward(t, Tensor({n, F}, hv), p3, sb);
  auto [a3p, b3p] = alpha_net_forward(t, Tensor({n, F}, hp), p3, sb);
  double diff = 0;
  for (int j = 0; j < 3; ++j) diff += std::fabs(a3.at(0, j) - a3p.at(0, j)) +
                                      std::fabs(b3.at(0, j) - b3p.at(0, j));
  CHECK(diff > 1e-8);  // non-invariance witness at this fixed seed
}

TEST_CASE("accumulate: unit coefficient reproduces a basis column") {
  auto sb = two_atom_batch();
  Tape tape;
  PhiState z = phi_state_zero(*sb);
  PhiState s = accumulate(tape, z, sb, coeffs({1, 0}, 1, 2), coeffs({1, 0}, 1, 2));
  // phi equals the first basis column
  CHECK(s.phi.at(0) == doctest::Approx(sb->bases[0].U[0]).epsilon(1e-12));
  CHECK(s.phi.at(1) == doctest::Approx(sb->bases[0].U[2]).epsilon(1e-12));
  // lambda_1 = 0: the kernel mode carries no charge
  CHECK(std::fabs(sb->bases[0].lambda[0]) <= 1e-12);
  CHECK(std::fabs(s.rho.at(0)) <= 1e-12);
  CHECK(std::fabs(s.rho.at(1)) <= 1e-12);
}

TEST_CASE("accumulate is linear and keeps spaces synchronized") {
  auto sb = batch_of({random_system(6, 5), random_system(4, 6)}, 4);
  Rng rng(8);
  const int G = 2, k = 4;
  std::vector<double> a1(size_t(G) * k), r1(size_t(G) * k), a2(size_t(G) * k), r2(size_t(G) * k);
  for (auto* v : {&a1, &r1, &a2, &r2})
    for (auto& x : *v) x = rng.normal();
  std::vector<double> asum(size_t(G) * k), rsum(size_t(G) * k);
  for (size_t i = 0; i < asum.size(); ++i) {
    asum[i] = a1[i] + a2[i];
    rsum[i] = r1[i] + r2[i];
  }
  Tape tape;
  PhiState z = phi_state_zero(*sb);
  PhiState twice = accumulate(tape, accumulate(tape, z, sb, coeffs(a1, G, k), coeffs(r1, G, k)),
                              sb, coeffs(a2, G, k), coeffs(r2, G, k));
  PhiState once = accumulate(tape, z, sb, coeffs(asum, G, k), coeffs(rsum, G, k));
  for (int i = 0; i < sb->n_total; ++i) {
    CHECK(std::fabs(twice.phi.at(i) - once.phi.at(i)) <= 1e-12);
    CHECK(std::fabs(twice.rho.at(i) - once.rho.at(i)) <= 1e-12);
  }

  // node space equals U (resp. U Lambda) applied to the accumulators
  for (int g = 0; g < G; ++g) {
    const SpectralBasis& B = sb->bases[size_t(g)];
    const int off = sb->node_offsets[size_t(g)];
    for (int i = 0; i < B.n; ++i) {
      double sp = 0, sr = 0;
      for (int j = 0; j < B.k; ++j) {
        sp += B.U[size_t(i) * size_t(B.k) + size_t(j)] * twice.alpha_phi_acc.at(g, j);
        sr += B.U[size_t(i) * size_t(B.k) + size_t(j)] * B.lambda[size_t(j)] *
              twice.alpha_rho_acc.at(g, j);
      }
      CHECK(std::fabs(twice.phi.at(off + i) - sp) <= 1e-10);
      CHECK(std::fabs(twice.rho.at(off + i) - sr) <= 1e-10);
    }
  }
}

TEST_CASE("pde residual: exact solution, hand value, and the spectral identity") {
  auto sb = two_atom_batch();
  Tape tape;
  PhiState z = phi_state_zero(*sb);

  PhiState equal = accumulate(tape, z, sb, coeffs({0.3, -0.7}, 1, 2), coeffs({0.3, -0.7}, 1, 2));
  CHECK(pde_residual(tape, equal, sb).value() <= 1e-10);

  // lambda = (0, 2); alpha_phi = (0,1), alpha_rho = 0 -> ||Lambda d|| = 2
  PhiState hand = accumulate(tape, z, sb, coeffs({0, 1}, 1, 2), coeffs({0, 0}, 1, 2));
  CHECK(pde_residual(tape, hand, sb).value() == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(pde_residual_spectral(tape, hand, sb).value() == doctest::Approx(2.0).epsilon(1e-12));

  auto sb2 = batch_of({random_system(6, 9), random_system(5, 10)}, 4);
  Rng rng(11);
  std::vector<double> av(8), rv(8);
  for (auto& v : av) v = rng.normal();
  for (auto& v : rv) v = rng.normal();
  PhiState s = accumulate(tape, phi_state_zero(*sb2), sb2, coeffs(av, 2, 4), coeffs(rv, 2, 4));
  const double node = pde_residual(tape, s, sb2).value();
  const double spec = pde_residual_spectral(tape, s, sb2).value();
  CHECK(std::fabs(node - spec) <= 1e-10);
}

TEST_CASE("net charge penalty") {
  auto sb = two_atom_batch();
  Tape tape;
  PhiState s = phi_state_zero(*sb);
  s.rho = Tensor({2}, {1.0, -1.0});
  CHECK(net_charge_penalty(tape, s, sb).at(0) == doctest::Approx(0.0));
  s.rho = Tensor({2}, {0.5, 0.5});
  CHECK(net_charge_penalty(tape, s, sb).at(0) == doctest::Approx(1.0));

  // Independent spectral oracle: sum_i rho_i = sum_j lambda_j alpha_j (1' u_j).
  auto sb2 = batch_of({random_system(7, 12)}, 5);
  Rng rng(13);
  std::vector<double> rv(5);
  for (auto& v : rv) v = rng.normal();
  PhiState st = accumulate(tape, phi_state_zero(*sb2), sb2, coeffs(rv, 1, 5), coeffs(rv, 1, 5));
  const SpectralBasis& B = sb2->bases[0];
  double oracle = 0;
  for (int j = 0; j < B.k; ++j) {
    double colsum = 0;
    for (int i = 0; i < B.n; ++i) colsum += B.U[size_t(i) * size_t(B.k) + size_t(j)];
    oracle += B.lambda[size_t(j)] * rv[size_t(j)] * colsum;
  }
  CHECK(net_charge_penalty(tape, st, sb2).at(0) == doctest::Approx(std::fabs(oracle)).epsilon(1e-10));
}

TEST_CASE("electrostatic energy: zero state, hand value, basis independence") {
  auto sb = two_atom_batch();
  Tape tape;
  CHECK(electrostatic_energy(tape, phi_state_zero(*sb), sb).at(0) == 0.0);

  // alpha_phi = alpha_rho = e2, lambda_2 = 2 -> E = 1/2 * 2 = 1
  PhiState s = accumulate(tape, phi_state_zero(*sb), sb, coeffs({0, 1}, 1, 2),
                          coeffs({0, 1}, 1, 2));
  CHECK(electrostatic_energy(tape, s, sb).at(0) == doctest::Approx(1.0).epsilon(1e-10));

  // Flipping the sign of any basis column must leave E and the residual alone.
  AtomicSystem tri;  // equilateral triangle: degenerate eigenvalues {1.5, 1.5}
  const double d = 1.6;
  tri.atomic_numbers = {6, 6, 6};
  tri.positions = {0, 0, 0, d, 0, 0, d / 2, d * std::sqrt(3.0) / 2, 0};
  auto sbt = batch_of({tri}, 3);
  Rng rng(14);
  std::vector<double> av(3), rv(3);
  for (auto& v : av) v = rng.normal();
  for (auto& v : rv) v = rng.normal();

  auto eval = [&](const SpectralBatch& batch) {
    auto p = std::make_shared<SpectralBatch>(batch);
    Tape t;
    PhiState st = accumulate(t, phi_state_zero(*p), p, coeffs(av, 1, 3), coeffs(rv, 1, 3));
    return std::pair<double, double>{electrostatic_energy(t, st, p).at(0),
                                     pde_residual(t, st, p).value()};
  };
  auto [e0, r0] = eval(*sbt);

  SpectralBatch flipped = *sbt;
  for (int i = 0; i < 3; ++i) flipped.bases[0].U[size_t(i) * 3 + 1] *= -1.0;
  auto [e1, r1] = eval(flipped);
  CHECK(std::fabs(e1 - e0) <= 1e-12);
  CHECK(std::fabs(r1 - r0) <= 1e-10);

  // Rotation within the degenerate cluster (columns 2,3 share lambda = 1.5).
  CHECK(std::fabs(sbt->bases[0].lambda[1] - sbt->bases[0].lambda[2]) <= 1e-10);
  SpectralBatch rotated = *sbt;
  const double th = 0.83, c = std::cos(th), sn = std::sin(th);
  for (int i = 0; i < 3; ++i) {
    const double u1 = sbt->bases[0].U[size_t(i) * 3 + 1];
    const double u2 = sbt->bases[0].U[size_t(i) * 3 + 2];
    rotated.bases[0].U[size_t(i) * 3 + 1] = c * u1 - sn * u2;
    rotated.bases[0].U[size_t(i) * 3 + 2] = sn * u1 + c * u2;
  }
  auto [e2, r2] = eval(rotated);
  CHECK(std::fabs(e2 - e0) <= 1e-10);
  CHECK(std::fabs(r2 - r0) <= 1e-10);
}

TEST_CASE("residual gradient symmetry for the two charge parameterizations") {
  auto sb = batch_of({random_system(6, 20)}, 4);
  Rng rng(21);
  std::vector<double> av(4), rv(4);
  for (auto& v : av) v = rng.normal();
  for (auto& v : rv) v = rng.normal();

  SUBCASE("aligned parameterization: equal and opposite per mode") {
    Tensor a = coeffs(av, 1, 4), r = coeffs(rv, 1, 4);
    a.set_requires_grad(true);
    r.set_requires_grad(true);
    Tape tape;
    PhiState s = accumulate(tape, phi_state_zero(*sb), sb, a, r);
    Tensor obj = tape.square(pde_residual(tape, s, sb));
    tape.backward(obj);
    auto ga = tape.grad(a), gr = tape.grad(r);
    for (int j = 0; j < 4; ++j) {
      CHECK(std::fabs(ga[size_t(j)] + gr[size_t(j)]) <= 1e-12);
      const double lam = sb->bases[0].lambda[size_t(j)];
      const double expect = 2.0 * lam * lam * (av[size_t(j)] - rv[size_t(j)]);
      CHECK(std::fabs(ga[size_t(j)] - expect) <= 1e-10);
    }
  }

  SUBCASE("plain parameterization: asymmetry ratio equals the eigenvalue") {
    // residual^2 = sum_j (lambda_j a_j - r_j)^2, built from public ops
    Tensor a = coeffs(av, 1, 4), r = coeffs(rv, 1, 4);
    a.set_requires_grad(true);
    r.set_requires_grad(true);
    Tape tape;
    Tensor diff = tape.sub(tape.mul(sb->lambda_pad, a), r);
    Tensor obj = tape.sum(tape.square(diff));
    tape.backward(obj);
    auto ga = tape.grad(a), gr = tape.grad(r);
    for (int j = 1; j < 4; ++j) {  // skip the kernel mode (gradient 0/0)
      const double lam = sb->bases[0].lambda[size_t(j)];
      if (std::fabs(gr[size_t(j)]) < 1e-12) continue;
      CHECK(std::fabs(ga[size_t(j)] / -gr[size_t(j)] - lam) <= 1e-10);
    }
  }
}

TEST_CASE("all alpha-net parameter gradients match finite differences") {
  const int n1 = 5, n2 = 4, F = 6, k = 2;
  PhiConfig cfg;
  cfg.k = k;
  cfg.kernel_size = 3;  // exercise the wider kernel path
  cfg.hidden_channels = 3;
  auto sb = batch_of({random_system(n1, 30), random_system(n2, 31)}, k);
  Rng rng(32);
  std::vector<double> hv(size_t(n1 + n2) * F);
  for (auto& v : hv) v = rng.normal();
  const Tensor h({n1 + n2, F}, hv);

  AlphaNetParams proto = AlphaNetParams::init(F, cfg, 77);
  std::vector<double> flat;
  for (const Tensor* t : proto.parameters())
    flat.insert(flat.end(), t->data().begin(), t->data().end());

  auto eval = [&](const std::vector<double>& x, std::vector<double>* grads) {
    AlphaNetParams p = AlphaNetParams::zeros(F, cfg);
    size_t pos = 0;
    for (Tensor* t : p.parameters()) {
      auto& d = t->mutable_data();
      for (auto& v : d) v = x[pos++];
    }
    if (grads) p.set_requires_grad(true);
    Tape tape;
    auto [a_phi, a_rho] = alpha_net_forward(tape, h, p, sb);
    PhiState s = accumulate(tape, phi_state_zero(*sb), sb, a_phi, a_rho);
    Tensor loss = tape.add(tape.add(pde_residual(tape, s, sb),
                                    tape.mean(electrostatic_energy(tape, s, sb))),
                           tape.mean(net_charge_penalty(tape, s, sb)));
    const double v = loss.value();
    if (grads) {
      tape.backward(loss);
      grads->clear();
      for (Tensor* t : p.parameters()) {
        auto g = tape.grad(*t);
        grads->insert(grads->end(), g.begin(), g.end());
      }
    }
    return v;
  };

  std::vector<double> grads;
  eval(flat, &grads);
  REQUIRE(grads.size() == flat.size());
  const double hstep = 1e-6;
  for (size_t i = 0; i < flat.size(); ++i) {
    auto xp = flat;
    xp[i] += hstep;
    auto xm = flat;
    xm[i] -= hstep;
    const double fd = (eval(xp, nullptr) - eval(xm, nullptr)) / (2 * hstep);
    CHECK(std::fabs(grads[i] - fd) <= 2e-6 * std::max(1.0, std::fabs(fd)));
  }
}
