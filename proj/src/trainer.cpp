#include "phi/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "phi/oracles.hpp"
#include "phi/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace phi {

void TrainConfig::validate() const {
  host.validate();
  phi.validate();
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
  if (!(grad_clip > 0.0)) throw std::invalid_argument("train config: grad_clip must be positive");
  if (threads < 1) throw std::invalid_argument("train config: threads must be >= 1");
  const double allowed[] = {0.05, 0.25, 0.5, 1.0};
  bool ok = false;
  for (double f : allowed) ok = ok || std::fabs(data_fraction - f) < 1e-12;
  if (!ok)
    throw std::invalid_argument("train config: data_fraction must be one of 0.05, 0.25, 0.5, 1.0");
}

Model Model::init(const TrainConfig& cfg) {
  Model m;
  m.host_cfg = cfg.host;
  m.phi_cfg = cfg.phi;
  m.with_phi = cfg.with_phi;
  m.host = HostParams::init(cfg.host, cfg.seed);
  m.alpha = (cfg.with_phi && !cfg.zero_alpha_init)
                ? AlphaNetParams::init(cfg.host.feature_width, cfg.phi, cfg.seed)
                : AlphaNetParams::zeros(cfg.host.feature_width, cfg.phi);
  m.host.set_requires_grad(true);
  if (m.with_phi) m.alpha.set_requires_grad(true);
  return m;
}

std::vector<Tensor*> Model::parameters() {
  std::vector<Tensor*> ps = host.parameters();
  if (with_phi) {
    auto ap = alpha.parameters();
    ps.insert(ps.end(), ap.begin(), ap.end());
  }
  return ps;
}

static std::vector<const Tensor*> model_parameters(const Model& m) {
  std::vector<const Tensor*> ps = m.host.parameters();
  if (m.with_phi) {
    auto ap = m.alpha.parameters();
    ps.insert(ps.end(), ap.begin(), ap.end());
  }
  return ps;
}

// Deep copy so later optimizer steps can never touch the snapshot.
static Model snapshot(const Model& m) {
  Model c;
  c.host_cfg = m.host_cfg;
  c.phi_cfg = m.phi_cfg;
  c.with_phi = m.with_phi;
  c.host = HostParams::zeros(m.host_cfg);
  c.alpha = AlphaNetParams::zeros(m.host_cfg.feature_width, m.phi_cfg);
  auto src = model_parameters(m);
  std::vector<Tensor*> dst = c.host.parameters();
  auto ap = c.alpha.parameters();
  if (m.with_phi) dst.insert(dst.end(), ap.begin(), ap.end());
  for (size_t i = 0; i < src.size(); ++i) dst[i]->mutable_data() = src[i]->data();
  return c;
}

Tensor total_loss(Tape& tape, const Tensor& e_hat, const std::vector<double>& targets,
                  const Tensor& l_pde, const Tensor& l_net, double beta, double gamma) {
  if (int64_t(targets.size()) != e_hat.numel())
    throw ShapeError("total_loss: target count does not match predictions");
  if (l_pde.numel() != 1) throw ShapeError("total_loss: l_pde must be a scalar");
  Tensor tgt(Shape{int(targets.size())}, targets);
  Tensor loss = tape.mean(tape.abs(tape.sub(e_hat, tgt)));
  if (beta != 0.0) loss = tape.add(loss, tape.scale(l_pde, beta));
  if (gamma != 0.0) loss = tape.add(loss, tape.scale(tape.mean(l_net), gamma));
  return loss;
}

double cosine_lr(double lr0, int epoch, int total_epochs) {
  constexpr double floor_frac = 1e-2;
  if (total_epochs <= 1) return lr0;
  int e = std::clamp(epoch, 0, total_epochs - 1);
  const double pi = 3.14159265358979323846;
  double t = double(e) / double(total_epochs - 1);
  return lr0 * (floor_frac + (1.0 - floor_frac) * 0.5 * (1.0 + std::cos(pi * t)));
}

double clip_gradients(std::vector<std::vector<double>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g) sq += v * v;
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g) v *= s;
  }
  return norm;
}

Adam::Adam(std::vector<Tensor*> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor* p : params_) {
    m_.emplace_back(size_t(p->numel()), 0.0);
    v_.emplace_back(size_t(p->numel()), 0.0);
  }
}

void Adam::step(Tape& tape, double lr, double clip) {
  std::vector<std::vector<double>> grads(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    if (tape.on_tape(*params_[i]))
      grads[i] = tape.grad(*params_[i]);
    else
      grads[i].assign(size_t(params_[i]->numel()), 0.0);
  }
  clip_gradients(grads, clip);
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, double(t_));
  const double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i]->mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    const auto& g = grads[i];
    for (size_t j = 0; j < p.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

BasisCache::BasisCache(const std::vector<AtomicSystem>* data, const HostConfig& host,
                       const PhiConfig& phi, Ablation ablation, uint64_t seed)
    : data_(data), host_(host), phi_(phi), ablation_(ablation), seed_(seed) {
  slots_.resize(data->size());
}

void BasisCache::fill(int index) {
  const AtomicSystem& sys = (*data_)[size_t(index)];
  const int n = sys.n_atoms();
  const int kk = std::min(phi_.k, n);
  if (ablation_ == Ablation::RandomLaplacian) {
    // A fixed random symmetric PSD stand-in for the Laplacian, spectrum
    // rescaled to [0, 2]; drawn once per molecule so it never changes
    // between epochs.
    Rng rng = derive_rng(seed_, "ablation.laplacian", uint64_t(index));
    std::vector<double> R(size_t(n) * size_t(n), 0.0);
    for (double& v : R) v = rng.normal();
    std::vector<double> A(size_t(n) * size_t(n), 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) {
        double s = 0.0;
        for (int r = 0; r < n; ++r) s += R[size_t(r) * n + i] * R[size_t(r) * n + j];
        A[size_t(i) * n + j] = A[size_t(j) * n + i] = s / double(n);
      }
    DenseEig eig = dense_eig_oracle(A, n);
    const double top = std::max(eig.values.back(), 1e-12);
    std::vector<double> lam(size_t(n), 0.0);
    for (int j = 0; j < n; ++j) lam[size_t(j)] = 2.0 * std::max(eig.values[size_t(j)], 0.0) / top;
    std::vector<double> M(size_t(n) * size_t(n), 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int r = 0; r < n; ++r)
          s += eig.vectors[size_t(i) * n + r] * lam[size_t(r)] * eig.vectors[size_t(j) * n + r];
        M[size_t(i) * n + j] = s;
      }
    SparseSym L;
    L.n = n;
    L.row_ptr.resize(size_t(n) + 1);
    L.col.resize(size_t(n) * size_t(n));
    L.val = M;
    for (int i = 0; i <= n; ++i) L.row_ptr[size_t(i)] = i * n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) L.col[size_t(i) * n + j] = j;
    SpectralBasis b;
    b.n = n;
    b.k = kk;
    b.U.resize(size_t(n) * size_t(kk), 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < kk; ++j) b.U[size_t(i) * kk + j] = eig.vectors[size_t(i) * n + j];
    b.lambda.assign(lam.begin(), lam.begin() + kk);
    b.residual_norms.assign(size_t(kk), 0.0);
    slots_[size_t(index)] = std::make_pair(std::move(L), std::move(b));
  } else {
    RadiusGraph g = build_radius_graph(sys, host_.cutoff, host_.max_neighbors);
    SparseSym L = build_weighted_laplacian(g);
    SpectralBasis b = lobpcg(L, kk, EigOptions{});
    slots_[size_t(index)] = std::make_pair(std::move(L), std::move(b));
  }
}

std::pair<std::vector<SparseSym>, std::vector<SpectralBasis>> BasisCache::fetch(
    const std::vector<int>& indices, int threads) {
  std::vector<int> missing;
  for (int i : indices) {
    if (i < 0 || size_t(i) >= slots_.size()) throw std::invalid_argument("basis cache: bad index");
    if (!slots_[size_t(i)] && std::find(missing.begin(), missing.end(), i) == missing.end())
      missing.push_back(i);
  }
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic) num_threads(threads) if (threads > 1)
  for (int64_t m = 0; m < int64_t(missing.size()); ++m) {
    try {
      fill(missing[size_t(m)]);
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  solves_ += int64_t(missing.size());
  std::vector<SparseSym> blocks;
  std::vector<SpectralBasis> bases;
  blocks.reserve(indices.size());
  bases.reserve(indices.size());
  for (int i : indices) {
    blocks.push_back(slots_[size_t(i)]->first);
    bases.push_back(slots_[size_t(i)]->second);
  }
  return {std::move(blocks), std::move(bases)};
}

namespace {

struct BatchAccum {
  double abs_err = 0, l_net = 0, es = 0, net = 0;
  int count = 0;
};

// Per-graph scalar metrics shared by the train loop and evaluate().
void accumulate_graph_metrics(const ForwardResult& fr, const std::vector<double>& targets,
                              const std::vector<int>& node_offsets, bool with_phi, BatchAccum& acc) {
  const int G = int(targets.size());
  const std::vector<double>* rho = with_phi ? &fr.state.rho.data() : nullptr;
  for (int g = 0; g < G; ++g) {
    acc.abs_err += std::fabs(fr.e_hat.at(g) - targets[size_t(g)]);
    acc.l_net += fr.l_net.at(g);
    acc.es += fr.e_es.at(g);
    if (rho) {
      double s = 0.0;
      for (int i = node_offsets[size_t(g)]; i < node_offsets[size_t(g) + 1]; ++i)
        s += (*rho)[size_t(i)];
      acc.net += s;
    }
    ++acc.count;
  }
}

std::string join_indices(const std::vector<int>& idx) {
  std::ostringstream os;
  for (size_t i = 0; i < idx.size(); ++i) os << (i ? " " : "") << idx[i];
  return os.str();
}

double target_energy(const AtomicSystem& s, int index) {
  if (!s.energy) throw std::invalid_argument("train/eval: molecule " + std::to_string(index) +
                                             " has no energy label");
  return *s.energy;
}

}  // namespace

TrainResult train_run(const TrainConfig& cfg, const std::vector<AtomicSystem>& dataset,
                      const DataSplit& split) {
  cfg.validate();
  if (split.train.empty()) throw std::invalid_argument("train_run: empty training split");
  if (split.val.empty()) throw std::invalid_argument("train_run: empty validation split");

  // Data-scarcity subsetting: a seeded shuffle, then the first fraction.
  std::vector<int> train_idx = split.train;
  {
    Rng r = derive_rng(cfg.seed, "train.subsample");
    for (size_t i = train_idx.size(); i > 1; --i)
      std::swap(train_idx[i - 1], train_idx[size_t(r.uniform_int(0, int(i) - 1))]);
  }
  int n_used = std::max(1, int(std::llround(cfg.data_fraction * double(train_idx.size()))));
  n_used = std::min(n_used, int(train_idx.size()));
  train_idx.resize(size_t(n_used));
  std::sort(train_idx.begin(), train_idx.end());

  Model model = Model::init(cfg);
  std::vector<Tensor*> params = model.parameters();
  Adam opt(params);
  BasisCache cache(&dataset, cfg.host, cfg.phi, cfg.ablation, cfg.seed);

  // no-residual ablation: the PDE term is logged but never optimized.
  const double beta_eff =
      (cfg.ablation == Ablation::NoResidual || !cfg.with_phi) ? 0.0 : cfg.phi.beta;
  const double gamma_eff = cfg.with_phi ? cfg.phi.gamma : 0.0;

  TrainResult res;
  res.n_train_used = n_used;
  double best = std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr_e = cosine_lr(cfg.lr, epoch, cfg.epochs);
    std::vector<int> order = train_idx;
    {
      Rng r = derive_rng(cfg.seed, "train.shuffle", uint64_t(epoch));
      for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[size_t(r.uniform_int(0, int(i) - 1))]);
    }

    BatchAccum acc;
    double pde_sum = 0.0;
    int n_batches = 0;
    for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
      const size_t stop = std::min(order.size(), start + size_t(cfg.batch_size));
      std::vector<int> batch_idx(order.begin() + int64_t(start), order.begin() + int64_t(stop));
      std::vector<AtomicSystem> systems;
      std::vector<double> targets;
      systems.reserve(batch_idx.size());
      for (int i : batch_idx) {
        systems.push_back(dataset[size_t(i)]);
        targets.push_back(target_energy(dataset[size_t(i)], i));
      }
      HostBatch hb = make_host_batch(systems, cfg.host);
      std::shared_ptr<const SpectralBatch> sb;
      if (cfg.with_phi) {
        auto [blocks, bases] = cache.fetch(batch_idx, cfg.threads);
        sb = std::make_shared<const SpectralBatch>(
            assemble_spectral_batch(std::move(blocks), std::move(bases), cfg.phi.k));
      }

      Tape tape;
      ForwardResult fr;
      Tensor loss;
      try {
        fr = phi_forward(tape, hb, model.host, cfg.with_phi ? &model.alpha : nullptr, cfg.host,
                         cfg.phi, sb);
        loss = total_loss(tape, fr.e_hat, targets, fr.l_pde, fr.l_net, beta_eff, gamma_eff);
        if (!std::isfinite(loss.value())) throw NumericError("non-finite loss value");
      } catch (const NumericError& e) {
        std::fprintf(stderr,
                     "train_run: aborting at epoch %d: %s\noffending batch (dataset indices %s), "
                     "dumped below:\n%s",
                     epoch, e.what(), join_indices(batch_idx).c_str(),
                     write_xyz(systems).c_str());
        throw NumericError("train_run: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch molecules [" + join_indices(batch_idx) + "]: " + e.what());
      }
      tape.backward(loss);
      opt.step(tape, lr_e, cfg.grad_clip);

      accumulate_graph_metrics(fr, targets, hb.node_offsets, cfg.with_phi, acc);
      pde_sum += fr.l_pde.value();
      ++n_batches;
    }

    EvalMetrics vm = evaluate(model, dataset, split.val, cfg.batch_size, &cache, cfg.threads);

    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr_e;
    em.train_mae = acc.abs_err / double(acc.count);
    em.val_mae = vm.mae;
    em.l_pde = pde_sum / double(n_batches);
    em.l_net = acc.l_net / double(acc.count);
    em.es_mean = acc.es / double(acc.count);
    em.net_charge = acc.net / double(acc.count);
    res.history.push_back(em);

    if (em.val_mae < best) {
      best = em.val_mae;
      res.best = snapshot(model);
      res.best_epoch = epoch;
      res.best_val_mae = em.val_mae;
    }
  }
  res.last = snapshot(model);
  res.n_eigensolves = cache.eigensolves();
  return res;
}

EvalMetrics evaluate(Model& model, const std::vector<AtomicSystem>& dataset,
                     const std::vector<int>& indices, int batch_size, BasisCache* cache,
                     int threads) {
  if (indices.empty()) throw std::invalid_argument("evaluate: empty split");
  if (batch_size < 1) throw std::invalid_argument("evaluate: batch_size must be >= 1");
  std::optional<BasisCache> local;
  if (model.with_phi && cache == nullptr) {
    local.emplace(&dataset, model.host_cfg, model.phi_cfg, Ablation::None, 0);
    cache = &*local;
  }

  // Every metric is a per-molecule quantity accumulated in index order, so
  // the result cannot depend on how the split is chunked into batches.
  EvalMetrics out;
  double pde_sum = 0.0;
  for (size_t start = 0; start < indices.size(); start += size_t(batch_size)) {
    const size_t stop = std::min(indices.size(), start + size_t(batch_size));
    std::vector<int> batch_idx(indices.begin() + int64_t(start), indices.begin() + int64_t(stop));
    std::vector<AtomicSystem> systems;
    std::vector<double> targets;
    for (int i : batch_idx) {
      systems.push_back(dataset[size_t(i)]);
      targets.push_back(target_energy(dataset[size_t(i)], i));
    }
    HostBatch hb = make_host_batch(systems, model.host_cfg);
    std::shared_ptr<const SpectralBatch> sb;
    if (model.with_phi) {
      auto [blocks, bases] = cache->fetch(batch_idx, threads);
      sb = std::make_shared<const SpectralBatch>(
          assemble_spectral_batch(std::move(blocks), std::move(bases), model.phi_cfg.k));
    }
    Tape tape;
    ForwardResult fr = phi_forward(tape, hb, model.host, model.with_phi ? &model.alpha : nullptr,
                                   model.host_cfg, model.phi_cfg, sb);
    BatchAccum acc;
    accumulate_graph_metrics(fr, targets, hb.node_offsets, model.with_phi, acc);
    out.mae += acc.abs_err;
    out.l_net += acc.l_net;
    out.es_mean += acc.es;
    out.net_charge += acc.net;
    out.count += acc.count;
    if (model.with_phi) {
      // Per-molecule PDE residual ||L phi - rho|| from the forward values.
      const auto& phi_v = fr.state.phi.data();
      const auto& rho_v = fr.state.rho.data();
      for (int g = 0; g < fr.sb->n_graphs(); ++g) {
        const SparseSym& L = fr.sb->lap.blocks[size_t(g)];
        const int off = fr.sb->node_offsets[size_t(g)];
        std::vector<double> y(size_t(L.n), 0.0);
        L.multiply(phi_v.data() + off, y.data());
        double sq = 0.0;
        for (int i = 0; i < L.n; ++i) {
          const double r = y[size_t(i)] - rho_v[size_t(off + i)];
          sq += r * r;
        }
        pde_sum += std::sqrt(sq);
      }
    }
  }
  const double n = double(out.count);
  out.mae /= n;
  out.l_pde = pde_sum / n;
  out.l_net /= n;
  out.es_mean /= n;
  out.net_charge /= n;
  return out;
}

HyperSearchResult hyper_search(const TrainConfig& base, const std::vector<AtomicSystem>& dataset,
                               const DataSplit& split, int budget, uint64_t seed) {
  if (budget < 1) throw std::invalid_argument("hyper_search: budget must be >= 1");
  static const int k_grid[] = {3, 5, 7, 9, 10, 15};
  static const double w_grid[] = {1e-4, 1e-3, 1e-2, 1e-1, 5e-1};

  HyperSearchResult out;
  std::vector<double> scores;
  for (int t = 0; t < budget; ++t) {
    Rng r = derive_rng(seed, "hyper.trial", uint64_t(t));
    TrainConfig cfg = base;
    cfg.with_phi = true;
    cfg.phi.k = k_grid[r.uniform_int(0, 5)];
    cfg.phi.beta = w_grid[r.uniform_int(0, 4)];
    cfg.phi.gamma = w_grid[r.uniform_int(0, 4)];
    TrainResult tr = train_run(cfg, dataset, split);
    HyperTrial trial;
    trial.k = cfg.phi.k;
    trial.beta = cfg.phi.beta;
    trial.gamma = cfg.phi.gamma;
    trial.val_mae = tr.best_val_mae;
    out.trials.push_back(trial);
    scores.push_back(-tr.best_val_mae);  // higher is better for the expected-best curve
  }
  out.evp = evp_curve(scores, budget);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint IO: versioned binary, shape headers, config echo.

namespace {

constexpr char kMagic[8] = {'P', 'H', 'I', 'M', 'D', 'L', '0', '1'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!f) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const std::string& config_echo) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  f.write(kMagic, sizeof kMagic);
  put(f, kVersion);
  put(f, uint64_t(config_echo.size()));
  f.write(config_echo.data(), int64_t(config_echo.size()));
  put(f, uint8_t(model.with_phi ? 1 : 0));
  put(f, int32_t(model.host_cfg.feature_width));
  put(f, int32_t(model.host_cfg.n_layers));
  put(f, int32_t(model.host_cfg.n_rbf));
  put(f, model.host_cfg.cutoff);
  put(f, int32_t(model.host_cfg.max_neighbors));
  put(f, int32_t(model.host_cfg.z_max));
  put(f, int32_t(model.phi_cfg.k));
  put(f, model.phi_cfg.beta);
  put(f, model.phi_cfg.gamma);
  put(f, int32_t(model.phi_cfg.kernel_size));
  put(f, int32_t(model.phi_cfg.hidden_channels));
  auto params = model_parameters(model);
  put(f, uint32_t(params.size()));
  for (const Tensor* p : params) {
    put(f, uint32_t(p->rank()));
    for (int d = 0; d < p->rank(); ++d) put(f, uint32_t(p->dim(d)));
    f.write(reinterpret_cast<const char*>(p->data().data()),
            int64_t(p->numel()) * int64_t(sizeof(double)));
  }
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path, std::string* config_echo) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, sizeof magic);
  if (!f || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t version = get<uint32_t>(f);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const uint64_t echo_len = get<uint64_t>(f);
  std::string echo(echo_len, '\0');
  f.read(echo.data(), int64_t(echo_len));
  if (!f) throw std::runtime_error("checkpoint: truncated config echo");
  if (config_echo) *config_echo = echo;

  Model m;
  m.with_phi = get<uint8_t>(f) != 0;
  m.host_cfg.feature_width = get<int32_t>(f);
  m.host_cfg.n_layers = get<int32_t>(f);
  m.host_cfg.n_rbf = get<int32_t>(f);
  m.host_cfg.cutoff = get<double>(f);
  m.host_cfg.max_neighbors = get<int32_t>(f);
  m.host_cfg.z_max = get<int32_t>(f);
  m.phi_cfg.k = get<int32_t>(f);
  m.phi_cfg.beta = get<double>(f);
  m.phi_cfg.gamma = get<double>(f);
  m.phi_cfg.kernel_size = get<int32_t>(f);
  m.phi_cfg.hidden_channels = get<int32_t>(f);
  m.host_cfg.validate();
  m.phi_cfg.validate();
  m.host = HostParams::zeros(m.host_cfg);
  m.alpha = AlphaNetParams::zeros(m.host_cfg.feature_width, m.phi_cfg);
  std::vector<Tensor*> params = m.host.parameters();
  if (m.with_phi) {
    auto ap = m.alpha.parameters();
    params.insert(params.end(), ap.begin(), ap.end());
  }
  const uint32_t n_tensors = get<uint32_t>(f);
  if (n_tensors != params.size())
    throw std::runtime_error("checkpoint: expected " + std::to_string(params.size()) +
                             " tensors, found " + std::to_string(n_tensors));
  for (Tensor* p : params) {
    const uint32_t rank = get<uint32_t>(f);
    if (int(rank) != p->rank()) throw std::runtime_error("checkpoint: tensor rank mismatch");
    for (int d = 0; d < p->rank(); ++d) {
      const uint32_t dim = get<uint32_t>(f);
      if (int(dim) != p->dim(d)) throw std::runtime_error("checkpoint: tensor shape mismatch");
    }
    auto& data = p->mutable_data();
    f.read(reinterpret_cast<char*>(data.data()), int64_t(data.size()) * int64_t(sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint: truncated tensor data");
  }
  m.host.set_requires_grad(true);
  if (m.with_phi) m.alpha.set_requires_grad(true);
  return m;
}

}  // namespace phi
