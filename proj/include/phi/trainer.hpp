#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "phi/datagen.hpp"
#include "phi/electro.hpp"
#include "phi/host.hpp"

namespace phi {

enum class Ablation { None, RandomLaplacian, NoResidual };

struct TrainConfig {
  HostConfig host;
  PhiConfig phi;
  bool with_phi = true;
  int epochs = 200;
  int batch_size = 32;
  double lr = 1e-3;
  double grad_clip = 1e3;
  uint64_t seed = 0;
  double data_fraction = 1.0;  // one of {0.05, 0.25, 0.5, 1.0}
  Ablation ablation = Ablation::None;
  bool zero_alpha_init = false;  // start the charge head at exact zero output
  int threads = 1;
  void validate() const;
};

struct Model {
  HostConfig host_cfg;
  PhiConfig phi_cfg;
  bool with_phi = false;
  HostParams host;
  AlphaNetParams alpha;

  static Model init(const TrainConfig& cfg);
  std::vector<Tensor*> parameters();
};

// L = mean|e_hat - target| + beta * l_pde + gamma * mean(l_net).
Tensor total_loss(Tape& tape, const Tensor& e_hat, const std::vector<double>& targets,
                  const Tensor& l_pde, const Tensor& l_net, double beta, double gamma);

// Cosine decay from lr0 at epoch 0 to 1e-2 * lr0 at the final epoch.
double cosine_lr(double lr0, int epoch, int total_epochs);

// Scales gradients so the global norm is exactly max_norm when it exceeds
// it; returns the pre-clip norm.
double clip_gradients(std::vector<std::vector<double>>& grads, double max_norm);

class Adam {
 public:
  Adam(std::vector<Tensor*> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  // Applies one update from the tape's gradients at learning rate `lr`,
  // clipping the global gradient norm at `clip`.
  void step(Tape& tape, double lr, double clip);

 private:
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// Lazily filled per-molecule Laplacians and spectral bases, so shuffled
// batches never recompute an eigensolve.
class BasisCache {
 public:
  BasisCache(const std::vector<AtomicSystem>* data, const HostConfig& host, const PhiConfig& phi,
             Ablation ablation, uint64_t seed);
  // Blocks and bases for the given molecules, cache-filling as needed.
  std::pair<std::vector<SparseSym>, std::vector<SpectralBasis>> fetch(
      const std::vector<int>& indices, int threads);
  int64_t eigensolves() const { return solves_; }

 private:
  void fill(int index);
  const std::vector<AtomicSystem>* data_;
  HostConfig host_;
  PhiConfig phi_;
  Ablation ablation_;
  uint64_t seed_;
  std::vector<std::optional<std::pair<SparseSym, SpectralBasis>>> slots_;
  int64_t solves_ = 0;
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0;
  double train_mae = 0, val_mae = 0;
  double l_pde = 0, l_net = 0, es_mean = 0, net_charge = 0;
};

struct TrainResult {
  Model best;   // parameters at the lowest validation MAE
  Model last;   // parameters after the final epoch
  std::vector<EpochMetrics> history;
  int best_epoch = -1;
  double best_val_mae = 0;
  int n_train_used = 0;
  int64_t n_eigensolves = 0;  // cache fills; one per distinct molecule touched
};

TrainResult train_run(const TrainConfig& cfg, const std::vector<AtomicSystem>& dataset,
                      const DataSplit& split);

struct EvalMetrics {
  double mae = 0;
  double l_pde = 0;       // mean per-molecule residual norm
  double l_net = 0;       // mean per-molecule |sum rho|
  double es_mean = 0;     // mean per-molecule electrostatic energy
  double net_charge = 0;  // mean signed sum rho
  int count = 0;
};

EvalMetrics evaluate(Model& model, const std::vector<AtomicSystem>& dataset,
                     const std::vector<int>& indices, int batch_size, BasisCache* cache = nullptr,
                     int threads = 1);

struct HyperTrial {
  int k = 0;
  double beta = 0, gamma = 0;
  double val_mae = 0;
};

struct HyperSearchResult {
  std::vector<HyperTrial> trials;
  std::vector<double> evp;  // expected best (negated-MAE score) for n = 1..budget
};

// Random uniform draws from the paper grids, short-budget trainings.
HyperSearchResult hyper_search(const TrainConfig& base, const std::vector<AtomicSystem>& dataset,
                               const DataSplit& split, int budget, uint64_t seed);

// Versioned binary checkpoint of every parameter tensor plus a config echo.
void save_checkpoint(const std::string& path, const Model& model, const std::string& config_echo);
Model load_checkpoint(const std::string& path, std::string* config_echo = nullptr);

}  // namespace phi
