#include "phi/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "phi/bench.hpp"
#include "phi/datagen.hpp"
#include "phi/md.hpp"
#include "phi/oracles.hpp"
#include "phi/system.hpp"
#include "phi/tensor.hpp"
#include "phi/trainer.hpp"
#include "phi/util.hpp"

namespace phi {

namespace {

namespace fs = std::filesystem;

// Records every file written under the run's output directory so the
// manifest can list them all with content hashes.
struct ArtifactWriter {
  std::string dir;
  std::vector<std::string> rel;
  void put(const std::string& rel_path, const std::string& content) {
    write_text_file(dir + "/" + rel_path, content);
    rel.push_back(rel_path);
  }
  void note(const std::string& rel_path) { rel.push_back(rel_path); }
};

std::string resolve(const std::string& out_dir, const std::string& path) {
  return fs::path(path).is_absolute() ? path : out_dir + "/" + path;
}

HostConfig host_from(const Config& c) {
  HostConfig h;
  h.feature_width = c.get_int("host.feature_width");
  h.n_layers = c.get_int("host.n_layers");
  h.n_rbf = c.get_int("host.n_rbf");
  h.cutoff = c.get_double("host.cutoff");
  h.max_neighbors = c.get_int("host.max_neighbors");
  h.z_max = c.get_int("host.z_max");
  return h;
}

PhiConfig phi_from(const Config& c) {
  PhiConfig p;
  p.k = c.get_int("phi.k");
  p.beta = c.get_double("phi.beta");
  p.gamma = c.get_double("phi.gamma");
  p.kernel_size = c.get_int("phi.kernel_size");
  p.hidden_channels = c.get_int("phi.hidden_channels");
  return p;
}

Ablation ablation_from(const Config& c) {
  const std::string s = c.get("train.ablation");
  if (s == "none") return Ablation::None;
  if (s == "random-laplacian") return Ablation::RandomLaplacian;
  if (s == "no-residual") return Ablation::NoResidual;
  throw ConfigError(
      "config key 'train.ablation': expected none, random-laplacian, or no-residual, got '" + s +
      "'");
}

TrainConfig train_from(const Config& c) {
  TrainConfig t;
  t.host = host_from(c);
  t.phi = phi_from(c);
  t.with_phi = c.get_bool("train.with_phi");
  t.epochs = c.get_int("train.epochs");
  t.batch_size = c.get_int("train.batch_size");
  t.lr = c.get_double("train.lr");
  t.grad_clip = c.get_double("train.grad_clip");
  t.seed = c.get_u64("seed");
  t.data_fraction = c.get_double("train.data_fraction");
  t.ablation = ablation_from(c);
  t.zero_alpha_init = c.get_bool("train.zero_alpha_init");
  t.threads = c.get_int("threads");
  return t;
}

std::vector<AtomicSystem> load_dataset(const Config& c, const std::string& out_dir) {
  const std::string path = resolve(out_dir, c.get("data.path"));
  std::vector<AtomicSystem> systems = parse_xyz(read_text_file(path));
  if (systems.empty()) throw ConfigError("dataset '" + path + "' is empty");
  return systems;
}

const std::vector<int>& pick_split(const DataSplit& split, const std::string& which) {
  if (which == "train") return split.train;
  if (which == "val") return split.val;
  if (which == "test") return split.test;
  throw ConfigError("config key 'eval.split': expected train, val, or test, got '" + which + "'");
}

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  Table t;
  t.columns = {"epoch", "split", "mae", "l_pde", "l_net", "es_mean", "net_charge"};
  for (const EpochMetrics& m : history) {
    const std::vector<std::string> aux = {format_double(m.l_pde), format_double(m.l_net),
                                          format_double(m.es_mean), format_double(m.net_charge)};
    t.rows.push_back({std::to_string(m.epoch), "train", format_double(m.train_mae), aux[0], aux[1],
                      aux[2], aux[3]});
    t.rows.push_back({std::to_string(m.epoch), "val", format_double(m.val_mae), aux[0], aux[1],
                      aux[2], aux[3]});
  }
  return to_csv(t);
}

int cmd_gen_data(const Config& c, ArtifactWriter& aw) {
  SyntheticSpec ss;
  ss.n_molecules = c.get_int("data.n_molecules");
  ss.atoms_min = c.get_int("data.atoms_min");
  ss.atoms_max = c.get_int("data.atoms_max");
  ss.box = c.get_double("data.box");
  ss.seed = c.get_u64("seed");
  const std::string scheme = c.get("data.charge_scheme");
  if (scheme == "neutral-pairs")
    ss.charge_scheme = ChargeScheme::NeutralPairs;
  else if (scheme == "random-neutralized")
    ss.charge_scheme = ChargeScheme::RandomNeutralized;
  else
    throw ConfigError(
        "config key 'data.charge_scheme': expected neutral-pairs or random-neutralized, got '" +
        scheme + "'");
  const std::vector<AtomicSystem> mols = gen_point_charge_set(ss, c.get_int("threads"));
  aw.put("dataset.xyz", write_xyz(mols));
  std::cout << "gen-data: wrote " << mols.size() << " molecules to " << aw.dir << "/dataset.xyz\n";
  return 0;
}

int cmd_train(const Config& c, ArtifactWriter& aw) {
  const std::vector<AtomicSystem> data = load_dataset(c, aw.dir);
  const TrainConfig tc = train_from(c);
  const DataSplit split = split_dataset(int(data.size()), tc.seed);
  TrainResult tr = train_run(tc, data, split);
  aw.put("metrics.csv", metrics_csv(tr.history));
  save_checkpoint(aw.dir + "/model.ckpt", tr.best, c.echo());
  aw.note("model.ckpt");
  std::cout << "train: best val mae " << format_double(tr.best_val_mae) << " at epoch "
            << tr.best_epoch << " (" << tr.n_train_used << " training molecules, "
            << tr.n_eigensolves << " eigensolves)\n";
  return 0;
}

int cmd_eval(const Config& c, ArtifactWriter& aw) {
  Model model = load_checkpoint(resolve(aw.dir, c.get("eval.checkpoint")));
  const std::vector<AtomicSystem> data = load_dataset(c, aw.dir);
  const DataSplit split = split_dataset(int(data.size()), c.get_u64("seed"));
  const std::string which = c.get("eval.split");
  const std::vector<int>& idx = pick_split(split, which);
  const EvalMetrics em =
      evaluate(model, data, idx, c.get_int("train.batch_size"), nullptr, c.get_int("threads"));
  Table t;
  t.columns = {"split", "count", "mae", "l_pde", "l_net", "es_mean", "net_charge"};
  t.rows.push_back({which, std::to_string(em.count), format_double(em.mae),
                    format_double(em.l_pde), format_double(em.l_net), format_double(em.es_mean),
                    format_double(em.net_charge)});
  aw.put("eval_report.csv", to_csv(t));
  std::cout << to_text(t);
  return 0;
}

int cmd_verify(const Config& c, ArtifactWriter& aw) {
  const std::vector<VerifyCheck> checks = run_verification_checks(c.get_u64("seed"));
  const Table t = checks_table(checks);
  const int passed = count_passes(t);
  const int total = int(t.rows.size());
  const std::string footer = "passed " + std::to_string(passed) + "/" + std::to_string(total) + "\n";
  aw.put("verify_report.csv", emit_report(t, ReportFormat::Csv));
  aw.put("verify_report.txt", emit_report(t, ReportFormat::Text) + footer);
  std::cout << emit_report(t, ReportFormat::Text) << footer;
  return passed == total ? 0 : 2;
}

int cmd_bench(const Config& c, ArtifactWriter& aw) {
  BenchOptions bo;
  bo.reps = c.get_int("bench.reps");
  bo.memory_budget = int64_t(c.get_u64("bench.budget"));
  bo.parallel_blocks = c.get_int("bench.parallel_blocks");
  bo.host.cutoff = c.get_double("host.cutoff");
  bo.host.max_neighbors = c.get_int("host.max_neighbors");
  // The sweep's lean default widths stand unless explicitly overridden.
  if (c.is_set("host.feature_width")) bo.host.feature_width = c.get_int("host.feature_width");
  if (c.is_set("host.n_layers")) bo.host.n_layers = c.get_int("host.n_layers");
  if (c.is_set("host.n_rbf")) bo.host.n_rbf = c.get_int("host.n_rbf");
  const std::vector<int> n_list = c.get_int_list("bench.n");
  const std::vector<int> k_list = c.get_int_list("bench.k");
  const std::vector<BenchRecord> recs = scale_sweep(n_list, k_list, bo);
  aw.put("bench.csv", bench_csv(recs));
  int ooms = 0;
  for (const BenchRecord& r : recs) ooms += (r.status == BenchStatus::Oom);
  for (const std::string phase : {"laplacian", "eigensolve", "forward"})
    for (int k : k_list) {
      try {
        std::cout << "bench: " << phase << " k=" << k << " log-log memory slope "
                  << format_double(memory_scaling_slope(recs, phase, k)) << "\n";
      } catch (const std::invalid_argument&) {
        // fewer than two usable points for this (phase, k); nothing to report
      }
    }
  std::cout << "bench: " << recs.size() << " records, " << ooms << " over budget\n";
  return 0;
}

int cmd_md(const Config& c, ArtifactWriter& aw) {
  Model model = load_checkpoint(resolve(aw.dir, c.get("md.checkpoint")));
  const std::vector<AtomicSystem> data = load_dataset(c, aw.dir);
  const int idx = c.get_int("md.molecule");
  if (idx < 0 || idx >= int(data.size()))
    throw ConfigError("config key 'md.molecule': index " + std::to_string(idx) +
                      " outside dataset of " + std::to_string(data.size()) + " molecules");
  const std::string ms = c.get("md.mode");
  ForceMode mode;
  if (ms == "autodiff")
    mode = ForceMode::Autodiff;
  else if (ms == "fd-oracle")
    mode = ForceMode::FdOracle;
  else
    throw ConfigError("config key 'md.mode': expected autodiff or fd-oracle, got '" + ms + "'");
  const int steps = c.get_int("md.steps");
  const double dt = c.get_double("md.dt");
  AtomicSystem start = data[idx];
  if (c.get_bool("md.relax")) {
    const RelaxResult rr = relax_structure(start, model, mode);
    start = rr.system;
    std::cout << "relax: " << rr.iterations << " iterations, fmax "
              << format_double(rr.fmax) << " eV/A\n";
  }
  MDRun run = nve_run(start, model, steps, dt, mode, c.get_double("md.temperature"),
                      c.get_u64("seed"), c.get_int("md.frame_stride"));
  aw.put("trajectory.xyz", trajectory_xyz(start, run));
  aw.put("drift.csv", drift_csv(run.state.trace));
  const DriftReport dr = energy_drift(run.state.trace);
  Table t;
  t.columns = {"steps", "dt_fs", "max_drift", "slope_per_ps", "slope_stderr"};
  t.rows.push_back({std::to_string(steps), format_double(dt), format_double(dr.max_drift),
                    format_double(dr.slope), format_double(dr.slope_stderr)});
  aw.put("md_report.csv", to_csv(t));
  std::cout << "md: " << steps << " steps at " << format_double(dt) << " fs; max |drift| "
            << format_double(dr.max_drift) << ", slope " << format_double(dr.slope)
            << "/ps (stderr " << format_double(dr.slope_stderr) << ")\n";
  return 0;
}

int cmd_hyper(const Config& c, ArtifactWriter& aw) {
  const std::vector<AtomicSystem> data = load_dataset(c, aw.dir);
  TrainConfig base = train_from(c);
  if (!c.is_set("train.epochs")) base.epochs = 20;  // short-budget trainings by default
  const DataSplit split = split_dataset(int(data.size()), base.seed);
  const HyperSearchResult hs =
      hyper_search(base, data, split, c.get_int("hyper.budget"), c.get_u64("seed"));
  Table trials;
  trials.columns = {"trial", "k", "beta", "gamma", "val_mae"};
  double best = hs.trials.empty() ? 0.0 : hs.trials[0].val_mae;
  for (size_t i = 0; i < hs.trials.size(); ++i) {
    const HyperTrial& tr = hs.trials[i];
    best = std::min(best, tr.val_mae);
    trials.rows.push_back({std::to_string(i), std::to_string(tr.k), format_double(tr.beta),
                           format_double(tr.gamma), format_double(tr.val_mae)});
  }
  aw.put("trials.csv", to_csv(trials));
  Table evp;
  evp.columns = {"n", "evp"};
  for (size_t i = 0; i < hs.evp.size(); ++i)
    evp.rows.push_back({std::to_string(i + 1), format_double(hs.evp[i])});
  aw.put("evp.csv", to_csv(evp));
  std::cout << "hyper-search: " << hs.trials.size() << " trials; best val mae "
            << format_double(best) << "; EVP(" << hs.evp.size() << ") = "
            << format_double(hs.evp.empty() ? 0.0 : hs.evp.back()) << "\n";
  return 0;
}

}  // namespace

int run_command(const CliConfig& cli) {
  try {
    Config cfg;
    if (!cli.config_path.empty()) cfg.load_file(cli.config_path);
    for (const std::string& kv : cli.overrides) cfg.apply_override(kv);
    fs::create_directories(cli.out_dir);
    ArtifactWriter aw{cli.out_dir, {}};
    aw.put("config_echo.cfg", "command = " + cli.command + "\n" + cfg.echo());

    int code = 0;
    if (cli.command == "gen-data")
      code = cmd_gen_data(cfg, aw);
    else if (cli.command == "train")
      code = cmd_train(cfg, aw);
    else if (cli.command == "eval")
      code = cmd_eval(cfg, aw);
    else if (cli.command == "verify")
      code = cmd_verify(cfg, aw);
    else if (cli.command == "bench")
      code = cmd_bench(cfg, aw);
    else if (cli.command == "md")
      code = cmd_md(cfg, aw);
    else if (cli.command == "hyper-search")
      code = cmd_hyper(cfg, aw);
    else
      throw ConfigError("unknown command '" + cli.command + "'");

    write_text_file(cli.out_dir + "/manifest.txt", make_manifest(cli.out_dir, aw.rel));
    std::cout << "wrote " << cli.out_dir << "/manifest.txt (" << aw.rel.size() << " artifacts)\n";
    return code;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::bad_alloc&) {
    std::cerr << "numerical failure: allocation limit exceeded\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"self-supervised spectral electrostatics for message-passing potentials"};
  app.require_subcommand(1);
  CliConfig cli;
  const char* env = std::getenv("PHI_OUT_DIR");
  cli.out_dir = (env && *env) ? env : "out";

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "generate the synthetic point-charge dataset"},
      {"train", "train the potential, optionally with the electrostatics plugin"},
      {"eval", "evaluate a checkpoint on a dataset split"},
      {"verify", "run the analytic oracle suite and print a pass/fail table"},
      {"bench", "memory/runtime scaling sweep over chain sizes"},
      {"md", "NVE molecular dynamics from a trained checkpoint"},
      {"hyper-search", "random hyperparameter search with expected-best-score curve"},
  };
  for (const auto& [name, desc] : commands) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("-c,--config", cli.config_path, "file of `key = value` lines");
    sub->add_option("-s,--set", cli.overrides, "override, e.g. --set phi.k=4 (repeatable)");
    sub->add_option("-o,--out", cli.out_dir, "output directory (default $PHI_OUT_DIR or ./out)");
    sub->callback([&cli, name = name] { cli.command = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  return run_command(cli);
}

}  // namespace phi
