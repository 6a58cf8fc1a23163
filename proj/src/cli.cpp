#include "dif/cli.hpp"

#include "dif/dataset.hpp"
#include "dif/error.hpp"
#include "dif/eval.hpp"
#include "dif/hyper.hpp"
#include "dif/train.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

namespace dif {

namespace {

/// Bad flag values found after parsing; reported like parse errors.
class UsageError : public Error {
 public:
  using Error::Error;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<int> parse_envs(SystemId system, const std::string& text) {
  std::vector<int> envs;
  const auto names = env_names(system);
  for (const auto& item : split(text, ',')) {
    int e = -1;
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k] == item) e = static_cast<int>(k);
    if (e < 0) {
      try {
        std::size_t pos = 0;
        e = std::stoi(item, &pos);
        if (pos != item.size()) e = -1;
      } catch (const std::exception&) {
        e = -1;
      }
    }
    if (e < 0 || static_cast<std::size_t>(e) >= names.size())
      throw UsageError("--envs: unknown environment '" + item + "'");
    envs.push_back(e);
  }
  if (envs.empty()) throw UsageError("--envs: empty list");
  return envs;
}

/// Training flags: one per config key, spelled with dashes.
struct TrainFlags {
  std::string config;
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd, bool with_weights = true) {
    cmd->add_option("--config", config, "key=value config file; flags override it");
    for (const auto& key : config_keys()) {
      if (!with_weights && (key.rfind("lambda_", 0) == 0 || key == "lr" || key == "seed")) continue;
      std::string flag = key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      cmd->add_option_function<std::string>(
          "--" + flag, [this, key](const std::string& v) { values[key] = v; },
          "config key " + key + " (see README for the default)");
    }
  }

  TrainConfig build() const {
    TrainConfig cfg;
    std::map<std::string, std::string> merged;
    if (!config.empty()) merged = read_config_file(config);
    for (const auto& [k, v] : values) merged[k] = v;
    // A method given anywhere must be applied before weight overrides.
    if (auto it = merged.find("method"); it != merged.end()) apply_config(cfg, {{"method", it->second}});
    merged.erase("method");
    apply_config(cfg, merged);
    return cfg;
  }
};

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Invariant function learning toolkit: data generation, training, evaluation and benchmarks", "dif"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a multi-environment dataset");
  std::string system_name_flag, out_path, envs_text;
  std::uint64_t seed = 0;
  GenConfig gen_cfg;
  gen->add_option("--system", system_name_flag, "pendulum, lotka_volterra or sir")
      ->required()
      ->check(CLI::IsMember({"pendulum", "lotka_volterra", "sir"}));
  gen->add_option("--seed", seed, "root seed")->capture_default_str();
  gen->add_option("--out", out_path, "dataset directory")->required();
  gen->add_option("--envs", envs_text, "comma list of environment names or indices (default: all four)");
  gen->add_option("--tc-factor", gen_cfg.tc_factor, "input-length factor, T_c = floor(T / factor); 0 = system default")
      ->capture_default_str();
  gen->add_option("--n-train", gen_cfg.n_train, "training samples")->capture_default_str();
  gen->add_option("--n-test", gen_cfg.n_test, "test samples")->capture_default_str();
  gen->add_option("--steps", gen_cfg.T, "points per trajectory")->capture_default_str();
  gen->add_option("--dt", gen_cfg.dt, "time step")->capture_default_str();
  gen->add_option("--noise", gen_cfg.noise_std, "observation noise std (relative)")->capture_default_str();

  // train
  auto* trn = app.add_subcommand("train", "Train a model on a dataset");
  std::string dataset_path;
  TrainFlags train_flags;
  trn->add_option("--dataset", dataset_path, "dataset directory")->required();
  trn->add_option("--out", out_path, "run directory (train.log, checkpoints, model.ckpt)")->required();
  train_flags.attach(trn);

  // eval
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset's test split");
  std::string ckpt_path;
  evl->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  evl->add_option("--dataset", dataset_path, "dataset directory")->required();
  evl->add_option("--out", out_path, "write the key=value record here as well");

  // sweep
  auto* swp = app.add_subcommand("sweep", "Random hyperparameter search");
  TrainFlags sweep_flags;
  std::size_t candidates = 8, workers = 1;
  bool linear_uniform = false;
  swp->add_option("--dataset", dataset_path, "dataset directory")->required();
  swp->add_option("--out", out_path, "sweep directory")->required();
  swp->add_option("--seed", seed, "sweep seed; candidate i trains with a seed derived from it")->capture_default_str();
  swp->add_option("--candidates", candidates, "number of candidates")->capture_default_str();
  swp->add_option("--workers", workers, "candidates trained in parallel")->capture_default_str();
  swp->add_flag("--linear-uniform", linear_uniform, "draw loss weights uniformly instead of log-uniformly");
  sweep_flags.attach(swp, false);

  // bench-hypernet
  auto* bench = app.add_subcommand("bench-hypernet", "Time the three derivative-net execution modes");
  BenchConfig bench_cfg;
  std::string modes_text = "all";
  bench->add_option("--modes", modes_text, "all or comma list of non_vectorized,copy_based,reference_based")
      ->capture_default_str();
  bench->add_option("--iters", bench_cfg.iterations, "timed iterations per mode")->capture_default_str();
  bench->add_option("--batch", bench_cfg.batch, "networks per step")->capture_default_str();
  bench->add_option("--points", bench_cfg.points, "states per network per step")->capture_default_str();
  bench->add_option("--dim", bench_cfg.spec.dim, "state dimension")->capture_default_str();
  bench->add_option("--deriv-depth", bench_cfg.spec.depth, "derivative-net linear layers")->capture_default_str();
  bench->add_option("--deriv-width", bench_cfg.spec.width, "derivative-net hidden width")->capture_default_str();
  bench->add_option("--seed", seed, "input seed")->capture_default_str();
  bench->add_option("--out", out_path, "CSV record path");

  // export-sr
  auto* xsr = app.add_subcommand("export-sr", "Export (state, invariant derivative) rows for symbolic regression");
  xsr->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  xsr->add_option("--dataset", dataset_path, "dataset directory")->required();
  xsr->add_option("--out", out_path, "CSV path")->required();

  // export-plots
  auto* xpl = app.add_subcommand("export-plots", "Export trajectory overlays and sweep quantiles as CSV");
  std::string sweep_dirs;
  std::size_t max_samples = 16;
  xpl->add_option("--ckpt", ckpt_path, "checkpoint file (trajectory overlays)");
  xpl->add_option("--dataset", dataset_path, "dataset directory (trajectory overlays)");
  xpl->add_option("--sweep", sweep_dirs, "comma list of sweep directories (quantiles)");
  xpl->add_option("--max-samples", max_samples, "test samples in trajectories.csv")->capture_default_str();
  xpl->add_option("--out", out_path, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto used = app.get_subcommands();
    err << (used.empty() ? app.help() : used.front()->help());
    return 1;
  }

  CLI::App* cmd = app.get_subcommands().front();
  // Phase 1: assemble configuration. Contract failures here are usage errors.
  TrainConfig train_cfg;
  try {
    if (cmd == gen) {
      gen_cfg.system = parse_system(system_name_flag);
      gen_cfg.seed = seed;
      if (!envs_text.empty()) gen_cfg.envs = parse_envs(gen_cfg.system, envs_text);
    } else if (cmd == trn) {
      train_cfg = train_flags.build();
    } else if (cmd == swp) {
      train_cfg = sweep_flags.build();
      if (candidates == 0) throw UsageError("--candidates must be positive");
    } else if (cmd == bench) {
      bench_cfg.modes = parse_modes(modes_text);
      bench_cfg.seed = seed;
    } else if (cmd == xpl) {
      if (ckpt_path.empty() != dataset_path.empty()) throw UsageError("--ckpt and --dataset go together");
      if (ckpt_path.empty() && sweep_dirs.empty()) throw UsageError("give --ckpt/--dataset, --sweep, or both");
    }
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n\n" << cmd->help();
    return 1;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << cmd->help();
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  // Phase 2: run.
  try {
    if (cmd == gen) {
      const Dataset data = generate_dataset(gen_cfg);
      save_dataset(data, out_path);
      out << "wrote " << data.train.size() << " train and " << data.test.size() << " test samples to " << out_path
          << " (T=" << data.meta.T << ", T_c=" << data.meta.T_c << ")\n";
    } else if (cmd == trn) {
      const Dataset data = load_dataset(dataset_path);
      const auto reports = train(data, train_cfg, out_path);
      out << reports.back().to_line() << "\n"
          << "wrote " << (std::filesystem::path(out_path) / "model.ckpt").string() << "\n";
    } else if (cmd == evl) {
      const Dataset data = load_dataset(dataset_path);
      const Predictor p = Predictor::from_checkpoint(load_checkpoint(ckpt_path));
      if (p.system != data.meta.system) throw ContractError("checkpoint and dataset systems differ");
      const std::string record = evaluate(p, data).to_record();
      out << record;
      if (!out_path.empty()) write_text(out_path, record);
    } else if (cmd == swp) {
      const Dataset data = load_dataset(dataset_path);
      SweepConfig sc;
      sc.method = train_cfg.method;
      sc.candidates = candidates;
      sc.seed = seed;
      sc.workers = workers == 0 ? std::max(1u, std::thread::hardware_concurrency()) : workers;
      sc.log_uniform = !linear_uniform;
      sc.base = train_cfg;
      const auto records = sweep(data, sc, out_path, [&](const SweepRecord& r) {
        out << "candidate " << r.index << (r.ok ? " ok metric=" + format_double(r.metric) : " failed: " + r.error)
            << "\n"
            << std::flush;
      });
      const SweepSummary s = summarize(sc.method, records);
      out << "median " << s.metric << "=" << format_double(s.median) << " (" << s.values.size() << " ok, "
          << s.failures << " failed)\n";
    } else if (cmd == bench) {
      const BenchReport report = run_bench(bench_cfg);
      out << format_bench_table(report);
      if (!out_path.empty()) write_bench_record(report, out_path);
    } else if (cmd == xsr) {
      const Dataset data = load_dataset(dataset_path);
      const Predictor p = Predictor::from_checkpoint(load_checkpoint(ckpt_path));
      const std::size_t rows = export_sr_data(p, data, out_path);
      out << "wrote " << rows << " rows to " << out_path << "\n";
    } else if (cmd == xpl) {
      if (!ckpt_path.empty()) {
        const Dataset data = load_dataset(dataset_path);
        const Predictor p = Predictor::from_checkpoint(load_checkpoint(ckpt_path));
        export_plot_data(p, data, out_path, max_samples);
      }
      if (!sweep_dirs.empty()) {
        std::vector<SweepRecord> all;
        for (const auto& dir : split(sweep_dirs, ',')) {
          auto rs = read_sweep_records(std::filesystem::path(dir) / "candidates.csv");
          all.insert(all.end(), rs.begin(), rs.end());
        }
        export_sweep_plot_data(all, out_path);
      }
      out << "wrote plot data to " << out_path << "\n";
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace dif
