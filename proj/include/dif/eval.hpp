#pragma once

#include "dif/dataset.hpp"
#include "dif/dyn.hpp"
#include "dif/nets.hpp"
#include "dif/train.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dif {

enum class Which { Invariant, Full };

/// Per-dimension affine map between physical and normalized states.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> std;
};

/// A trained model plus what is needed to run it on raw samples.
struct Predictor {
  DifModel model;
  Normalization norm;
  std::size_t T_c = 0;
  SystemId system = SystemId::Pendulum;

  static Predictor from_checkpoint(const Checkpoint& ckpt);
  static Predictor from_trainer(const Trainer& trainer, const DatasetMeta& meta);

  /// FunctionVector of f_c (Invariant) or f (Full) for one sample's past window.
  std::vector<double> function_vector(const Sample& sample, Which which) const;
  /// Row-major [N, m] FunctionVectors for many samples, encoded in chunks.
  std::vector<double> function_vectors(const std::vector<Sample>& samples, Which which) const;
  /// Physical-units vector field of the decoded derivative network.
  VectorField field(const Sample& sample, Which which) const;
};

/// Wraps a FunctionVector as a vector field in physical units: normalize the
/// state, run the derivative net, rescale by the per-dimension std.
VectorField decoded_field(const Layout& layout, std::vector<double> function_vector, const Normalization& norm);

/// Supplies the vector field used to forecast a sample.
using FieldSource = std::function<VectorField(const Sample&, Which)>;
FieldSource model_fields(const Predictor& predictor);
/// Ground-truth fields: the sample's own environment for Full, the shared invariant field for Invariant.
FieldSource oracle_fields(SystemId system);

/// Integrates from the sample's column-0 state over `grid`. Throws IntegrationDiverged.
Trajectory forecast(const FieldSource& fields, const Sample& sample, Which which, const TimeGrid& grid);

struct EvalMatrix {
  double nrmse_fc_on_Xc = 0.0;
  double nrmse_f_on_Xc = 0.0;
  double nrmse_fc_on_X = 0.0;
  double nrmse_f_on_X = 0.0;
  std::size_t samples = 0;
  /// Samples whose invariant / full forecast diverged; they are left out of the affected cells.
  std::size_t excluded_fc = 0;
  std::size_t excluded_f = 0;

  double exclusion_rate() const;
  /// f_c beats f on invariant targets and f beats f_c on full targets.
  bool invariant_ordering() const { return nrmse_fc_on_Xc < nrmse_f_on_Xc; }
  bool full_ordering() const { return nrmse_f_on_X < nrmse_fc_on_X; }

  std::string to_record() const;
  static EvalMatrix from_record(const std::string& text);
};

/// The four NRMSE cells over a test set (all T columns). Empty sets throw ContractError.
EvalMatrix evaluate(const FieldSource& fields, const std::vector<Sample>& test, const TimeGrid& grid);
EvalMatrix evaluate(const Predictor& predictor, const Dataset& data);

// --- sweeps -------------------------------------------------------------------------

struct SweepConfig {
  Method method = Method::DIF;
  std::size_t candidates = 8;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  bool log_uniform = true;
  /// Everything except weights, lr and seed, which each candidate draws.
  TrainConfig base;
};

struct SweepRecord {
  Method method = Method::DIF;
  std::size_t index = 0;
  std::uint64_t seed = 0;
  HyperSample hyper;
  bool ok = false;
  std::string error;
  EvalMatrix eval;
  double metric = 0.0;
};

struct SweepSummary {
  Method method = Method::DIF;
  std::string metric;
  std::vector<double> values;
  std::size_t failures = 0;
  double min = 0.0, q25 = 0.0, median = 0.0, q75 = 0.0, max = 0.0;
};

/// Linear-interpolation quantile of an unsorted list (q in [0, 1]).
double quantile(std::vector<double> values, double q);
/// Quantiles over the successful records' metric values.
SweepSummary summarize(Method method, const std::vector<SweepRecord>& records);

/// Candidate `index` of a sweep: seed derive_seed(sweep seed, index), hyperparameters drawn from that seed.
SweepRecord run_candidate(const Dataset& data, const SweepConfig& cfg, std::size_t index,
                          const std::filesystem::path& out_dir = {});
/// Runs every candidate (workers in parallel); candidate failures are recorded, not thrown.
std::vector<SweepRecord> sweep(const Dataset& data, const SweepConfig& cfg, const std::filesystem::path& out_dir = {},
                               const std::function<void(const SweepRecord&)>& on_done = {});

void write_sweep_records(const std::vector<SweepRecord>& records, const std::filesystem::path& path);
std::vector<SweepRecord> read_sweep_records(const std::filesystem::path& path);
void write_sweep_summary(const SweepSummary& summary, const std::filesystem::path& path);

// --- exports ------------------------------------------------------------------------

/// One row per test sample and time column: sample,env,<invariant params>,<states>,d<state>_dt.
/// Derivatives are the decoded invariant field in physical units.
std::size_t export_sr_data(const Predictor& predictor, const Dataset& data, const std::filesystem::path& path);

/// Writes trajectories.csv (truth and both forecasts per sample and column) into `dir`.
void export_plot_data(const Predictor& predictor, const Dataset& data, const std::filesystem::path& dir,
                      std::size_t max_samples = 16);
/// Writes candidates.csv (every record) and quantiles.csv (one row per method) into `dir`.
void export_sweep_plot_data(const std::vector<SweepRecord>& records, const std::filesystem::path& dir);

}  // namespace dif
