#pragma once

#include "dif/dataset.hpp"
#include "dif/error.hpp"
#include "dif/grad.hpp"
#include "dif/hyper.hpp"
#include "dif/nets.hpp"
#include "dif/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dif {

enum class Method { ERM, DIF, IRM, VREx };
std::string_view method_name(Method m);
Method parse_method(std::string_view name);

struct LossWeights {
  double lambda_c = 0.0;
  double lambda_dis = 0.0;
  /// Adversarial weight relative to lambda_c.
  double lambda_adv_ratio = 0.0;
  double lambda_irm = 0.0;
  double lambda_vrex = 0.0;

  double lambda_adv() const { return lambda_c * lambda_adv_ratio; }
};

/// Desk-scale DIF weights used when no weights are given.
LossWeights default_weights(Method m);

enum class LrSchedule { Constant, Cosine };
std::string_view schedule_name(LrSchedule s);
LrSchedule parse_schedule(std::string_view name);

struct TrainConfig {
  Method method = Method::DIF;
  std::size_t iterations = 5000;
  std::size_t batch = 32;
  double lr = 1e-3;
  /// Cosine anneals from lr towards zero over `iterations`.
  LrSchedule lr_schedule = LrSchedule::Cosine;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  LossWeights weights = default_weights(Method::DIF);
  /// Discriminator updates per main update.
  std::size_t disc_ratio = 1;
  /// Global-norm gradient clipping (0 disables).
  double clip_norm = 0.0;
  std::size_t log_every = 1;
  std::size_t checkpoint_every = 1000;
  ModelSpec model;
};

/// Applies key=value settings (config-file keys; '-' and '_' are interchangeable).
/// Unknown keys or malformed values throw ContractError. Setting `method`
/// resets the loss weights to that method's defaults unless weights are also given.
void apply_config(TrainConfig& cfg, const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);
/// Every key accepted by apply_config.
const std::vector<std::string>& config_keys();

struct StepReport {
  std::size_t iteration = 0;
  double loss_main = 0.0;
  double loss_inv = 0.0;
  double loss_disc_c = 0.0;
  double loss_disc_e = 0.0;
  double loss_adv = 0.0;
  double disc_acc_e = 0.0;
  double penalty = 0.0;
  std::vector<double> env_risks;

  std::string to_line() const;
  friend bool operator==(const StepReport&, const StepReport&) = default;
};

class TrainAborted : public Error {
 public:
  TrainAborted(const std::string& what, StepReport last) : Error(what), last_(std::move(last)) {}
  const StepReport& last() const { return last_; }

 private:
  StepReport last_;
};

// --- targets and losses -----------------------------------------------------------

/// Numerical derivative of every sample, divided per dimension by norm_std; d x T each.
std::vector<Eigen::MatrixXd> derivative_targets(const std::vector<Sample>& samples, const DatasetMeta& meta);

/// Mean over samples of the summed squared error; pred and target are [B, ...].
grad::Tensor sample_sq_error(const grad::Tensor& pred, const grad::Tensor& target);
/// Per-environment mean of each sample's summed squared error, [E] over `num_envs` classes.
grad::Tensor per_env_risks(const grad::Tensor& pred, const grad::Tensor& target, std::span<const int> env_class,
                           std::size_t num_envs);
/// Sum over environments of the squared derivative of the env risk w.r.t. a
/// scalar multiplier on the prediction, taken at 1.
grad::Tensor irm_penalty(const grad::Tensor& pred, const grad::Tensor& target, std::span<const int> env_class,
                         std::size_t num_envs);
/// Population variance of per-environment risks; needs at least two.
grad::Tensor vrex_penalty(const grad::Tensor& risks);

struct HyperSample {
  LossWeights weights;
  double lr = 1e-3;
};
/// Draws loss weights (log-uniform, or uniform when `log_uniform` is false) and a uniform learning rate.
HyperSample sample_hyperparams(Method method, Rng& rng, bool log_uniform = true);

// --- optimizer --------------------------------------------------------------------

class Adam {
 public:
  Adam(std::vector<grad::Tensor> params, double lr, double beta1, double beta2, double eps);
  /// Parameters absent from `grads` are treated as having zero gradient.
  void step(const grad::Gradients& grads, double clip_norm = 0.0);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  std::size_t steps() const { return t_; }

 private:
  std::vector<grad::Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

// --- trainer ----------------------------------------------------------------------

/// Model spec for a dataset: state dim and environment count from the metadata, widths from `base`.
ModelSpec model_spec_for(const DatasetMeta& meta, const ModelSpec& base);

class Trainer {
 public:
  Trainer(const Dataset& data, TrainConfig cfg);

  StepReport step();
  std::size_t iteration() const { return iteration_; }
  const DifModel& model() const { return model_; }
  DifModel& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  /// Learning rate used by step number `iteration` (1-based).
  double lr_at(std::size_t iteration) const;
  /// Checkpoint carrying the dataset normalization and training settings.
  Checkpoint checkpoint() const;

 private:
  struct Batch {
    grad::Tensor windows, states, targets;
    std::vector<int> labels;
  };
  Batch sample_batch();

  const Dataset& data_;
  TrainConfig cfg_;
  DifModel model_;
  HyperExecutor exec_full_, exec_inv_;
  Adam opt_main_, opt_disc_;
  Rng rng_;
  std::vector<std::vector<std::size_t>> by_class_;
  std::vector<std::vector<double>> states_, targets_;
  std::size_t iteration_ = 0;
};

/// Runs cfg.iterations steps. Writes train.log, periodic checkpoints and
/// model.ckpt into `out_dir` when it is non-empty. `on_step` sees every report.
std::vector<StepReport> train(const Dataset& data, const TrainConfig& cfg, const std::filesystem::path& out_dir,
                              const std::function<void(const StepReport&)>& on_step = {});

}  // namespace dif
