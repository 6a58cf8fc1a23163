#pragma once

#include "dif/dyn.hpp"
#include "dif/systems.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace dif {

/// One observed trajectory with its environment label. Test samples also
/// carry the invariant counterpart integrated from the same initial state.
struct Sample {
  Trajectory x;
  int env = 0;
  ParamSet params;
  std::optional<Trajectory> x_inv;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct DatasetMeta {
  SystemId system = SystemId::Pendulum;
  std::uint64_t seed = 0;
  std::size_t n_train = 800;
  std::size_t n_test = 200;
  std::size_t T = 100;
  double dt = 0.1;
  std::size_t T_c = 33;
  std::vector<int> envs{0, 1, 2, 3};
  double noise_std = 0.0;
  std::vector<double> norm_mean;
  std::vector<double> norm_std;

  TimeGrid grid() const { return TimeGrid(0.0, dt, T); }
  /// Discriminator class of a system environment index (position in `envs`).
  int env_class(int env) const;

  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<Sample> train;
  std::vector<Sample> test;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct GenConfig {
  SystemId system = SystemId::Pendulum;
  std::uint64_t seed = 0;
  std::size_t n_train = 800;
  std::size_t n_test = 200;
  std::size_t T = 100;
  double dt = 0.1;
  /// Input-length factor l_t with T_c = floor(T / l_t); 0 selects the system default (3 or 2).
  double tc_factor = 0.0;
  std::vector<int> envs{0, 1, 2, 3};
  double noise_std = 0.0;
};

inline constexpr int kMaxResamples = 100;

/// Default input-length factor: 3 for the pendulum, 2 otherwise.
double default_tc_factor(SystemId system);

Dataset generate_dataset(const GenConfig& config);

/// Writes meta.txt, train.ndrec and test.ndrec into `dir` (created if needed).
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Decimal form with 17 significant digits; round-trips every double exactly.
std::string format_double(double v);

}  // namespace dif
