#pragma once

#include "dif/dyn.hpp"
#include "dif/rng.hpp"

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dif {

enum class SystemId { Pendulum, LotkaVolterra, SIREpidemic };

inline constexpr int kEnvsPerSystem = 4;

std::string_view system_name(SystemId id);
SystemId parse_system(std::string_view name);

std::size_t state_dim(SystemId id);
std::span<const std::string_view> state_names(SystemId id);
std::span<const std::string_view> env_names(SystemId id);
/// Every sampled coefficient, in sampling order.
std::span<const std::string_view> param_names(SystemId id);
/// The subset shared by all environments (W^c).
std::span<const std::string_view> common_param_names(SystemId id);

/// Closed sampling interval of one coefficient or initial-state component.
struct Interval {
  double lo;
  double hi;
  bool contains(double v) const noexcept { return v >= lo && v <= hi; }
};

std::span<const Interval> param_intervals(SystemId id);
std::span<const Interval> initial_state_intervals(SystemId id);

/// Sampled coefficients plus the initial state.
struct ParamSet {
  SystemId system = SystemId::Pendulum;
  std::vector<double> values;  // ordered as param_names(system)
  State x0;

  double get(std::string_view name) const;
  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    return a.system == b.system && a.values == b.values && a.x0.size() == b.x0.size() && a.x0 == b.x0;
  }
};

ParamSet sample_params(SystemId system, Rng& rng);

/// Right-hand side of the environment's ODE. `env` is 0..3 in env_names order.
VectorField vector_field(SystemId system, int env, const ParamSet& params);
/// Right-hand side with the environment terms removed, same shared coefficients.
VectorField invariant_vector_field(SystemId system, const ParamSet& params);

/// Lower clamp applied to I before taking log I (SIR negative environment).
inline constexpr double kLogClampFloor = 1e-8;

}  // namespace dif
