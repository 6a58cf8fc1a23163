#include "dif/systems.hpp"

#include "dif/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace dif {

namespace {

constexpr std::array<std::string_view, 2> kPendulumStates{"theta", "omega"};
constexpr std::array<std::string_view, 2> kLvStates{"p", "q"};
constexpr std::array<std::string_view, 3> kSirStates{"S", "I", "R"};

constexpr std::array<std::string_view, 4> kPendulumEnvs{"damped", "powered", "spring", "air"};
constexpr std::array<std::string_view, 4> kLvEnvs{"save", "fight", "resource", "omnivore"};
constexpr std::array<std::string_view, 4> kSirEnvs{"origin", "enlarge", "loop", "negative"};

constexpr std::array<std::string_view, 2> kPendulumParams{"alpha", "rho"};
constexpr std::array<std::string_view, 8> kLvParams{"alpha", "alpha_prime", "beta",  "beta_prime",
                                                    "gamma", "gamma_prime", "delta", "delta_prime"};
constexpr std::array<std::string_view, 2> kSirParams{"beta", "gamma"};

constexpr std::array<std::string_view, 1> kPendulumCommon{"alpha"};
constexpr std::array<std::string_view, 4> kLvCommon{"alpha", "beta", "gamma", "delta"};
constexpr std::array<std::string_view, 1> kSirCommon{"beta"};

constexpr std::array<Interval, 2> kPendulumRanges{{{1.0, 2.0}, {0.2, 0.4}}};
constexpr std::array<Interval, 8> kLvRanges{{{1.2, 2.4},
                                             {1.2, 2.4},
                                             {6e-2, 1.2e-1},
                                             {6e-2, 1.2e-1},
                                             {0.48, 0.96},
                                             {0.48, 0.96},
                                             {4.8e-4, 9.6e-4},
                                             {4.8e-4, 9.6e-4}}};
constexpr std::array<Interval, 2> kSirRanges{{{4.0, 8.0}, {0.4, 0.8}}};

constexpr std::array<Interval, 2> kPendulumInit{{{0.0, std::numbers::pi / 2.0}, {-1.0, 0.0}}};
constexpr std::array<Interval, 2> kLvInit{{{1000.0, 2000.0}, {10.0, 20.0}}};
constexpr std::array<Interval, 3> kSirInit{{{9.0, 10.0}, {1.0, 5.0}, {0.0, 0.0}}};

double sign_or_zero(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_env(int env) {
  if (env < 0 || env >= kEnvsPerSystem) throw ContractError("environment index " + std::to_string(env) + " outside 0..3");
}

VectorField pendulum_field(int env, double alpha, double rho, bool invariant) {
  const double a2 = alpha * alpha;
  return [=](const State& x) {
    const double theta = x[0];
    const double omega = x[1];
    double domega = -a2 * std::sin(theta);
    if (!invariant) {
      switch (env) {
        case 0: domega -= rho * omega; break;
        case 1: domega += rho * sign_or_zero(omega); break;
        case 2: domega -= rho * theta; break;
        case 3: domega -= rho * std::abs(omega) * omega; break;
      }
    }
    State out(2);
    out << omega, domega;
    return out;
  };
}

VectorField lotka_volterra_field(int env, const ParamSet& ps, bool invariant) {
  const double alpha = ps.values[0], alpha_p = ps.values[1];
  const double beta = ps.values[2], beta_p = ps.values[3];
  const double gamma = ps.values[4], gamma_p = ps.values[5];
  const double delta = ps.values[6], delta_p = ps.values[7];
  return [=](const State& x) {
    const double p = x[0];
    const double q = x[1];
    double dp = alpha * p - beta * p * q;
    double dq = delta * p * q - gamma * q;
    if (!invariant) {
      switch (env) {
        case 0: dp -= beta_p * p * q * 10.0 * std::exp(-q / 10.0); break;
        case 1: dq += delta_p * p * q * 10.0 * std::exp(-q / 10.0); break;
        case 2: dp -= alpha_p * p * p / 2000.0; break;
        case 3: dq += 20.0 * gamma_p * (1.0 - q / 100.0); break;
      }
    }
    State out(2);
    out << dp, dq;
    return out;
  };
}

VectorField sir_field(int env, double beta, double gamma, bool invariant) {
  return [=](const State& x) {
    const double s = x[0];
    const double i = x[1];
    const double r = x[2];
    const double infection = beta * s * i / (s + i + r);
    double ds = -infection;
    double di = infection;
    double dr = 0.0;
    if (!invariant) {
      switch (env) {
        case 0:
          di -= gamma * i;
          dr = gamma * i;
          break;
        case 1:
          ds += gamma * i;
          di -= gamma * i;
          dr = gamma * i;
          break;
        case 2:
          ds += gamma * i + gamma * r;
          di -= 2.0 * gamma * i;
          dr = gamma * i - gamma * r;
          break;
        case 3: {
          const double log_i = std::log(std::max(i, kLogClampFloor));
          di += gamma * log_i;
          dr = -gamma * log_i;
          break;
        }
      }
    }
    State out(3);
    out << ds, di, dr;
    return out;
  };
}

VectorField make_field(SystemId system, int env, const ParamSet& ps, bool invariant) {
  if (ps.system != system) throw ContractError("parameter set belongs to a different system");
  if (ps.values.size() != param_names(system).size()) throw ContractError("parameter set has the wrong arity");
  switch (system) {
    case SystemId::Pendulum: return pendulum_field(env, ps.values[0], ps.values[1], invariant);
    case SystemId::LotkaVolterra: return lotka_volterra_field(env, ps, invariant);
    case SystemId::SIREpidemic: return sir_field(env, ps.values[0], ps.values[1], invariant);
  }
  throw ContractError("unknown system");
}

}  // namespace

std::string_view system_name(SystemId id) {
  switch (id) {
    case SystemId::Pendulum: return "pendulum";
    case SystemId::LotkaVolterra: return "lotka_volterra";
    case SystemId::SIREpidemic: return "sir";
  }
  return "unknown";
}

SystemId parse_system(std::string_view name) {
  if (name == "pendulum") return SystemId::Pendulum;
  if (name == "lotka_volterra") return SystemId::LotkaVolterra;
  if (name == "sir") return SystemId::SIREpidemic;
  throw ContractError("unknown system '" + std::string(name) + "' (expected pendulum, lotka_volterra or sir)");
}

std::size_t state_dim(SystemId id) { return state_names(id).size(); }

std::span<const std::string_view> state_names(SystemId id) {
  switch (id) {
    case SystemId::Pendulum: return kPendulumStates;
    case SystemId::LotkaVolterra: return kLvStates;
    case SystemId::SIREpidemic: return kSirStates;
  }
  return {};
}

std::span<const std::string_view> env_names(SystemId id) {
  switch (id) {
    case SystemId::Pendulum: return kPendulumEnvs;
    case SystemId::LotkaVolterra: return kLvEnvs;
    case SystemId::SIREpidemic: return kSirEnvs;
  }
  return {};
}

std::span<const std::string_view> param_names(SystemId id) {
  switch (id) {
    case SystemId::Pendulum: return kPendulumParams;
    case SystemId::LotkaVolterra: return kLvParams;
    case SystemId::SIREpidemic: return kSirParams;
  }
  return {};
}

std::span<const std::string_view> common_param_names(SystemId id) {
  switch (id) {
    case SystemId::Pendulum: return kPendulumCommon;
    case SystemId::LotkaVolterra: return kLvCommon;
    case SystemId::SIREpidemic: return kSirCommon;
  }
  return {};
}

std::span<const Interval> param_intervals(SystemId id) {
  switch (id) {
    case SystemId::Pendulum: return kPendulumRanges;
    case SystemId::LotkaVolterra: return kLvRanges;
    case SystemId::SIREpidemic: return kSirRanges;
  }
  return {};
}

std::span<const Interval> initial_state_intervals(SystemId id) {
  switch (id) {
    case SystemId::Pendulum: return kPendulumInit;
    case SystemId::LotkaVolterra: return kLvInit;
    case SystemId::SIREpidemic: return kSirInit;
  }
  return {};
}

double ParamSet::get(std::string_view name) const {
  const auto names = param_names(system);
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return values.at(i);
  throw ContractError("no parameter '" + std::string(name) + "' for system " + std::string(system_name(system)));
}

ParamSet sample_params(SystemId system, Rng& rng) {
  ParamSet ps;
  ps.system = system;
  for (const Interval& iv : param_intervals(system)) ps.values.push_back(uniform(rng, iv.lo, iv.hi));
  const auto init = initial_state_intervals(system);
  ps.x0.resize(static_cast<Eigen::Index>(init.size()));
  for (std::size_t i = 0; i < init.size(); ++i)
    ps.x0[static_cast<Eigen::Index>(i)] = init[i].lo == init[i].hi ? init[i].lo : uniform(rng, init[i].lo, init[i].hi);
  return ps;
}

VectorField vector_field(SystemId system, int env, const ParamSet& params) {
  check_env(env);
  return make_field(system, env, params, false);
}

VectorField invariant_vector_field(SystemId system, const ParamSet& params) {
  return make_field(system, 0, params, true);
}

}  // namespace dif
