#include "dif/dyn.hpp"

#include "dif/error.hpp"

#include <cmath>
#include <vector>
#include <string>

namespace dif {

TimeGrid::TimeGrid(double t0, double dt, std::size_t points) : t0_(t0), dt_(dt), points_(points) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ContractError("TimeGrid: dt must be positive and finite");
  if (!std::isfinite(t0)) throw ContractError("TimeGrid: t0 must be finite");
  if (points < 1) throw ContractError("TimeGrid: at least one point required");
}

Trajectory::Trajectory(Eigen::MatrixXd states, TimeGrid grid) : states_(std::move(states)), grid_(grid) {
  if (static_cast<std::size_t>(states_.cols()) != grid_.points())
    throw ShapeError("Trajectory: " + std::to_string(states_.cols()) + " columns for a grid of " +
                     std::to_string(grid_.points()) + " points");
  if (states_.rows() < 1) throw ShapeError("Trajectory: state dimension must be positive");
  if (!states_.allFinite()) throw ContractError("Trajectory: non-finite state entry");
}

PastWindow past_window(const Trajectory& traj, std::size_t cutoff) {
  if (cutoff < 1 || cutoff >= traj.length())
    throw ContractError("past_window: cutoff " + std::to_string(cutoff) + " outside [1, " +
                        std::to_string(traj.length()) + ")");
  return {traj.states().leftCols(static_cast<Eigen::Index>(cutoff)), cutoff};
}

namespace {

void guard(const State& v, std::size_t step, const char* what) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]) || std::abs(v[i]) > kDivergenceBound)
      throw IntegrationDiverged(step, std::string(what) + " component " + std::to_string(i) + " = " +
                                          std::to_string(v[i]));
  }
}

}  // namespace

State rk4_step(const VectorField& f, const State& x, double dt, std::size_t step_index) {
  if (!(dt > 0.0)) throw ContractError("rk4_step: dt must be positive");
  const State k1 = f(x);
  guard(k1, step_index, "k1");
  const State k2 = f(x + 0.5 * dt * k1);
  guard(k2, step_index, "k2");
  const State k3 = f(x + 0.5 * dt * k2);
  guard(k3, step_index, "k3");
  const State k4 = f(x + dt * k3);
  guard(k4, step_index, "k4");
  State next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  guard(next, step_index, "state");
  return next;
}

Trajectory integrate(const VectorField& f, const State& x0, const TimeGrid& grid) {
  Eigen::MatrixXd states(x0.size(), static_cast<Eigen::Index>(grid.points()));
  states.col(0) = x0;
  State x = x0;
  for (std::size_t k = 0; k + 1 < grid.points(); ++k) {
    x = rk4_step(f, x, grid.dt(), k);
    states.col(static_cast<Eigen::Index>(k + 1)) = x;
  }
  return Trajectory(std::move(states), grid);
}

Eigen::MatrixXd numerical_derivative(const Eigen::MatrixXd& states, double dt) {
  const Eigen::Index n = states.cols();
  if (n < 3) throw ContractError("numerical_derivative: need at least 3 time points");
  Eigen::MatrixXd out(states.rows(), n);
  out.col(0) = (states.col(1) - states.col(0)) / dt;
  for (Eigen::Index k = 1; k + 1 < n; ++k) out.col(k) = (states.col(k + 1) - states.col(k - 1)) / (2.0 * dt);
  out.col(n - 1) = (states.col(n - 1) - states.col(n - 2)) / dt;
  return out;
}

Eigen::MatrixXd numerical_derivative(const Trajectory& traj) {
  return numerical_derivative(traj.states(), traj.grid().dt());
}

double nrmse(std::span<const Eigen::MatrixXd> pred, std::span<const Eigen::MatrixXd> truth) {
  if (pred.size() != truth.size())
    throw ContractError("nrmse: " + std::to_string(pred.size()) + " predictions for " +
                        std::to_string(truth.size()) + " truths");
  if (truth.empty()) throw ContractError("nrmse: empty set");
  double count = 0.0;
  double sum = 0.0;
  for (const auto& t : truth) {
    sum += t.sum();
    count += static_cast<double>(t.size());
  }
  const double mean = sum / count;
  double var = 0.0;
  double sq_err = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (pred[i].rows() != truth[i].rows() || pred[i].cols() != truth[i].cols())
      throw ShapeError("nrmse: sample " + std::to_string(i) + " shape mismatch");
    var += (truth[i].array() - mean).square().sum();
    sq_err += (pred[i] - truth[i]).squaredNorm();
  }
  const double std = std::sqrt(var / count);
  if (!(std > 0.0)) throw DegenerateTruth("nrmse: truth set has zero standard deviation");
  return std::sqrt(sq_err / count) / std;
}

double nrmse(std::span<const Trajectory> pred, std::span<const Trajectory> truth) {
  std::vector<Eigen::MatrixXd> p;
  std::vector<Eigen::MatrixXd> t;
  p.reserve(pred.size());
  t.reserve(truth.size());
  for (const auto& x : pred) p.push_back(x.states());
  for (const auto& x : truth) t.push_back(x.states());
  return nrmse(std::span<const Eigen::MatrixXd>(p), std::span<const Eigen::MatrixXd>(t));
}

}  // namespace dif
