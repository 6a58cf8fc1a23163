#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>

namespace dif {

using State = Eigen::VectorXd;
using VectorField = std::function<State(const State&)>;

/// States with any entry above this magnitude abort integration.
inline constexpr double kDivergenceBound = 1e12;

/// Uniform time discretization t_k = t0 + k * dt, k = 0 .. points-1.
class TimeGrid {
 public:
  TimeGrid(double t0, double dt, std::size_t points);

  double t0() const noexcept { return t0_; }
  double dt() const noexcept { return dt_; }
  std::size_t points() const noexcept { return points_; }
  double time(std::size_t k) const noexcept { return t0_ + static_cast<double>(k) * dt_; }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

 private:
  double t0_;
  double dt_;
  std::size_t points_;
};

/// A d x T matrix of states sampled on a TimeGrid.
class Trajectory {
 public:
  Trajectory(Eigen::MatrixXd states, TimeGrid grid);

  const Eigen::MatrixXd& states() const noexcept { return states_; }
  const TimeGrid& grid() const noexcept { return grid_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(states_.rows()); }
  std::size_t length() const noexcept { return static_cast<std::size_t>(states_.cols()); }
  State column(std::size_t k) const { return states_.col(static_cast<Eigen::Index>(k)); }

  friend bool operator==(const Trajectory& a, const Trajectory& b) {
    return a.grid_ == b.grid_ && a.states_.rows() == b.states_.rows() &&
           a.states_.cols() == b.states_.cols() && a.states_ == b.states_;
  }

 private:
  Eigen::MatrixXd states_;
  TimeGrid grid_;
};

/// The first T_c columns of a trajectory: the only model input at inference.
struct PastWindow {
  Eigen::MatrixXd states;
  std::size_t cutoff;
};

PastWindow past_window(const Trajectory& traj, std::size_t cutoff);

/// One classical fourth-order Runge-Kutta step. `step_index` is reported on divergence.
State rk4_step(const VectorField& f, const State& x, double dt, std::size_t step_index = 0);

/// Fixed-step RK4 over the grid starting from x0 (column 0 is x0 verbatim).
Trajectory integrate(const VectorField& f, const State& x0, const TimeGrid& grid);

/// Central differences inside, one-sided differences at both ends. Requires T >= 3.
Eigen::MatrixXd numerical_derivative(const Trajectory& traj);
Eigen::MatrixXd numerical_derivative(const Eigen::MatrixXd& states, double dt);

/// sqrt(mean squared error over all entries) / population std of all truth entries.
double nrmse(std::span<const Eigen::MatrixXd> pred, std::span<const Eigen::MatrixXd> truth);
double nrmse(std::span<const Trajectory> pred, std::span<const Trajectory> truth);

}  // namespace dif
