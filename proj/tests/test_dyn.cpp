#include "dif/dyn.hpp"
#include "dif/error.hpp"
#include "dif/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace dif;

namespace {

State scalar(double v) {
  State s(1);
  s << v;
  return s;
}

VectorField decay = [](const State& x) { return State(-x); };

}  // namespace

TEST(Rk4, HandExpandedDecayStep) {
  // stages -1, -0.95, -0.9525, -0.90475
  const double expected = 1.0 + 0.1 / 6.0 * (-1.0 - 2 * 0.95 - 2 * 0.9525 - 0.90475);
  EXPECT_NEAR(rk4_step(decay, scalar(1.0), 0.1)[0], expected, 1e-15);
  EXPECT_NEAR(rk4_step(decay, scalar(1.0), 0.1)[0], 0.9048375, 1e-7);
}

TEST(Rk4, ZeroAndConstantFields) {
  VectorField zero = [](const State& x) { return State(State::Zero(x.size())); };
  VectorField one = [](const State& x) { return State(State::Ones(x.size())); };
  EXPECT_EQ(rk4_step(zero, scalar(3.25), 0.7)[0], 3.25);
  EXPECT_NEAR(rk4_step(one, scalar(0.0), 0.1)[0], 0.1, 1e-16);
}

TEST(Rk4, NonFiniteStageThrowsWithStepIndex) {
  VectorField bad = [](const State& x) { return State(x.array() / 0.0); };
  try {
    rk4_step(bad, scalar(1.0), 0.1, 17);
    FAIL();
  } catch (const IntegrationDiverged& e) {
    EXPECT_EQ(e.step(), 17u);
  }
}

TEST(Integrate, ExponentialAtEveryGridPoint) {
  const TimeGrid grid(0.0, 0.1, 101);
  const Trajectory tr = integrate(decay, scalar(1.0), grid);
  for (std::size_t k = 0; k < grid.points(); ++k) {
    const double truth = std::exp(-grid.time(k));
    EXPECT_LT(std::abs(tr.states()(0, k) - truth) / truth, 1e-5) << k;
  }
}

TEST(Integrate, ColumnZeroVerbatimAndSingleton) {
  State x0(2);
  x0 << 0.1 + 1e-17, -3.3;
  const Trajectory one = integrate(decay, x0, TimeGrid(0.0, 0.1, 1));
  EXPECT_EQ(one.length(), 1u);
  EXPECT_EQ(one.column(0), x0);
  EXPECT_EQ(integrate(decay, x0, TimeGrid(0.0, 0.1, 5)).column(0), x0);
}

TEST(Integrate, FrictionlessPendulumEnergyDrift) {
  VectorField pend = [](const State& x) {
    State d(2);
    d << x[1], -std::sin(x[0]);
    return d;
  };
  State x0(2);
  x0 << 0.5, 0.0;
  const Trajectory tr = integrate(pend, x0, TimeGrid(0.0, 0.1, 101));
  auto energy = [](const State& x) { return 0.5 * x[1] * x[1] + (1.0 - std::cos(x[0])); };
  const double e0 = energy(x0);
  for (std::size_t k = 0; k < tr.length(); ++k) EXPECT_LT(std::abs(energy(tr.column(k)) - e0) / e0, 1e-4);
}

TEST(Integrate, BlowUpIsReported) {
  VectorField grow = [](const State& x) { return State(x.array().square() * 10.0); };
  EXPECT_THROW(integrate(grow, scalar(1.0), TimeGrid(0.0, 0.1, 100)), IntegrationDiverged);
}

TEST(NumericalDerivative, HandRow) {
  Eigen::MatrixXd s(1, 3);
  s << 0.0, 0.1, 0.4;
  const Eigen::MatrixXd d = numerical_derivative(s, 0.1);
  EXPECT_NEAR(d(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(d(0, 1), 2.0, 1e-12);
  EXPECT_NEAR(d(0, 2), 3.0, 1e-12);
}

TEST(NumericalDerivative, ConstantQuadraticAffine) {
  const std::size_t T = 20;
  const double dt = 0.1;
  Eigen::MatrixXd s(3, T);
  for (std::size_t k = 0; k < T; ++k) {
    const double t = dt * static_cast<double>(k);
    s(0, k) = 4.0;
    s(1, k) = t * t;
    s(2, k) = -2.0 * t + 1.0;
  }
  const Eigen::MatrixXd d = numerical_derivative(Trajectory(s, TimeGrid(0.0, dt, T)));
  for (std::size_t k = 0; k < T; ++k) {
    EXPECT_EQ(d(0, k), 0.0);
    EXPECT_NEAR(d(2, k), -2.0, 1e-12);
    if (k > 0 && k + 1 < T) EXPECT_NEAR(d(1, k), 2.0 * dt * static_cast<double>(k), 1e-12);
  }
}

TEST(NumericalDerivative, NeedsThreeColumns) {
  EXPECT_THROW(numerical_derivative(Eigen::MatrixXd::Zero(2, 2), 0.1), ContractError);
}

TEST(Nrmse, IdentityAndHandCase) {
  Eigen::MatrixXd truth(1, 2), pred(1, 2);
  truth << 0.0, 2.0;
  pred << 1.0, 3.0;
  std::vector<Eigen::MatrixXd> t{truth}, p{pred};
  EXPECT_EQ(nrmse(t, t), 0.0);
  EXPECT_NEAR(nrmse(p, t), 1.0, 1e-15);
}

TEST(Nrmse, DegenerateTruth) {
  std::vector<Eigen::MatrixXd> t{Eigen::MatrixXd::Constant(2, 3, 1.5)};
  EXPECT_THROW(nrmse(t, t), DegenerateTruth);
}

TEST(Nrmse, PermutationAndAffineInvariance) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Eigen::MatrixXd> p, t;
    for (int i = 0; i < 4; ++i) {
      Eigen::MatrixXd a(2, 7), b(2, 7);
      for (Eigen::Index k = 0; k < a.size(); ++k) {
        a(k) = uniform(rng, -2, 2);
        b(k) = uniform(rng, -2, 2);
      }
      p.push_back(a);
      t.push_back(b);
    }
    const double base = nrmse(p, t);
    std::vector<Eigen::MatrixXd> p2{p[2], p[0], p[3], p[1]}, t2{t[2], t[0], t[3], t[1]};
    EXPECT_NEAR(nrmse(p2, t2), base, 1e-13);
    const double a = uniform(rng, -3, 3) + 3.5, b = uniform(rng, -5, 5);
    for (auto& m : p2) m = (a * m.array() + b).matrix();
    for (auto& m : t2) m = (a * m.array() + b).matrix();
    EXPECT_NEAR(nrmse(p2, t2), base, 1e-12);
  }
}

TEST(PastWindow, FirstColumns) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Random(2, 10);
  const Trajectory tr(s, TimeGrid(0.0, 0.1, 10));
  const PastWindow w = past_window(tr, 4);
  EXPECT_EQ(w.states, s.leftCols(4));
  EXPECT_THROW(past_window(tr, 10), ContractError);
  EXPECT_THROW(past_window(tr, 0), ContractError);
}
