#include "dif/dataset.hpp"
#include "dif/error.hpp"
#include "dif/systems.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

using namespace dif;
namespace fs = std::filesystem;

namespace {

ParamSet params(SystemId sys, std::vector<double> values) {
  ParamSet p;
  p.system = sys;
  p.values = std::move(values);
  p.x0 = State::Zero(static_cast<Eigen::Index>(state_dim(sys)));
  return p;
}

State vec(std::initializer_list<double> v) {
  State s(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) s[i++] = x;
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dif_test_" + name);
  fs::remove_all(p);
  return p;
}

GenConfig small(SystemId sys, std::uint64_t seed) {
  GenConfig g;
  g.system = sys;
  g.seed = seed;
  g.n_train = 40;
  g.n_test = 8;
  return g;
}

}  // namespace

TEST(Systems, NamesAndDimensions) {
  EXPECT_EQ(state_dim(SystemId::Pendulum), 2u);
  EXPECT_EQ(state_dim(SystemId::LotkaVolterra), 2u);
  EXPECT_EQ(state_dim(SystemId::SIREpidemic), 3u);
  for (auto s : {SystemId::Pendulum, SystemId::LotkaVolterra, SystemId::SIREpidemic}) {
    EXPECT_EQ(env_names(s).size(), 4u);
    EXPECT_EQ(parse_system(system_name(s)), s);
  }
  EXPECT_EQ(env_names(SystemId::Pendulum)[1], "powered");
  EXPECT_THROW(parse_system("duffing"), ContractError);
}

TEST(Systems, SampledParametersStayInIntervals) {
  for (auto s : {SystemId::Pendulum, SystemId::LotkaVolterra, SystemId::SIREpidemic}) {
    Rng rng(derive_seed(3, {static_cast<std::uint64_t>(s)}));
    const auto iv = param_intervals(s);
    const auto init = initial_state_intervals(s);
    for (int n = 0; n < 10000; ++n) {
      const ParamSet p = sample_params(s, rng);
      for (std::size_t k = 0; k < iv.size(); ++k) ASSERT_TRUE(iv[k].contains(p.values[k]));
      for (std::size_t k = 0; k < init.size(); ++k) ASSERT_TRUE(init[k].contains(p.x0[static_cast<Eigen::Index>(k)]));
    }
  }
  Rng rng(1);
  EXPECT_EQ(sample_params(SystemId::SIREpidemic, rng).x0[2], 0.0);
  const auto pend = param_intervals(SystemId::Pendulum);
  EXPECT_EQ(pend[0].lo, 1.0);
  EXPECT_EQ(pend[0].hi, 2.0);
  EXPECT_EQ(pend[1].lo, 0.2);
  EXPECT_EQ(pend[1].hi, 0.4);
}

TEST(Systems, SameSeedSameDraws) {
  Rng a(99), b(99);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sample_params(SystemId::LotkaVolterra, a), sample_params(SystemId::LotkaVolterra, b));
}

TEST(Systems, PendulumHandSubstitution) {
  const ParamSet p = params(SystemId::Pendulum, {1.0, 0.2});
  const State d = vector_field(SystemId::Pendulum, 0, p)(vec({std::numbers::pi / 2, -1.0}));
  EXPECT_NEAR(d[0], -1.0, 1e-15);
  EXPECT_NEAR(d[1], -0.8, 1e-15);
  // powered at rest: sign(0) = 0
  const State r = vector_field(SystemId::Pendulum, 1, p)(vec({0.3, 0.0}));
  EXPECT_NEAR(r[1], -std::sin(0.3), 1e-15);
  const State inv = invariant_vector_field(SystemId::Pendulum, params(SystemId::Pendulum, {1.5, 0.3}))(vec({0.5, -0.2}));
  EXPECT_NEAR(inv[0], -0.2, 1e-15);
  EXPECT_NEAR(inv[1], -2.25 * std::sin(0.5), 1e-15);
}

TEST(Systems, PendulumEnvironmentTerms) {
  const double a = 1.3, rho = 0.25, th = 0.7, om = -0.4;
  const ParamSet p = params(SystemId::Pendulum, {a, rho});
  const double base = -a * a * std::sin(th);
  const State x = vec({th, om});
  EXPECT_NEAR(vector_field(SystemId::Pendulum, 0, p)(x)[1], base - rho * om, 1e-14);
  EXPECT_NEAR(vector_field(SystemId::Pendulum, 1, p)(x)[1], base - rho, 1e-14);
  EXPECT_NEAR(vector_field(SystemId::Pendulum, 2, p)(x)[1], base - rho * th, 1e-14);
  EXPECT_NEAR(vector_field(SystemId::Pendulum, 3, p)(x)[1], base - rho * std::abs(om) * om, 1e-14);
}

TEST(Systems, SirHandSubstitution) {
  const ParamSet p = params(SystemId::SIREpidemic, {4.0, 0.5});
  const State d = vector_field(SystemId::SIREpidemic, 0, p)(vec({10.0, 5.0, 0.0}));
  EXPECT_NEAR(d[0], -4.0 * 50.0 / 15.0, 1e-12);
  EXPECT_NEAR(d[1], 4.0 * 50.0 / 15.0 - 2.5, 1e-12);
  EXPECT_NEAR(d[2], 2.5, 1e-12);
  const State inv = invariant_vector_field(SystemId::SIREpidemic, p)(vec({9.0, 2.0, 1.0}));
  EXPECT_EQ(inv[2], 0.0);
  // negative environment stays finite at I <= 0
  const State neg = vector_field(SystemId::SIREpidemic, 3, p)(vec({9.0, -1.0, 1.0}));
  EXPECT_TRUE(neg.allFinite());
}

TEST(Systems, LotkaVolterraInvariantAtZeroPredators) {
  Rng rng(4);
  const ParamSet p = sample_params(SystemId::LotkaVolterra, rng);
  const State d = invariant_vector_field(SystemId::LotkaVolterra, p)(vec({1500.0, 0.0}));
  EXPECT_NEAR(d[0], p.get("alpha") * 1500.0, 1e-9);
}

TEST(Systems, SirOriginConservesPopulation) {
  Rng rng(8);
  for (int n = 0; n < 20; ++n) {
    const ParamSet p = sample_params(SystemId::SIREpidemic, rng);
    const Trajectory tr = integrate(vector_field(SystemId::SIREpidemic, 0, p), p.x0, TimeGrid(0.0, 0.1, 100));
    const double n0 = tr.states().col(0).sum();
    for (std::size_t k = 0; k < tr.length(); ++k)
      ASSERT_LT(std::abs(tr.states().col(static_cast<Eigen::Index>(k)).sum() - n0) / n0, 1e-6);
  }
}

TEST(Dataset, BalancedSplitsAndSharedInitialState) {
  const Dataset d = generate_dataset(GenConfig{});
  ASSERT_EQ(d.train.size(), 800u);
  ASSERT_EQ(d.test.size(), 200u);
  std::vector<int> tr(4, 0), te(4, 0);
  for (const auto& s : d.train) ++tr[static_cast<std::size_t>(s.env)];
  for (const auto& s : d.test) ++te[static_cast<std::size_t>(s.env)];
  EXPECT_EQ(tr, std::vector<int>(4, 200));
  EXPECT_EQ(te, std::vector<int>(4, 50));
  EXPECT_EQ(d.meta.T_c, 33u);
  for (const auto& s : d.test) {
    ASSERT_TRUE(s.x_inv.has_value());
    EXPECT_EQ(s.x_inv->column(0), s.x.column(0));
    EXPECT_EQ(s.x_inv->grid(), s.x.grid());
  }
  for (const auto& s : d.train) EXPECT_FALSE(s.x_inv.has_value());
  for (double v : d.meta.norm_std) EXPECT_GT(v, 0.0);
}

TEST(Dataset, PendulumInvariantTrajectoriesConserveEnergy) {
  const Dataset d = generate_dataset(small(SystemId::Pendulum, 21));
  for (const auto& s : d.test) {
    const double a2 = std::pow(s.params.get("alpha"), 2);
    auto energy = [&](const State& x) { return 0.5 * x[1] * x[1] + a2 * (1.0 - std::cos(x[0])); };
    const double e0 = energy(s.x_inv->column(0));
    for (std::size_t k = 0; k < s.x_inv->length(); ++k)
      ASSERT_LT(std::abs(energy(s.x_inv->column(k)) - e0) / e0, 1e-4);
  }
}

TEST(Dataset, DefaultWindowLengths) {
  EXPECT_EQ(generate_dataset(small(SystemId::LotkaVolterra, 1)).meta.T_c, 50u);
  EXPECT_EQ(generate_dataset(small(SystemId::SIREpidemic, 1)).meta.T_c, 50u);
  GenConfig g = small(SystemId::Pendulum, 1);
  g.tc_factor = 4.0;
  EXPECT_EQ(generate_dataset(g).meta.T_c, 25u);
}

TEST(Dataset, EnvironmentSubset) {
  GenConfig g = small(SystemId::Pendulum, 2);
  g.envs = {1, 3};
  g.n_train = 10;
  g.n_test = 4;
  const Dataset d = generate_dataset(g);
  for (const auto& s : d.train) EXPECT_TRUE(s.env == 1 || s.env == 3);
  EXPECT_EQ(d.meta.env_class(1), 0);
  EXPECT_EQ(d.meta.env_class(3), 1);
}

TEST(Dataset, SaveLoadRoundTripAndDeterminism) {
  const Dataset d = generate_dataset(small(SystemId::LotkaVolterra, 7));
  const fs::path a = scratch("rt_a"), b = scratch("rt_b");
  save_dataset(d, a);
  save_dataset(generate_dataset(small(SystemId::LotkaVolterra, 7)), b);
  for (const char* f : {"meta.txt", "train.ndrec", "test.ndrec"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  EXPECT_EQ(load_dataset(a), d);
}

TEST(Dataset, TruncatedFileIsSchemaError) {
  const fs::path dir = scratch("trunc");
  save_dataset(generate_dataset(small(SystemId::SIREpidemic, 3)), dir);
  const std::string text = slurp(dir / "train.ndrec");
  std::ofstream(dir / "train.ndrec", std::ios::binary) << text.substr(0, text.size() / 2);
  EXPECT_THROW(load_dataset(dir), SchemaError);
}

TEST(Dataset, NonPositiveStdRejectedOnLoad) {
  const fs::path dir = scratch("badstd");
  save_dataset(generate_dataset(small(SystemId::Pendulum, 3)), dir);
  std::string meta = slurp(dir / "meta.txt");
  const auto pos = meta.find("norm_std=");
  meta = meta.substr(0, pos) + "norm_std=0,1\n";
  std::ofstream(dir / "meta.txt", std::ios::binary) << meta;
  EXPECT_THROW(load_dataset(dir), SchemaError);
}

TEST(Dataset, GoldenFiles) {
  GenConfig g;
  g.system = SystemId::Pendulum;
  g.seed = 11;
  g.n_train = 4;
  g.n_test = 4;
  g.T = 5;
  const fs::path dir = scratch("golden");
  save_dataset(generate_dataset(g), dir);
  const fs::path golden = fs::path(DIF_TEST_DATA_DIR) / "golden_pendulum";
  for (const char* f : {"meta.txt", "train.ndrec", "test.ndrec"}) EXPECT_EQ(slurp(dir / f), slurp(golden / f)) << f;
}
