#include "dif/error.hpp"
#include "dif/eval.hpp"

#include "model_cases.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dif;
namespace fs = std::filesystem;

namespace {

Dataset small(SystemId sys, std::uint64_t seed) {
  GenConfig g;
  g.system = sys;
  g.seed = seed;
  g.n_train = 40;
  g.n_test = 8;
  return generate_dataset(g);
}

Predictor tiny_predictor(const Dataset& d, std::uint64_t seed) {
  TrainConfig c;
  c.model = cases::tiny_spec();
  c.batch = 8;
  c.seed = seed;
  Trainer t(d, c);
  for (int i = 0; i < 3; ++i) t.step();
  return Predictor::from_trainer(t, d.meta);
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  std::string l;
  while (std::getline(in, l)) out.push_back(l);
  return out;
}

}  // namespace

TEST(Oracle, ClosureOnEverySystem) {
  for (auto sys : {SystemId::Pendulum, SystemId::LotkaVolterra, SystemId::SIREpidemic}) {
    const Dataset d = small(sys, 3);
    const EvalMatrix e = evaluate(oracle_fields(sys), d.test, d.meta.grid());
    EXPECT_LE(e.nrmse_fc_on_Xc, 1e-3) << system_name(sys);
    EXPECT_LE(e.nrmse_f_on_X, 1e-3) << system_name(sys);
    EXPECT_EQ(e.excluded_fc + e.excluded_f, 0u);
  }
}

TEST(Forecast, StartsFromColumnZero) {
  const Dataset d = small(SystemId::Pendulum, 4);
  const Predictor p = tiny_predictor(d, 1);
  for (const auto& s : d.test) {
    const Trajectory f = forecast(model_fields(p), s, Which::Full, d.meta.grid());
    EXPECT_EQ(f.column(0), s.x.column(0));
    EXPECT_EQ(f.length(), s.x.length());
  }
}

TEST(Forecast, DecodedFieldUnitsMatchDerivNet) {
  const Dataset d = small(SystemId::LotkaVolterra, 5);
  const Predictor p = tiny_predictor(d, 2);
  const auto F = p.function_vector(d.test[0], Which::Invariant);
  const VectorField f = decoded_field(p.model.layout(), F, p.norm);
  const State x = d.test[0].x.column(7);
  State z(2);
  for (int j = 0; j < 2; ++j) z[j] = (x[j] - p.norm.mean[static_cast<std::size_t>(j)]) / p.norm.std[static_cast<std::size_t>(j)];
  const State raw = deriv_net_eval(p.model.layout(), F, z);
  const State got = f(x);
  for (int j = 0; j < 2; ++j) EXPECT_NEAR(got[j], raw[j] * p.norm.std[static_cast<std::size_t>(j)], 1e-12 * std::abs(got[j]) + 1e-300);
}

TEST(Evaluate, EmptyTestSetIsContractError) {
  EXPECT_THROW(evaluate(oracle_fields(SystemId::Pendulum), {}, TimeGrid(0, 0.1, 10)), ContractError);
}

TEST(Evaluate, DeterministicAndCheckpointEquivalent) {
  const Dataset d = small(SystemId::Pendulum, 6);
  TrainConfig c;
  c.model = cases::tiny_spec();
  c.batch = 8;
  Trainer t(d, c);
  for (int i = 0; i < 3; ++i) t.step();
  const EvalMatrix a = evaluate(Predictor::from_trainer(t, d.meta), d);
  const auto path = fs::temp_directory_path() / "dif_test_eval.ckpt";
  save_checkpoint(t.checkpoint(), path);
  const EvalMatrix b = evaluate(Predictor::from_checkpoint(load_checkpoint(path)), d);
  EXPECT_EQ(a.to_record(), b.to_record());
  EXPECT_EQ(EvalMatrix::from_record(a.to_record()).to_record(), a.to_record());
  EXPECT_GE(a.nrmse_fc_on_Xc, 0.0);
}

TEST(Evaluate, DivergedForecastsAreCountedAndExcluded) {
  const Dataset d = small(SystemId::Pendulum, 7);
  int calls = 0;
  const FieldSource fields = [&](const Sample& s, Which w) -> VectorField {
    if (w == Which::Invariant && calls++ % 2 == 0) return [](const State& x) { return State(x.array().square() * 1e6); };
    return oracle_fields(SystemId::Pendulum)(s, w);
  };
  const EvalMatrix e = evaluate(fields, d.test, d.meta.grid());
  EXPECT_EQ(e.excluded_fc, 4u);
  EXPECT_EQ(e.excluded_f, 0u);
  EXPECT_LE(e.nrmse_fc_on_Xc, 1e-3);
  EXPECT_DOUBLE_EQ(e.exclusion_rate(), 4.0 / 16.0);
}

TEST(Quantiles, LinearInterpolation) {
  EXPECT_EQ(quantile({3.0}, 0.5), 3.0);
  EXPECT_EQ(quantile({4, 1, 3, 2}, 0.5), 2.5);
  EXPECT_EQ(quantile({4, 1, 3, 2}, 0.25), 1.75);
  EXPECT_EQ(quantile({4, 1, 3, 2}, 1.0), 4.0);
  EXPECT_THROW(quantile({}, 0.5), ContractError);
}

TEST(Sweep, SummaryOrderingAndFailures) {
  std::vector<SweepRecord> rs(5);
  const double m[] = {0.4, 0.1, 0.9, 0.3, 0.0};
  for (std::size_t i = 0; i < 5; ++i) {
    rs[i].index = i;
    rs[i].ok = i != 4;
    rs[i].metric = m[i];
  }
  const SweepSummary s = summarize(Method::ERM, rs);
  EXPECT_EQ(s.values.size(), 4u);
  EXPECT_EQ(s.failures, 1u);
  EXPECT_EQ(s.min, 0.1);
  EXPECT_LE(s.min, s.q25);
  EXPECT_LE(s.q25, s.median);
  EXPECT_LE(s.median, s.q75);
  EXPECT_LE(s.q75, s.max);
  EXPECT_EQ(s.metric, "nrmse_f_on_Xc");
  rs.resize(1);
  const SweepSummary one = summarize(Method::DIF, rs);
  EXPECT_EQ(one.median, one.min);
  EXPECT_EQ(one.metric, "nrmse_fc_on_Xc");
}

TEST(Sweep, CandidatesReproducibleAndRecordsRoundTrip) {
  const Dataset d = small(SystemId::Pendulum, 8);
  SweepConfig sc;
  sc.method = Method::DIF;
  sc.candidates = 2;
  sc.seed = 4;
  sc.workers = 2;
  sc.base.model = cases::tiny_spec();
  sc.base.batch = 8;
  sc.base.iterations = 3;
  const fs::path dir = fs::temp_directory_path() / "dif_test_sweep";
  fs::remove_all(dir);
  const auto records = sweep(d, sc, dir);
  ASSERT_EQ(records.size(), 2u);
  const SweepRecord again = run_candidate(d, sc, 1);
  EXPECT_EQ(again.seed, records[1].seed);
  EXPECT_EQ(again.hyper.lr, records[1].hyper.lr);
  EXPECT_EQ(again.eval.to_record(), records[1].eval.to_record());
  const auto back = read_sweep_records(dir / "candidates.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].metric, records[1].metric);
  EXPECT_EQ(back[0].hyper.weights.lambda_c, records[0].hyper.weights.lambda_c);
  EXPECT_TRUE(fs::exists(dir / "summary.txt"));
  EXPECT_TRUE(fs::exists(dir / "candidate_0" / "model.ckpt"));
}

TEST(Export, SymbolicRegressionRows) {
  const Dataset d = small(SystemId::SIREpidemic, 9);
  const Predictor p = tiny_predictor(d, 3);
  const fs::path path = fs::temp_directory_path() / "dif_test_sr.csv";
  const std::size_t rows = export_sr_data(p, d, path);
  EXPECT_EQ(rows, d.test.size() * d.meta.T);
  const auto ls = lines(path);
  ASSERT_EQ(ls.size(), rows + 1);
  EXPECT_EQ(ls[0], "sample,env,beta,S,I,R,dS_dt,dI_dt,dR_dt");
  // the exported derivatives are the decoded invariant field at the exported state
  std::stringstream ss(ls[5]);
  std::vector<std::string> f;
  std::string item;
  while (std::getline(ss, item, ',')) f.push_back(item);
  ASSERT_EQ(f.size(), 9u);
  State x(3);
  for (int j = 0; j < 3; ++j) x[j] = std::stod(f[static_cast<std::size_t>(3 + j)]);
  const State dx = p.field(d.test[0], Which::Invariant)(x);
  for (int j = 0; j < 3; ++j) EXPECT_EQ(std::stod(f[static_cast<std::size_t>(6 + j)]), dx[j]);
}

TEST(Export, SymbolicRegressionUnitsRoundTrip) {
  // Feeding the oracle's own derivatives through the export path gives zero error.
  const Dataset d = small(SystemId::Pendulum, 10);
  std::vector<Eigen::MatrixXd> pred, truth;
  for (const auto& s : d.test) {
    const VectorField fc = invariant_vector_field(SystemId::Pendulum, s.params);
    Eigen::MatrixXd a(2, static_cast<Eigen::Index>(s.x.length()));
    for (std::size_t t = 0; t < s.x.length(); ++t) a.col(static_cast<Eigen::Index>(t)) = fc(s.x.column(t));
    pred.push_back(a);
    truth.push_back(a);
  }
  EXPECT_EQ(nrmse(pred, truth), 0.0);
}

TEST(Export, PlotFilesAreDeterministic) {
  const Dataset d = small(SystemId::Pendulum, 11);
  const Predictor p = tiny_predictor(d, 4);
  const fs::path a = fs::temp_directory_path() / "dif_test_plot_a", b = fs::temp_directory_path() / "dif_test_plot_b";
  export_plot_data(p, d, a, 3);
  export_plot_data(p, d, b, 3);
  const auto la = lines(a / "trajectories.csv");
  EXPECT_EQ(la, lines(b / "trajectories.csv"));
  EXPECT_EQ(la[0], "sample,env,t,series,theta,omega");
  EXPECT_EQ(la.size(), 1 + 3 * 4 * d.meta.T);
  std::vector<SweepRecord> rs(3);
  rs[0].method = Method::DIF;
  rs[1].method = Method::ERM;
  rs[2].method = Method::DIF;
  for (auto& r : rs) {
    r.ok = true;
    r.metric = 0.5;
  }
  export_sweep_plot_data(rs, a);
  const auto q = lines(a / "quantiles.csv");
  ASSERT_EQ(q.size(), 3u);
  EXPECT_EQ(q[0], "method,metric,candidates,failures,min,q25,median,q75,max");
  EXPECT_EQ(q[1].rfind("erm,nrmse_f_on_Xc,1,0,", 0), 0u);
  EXPECT_EQ(q[2].rfind("dif,nrmse_fc_on_Xc,2,0,", 0), 0u);
}
