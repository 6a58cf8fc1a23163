#include "dif/eval.hpp"

#include "dif/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace dif {

using grad::Tensor;

namespace {

constexpr std::size_t kEncodeChunk = 64;

std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw SchemaError("checkpoint info " + key + ": bad number '" + item + "'");
    }
  }
  return out;
}

const std::string& info_at(const Checkpoint& c, const std::string& key) {
  auto it = c.info.find(key);
  if (it == c.info.end()) throw SchemaError("checkpoint lacks info '" + key + "'");
  return it->second;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

}  // namespace

// --- predictor ----------------------------------------------------------------------

Predictor Predictor::from_checkpoint(const Checkpoint& ckpt) {
  Predictor p{model_from_checkpoint(ckpt), {}, 0, parse_system(info_at(ckpt, "system"))};
  p.norm.mean = parse_list("norm_mean", info_at(ckpt, "norm_mean"));
  p.norm.std = parse_list("norm_std", info_at(ckpt, "norm_std"));
  p.T_c = static_cast<std::size_t>(std::stoull(info_at(ckpt, "T_c")));
  const std::size_t d = state_dim(p.system);
  if (p.norm.mean.size() != d || p.norm.std.size() != d || ckpt.spec.state_dim != d)
    throw SchemaError("checkpoint normalization does not match the system's state dimension");
  return p;
}

Predictor Predictor::from_trainer(const Trainer& trainer, const DatasetMeta& meta) {
  return Predictor{trainer.model(), {meta.norm_mean, meta.norm_std}, meta.T_c, meta.system};
}

std::vector<double> Predictor::function_vectors(const std::vector<Sample>& samples, Which which) const {
  const std::size_t d = state_dim(system), m = model.layout().m();
  std::vector<double> out;
  out.reserve(samples.size() * m);
  for (std::size_t start = 0; start < samples.size(); start += kEncodeChunk) {
    const std::size_t n = std::min(kEncodeChunk, samples.size() - start);
    std::vector<double> w(n * T_c * d);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& x = samples[start + i].x.states();
      if (static_cast<std::size_t>(x.rows()) != d || static_cast<std::size_t>(x.cols()) < T_c)
        throw ShapeError("sample does not fit the model's window");
      for (std::size_t t = 0; t < T_c; ++t)
        for (std::size_t j = 0; j < d; ++j) w[(i * T_c + t) * d + j] = (x(j, t) - norm.mean[j]) / norm.std[j];
    }
    const HeadOutputs h = model.heads(model.encode(Tensor::constant({n, T_c, d}, std::move(w))));
    const Tensor F = model.decode(which == Which::Invariant ? h.z_c : compose(h.z_c, h.z_e));
    out.insert(out.end(), F.values().begin(), F.values().end());
  }
  return out;
}

std::vector<double> Predictor::function_vector(const Sample& sample, Which which) const {
  return function_vectors({sample}, which);
}

VectorField Predictor::field(const Sample& sample, Which which) const {
  return decoded_field(model.layout(), function_vector(sample, which), norm);
}

VectorField decoded_field(const Layout& layout, std::vector<double> function_vector, const Normalization& norm) {
  if (function_vector.size() != layout.m()) throw ShapeError("FunctionVector length does not match the layout");
  const std::size_t d = layout.spec().dim;
  if (norm.mean.size() != d || norm.std.size() != d) throw ShapeError("normalization does not match the state dimension");
  const Eigen::Map<const Eigen::VectorXd> mean(norm.mean.data(), static_cast<Eigen::Index>(d));
  const Eigen::Map<const Eigen::VectorXd> scale(norm.std.data(), static_cast<Eigen::Index>(d));
  return [&layout, f = std::move(function_vector), mean = Eigen::VectorXd(mean), scale = Eigen::VectorXd(scale)](const State& x) {
    const State z = (x - mean).cwiseQuotient(scale);
    return State(deriv_net_eval(layout, f, z).cwiseProduct(scale));
  };
}

FieldSource model_fields(const Predictor& predictor) {
  return [&predictor](const Sample& s, Which which) { return predictor.field(s, which); };
}

FieldSource oracle_fields(SystemId system) {
  return [system](const Sample& s, Which which) {
    return which == Which::Invariant ? invariant_vector_field(system, s.params) : vector_field(system, s.env, s.params);
  };
}

Trajectory forecast(const FieldSource& fields, const Sample& sample, Which which, const TimeGrid& grid) {
  return integrate(fields(sample, which), sample.x.column(0), grid);
}

// --- evaluation ---------------------------------------------------------------------

double EvalMatrix::exclusion_rate() const {
  return samples == 0 ? 0.0 : static_cast<double>(excluded_fc + excluded_f) / (2.0 * static_cast<double>(samples));
}

std::string EvalMatrix::to_record() const {
  std::ostringstream os;
  os << "nrmse_fc_on_Xc=" << format_double(nrmse_fc_on_Xc) << "\n"
     << "nrmse_f_on_Xc=" << format_double(nrmse_f_on_Xc) << "\n"
     << "nrmse_fc_on_X=" << format_double(nrmse_fc_on_X) << "\n"
     << "nrmse_f_on_X=" << format_double(nrmse_f_on_X) << "\n"
     << "samples=" << samples << "\n"
     << "excluded_fc=" << excluded_fc << "\n"
     << "excluded_f=" << excluded_f << "\n"
     << "exclusion_rate=" << format_double(exclusion_rate()) << "\n"
     << "invariant_ordering=" << (invariant_ordering() ? 1 : 0) << "\n"
     << "full_ordering=" << (full_ordering() ? 1 : 0) << "\n";
  return os.str();
}

EvalMatrix EvalMatrix::from_record(const std::string& text) {
  EvalMatrix e;
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw SchemaError("eval record: expected key=value, got '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto num = [&](const char* k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw SchemaError(std::string("eval record lacks ") + k);
    return std::stod(it->second);
  };
  e.nrmse_fc_on_Xc = num("nrmse_fc_on_Xc");
  e.nrmse_f_on_Xc = num("nrmse_f_on_Xc");
  e.nrmse_fc_on_X = num("nrmse_fc_on_X");
  e.nrmse_f_on_X = num("nrmse_f_on_X");
  e.samples = static_cast<std::size_t>(num("samples"));
  e.excluded_fc = static_cast<std::size_t>(num("excluded_fc"));
  e.excluded_f = static_cast<std::size_t>(num("excluded_f"));
  return e;
}

EvalMatrix evaluate(const FieldSource& fields, const std::vector<Sample>& test, const TimeGrid& grid) {
  if (test.empty()) throw ContractError("evaluate: empty test set");
  EvalMatrix e;
  e.samples = test.size();
  std::vector<Eigen::MatrixXd> fc_pred, fc_xc, fc_x, f_pred, f_xc, f_x;
  for (const Sample& s : test) {
    if (!s.x_inv) throw ContractError("evaluate: test sample lacks its invariant trajectory");
    try {
      fc_pred.push_back(forecast(fields, s, Which::Invariant, grid).states());
      fc_xc.push_back(s.x_inv->states());
      fc_x.push_back(s.x.states());
    } catch (const IntegrationDiverged&) {
      ++e.excluded_fc;
    }
    try {
      f_pred.push_back(forecast(fields, s, Which::Full, grid).states());
      f_xc.push_back(s.x_inv->states());
      f_x.push_back(s.x.states());
    } catch (const IntegrationDiverged&) {
      ++e.excluded_f;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  e.nrmse_fc_on_Xc = fc_pred.empty() ? nan : nrmse(fc_pred, fc_xc);
  e.nrmse_fc_on_X = fc_pred.empty() ? nan : nrmse(fc_pred, fc_x);
  e.nrmse_f_on_Xc = f_pred.empty() ? nan : nrmse(f_pred, f_xc);
  e.nrmse_f_on_X = f_pred.empty() ? nan : nrmse(f_pred, f_x);
  return e;
}

EvalMatrix evaluate(const Predictor& predictor, const Dataset& data) {
  if (data.test.empty()) throw ContractError("evaluate: empty test set");
  // Encode the whole test set in batches, then integrate per sample.
  const auto fc = predictor.function_vectors(data.test, Which::Invariant);
  const auto f = predictor.function_vectors(data.test, Which::Full);
  const std::size_t m = predictor.model.layout().m();
  std::map<const Sample*, std::size_t> row;
  for (std::size_t i = 0; i < data.test.size(); ++i) row[&data.test[i]] = i;
  const FieldSource fields = [&](const Sample& s, Which which) {
    const std::size_t i = row.at(&s);
    const auto& src = which == Which::Invariant ? fc : f;
    return decoded_field(predictor.model.layout(), std::vector<double>(src.begin() + static_cast<std::ptrdiff_t>(i * m),
                                                                        src.begin() + static_cast<std::ptrdiff_t>((i + 1) * m)),
                         predictor.norm);
  };
  return evaluate(fields, data.test, data.meta.grid());
}

// --- sweeps -------------------------------------------------------------------------

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("quantile of an empty list");
  if (!(q >= 0.0 && q <= 1.0)) throw ContractError("quantile level outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

SweepSummary summarize(Method method, const std::vector<SweepRecord>& records) {
  SweepSummary s;
  s.method = method;
  s.metric = method == Method::DIF ? "nrmse_fc_on_Xc" : "nrmse_f_on_Xc";
  for (const auto& r : records) {
    if (r.ok && std::isfinite(r.metric))
      s.values.push_back(r.metric);
    else
      ++s.failures;
  }
  if (!s.values.empty()) {
    s.min = quantile(s.values, 0.0);
    s.q25 = quantile(s.values, 0.25);
    s.median = quantile(s.values, 0.5);
    s.q75 = quantile(s.values, 0.75);
    s.max = quantile(s.values, 1.0);
  } else {
    s.min = s.q25 = s.median = s.q75 = s.max = std::numeric_limits<double>::quiet_NaN();
  }
  return s;
}

SweepRecord run_candidate(const Dataset& data, const SweepConfig& cfg, std::size_t index,
                          const std::filesystem::path& out_dir) {
  SweepRecord r;
  r.method = cfg.method;
  r.index = index;
  r.seed = derive_seed(cfg.seed, {index});
  Rng rng(derive_seed(r.seed, {0x5eed}));
  r.hyper = sample_hyperparams(cfg.method, rng, cfg.log_uniform);
  TrainConfig tc = cfg.base;
  tc.method = cfg.method;
  tc.weights = r.hyper.weights;
  tc.lr = r.hyper.lr;
  tc.seed = r.seed;
  try {
    Trainer trainer(data, tc);
    std::ofstream log;
    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      log.open(out_dir / "train.log");
    }
    for (std::size_t it = 0; it < tc.iterations; ++it) {
      const StepReport rep = trainer.step();
      if (log.is_open() && tc.log_every > 0 && rep.iteration % tc.log_every == 0) log << rep.to_line() << "\n";
    }
    if (!out_dir.empty()) save_checkpoint(trainer.checkpoint(), out_dir / "model.ckpt");
    r.eval = evaluate(Predictor::from_trainer(trainer, data.meta), data);
    r.metric = cfg.method == Method::DIF ? r.eval.nrmse_fc_on_Xc : r.eval.nrmse_f_on_Xc;
    r.ok = std::isfinite(r.metric);
    if (!r.ok) r.error = "every forecast diverged";
  } catch (const Error& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

std::vector<SweepRecord> sweep(const Dataset& data, const SweepConfig& cfg, const std::filesystem::path& out_dir,
                               const std::function<void(const SweepRecord&)>& on_done) {
  std::vector<SweepRecord> records(cfg.candidates);
  std::atomic<std::size_t> next{0};
  std::mutex done_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cfg.candidates; i = next++) {
      records[i] = run_candidate(data, cfg, i, out_dir.empty() ? out_dir : out_dir / ("candidate_" + std::to_string(i)));
      if (on_done) {
        std::lock_guard lock(done_mutex);
        on_done(records[i]);
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(cfg.workers, cfg.candidates));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (!out_dir.empty()) {
    write_sweep_records(records, out_dir / "candidates.csv");
    write_sweep_summary(summarize(cfg.method, records), out_dir / "summary.txt");
  }
  return records;
}

void write_sweep_records(const std::vector<SweepRecord>& records, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "method,index,seed,ok,lr,lambda_c,lambda_dis,lambda_adv_ratio,lambda_adv,lambda_irm,lambda_vrex,"
         "nrmse_fc_on_Xc,nrmse_f_on_Xc,nrmse_fc_on_X,nrmse_f_on_X,excluded_fc,excluded_f,metric,error\n";
  for (const auto& r : records) {
    const auto& w = r.hyper.weights;
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << method_name(r.method) << "," << r.index << "," << r.seed << "," << (r.ok ? 1 : 0) << "," << format_double(r.hyper.lr) << ","
        << format_double(w.lambda_c) << "," << format_double(w.lambda_dis) << "," << format_double(w.lambda_adv_ratio)
        << "," << format_double(w.lambda_adv()) << "," << format_double(w.lambda_irm) << ","
        << format_double(w.lambda_vrex) << "," << format_double(r.eval.nrmse_fc_on_Xc) << ","
        << format_double(r.eval.nrmse_f_on_Xc) << "," << format_double(r.eval.nrmse_fc_on_X) << ","
        << format_double(r.eval.nrmse_f_on_X) << "," << r.eval.excluded_fc << "," << r.eval.excluded_f << ","
        << format_double(r.metric) << "," << err << "\n";
  }
}

std::vector<SweepRecord> read_sweep_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("method,index,seed,ok,", 0) != 0)
    throw SchemaError(path.string() + ": not a sweep candidates file");
  std::vector<SweepRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (f.size() == 18) f.emplace_back();
    if (f.size() != 19) throw SchemaError(path.string() + ": wrong field count in '" + line + "'");
    SweepRecord r;
    try {
      r.method = parse_method(f[0]);
      r.index = std::stoull(f[1]);
      r.seed = std::stoull(f[2]);
      r.ok = f[3] == "1";
      r.hyper.lr = std::stod(f[4]);
      r.hyper.weights.lambda_c = std::stod(f[5]);
      r.hyper.weights.lambda_dis = std::stod(f[6]);
      r.hyper.weights.lambda_adv_ratio = std::stod(f[7]);
      r.hyper.weights.lambda_irm = std::stod(f[9]);
      r.hyper.weights.lambda_vrex = std::stod(f[10]);
      r.eval.nrmse_fc_on_Xc = std::stod(f[11]);
      r.eval.nrmse_f_on_Xc = std::stod(f[12]);
      r.eval.nrmse_fc_on_X = std::stod(f[13]);
      r.eval.nrmse_f_on_X = std::stod(f[14]);
      r.eval.excluded_fc = std::stoull(f[15]);
      r.eval.excluded_f = std::stoull(f[16]);
      r.metric = std::stod(f[17]);
    } catch (const std::logic_error&) {
      throw SchemaError(path.string() + ": malformed record '" + line + "'");
    }
    r.error = f[18];
    out.push_back(std::move(r));
  }
  return out;
}

void write_sweep_summary(const SweepSummary& s, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "method=" << method_name(s.method) << "\nmetric=" << s.metric << "\ncandidates=" << s.values.size() + s.failures
      << "\nfailures=" << s.failures << "\nmin=" << format_double(s.min) << "\nq25=" << format_double(s.q25)
      << "\nmedian=" << format_double(s.median) << "\nq75=" << format_double(s.q75) << "\nmax=" << format_double(s.max)
      << "\n";
}

// --- exports ------------------------------------------------------------------------

std::size_t export_sr_data(const Predictor& predictor, const Dataset& data, const std::filesystem::path& path) {
  if (data.test.empty()) throw ContractError("export_sr_data: empty test set");
  const SystemId sys = data.meta.system;
  auto out = open_out(path);
  out << "sample,env";
  for (auto n : common_param_names(sys)) out << "," << n;
  for (auto n : state_names(sys)) out << "," << n;
  for (auto n : state_names(sys)) out << ",d" << n << "_dt";
  out << "\n";
  const auto F = predictor.function_vectors(data.test, Which::Invariant);
  const std::size_t m = predictor.model.layout().m();
  std::size_t rows = 0;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    const Sample& s = data.test[i];
    const VectorField f = decoded_field(predictor.model.layout(),
                                        std::vector<double>(F.begin() + static_cast<std::ptrdiff_t>(i * m),
                                                            F.begin() + static_cast<std::ptrdiff_t>((i + 1) * m)),
                                        predictor.norm);
    std::string prefix = std::to_string(i) + "," + std::string(env_names(sys)[static_cast<std::size_t>(s.env)]);
    for (auto n : common_param_names(sys)) prefix += "," + format_double(s.params.get(n));
    for (std::size_t t = 0; t < s.x.length(); ++t) {
      const State x = s.x.column(t);
      const State dx = f(x);
      out << prefix;
      for (Eigen::Index j = 0; j < x.size(); ++j) out << "," << format_double(x[j]);
      for (Eigen::Index j = 0; j < dx.size(); ++j) out << "," << format_double(dx[j]);
      out << "\n";
      ++rows;
    }
  }
  return rows;
}

void export_plot_data(const Predictor& predictor, const Dataset& data, const std::filesystem::path& dir,
                      std::size_t max_samples) {
  if (data.test.empty()) throw ContractError("export_plot_data: empty test set");
  const SystemId sys = data.meta.system;
  const TimeGrid grid = data.meta.grid();
  auto out = open_out(dir / "trajectories.csv");
  out << "sample,env,t,series";
  for (auto n : state_names(sys)) out << "," << n;
  out << "\n";
  const FieldSource fields = model_fields(predictor);
  const std::size_t n = std::min(max_samples, data.test.size());
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = data.test[i];
    std::vector<std::pair<std::string, std::optional<Trajectory>>> series;
    series.emplace_back("X", s.x);
    series.emplace_back("Xc", s.x_inv);
    for (auto [name, which] : {std::pair{"f_forecast", Which::Full}, std::pair{"fc_forecast", Which::Invariant}}) {
      try {
        series.emplace_back(name, forecast(fields, s, which, grid));
      } catch (const IntegrationDiverged&) {
        series.emplace_back(name, std::nullopt);
      }
    }
    const std::string env(env_names(sys)[static_cast<std::size_t>(s.env)]);
    for (const auto& [name, traj] : series) {
      if (!traj) continue;
      for (std::size_t t = 0; t < traj->length(); ++t) {
        out << i << "," << env << "," << format_double(grid.time(t)) << "," << name;
        for (Eigen::Index j = 0; j < traj->states().rows(); ++j)
          out << "," << format_double(traj->states()(j, static_cast<Eigen::Index>(t)));
        out << "\n";
      }
    }
  }
}

void export_sweep_plot_data(const std::vector<SweepRecord>& records, const std::filesystem::path& dir) {
  write_sweep_records(records, dir / "candidates.csv");
  auto out = open_out(dir / "quantiles.csv");
  out << "method,metric,candidates,failures,min,q25,median,q75,max\n";
  std::map<Method, std::vector<SweepRecord>> by_method;
  for (const auto& r : records) by_method[r.method].push_back(r);
  for (const auto& [method, rs] : by_method) {
    const SweepSummary s = summarize(method, rs);
    out << method_name(method) << "," << s.metric << "," << rs.size() << "," << s.failures << "," << format_double(s.min)
        << "," << format_double(s.q25) << "," << format_double(s.median) << "," << format_double(s.q75) << ","
        << format_double(s.max) << "\n";
  }
}

}  // namespace dif
