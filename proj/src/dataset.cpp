#include "dif/dataset.hpp"

#include "dif/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

namespace dif {

namespace {

constexpr std::string_view kFormat = "dif-dataset-v1";

enum class Split : std::uint64_t { Train = 1, Test = 2 };

Sample generate_sample(const GenConfig& cfg, Split split, int env, std::size_t index, const TimeGrid& grid) {
  Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(env), index}));
  for (int attempt = 0; attempt <= kMaxResamples; ++attempt) {
    ParamSet ps = sample_params(cfg.system, rng);
    try {
      Trajectory x = integrate(vector_field(cfg.system, env, ps), ps.x0, grid);
      std::optional<Trajectory> x_inv;
      if (split == Split::Test) x_inv = integrate(invariant_vector_field(cfg.system, ps), ps.x0, grid);
      if (cfg.noise_std > 0.0) {
        std::normal_distribution<double> noise(0.0, cfg.noise_std);
        Eigen::MatrixXd noisy = x.states();
        // column 0 stays the exact initial state shared with x_inv
        for (Eigen::Index k = 1; k < noisy.cols(); ++k)
          for (Eigen::Index r = 0; r < noisy.rows(); ++r) noisy(r, k) += noise(rng);
        x = Trajectory(std::move(noisy), grid);
      }
      return Sample{std::move(x), env, std::move(ps), std::move(x_inv)};
    } catch (const IntegrationDiverged&) {
      continue;
    }
  }
  throw Error("generate_dataset: sample " + std::to_string(index) + " of environment " + std::to_string(env) +
              " diverged after " + std::to_string(kMaxResamples) + " resamples");
}

std::vector<Sample> generate_split(const GenConfig& cfg, Split split, std::size_t total, const TimeGrid& grid) {
  const std::size_t n_env = cfg.envs.size();
  if (total % n_env != 0)
    throw ContractError("generate_dataset: " + std::to_string(total) + " samples do not split evenly over " +
                        std::to_string(n_env) + " environments");
  std::vector<Sample> out;
  out.reserve(total);
  for (int env : cfg.envs)
    for (std::size_t i = 0; i < total / n_env; ++i) out.push_back(generate_sample(cfg, split, env, i, grid));
  return out;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += format_double(v[i]);
  }
  return s;
}

double parse_double(std::string_view tok, const std::string& where) {
  std::string s(tok);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw SchemaError(where + ": malformed number '" + s + "'");
  return v;
}

std::uint64_t parse_uint(std::string_view tok, const std::string& where) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw SchemaError(where + ": malformed integer '" + std::string(tok) + "'");
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> tokens(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

void write_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  bool first = true;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (!first) os << ' ';
      os << format_double(m(r, c));
      first = false;
    }
}

void write_record(std::ostream& os, const Sample& s) {
  const SystemId sys = s.params.system;
  os << system_name(sys) << ' ' << s.env;
  const auto names = param_names(sys);
  for (std::size_t i = 0; i < names.size(); ++i) os << ' ' << names[i] << '=' << format_double(s.params.values[i]);
  const auto states = state_names(sys);
  for (std::size_t i = 0; i < states.size(); ++i)
    os << ' ' << states[i] << "0=" << format_double(s.params.x0[static_cast<Eigen::Index>(i)]);
  os << " | " << s.x.length() << ' ' << s.x.dim() << " | ";
  write_matrix(os, s.x.states());
  if (s.x_inv) {
    os << " | ";
    write_matrix(os, s.x_inv->states());
  }
  os << '\n';
}

Eigen::MatrixXd read_matrix(std::string_view field, std::size_t d, std::size_t T, const std::string& where) {
  const auto toks = tokens(field);
  if (toks.size() != d * T)
    throw SchemaError(where + ": expected " + std::to_string(d * T) + " values, found " + std::to_string(toks.size()));
  Eigen::MatrixXd m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(T));
  std::size_t k = 0;
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < T; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = parse_double(toks[k++], where);
  return m;
}

Sample read_record(std::string_view line, const DatasetMeta& meta, bool test, const std::string& where) {
  const auto fields = split(line, '|');
  const std::size_t expected = test ? 4 : 3;
  if (fields.size() != expected)
    throw SchemaError(where + ": expected " + std::to_string(expected) + " '|'-separated fields, found " +
                      std::to_string(fields.size()));
  const auto head = tokens(fields[0]);
  const SystemId sys = meta.system;
  const auto names = param_names(sys);
  const auto states = state_names(sys);
  if (head.size() != 2 + names.size() + states.size())
    throw SchemaError(where + ": wrong number of header tokens");
  if (head[0] != system_name(sys)) throw SchemaError(where + ": system '" + std::string(head[0]) + "' does not match meta");
  const int env = static_cast<int>(parse_uint(head[1], where));
  if (std::find(meta.envs.begin(), meta.envs.end(), env) == meta.envs.end())
    throw SchemaError(where + ": environment " + std::to_string(env) + " not listed in meta");
  ParamSet ps;
  ps.system = sys;
  auto key_value = [&](std::string_view tok, std::string_view key) {
    const auto eq = tok.find('=');
    if (eq == std::string_view::npos || tok.substr(0, eq) != key)
      throw SchemaError(where + ": expected '" + std::string(key) + "=...', found '" + std::string(tok) + "'");
    return parse_double(tok.substr(eq + 1), where);
  };
  for (std::size_t i = 0; i < names.size(); ++i) ps.values.push_back(key_value(head[2 + i], names[i]));
  ps.x0.resize(static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i)
    ps.x0[static_cast<Eigen::Index>(i)] = key_value(head[2 + names.size() + i], std::string(states[i]) + "0");

  const auto dims = tokens(fields[1]);
  if (dims.size() != 2) throw SchemaError(where + ": dimension field must be 'T d'");
  const std::size_t T = parse_uint(dims[0], where);
  const std::size_t d = parse_uint(dims[1], where);
  if (T != meta.T || d != state_dim(sys)) throw SchemaError(where + ": dimensions disagree with meta");
  const TimeGrid grid = meta.grid();
  try {
    Trajectory x(read_matrix(fields[2], d, T, where), grid);
    std::optional<Trajectory> x_inv;
    if (test) {
      x_inv = Trajectory(read_matrix(fields[3], d, T, where), grid);
      if (x_inv->states().col(0) != x.states().col(0))
        throw SchemaError(where + ": invariant trajectory does not share the initial state");
    }
    return Sample{std::move(x), env, std::move(ps), std::move(x_inv)};
  } catch (const SchemaError&) {
    throw;
  } catch (const Error& e) {
    throw SchemaError(where + ": " + e.what());
  }
}

std::vector<Sample> read_split(const std::filesystem::path& file, const DatasetMeta& meta, bool test,
                               std::size_t expected) {
  std::ifstream in(file);
  if (!in) throw SchemaError("cannot open " + file.string());
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    out.push_back(read_record(line, meta, test, file.filename().string() + " record " + std::to_string(lineno)));
  }
  if (out.size() != expected)
    throw SchemaError(file.filename().string() + ": expected " + std::to_string(expected) + " records, found " +
                      std::to_string(out.size()));
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int DatasetMeta::env_class(int env) const {
  const auto it = std::find(envs.begin(), envs.end(), env);
  if (it == envs.end()) throw ContractError("environment " + std::to_string(env) + " is not part of this dataset");
  return static_cast<int>(it - envs.begin());
}

double default_tc_factor(SystemId system) { return system == SystemId::Pendulum ? 3.0 : 2.0; }

Dataset generate_dataset(const GenConfig& cfg) {
  if (cfg.envs.empty()) throw ContractError("generate_dataset: no environments selected");
  for (int e : cfg.envs)
    if (e < 0 || e >= kEnvsPerSystem) throw ContractError("generate_dataset: environment " + std::to_string(e) + " outside 0..3");
  if (cfg.T < 3) throw ContractError("generate_dataset: T must be at least 3");
  const double factor = cfg.tc_factor > 0.0 ? cfg.tc_factor : default_tc_factor(cfg.system);
  const auto tc = static_cast<std::size_t>(std::floor(static_cast<double>(cfg.T) / factor));
  if (tc < 1 || tc >= cfg.T) throw ContractError("generate_dataset: input-length factor gives T_c outside [1, T)");

  const TimeGrid grid(0.0, cfg.dt, cfg.T);
  Dataset data;
  data.meta.system = cfg.system;
  data.meta.seed = cfg.seed;
  data.meta.n_train = cfg.n_train;
  data.meta.n_test = cfg.n_test;
  data.meta.T = cfg.T;
  data.meta.dt = cfg.dt;
  data.meta.T_c = tc;
  data.meta.envs = cfg.envs;
  data.meta.noise_std = cfg.noise_std;
  data.train = generate_split(cfg, Split::Train, cfg.n_train, grid);
  data.test = generate_split(cfg, Split::Test, cfg.n_test, grid);

  const std::size_t d = state_dim(cfg.system);
  data.meta.norm_mean.assign(d, 0.0);
  data.meta.norm_std.assign(d, 0.0);
  double count = 0.0;
  for (const auto& s : data.train) {
    for (std::size_t r = 0; r < d; ++r) data.meta.norm_mean[r] += s.x.states().row(static_cast<Eigen::Index>(r)).sum();
    count += static_cast<double>(cfg.T);
  }
  for (auto& m : data.meta.norm_mean) m /= count;
  for (const auto& s : data.train)
    for (std::size_t r = 0; r < d; ++r)
      data.meta.norm_std[r] +=
          (s.x.states().row(static_cast<Eigen::Index>(r)).array() - data.meta.norm_mean[r]).square().sum();
  for (auto& v : data.meta.norm_std) {
    v = std::sqrt(v / count);
    if (!(v > 0.0)) throw Error("generate_dataset: a state dimension is constant over the training set");
  }
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "meta.txt");
    const DatasetMeta& m = data.meta;
    std::string envs;
    for (std::size_t i = 0; i < m.envs.size(); ++i) envs += (i ? "," : "") + std::to_string(m.envs[i]);
    os << "format=" << kFormat << '\n'
       << "system=" << system_name(m.system) << '\n'
       << "seed=" << m.seed << '\n'
       << "n_train=" << m.n_train << '\n'
       << "n_test=" << m.n_test << '\n'
       << "T=" << m.T << '\n'
       << "dt=" << format_double(m.dt) << '\n'
       << "T_c=" << m.T_c << '\n'
       << "envs=" << envs << '\n'
       << "noise_std=" << format_double(m.noise_std) << '\n'
       << "norm_mean=" << join_doubles(m.norm_mean) << '\n'
       << "norm_std=" << join_doubles(m.norm_std) << '\n';
    if (!os) throw Error("cannot write " + (dir / "meta.txt").string());
  }
  auto write_split = [&](const std::vector<Sample>& samples, const char* name) {
    std::ofstream os(dir / name);
    for (const auto& s : samples) write_record(os, s);
    if (!os) throw Error("cannot write " + (dir / name).string());
  };
  write_split(data.train, "train.ndrec");
  write_split(data.test, "test.ndrec");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.txt");
  if (!in) throw SchemaError("cannot open " + (dir / "meta.txt").string());
  constexpr std::array<std::string_view, 12> kKeys{"format", "system", "seed",      "n_train",   "n_test",    "T",
                                                   "dt",     "T_c",    "envs",      "noise_std", "norm_mean", "norm_std"};
  std::array<std::string, 12> values;
  std::string line;
  std::size_t k = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::string where = "meta.txt line " + std::to_string(k + 1);
    if (k >= kKeys.size()) throw SchemaError(where + ": unexpected extra entry");
    const auto eq = line.find('=');
    if (eq == std::string::npos || std::string_view(line).substr(0, eq) != kKeys[k])
      throw SchemaError(where + ": expected key '" + std::string(kKeys[k]) + "'");
    values[k++] = line.substr(eq + 1);
  }
  if (k != kKeys.size()) throw SchemaError("meta.txt: truncated, missing '" + std::string(kKeys[k]) + "'");
  if (values[0] != kFormat) throw SchemaError("meta.txt: unsupported format '" + values[0] + "'");

  Dataset data;
  DatasetMeta& m = data.meta;
  try {
    m.system = parse_system(values[1]);
  } catch (const ContractError& e) {
    throw SchemaError(std::string("meta.txt: ") + e.what());
  }
  m.seed = parse_uint(values[2], "meta.txt seed");
  m.n_train = parse_uint(values[3], "meta.txt n_train");
  m.n_test = parse_uint(values[4], "meta.txt n_test");
  m.T = parse_uint(values[5], "meta.txt T");
  m.dt = parse_double(values[6], "meta.txt dt");
  m.T_c = parse_uint(values[7], "meta.txt T_c");
  m.envs.clear();
  for (auto tok : split(values[8], ',')) m.envs.push_back(static_cast<int>(parse_uint(tok, "meta.txt envs")));
  m.noise_std = parse_double(values[9], "meta.txt noise_std");
  for (auto tok : split(values[10], ',')) m.norm_mean.push_back(parse_double(tok, "meta.txt norm_mean"));
  for (auto tok : split(values[11], ',')) m.norm_std.push_back(parse_double(tok, "meta.txt norm_std"));

  const std::size_t d = state_dim(m.system);
  if (m.norm_mean.size() != d || m.norm_std.size() != d)
    throw SchemaError("meta.txt: normalization vectors must have " + std::to_string(d) + " entries");
  for (double s : m.norm_std)
    if (!(s > 0.0) || !std::isfinite(s)) throw SchemaError("meta.txt: norm_std entries must be positive");
  if (!(m.dt > 0.0)) throw SchemaError("meta.txt: dt must be positive");
  if (m.T < 3 || m.T_c < 1 || m.T_c >= m.T) throw SchemaError("meta.txt: need T >= 3 and 1 <= T_c < T");
  for (int e : m.envs)
    if (e < 0 || e >= kEnvsPerSystem) throw SchemaError("meta.txt: environment index outside 0..3");

  data.train = read_split(dir / "train.ndrec", m, false, m.n_train);
  data.test = read_split(dir / "test.ndrec", m, true, m.n_test);
  return data;
}

}  // namespace dif
