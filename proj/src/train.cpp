#include "dif/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace dif {

using grad::Shape;
using grad::Tensor;

namespace {

// Averaging matrix [E, B]: row e holds 1/n_e at the samples of class e.
Tensor class_average_matrix(std::span<const int> env_class, std::size_t num_envs, std::size_t* populated) {
  const std::size_t B = env_class.size();
  std::vector<double> counts(num_envs, 0.0);
  for (int c : env_class) {
    if (c < 0 || static_cast<std::size_t>(c) >= num_envs) throw ContractError("environment class out of range");
    counts[c] += 1.0;
  }
  std::vector<double> a(num_envs * B, 0.0);
  for (std::size_t b = 0; b < B; ++b) a[env_class[b] * B + b] = 1.0 / counts[env_class[b]];
  if (populated) *populated = static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0; }));
  // classes without samples would give empty rows; keep only populated ones
  std::vector<double> rows;
  std::size_t kept = 0;
  for (std::size_t e = 0; e < num_envs; ++e)
    if (counts[e] > 0) {
      rows.insert(rows.end(), a.begin() + static_cast<std::ptrdiff_t>(e * B), a.begin() + static_cast<std::ptrdiff_t>((e + 1) * B));
      ++kept;
    }
  return Tensor::constant({kept, B}, std::move(rows));
}

// [B, ...] -> [B] sums of each sample's entries.
Tensor per_sample_sum(const Tensor& t) { return grad::sum_last(grad::reshape(t, {t.dim(0), t.numel() / t.dim(0)})); }

std::string normalize_key(std::string k) {
  std::replace(k.begin(), k.end(), '-', '_');
  return k;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ContractError("config: " + key + " expects a number, got '" + v + "'");
  }
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(x);
  } catch (const std::exception&) {
    throw ContractError("config: " + key + " expects a non-negative integer, got '" + v + "'");
  }
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

double global_norm(const std::vector<std::span<const double>>& gs) {
  double s = 0.0;
  for (const auto& g : gs)
    for (double x : g) s += x * x;
  return std::sqrt(s);
}

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::ERM: return "erm";
    case Method::DIF: return "dif";
    case Method::IRM: return "irm";
    case Method::VREx: return "vrex";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::ERM, Method::DIF, Method::IRM, Method::VREx})
    if (method_name(m) == name) return m;
  throw ContractError("unknown method '" + std::string(name) + "' (expected erm, dif, irm or vrex)");
}

LossWeights default_weights(Method m) {
  LossWeights w;
  switch (m) {
    case Method::ERM: break;
    case Method::DIF:
      w.lambda_c = 1.0;
      w.lambda_dis = 1.0;
      w.lambda_adv_ratio = 10.0;
      break;
    case Method::IRM: w.lambda_irm = 1.0; break;
    case Method::VREx: w.lambda_vrex = 1.0; break;
  }
  return w;
}

// --- config -------------------------------------------------------------------------

std::string_view schedule_name(LrSchedule s) { return s == LrSchedule::Cosine ? "cosine" : "constant"; }

LrSchedule parse_schedule(std::string_view name) {
  if (name == "constant") return LrSchedule::Constant;
  if (name == "cosine") return LrSchedule::Cosine;
  throw ContractError("config: lr_schedule must be constant or cosine, got '" + std::string(name) + "'");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "method",         "iters",         "batch",       "lr",          "lr_schedule",  "beta1",        "beta2",
      "adam_eps",       "seed",          "lambda_c",    "lambda_dis",  "lambda_adv_ratio", "lambda_irm",
      "lambda_vrex",    "disc_ratio",    "clip_norm",   "log_every",   "ckpt_every",   "encoder_layers",
      "encoder_heads",  "model_dim",     "ffn_dim",     "embed_dim",   "head_hidden",  "decoder_hidden",
      "deriv_depth",    "deriv_width",   "disc_layers", "disc_width"};
  return keys;
}

void apply_config(TrainConfig& cfg, const std::map<std::string, std::string>& raw) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : raw) kv[normalize_key(k)] = v;
  for (const auto& [k, v] : kv)
    if (std::find(config_keys().begin(), config_keys().end(), k) == config_keys().end())
      throw ContractError("config: unknown key '" + k + "'");
  if (auto it = kv.find("method"); it != kv.end()) {
    cfg.method = parse_method(it->second);
    cfg.weights = default_weights(cfg.method);
  }
  auto num = [&](const char* key, double& dst) {
    if (auto it = kv.find(key); it != kv.end()) dst = parse_double(key, it->second);
  };
  auto count = [&](const char* key, std::size_t& dst) {
    if (auto it = kv.find(key); it != kv.end()) dst = parse_count(key, it->second);
  };
  count("iters", cfg.iterations);
  count("batch", cfg.batch);
  num("lr", cfg.lr);
  if (auto it = kv.find("lr_schedule"); it != kv.end()) cfg.lr_schedule = parse_schedule(it->second);
  num("beta1", cfg.beta1);
  num("beta2", cfg.beta2);
  num("adam_eps", cfg.adam_eps);
  if (auto it = kv.find("seed"); it != kv.end()) cfg.seed = parse_count("seed", it->second);
  num("lambda_c", cfg.weights.lambda_c);
  num("lambda_dis", cfg.weights.lambda_dis);
  num("lambda_adv_ratio", cfg.weights.lambda_adv_ratio);
  num("lambda_irm", cfg.weights.lambda_irm);
  num("lambda_vrex", cfg.weights.lambda_vrex);
  count("disc_ratio", cfg.disc_ratio);
  num("clip_norm", cfg.clip_norm);
  count("log_every", cfg.log_every);
  count("ckpt_every", cfg.checkpoint_every);
  count("encoder_layers", cfg.model.encoder.layers);
  count("encoder_heads", cfg.model.encoder.heads);
  count("model_dim", cfg.model.encoder.model_dim);
  count("ffn_dim", cfg.model.encoder.ffn_dim);
  count("embed_dim", cfg.model.embed_dim);
  count("head_hidden", cfg.model.head_hidden);
  count("decoder_hidden", cfg.model.decoder_hidden);
  count("deriv_depth", cfg.model.deriv.depth);
  count("deriv_width", cfg.model.deriv.width);
  count("disc_layers", cfg.model.disc_layers);
  count("disc_width", cfg.model.disc_width);
  const LossWeights& w = cfg.weights;
  for (double x : {w.lambda_c, w.lambda_dis, w.lambda_adv_ratio, w.lambda_irm, w.lambda_vrex})
    if (!(x >= 0.0) || !std::isfinite(x)) throw ContractError("config: loss weights must be finite and >= 0");
  if (cfg.batch == 0) throw ContractError("config: batch must be positive");
  if (!(cfg.lr > 0.0)) throw ContractError("config: lr must be positive");
  if (cfg.disc_ratio == 0) throw ContractError("config: disc_ratio must be >= 1");
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[normalize_key(trim(line.substr(0, eq)))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::string StepReport::to_line() const {
  std::ostringstream os;
  os << "iter=" << iteration << " loss_main=" << format_double(loss_main) << " loss_inv=" << format_double(loss_inv)
     << " loss_disc_c=" << format_double(loss_disc_c) << " loss_disc_e=" << format_double(loss_disc_e)
     << " loss_adv=" << format_double(loss_adv) << " disc_acc_e=" << format_double(disc_acc_e)
     << " penalty=" << format_double(penalty);
  for (std::size_t e = 0; e < env_risks.size(); ++e) os << " risk_" << e << "=" << format_double(env_risks[e]);
  return os.str();
}

// --- targets and losses -------------------------------------------------------------

std::vector<Eigen::MatrixXd> derivative_targets(const std::vector<Sample>& samples, const DatasetMeta& meta) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) {
    Eigen::MatrixXd d = numerical_derivative(s.x);
    for (Eigen::Index i = 0; i < d.rows(); ++i) d.row(i) /= meta.norm_std.at(static_cast<std::size_t>(i));
    out.push_back(std::move(d));
  }
  return out;
}

Tensor sample_sq_error(const Tensor& pred, const Tensor& target) {
  return grad::mul_scalar(grad::sum(grad::square(grad::sub(pred, target))), 1.0 / static_cast<double>(pred.dim(0)));
}

Tensor per_env_risks(const Tensor& pred, const Tensor& target, std::span<const int> env_class, std::size_t num_envs) {
  if (env_class.size() != pred.dim(0)) throw ShapeError("per_env_risks: one environment label per sample required");
  const Tensor avg = class_average_matrix(env_class, num_envs, nullptr);
  const Tensor per_sample = per_sample_sum(grad::square(grad::sub(pred, target)));
  return grad::reshape(grad::matmul(avg, grad::reshape(per_sample, {pred.dim(0), 1})), {avg.dim(0)});
}

Tensor irm_penalty(const Tensor& pred, const Tensor& target, std::span<const int> env_class, std::size_t num_envs) {
  if (env_class.size() != pred.dim(0)) throw ShapeError("irm_penalty: one environment label per sample required");
  const Tensor avg = class_average_matrix(env_class, num_envs, nullptr);
  // d/dw sum ||y - w f||^2 at w = 1 is -2 sum (y - f) . f
  const Tensor slope = grad::mul_scalar(per_sample_sum(grad::mul(grad::sub(target, pred), pred)), -2.0);
  const Tensor env_slope = grad::matmul(avg, grad::reshape(slope, {pred.dim(0), 1}));
  return grad::sum(grad::square(env_slope));
}

Tensor vrex_penalty(const Tensor& risks) {
  if (risks.numel() < 2) throw ContractError("vrex_penalty: at least two environments required");
  return grad::variance(risks);
}

HyperSample sample_hyperparams(Method method, Rng& rng, bool log_uniform) {
  auto draw = [&](double lo, double hi) { return log_uniform ? dif::log_uniform(rng, lo, hi) : uniform(rng, lo, hi); };
  HyperSample h;
  switch (method) {
    case Method::ERM: break;
    case Method::DIF:
      h.weights.lambda_c = draw(1e-7, 1e-4);
      h.weights.lambda_dis = draw(0.1, 1.0);
      h.weights.lambda_adv_ratio = draw(1e2, 1e6);
      break;
    case Method::IRM: h.weights.lambda_irm = draw(1e-2, 1e2); break;
    case Method::VREx: h.weights.lambda_vrex = draw(1e-1, 1e3); break;
  }
  h.lr = uniform(rng, 1e-4, 1e-3);
  return h;
}

// --- Adam -----------------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(const grad::Gradients& grads, double clip_norm) {
  ++t_;
  double scale = 1.0;
  if (clip_norm > 0.0) {
    std::vector<std::span<const double>> gs;
    for (const auto& p : params_)
      if (grads.contains(p)) gs.push_back(grads.of(p));
    const double n = global_norm(gs);
    if (n > clip_norm) scale = clip_norm / n;
  }
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto w = params_[k].mutable_values();
    const bool has = grads.contains(params_[k]);
    const std::span<const double> g = has ? grads.of(params_[k]) : std::span<const double>();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has ? g[i] * scale : 0.0;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

// --- trainer ----------------------------------------------------------------------

ModelSpec model_spec_for(const DatasetMeta& meta, const ModelSpec& base) {
  ModelSpec s = base;
  s.state_dim = state_dim(meta.system);
  s.deriv.dim = s.state_dim;
  s.num_envs = meta.envs.size();
  return s;
}

Trainer::Trainer(const Dataset& data, TrainConfig cfg)
    : data_(data),
      cfg_(std::move(cfg)),
      model_(model_spec_for(data.meta, cfg_.model), derive_seed(cfg_.seed, {1})),
      exec_full_(model_.layout(), ExecMode::ReferenceBased, cfg_.batch),
      exec_inv_(model_.layout(), ExecMode::ReferenceBased, cfg_.batch),
      opt_main_(model_.params().theta(), cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.adam_eps),
      opt_disc_(cfg_.method == Method::DIF ? [&] {
        auto p = model_.params().phi();
        const auto e = model_.params().theta_bar_e();
        p.insert(p.end(), e.begin(), e.end());
        return p;
      }()
                                            : std::vector<Tensor>{},
                cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.adam_eps),
      rng_(derive_seed(cfg_.seed, {2})) {
  if (data.train.empty()) throw ContractError("training set is empty");
  const DatasetMeta& meta = data.meta;
  if (meta.T_c < 1 || meta.T_c > meta.T) throw ContractError("dataset T_c out of range");
  by_class_.resize(meta.envs.size());
  const auto targets = derivative_targets(data.train, meta);
  const std::size_t d = state_dim(meta.system), T = meta.T;
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    const Sample& s = data.train[i];
    by_class_[meta.env_class(s.env)].push_back(i);
    std::vector<double> x(T * d), y(T * d);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < d; ++j) {
        x[t * d + j] = (s.x.states()(j, t) - meta.norm_mean[j]) / meta.norm_std[j];
        y[t * d + j] = targets[i](j, t);
      }
    states_.push_back(std::move(x));
    targets_.push_back(std::move(y));
  }
  for (const auto& c : by_class_)
    if (c.empty()) throw ContractError("every dataset environment needs training samples");
}

Trainer::Batch Trainer::sample_batch() {
  const std::size_t E = by_class_.size(), B = cfg_.batch;
  const std::size_t d = state_dim(data_.meta.system), T = data_.meta.T, Tc = data_.meta.T_c;
  Batch b;
  std::vector<std::size_t> picks;
  // stratified: B / E per class, the remainder spread over the first classes
  for (std::size_t e = 0; e < E; ++e) {
    const std::size_t want = B / E + (e < B % E ? 1 : 0);
    // without replacement within a class; a class smaller than its share is reused from the top
    std::vector<std::size_t> pool;
    for (std::size_t k = 0; k < want; ++k) {
      if (pool.empty()) pool = by_class_[e];
      const auto j = std::min(pool.size() - 1, static_cast<std::size_t>(uniform01(rng_) * static_cast<double>(pool.size())));
      std::swap(pool[j], pool.back());
      picks.push_back(pool.back());
      pool.pop_back();
      b.labels.push_back(static_cast<int>(e));
    }
  }
  std::vector<double> w(B * Tc * d), x(B * T * d), y(B * T * d);
  for (std::size_t i = 0; i < B; ++i) {
    const auto& xs = states_[picks[i]];
    std::copy(xs.begin(), xs.end(), x.begin() + static_cast<std::ptrdiff_t>(i * T * d));
    std::copy(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(Tc * d), w.begin() + static_cast<std::ptrdiff_t>(i * Tc * d));
    const auto& ys = targets_[picks[i]];
    std::copy(ys.begin(), ys.end(), y.begin() + static_cast<std::ptrdiff_t>(i * T * d));
  }
  b.windows = Tensor::constant({B, Tc, d}, std::move(w));
  b.states = Tensor::constant({B, T, d}, std::move(x));
  b.targets = Tensor::constant({B, T, d}, std::move(y));
  return b;
}

double Trainer::lr_at(std::size_t iteration) const {
  if (cfg_.lr_schedule == LrSchedule::Constant || cfg_.iterations == 0) return cfg_.lr;
  const double progress = std::min(1.0, static_cast<double>(iteration - 1) / static_cast<double>(cfg_.iterations));
  return 0.5 * cfg_.lr * (1.0 + std::cos(std::numbers::pi * progress));
}

StepReport Trainer::step() {
  const Batch batch = sample_batch();
  const LossWeights& w = cfg_.weights;
  const std::size_t E = by_class_.size();
  StepReport r;
  r.iteration = ++iteration_;

  const Tensor z = model_.encode(batch.windows);
  const HeadOutputs h = model_.heads(z);
  const Tensor F = model_.decode(compose(h.z_c, h.z_e));
  const Tensor pred = exec_full_.apply(F, batch.states);
  const Tensor l_full = sample_sq_error(pred, batch.targets);
  const Tensor risks = per_env_risks(pred, batch.targets, batch.labels, E);
  r.loss_main = l_full.item();
  r.env_risks.assign(risks.values().begin(), risks.values().end());

  Tensor loss_a = l_full;
  Tensor loss_b;
  switch (cfg_.method) {
    case Method::ERM: break;
    case Method::IRM: {
      const Tensor p = irm_penalty(pred, batch.targets, batch.labels, E);
      r.penalty = p.item();
      loss_a = grad::add(loss_a, grad::mul_scalar(p, w.lambda_irm));
      break;
    }
    case Method::VREx: {
      const Tensor p = vrex_penalty(risks);
      r.penalty = p.item();
      loss_a = grad::add(loss_a, grad::mul_scalar(p, w.lambda_vrex));
      break;
    }
    case Method::DIF: {
      const Tensor Fc = model_.decode(h.z_c);
      const Tensor l_inv = sample_sq_error(exec_inv_.apply(Fc, batch.states), batch.targets);
      const Tensor l_adv = grad::neg(grad::cross_entropy(model_.discriminate(h.z_c, true), batch.labels));
      const Tensor l_disc_c = grad::cross_entropy(model_.discriminate(grad::detach(h.z_c)), batch.labels);
      const Tensor logits_e = model_.discriminate(h.z_e);
      const Tensor l_disc_e = grad::cross_entropy(logits_e, batch.labels);
      r.loss_inv = l_inv.item();
      r.loss_adv = l_adv.item();
      r.loss_disc_c = l_disc_c.item();
      r.loss_disc_e = l_disc_e.item();
      r.disc_acc_e = grad::accuracy(logits_e, batch.labels);
      loss_a = grad::add(grad::add(loss_a, grad::mul_scalar(l_inv, w.lambda_c)), grad::mul_scalar(l_adv, w.lambda_adv()));
      loss_b = grad::mul_scalar(grad::add(l_disc_c, l_disc_e), w.lambda_dis);
      break;
    }
  }

  if (!std::isfinite(loss_a.item()) || (loss_b.defined() && !std::isfinite(loss_b.item())))
    throw TrainAborted("non-finite loss at iteration " + std::to_string(r.iteration), r);

  // Both gradients come from the same forward pass, before either update.
  const grad::Gradients ga = grad::backward(loss_a);
  std::optional<grad::Gradients> gb;
  if (loss_b.defined()) gb = grad::backward(loss_b);
  opt_main_.set_lr(lr_at(r.iteration));
  opt_disc_.set_lr(lr_at(r.iteration));
  opt_main_.step(ga, cfg_.clip_norm);
  if (gb) opt_disc_.step(*gb, cfg_.clip_norm);

  for (std::size_t k = 1; gb && k < cfg_.disc_ratio; ++k) {
    const HeadOutputs hk = model_.heads(model_.encode(batch.windows));
    const Tensor lb = grad::mul_scalar(grad::add(grad::cross_entropy(model_.discriminate(grad::detach(hk.z_c)), batch.labels),
                                                 grad::cross_entropy(model_.discriminate(hk.z_e), batch.labels)),
                                       w.lambda_dis);
    if (!std::isfinite(lb.item())) throw TrainAborted("non-finite discriminator loss at iteration " + std::to_string(r.iteration), r);
    opt_disc_.step(grad::backward(lb), cfg_.clip_norm);
  }
  return r;
}

Checkpoint Trainer::checkpoint() const {
  const DatasetMeta& meta = data_.meta;
  std::map<std::string, std::string> info{
      {"system", std::string(system_name(meta.system))},
      {"T", std::to_string(meta.T)},
      {"T_c", std::to_string(meta.T_c)},
      {"dt", format_double(meta.dt)},
      {"envs", join_ints(meta.envs)},
      {"norm_mean", join(meta.norm_mean)},
      {"norm_std", join(meta.norm_std)},
      {"method", std::string(method_name(cfg_.method))},
      {"seed", std::to_string(cfg_.seed)},
      {"iteration", std::to_string(iteration_)},
      {"lr", format_double(cfg_.lr)},
      {"lr_schedule", std::string(schedule_name(cfg_.lr_schedule))},
      {"lambda_c", format_double(cfg_.weights.lambda_c)},
      {"lambda_dis", format_double(cfg_.weights.lambda_dis)},
      {"lambda_adv_ratio", format_double(cfg_.weights.lambda_adv_ratio)},
      {"lambda_irm", format_double(cfg_.weights.lambda_irm)},
      {"lambda_vrex", format_double(cfg_.weights.lambda_vrex)}};
  return make_checkpoint(model_, std::move(info));
}

std::vector<StepReport> train(const Dataset& data, const TrainConfig& cfg, const std::filesystem::path& out_dir,
                              const std::function<void(const StepReport&)>& on_step) {
  Trainer trainer(data, cfg);
  std::ofstream log;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log.open(out_dir / "train.log");
    if (!log) throw Error("cannot write " + (out_dir / "train.log").string());
  }
  std::vector<StepReport> reports;
  reports.reserve(cfg.iterations);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    StepReport r;
    try {
      r = trainer.step();
    } catch (const TrainAborted& e) {
      if (log.is_open()) log << e.last().to_line() << " aborted=1\n";
      throw;
    }
    if (log.is_open() && cfg.log_every > 0 && (r.iteration % cfg.log_every == 0 || r.iteration == 1))
      log << r.to_line() << "\n";
    if (on_step) on_step(r);
    reports.push_back(std::move(r));
    if (!out_dir.empty() && cfg.checkpoint_every > 0 && trainer.iteration() % cfg.checkpoint_every == 0 &&
        trainer.iteration() < cfg.iterations)
      save_checkpoint(trainer.checkpoint(), out_dir / ("ckpt_" + std::to_string(trainer.iteration()) + ".ckpt"));
  }
  if (!out_dir.empty()) save_checkpoint(trainer.checkpoint(), out_dir / "model.ckpt");
  return reports;
}

}  // namespace dif
