#include "dif/nets.hpp"

#include "dif/dataset.hpp"
#include "dif/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dif {

using grad::Shape;
using grad::Tensor;

namespace {

constexpr std::string_view kCheckpointHeader = "dif-checkpoint v1";
constexpr double kDecoderOutputScale = 0.01;

std::vector<double> uniform_values(Rng& rng, std::size_t n, double bound) {
  std::vector<double> v(n);
  for (double& x : v) x = uniform(rng, -bound, bound);
  return v;
}

void add_linear(ModelParams& p, Rng& rng, const std::string& name, ParamGroup g, std::size_t in, std::size_t out,
                double scale = 1.0) {
  const double bound = scale / std::sqrt(static_cast<double>(in));
  p.add(name + ".weight", g, Tensor::parameter({in, out}, uniform_values(rng, in * out, bound)));
  p.add(name + ".bias", g, Tensor::parameter({out}, uniform_values(rng, out, bound)));
}

void add_norm(ModelParams& p, const std::string& name, ParamGroup g, std::size_t dim) {
  p.add(name + ".scale", g, Tensor::parameter({dim}, std::vector<double>(dim, 1.0)));
  p.add(name + ".shift", g, Tensor::parameter({dim}, std::vector<double>(dim, 0.0)));
}

// Linear layers with a LayerNorm before each hidden activation.
void add_mlp(ModelParams& p, Rng& rng, const std::string& prefix, ParamGroup g, const std::vector<std::size_t>& dims,
             double last_scale = 1.0) {
  const std::size_t layers = dims.size() - 1;
  for (std::size_t j = 0; j < layers; ++j) {
    const std::string name = prefix + ".l" + std::to_string(j);
    add_linear(p, rng, name, g, dims[j], dims[j + 1], j + 1 == layers ? last_scale : 1.0);
    if (j + 1 < layers) add_norm(p, name + ".norm", g, dims[j + 1]);
  }
}

// The decoder's output bias is the FunctionVector every sample starts from: a
// fan-in initialized derivative net with unit norm scales and a near-zero last layer.
void seed_base_network(std::span<double> f, const Layout& layout, Rng& rng) {
  const auto& layers = layout.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerSlots& ls = layers[l];
    const double bound = (l + 1 == layers.size() ? kDecoderOutputScale : 1.0) / std::sqrt(static_cast<double>(ls.in));
    for (std::size_t i = 0; i < ls.in * ls.out; ++i) f[ls.weight + i] = uniform(rng, -bound, bound);
    for (std::size_t i = 0; i < ls.out; ++i) f[ls.bias + i] = uniform(rng, -bound, bound);
    if (ls.norm_scale) {
      std::fill_n(f.begin() + static_cast<std::ptrdiff_t>(*ls.norm_scale), ls.out, 1.0);
      std::fill_n(f.begin() + static_cast<std::ptrdiff_t>(*ls.norm_shift), ls.out, 0.0);
    }
  }
}

ModelParams build_params(const ModelSpec& s, std::size_t m, std::uint64_t seed) {
  ModelParams p;
  Rng rng(derive_seed(seed, {0x9e75}));
  const std::size_t D = s.encoder.model_dim;
  add_linear(p, rng, "encoder.input", ParamGroup::Encoder, s.state_dim, D);
  for (std::size_t l = 0; l < s.encoder.layers; ++l) {
    const std::string b = "encoder.block" + std::to_string(l);
    add_norm(p, b + ".norm1", ParamGroup::Encoder, D);
    for (const char* proj : {".attn.q", ".attn.k", ".attn.v", ".attn.o"}) add_linear(p, rng, b + proj, ParamGroup::Encoder, D, D);
    add_norm(p, b + ".norm2", ParamGroup::Encoder, D);
    add_linear(p, rng, b + ".ffn1", ParamGroup::Encoder, D, s.encoder.ffn_dim);
    add_linear(p, rng, b + ".ffn2", ParamGroup::Encoder, s.encoder.ffn_dim, D);
  }
  add_norm(p, "encoder.final_norm", ParamGroup::Encoder, D);
  add_mlp(p, rng, "invariant", ParamGroup::Invariant, {D, s.head_hidden, s.head_hidden, s.embed_dim});
  add_mlp(p, rng, "environment", ParamGroup::Environment, {D, s.head_hidden, s.head_hidden, s.embed_dim});
  add_mlp(p, rng, "decoder", ParamGroup::Decoder, {s.embed_dim, s.decoder_hidden, s.decoder_hidden, m},
          kDecoderOutputScale);
  seed_base_network(p.get("decoder.l2.bias").mutable_values(), Layout(s.deriv), rng);
  std::vector<std::size_t> disc{s.embed_dim};
  for (std::size_t j = 0; j + 1 < s.disc_layers; ++j) disc.push_back(s.disc_width);
  disc.push_back(s.num_envs);
  add_mlp(p, rng, "discriminator", ParamGroup::Discriminator, disc);
  return p;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(x);
  } catch (const std::exception&) {
    throw SchemaError("checkpoint: invalid integer for " + key + ": '" + v + "'");
  }
}

std::vector<std::pair<std::string, std::size_t*>> spec_fields(ModelSpec& s) {
  return {{"state_dim", &s.state_dim},
          {"num_envs", &s.num_envs},
          {"encoder_layers", &s.encoder.layers},
          {"encoder_heads", &s.encoder.heads},
          {"model_dim", &s.encoder.model_dim},
          {"ffn_dim", &s.encoder.ffn_dim},
          {"embed_dim", &s.embed_dim},
          {"head_hidden", &s.head_hidden},
          {"decoder_hidden", &s.decoder_hidden},
          {"deriv_depth", &s.deriv.depth},
          {"deriv_width", &s.deriv.width},
          {"disc_layers", &s.disc_layers},
          {"disc_width", &s.disc_width}};
}

}  // namespace

void ModelSpec::validate() const {
  if (state_dim == 0 || num_envs < 2) throw ContractError("ModelSpec: need state_dim >= 1 and at least 2 environments");
  if (encoder.heads == 0 || encoder.model_dim % encoder.heads != 0)
    throw ContractError("ModelSpec: model_dim " + std::to_string(encoder.model_dim) + " not divisible by heads " +
                        std::to_string(encoder.heads));
  if (encoder.model_dim % 2 != 0) throw ContractError("ModelSpec: model_dim must be even for the positional table");
  if (embed_dim == 0 || head_hidden == 0 || decoder_hidden == 0 || encoder.ffn_dim == 0)
    throw ContractError("ModelSpec: widths must be positive");
  if (disc_layers < 2 || disc_width == 0) throw ContractError("ModelSpec: discriminator needs >= 2 layers");
  if (deriv.dim != state_dim) throw ContractError("ModelSpec: derivative network dim must equal state_dim");
}

ModelSpec paper_scale_spec(std::size_t state_dim, std::size_t num_envs) {
  ModelSpec s;
  s.state_dim = state_dim;
  s.num_envs = num_envs;
  s.encoder = {6, 8, 256, 256};
  s.embed_dim = 64;
  s.head_hidden = 128;
  s.decoder_hidden = 256;
  s.deriv = {state_dim, 5, 32};
  s.disc_layers = 4;
  s.disc_width = 128;
  return s;
}

std::string_view group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::Encoder: return "encoder";
    case ParamGroup::Invariant: return "invariant";
    case ParamGroup::Environment: return "environment";
    case ParamGroup::Decoder: return "decoder";
    case ParamGroup::Discriminator: return "discriminator";
  }
  return "unknown";
}

// --- ModelParams -------------------------------------------------------------------

void ModelParams::add(std::string name, ParamGroup group, Tensor tensor) {
  if (index_.count(name)) throw ContractError("duplicate parameter " + name);
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), group, std::move(tensor)});
}

const Tensor& ModelParams::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named " + name);
  return params_[it->second].tensor;
}

Tensor& ModelParams::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named " + name);
  return params_[it->second].tensor;
}

std::vector<Tensor> ModelParams::group(ParamGroup g) const { return groups({g}); }

std::vector<Tensor> ModelParams::groups(std::initializer_list<ParamGroup> gs) const {
  std::vector<Tensor> out;
  for (const auto& p : params_)
    for (ParamGroup g : gs)
      if (p.group == g) out.push_back(p.tensor);
  return out;
}

std::vector<Tensor> ModelParams::theta() const {
  return groups({ParamGroup::Encoder, ParamGroup::Invariant, ParamGroup::Environment, ParamGroup::Decoder});
}
std::vector<Tensor> ModelParams::theta_c() const {
  return groups({ParamGroup::Encoder, ParamGroup::Invariant, ParamGroup::Decoder});
}
std::vector<Tensor> ModelParams::theta_bar_e() const { return groups({ParamGroup::Encoder, ParamGroup::Environment}); }
std::vector<Tensor> ModelParams::theta_bar_c() const { return groups({ParamGroup::Encoder, ParamGroup::Invariant}); }

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

// --- model ------------------------------------------------------------------------

std::vector<double> freq_positional_encoding(std::size_t T, std::size_t dim) {
  if (dim % 2 != 0) throw ContractError("positional encoding needs an even dimension");
  std::vector<double> pe(T * dim);
  for (std::size_t k = 0; k < T; ++k)
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double angle = static_cast<double>(k) / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(dim));
      pe[k * dim + 2 * i] = std::sin(angle);
      pe[k * dim + 2 * i + 1] = std::cos(angle);
    }
  return pe;
}

DifModel::DifModel(ModelSpec spec, std::uint64_t seed) : spec_(spec), layout_((spec.validate(), spec.deriv)) {
  params_ = build_params(spec_, layout_.m(), seed);
}

DifModel::DifModel(ModelSpec spec, ModelParams params)
    : spec_(spec), layout_((spec.validate(), spec.deriv)), params_(std::move(params)) {}

Tensor DifModel::mlp(const std::string& prefix, Tensor h, std::size_t layers) const {
  for (std::size_t j = 0; j < layers; ++j) {
    const std::string name = prefix + ".l" + std::to_string(j);
    h = grad::linear(h, params_.get(name + ".weight"), params_.get(name + ".bias"));
    if (j + 1 < layers) {
      h = grad::layer_norm(h, params_.get(name + ".norm.scale"), params_.get(name + ".norm.shift"));
      h = grad::relu(h);
    }
  }
  return h;
}

Tensor DifModel::attention(const std::string& prefix, const Tensor& x) const {
  const std::size_t B = x.dim(0), T = x.dim(1), D = x.dim(2);
  const std::size_t H = spec_.encoder.heads, dh = D / H;
  static constexpr std::array<std::size_t, 4> kSwap12{0, 2, 1, 3};
  auto split = [&](const char* proj) {
    const Tensor t = grad::linear(x, params_.get(prefix + proj + ".weight"), params_.get(prefix + proj + ".bias"));
    return grad::reshape(grad::permute(grad::reshape(t, {B, T, H, dh}), kSwap12), {B * H, T, dh});
  };
  const Tensor q = split(".q");
  const Tensor k = split(".k");
  const Tensor v = split(".v");
  const Tensor scores = grad::mul_scalar(grad::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dh)));
  const Tensor ctx = grad::matmul(grad::softmax(scores), v);
  const Tensor merged = grad::reshape(grad::permute(grad::reshape(ctx, {B, H, T, dh}), kSwap12), {B, T, D});
  return grad::linear(merged, params_.get(prefix + ".o.weight"), params_.get(prefix + ".o.bias"));
}

Tensor DifModel::encode(const Tensor& windows) const {
  if (windows.rank() != 3 || windows.dim(2) != spec_.state_dim)
    throw ShapeError("encode: expected [B, T_c, " + std::to_string(spec_.state_dim) + "], got " +
                     grad::to_string(windows.shape()));
  const std::size_t T = windows.dim(1), D = spec_.encoder.model_dim;
  const Tensor pe = Tensor::constant({T, D}, freq_positional_encoding(T, D));
  Tensor h = grad::add(grad::linear(windows, params_.get("encoder.input.weight"), params_.get("encoder.input.bias")), pe);
  for (std::size_t l = 0; l < spec_.encoder.layers; ++l) {
    const std::string b = "encoder.block" + std::to_string(l);
    const Tensor n1 = grad::layer_norm(h, params_.get(b + ".norm1.scale"), params_.get(b + ".norm1.shift"));
    h = grad::add(h, attention(b + ".attn", n1));
    const Tensor n2 = grad::layer_norm(h, params_.get(b + ".norm2.scale"), params_.get(b + ".norm2.shift"));
    Tensor f = grad::relu(grad::linear(n2, params_.get(b + ".ffn1.weight"), params_.get(b + ".ffn1.bias")));
    f = grad::linear(f, params_.get(b + ".ffn2.weight"), params_.get(b + ".ffn2.bias"));
    h = grad::add(h, f);
  }
  h = grad::layer_norm(h, params_.get("encoder.final_norm.scale"), params_.get("encoder.final_norm.shift"));
  return grad::mean_axis(h, 1);
}

HeadOutputs DifModel::heads(const Tensor& z) const { return {mlp("invariant", z, 3), mlp("environment", z, 3)}; }

Tensor DifModel::decode(const Tensor& z_hat) const { return mlp("decoder", z_hat, 3); }

Tensor DifModel::discriminate(const Tensor& h, bool frozen) const {
  if (!frozen) return mlp("discriminator", h, spec_.disc_layers);
  Tensor out = h;
  for (std::size_t j = 0; j < spec_.disc_layers; ++j) {
    const std::string name = "discriminator.l" + std::to_string(j);
    out = grad::linear(out, grad::detach(params_.get(name + ".weight")), grad::detach(params_.get(name + ".bias")));
    if (j + 1 < spec_.disc_layers) {
      out = grad::layer_norm(out, grad::detach(params_.get(name + ".norm.scale")),
                             grad::detach(params_.get(name + ".norm.shift")));
      out = grad::relu(out);
    }
  }
  return out;
}

// --- checkpoints --------------------------------------------------------------------

Checkpoint make_checkpoint(const DifModel& model, std::map<std::string, std::string> info) {
  Checkpoint c;
  c.spec = model.spec();
  c.info = std::move(info);
  for (const auto& p : model.params().all()) {
    const auto v = p.tensor.values();
    c.values.emplace_back(p.name, std::vector<double>(v.begin(), v.end()));
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << kCheckpointHeader << "\n";
  ModelSpec spec = ckpt.spec;
  for (const auto& [key, ptr] : spec_fields(spec)) out << "spec " << key << "=" << *ptr << "\n";
  for (const auto& [key, value] : ckpt.info) {
    if (key.find_first_of(" =\n") != std::string::npos || value.find('\n') != std::string::npos)
      throw ContractError("checkpoint info key/value not representable: " + key);
    out << "info " << key << "=" << value << "\n";
  }
  for (const auto& [name, values] : ckpt.values) {
    out << "param " << name << " " << values.size() << "\n";
    for (std::size_t i = 0; i < values.size(); ++i) out << (i ? " " : "") << format_double(values[i]);
    out << "\n";
  }
  out << "end\n";
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  const std::string where = "checkpoint " + path.string();
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointHeader) throw SchemaError(where + ": missing header '" + std::string(kCheckpointHeader) + "'");
  Checkpoint c;
  auto fields = spec_fields(c.spec);
  std::size_t specs_seen = 0;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "spec" || kind == "info") {
      std::string kv;
      std::getline(ls >> std::ws, kv);
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw SchemaError(where + ": malformed line '" + line + "'");
      const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
      if (kind == "info") {
        c.info[key] = value;
        continue;
      }
      bool found = false;
      for (auto& [k, ptr] : fields)
        if (k == key) {
          *ptr = parse_size(key, value);
          found = true;
        }
      if (!found) throw SchemaError(where + ": unknown spec key " + key);
      ++specs_seen;
    } else if (kind == "param") {
      std::string name;
      std::size_t n = 0;
      if (!(ls >> name >> n)) throw SchemaError(where + ": malformed param line '" + line + "'");
      std::string values_line;
      if (!std::getline(in, values_line)) throw SchemaError(where + ": truncated values for " + name);
      std::istringstream vs(values_line);
      std::vector<double> values;
      values.reserve(n);
      std::string tok;
      while (vs >> tok) {
        try {
          values.push_back(std::stod(tok));
        } catch (const std::exception&) {
          throw SchemaError(where + ": bad number '" + tok + "' in " + name);
        }
      }
      if (values.size() != n)
        throw SchemaError(where + ": " + name + " declares " + std::to_string(n) + " values, found " +
                          std::to_string(values.size()));
      c.values.emplace_back(name, std::move(values));
    } else {
      throw SchemaError(where + ": unexpected line '" + line + "'");
    }
  }
  if (!ended) throw SchemaError(where + ": truncated (no end marker)");
  if (specs_seen != fields.size()) throw SchemaError(where + ": incomplete spec block");
  c.spec.deriv.dim = c.spec.state_dim;
  return c;
}

DifModel model_from_checkpoint(const Checkpoint& ckpt) {
  DifModel model(ckpt.spec, 0);
  auto& params = model.params();
  if (ckpt.values.size() != params.all().size())
    throw SchemaError("checkpoint holds " + std::to_string(ckpt.values.size()) + " parameters, spec needs " +
                      std::to_string(params.all().size()));
  for (const auto& [name, values] : ckpt.values) {
    if (!params.contains(name)) throw SchemaError("checkpoint parameter " + name + " does not belong to the spec");
    auto dst = params.get(name).mutable_values();
    if (dst.size() != values.size()) throw SchemaError("checkpoint parameter " + name + " has the wrong size");
    std::copy(values.begin(), values.end(), dst.begin());
  }
  return model;
}

}  // namespace dif
