#pragma once

// Hypernetwork that maps a past window of states to derivative-network
// parameters: transformer encoder -> invariant / environment heads -> decoder,
// plus an environment discriminator on the head outputs.

#include "dif/grad.hpp"
#include "dif/hyper.hpp"
#include "dif/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dif {

struct EncoderSpec {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t model_dim = 64;
  std::size_t ffn_dim = 128;

  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

struct ModelSpec {
  std::size_t state_dim = 2;
  std::size_t num_envs = 4;
  EncoderSpec encoder;
  /// Width of z_c, z_e and their sum.
  std::size_t embed_dim = 32;
  std::size_t head_hidden = 64;
  std::size_t decoder_hidden = 128;
  DerivNetSpec deriv;
  /// Number of linear layers in the discriminator (>= 2).
  std::size_t disc_layers = 3;
  std::size_t disc_width = 64;

  /// Throws ContractError when the spec is inconsistent.
  void validate() const;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Encoder 6 layers / 8 heads / 256 wide, embed 64, deriv net 5x32, discriminator 4x128.
ModelSpec paper_scale_spec(std::size_t state_dim, std::size_t num_envs);

enum class ParamGroup { Encoder, Invariant, Environment, Decoder, Discriminator };
std::string_view group_name(ParamGroup g);

struct NamedParam {
  std::string name;
  ParamGroup group;
  grad::Tensor tensor;
};

class ModelParams {
 public:
  void add(std::string name, ParamGroup group, grad::Tensor tensor);
  const grad::Tensor& get(const std::string& name) const;
  grad::Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<NamedParam>& all() const { return params_; }
  std::vector<NamedParam>& all() { return params_; }
  std::vector<grad::Tensor> group(ParamGroup g) const;
  std::vector<grad::Tensor> groups(std::initializer_list<ParamGroup> gs) const;

  /// Encoder, heads and decoder.
  std::vector<grad::Tensor> theta() const;
  /// Encoder, invariant head and decoder.
  std::vector<grad::Tensor> theta_c() const;
  /// Encoder and environment head.
  std::vector<grad::Tensor> theta_bar_e() const;
  /// Encoder and invariant head.
  std::vector<grad::Tensor> theta_bar_c() const;
  std::vector<grad::Tensor> phi() const { return group(ParamGroup::Discriminator); }

  std::size_t count() const;

 private:
  std::vector<NamedParam> params_;
  std::map<std::string, std::size_t> index_;
};

/// Sinusoidal table [T, dim]: even columns sin(k / 10000^(2i/dim)), odd columns cos of the same angle.
std::vector<double> freq_positional_encoding(std::size_t T, std::size_t dim);

struct HeadOutputs {
  grad::Tensor z_c;
  grad::Tensor z_e;
};

class DifModel {
 public:
  DifModel(ModelSpec spec, std::uint64_t seed);
  DifModel(ModelSpec spec, ModelParams params);

  const ModelSpec& spec() const { return spec_; }
  const Layout& layout() const { return layout_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  /// Past windows [B, T_c, d] (normalized) -> z [B, model_dim].
  grad::Tensor encode(const grad::Tensor& windows) const;
  HeadOutputs heads(const grad::Tensor& z) const;
  /// Head output [B, embed_dim] -> FunctionVectors [B, m].
  grad::Tensor decode(const grad::Tensor& z_hat) const;
  /// Logits [B, num_envs]. With `frozen` the discriminator weights are cut from the graph.
  grad::Tensor discriminate(const grad::Tensor& h, bool frozen = false) const;

 private:
  grad::Tensor mlp(const std::string& prefix, grad::Tensor h, std::size_t layers) const;
  grad::Tensor attention(const std::string& prefix, const grad::Tensor& x) const;

  ModelSpec spec_;
  Layout layout_;
  ModelParams params_;
};

inline grad::Tensor compose(const grad::Tensor& z_c, const grad::Tensor& z_e) { return grad::add(z_c, z_e); }

/// Parameters plus the spec and free-form metadata (dataset normalization, method, ...).
struct Checkpoint {
  ModelSpec spec;
  std::map<std::string, std::string> info;
  std::vector<std::pair<std::string, std::vector<double>>> values;
};

Checkpoint make_checkpoint(const DifModel& model, std::map<std::string, std::string> info);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Rebuilds the model; parameter names and shapes must match the spec.
DifModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace dif
