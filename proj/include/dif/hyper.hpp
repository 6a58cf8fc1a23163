#pragma once

// Batched execution of derivative networks whose parameters are rows of a
// FunctionVector matrix F [B, m].
//
// The derivative network is an MLP d -> width -> ... -> width -> d with a
// LayerNorm before every hidden activation (relu). Its parameters live in F in
// the order given by the Layout: per layer weight [in][out] row-major, bias,
// then norm scale and shift for hidden layers.

#include "dif/dyn.hpp"
#include "dif/grad.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dif {

struct DerivNetSpec {
  std::size_t dim = 2;
  std::size_t depth = 4;
  std::size_t width = 16;

  friend bool operator==(const DerivNetSpec&, const DerivNetSpec&) = default;
};

struct Segment {
  std::string name;
  grad::Shape shape;
  std::size_t offset = 0;
  std::size_t length = 0;

  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Offsets of one layer's parameters inside a FunctionVector.
struct LayerSlots {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::optional<std::size_t> norm_scale;
  std::optional<std::size_t> norm_shift;

  friend bool operator==(const LayerSlots&, const LayerSlots&) = default;
};

class Layout {
 public:
  Layout() = default;
  explicit Layout(const DerivNetSpec& spec);

  const DerivNetSpec& spec() const { return spec_; }
  const std::vector<Segment>& segments() const { return segments_; }
  const std::vector<LayerSlots>& layers() const { return layers_; }
  /// Length of a FunctionVector.
  std::size_t m() const { return m_; }

  friend bool operator==(const Layout&, const Layout&) = default;

 private:
  DerivNetSpec spec_;
  std::vector<Segment> segments_;
  std::vector<LayerSlots> layers_;
  std::size_t m_ = 0;
};

Layout build_layout(const DerivNetSpec& spec);

enum class ExecMode { NonVectorized, CopyBased, ReferenceBased };

std::string_view mode_name(ExecMode mode);
ExecMode parse_mode(std::string_view name);
/// Parses "all" or a comma list of mode names.
std::vector<ExecMode> parse_modes(std::string_view list);

/// Persistent storage that the reference-based mode refreshes each forward
/// pass. Capacity is fixed at construction.
class ParamBuffer {
 public:
  ParamBuffer(std::size_t max_batch, std::size_t m);

  std::size_t capacity() const { return storage_->size(); }
  /// Address of the storage; stays the same for the buffer's lifetime.
  const void* storage_id() const { return storage_->data(); }
  std::size_t refreshes() const { return refreshes_; }

  /// Overwrites the first B*m entries with F and returns a graph node that
  /// aliases them. Gradients flow back to F unchanged.
  grad::Tensor refresh(const grad::Tensor& F);

 private:
  std::size_t max_batch_;
  std::size_t m_;
  std::shared_ptr<std::vector<double>> storage_;
  std::size_t refreshes_ = 0;
};

/// Applies per-sample derivative networks. One executor serves one apply per
/// graph: in reference mode the buffer is overwritten by the next apply.
class HyperExecutor {
 public:
  HyperExecutor(Layout layout, ExecMode mode, std::size_t max_batch);

  /// F [B, m]; X [B, d] or [B, P, d]. Returns derivatives with X's shape.
  grad::Tensor apply(const grad::Tensor& F, const grad::Tensor& X);

  const Layout& layout() const { return layout_; }
  ExecMode mode() const { return mode_; }
  const ParamBuffer* buffer() const { return buffer_ ? &*buffer_ : nullptr; }

 private:
  Layout layout_;
  ExecMode mode_;
  std::size_t max_batch_;
  std::optional<ParamBuffer> buffer_;
};

/// One-shot form of HyperExecutor::apply.
grad::Tensor apply_batched(const Layout& layout, const grad::Tensor& F, const grad::Tensor& X, ExecMode mode);

/// Graph-free forward of one derivative network; same arithmetic as apply().
State deriv_net_eval(const Layout& layout, std::span<const double> f, const State& x);

// --- benchmark -----------------------------------------------------------------

struct BenchConfig {
  std::vector<ExecMode> modes{ExecMode::NonVectorized, ExecMode::CopyBased, ExecMode::ReferenceBased};
  std::size_t iterations = 200;
  std::size_t batch = 32;
  /// States per sample fed through each network per step.
  std::size_t points = 1;
  DerivNetSpec spec;
  std::uint64_t seed = 0;
};

struct BenchRow {
  ExecMode mode = ExecMode::NonVectorized;
  double first_step_s = 0.0;
  double mean_s = 0.0;
  double std_s = 0.0;
  /// mean(non_vectorized) / mean(this mode); NaN when non_vectorized was not run.
  double speedup = 0.0;
};

struct BenchReport {
  BenchConfig config;
  std::vector<BenchRow> rows;
  std::string fingerprint;

  const BenchRow* row(ExecMode mode) const;
};

/// Times forward + backward of a squared-error loss through apply() per mode.
BenchReport run_bench(const BenchConfig& config);
std::string format_bench_table(const BenchReport& report);
/// CSV with columns mode,first_step_s,mean_s,std_s,speedup plus a fingerprint comment line.
void write_bench_record(const BenchReport& report, const std::filesystem::path& path);
std::string environment_fingerprint();

}  // namespace dif
