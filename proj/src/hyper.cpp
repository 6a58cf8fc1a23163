#include "dif/hyper.hpp"

#include "dif/error.hpp"
#include "dif/rng.hpp"
#include "dif/runtime.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

namespace dif {

using grad::Shape;
using grad::Tensor;

namespace {

constexpr double kNormEps = 1e-5;

// Parameters of sample b start at src + b * stride + offset.
struct Source {
  Tensor tensor;
  std::size_t stride = 0;
  std::size_t offset = 0;
};

// Kernels are instantiated for common output widths using fixed-size vectors;
// Out == 0 is the generic fallback. Only elementwise vector arithmetic is
// used (no reductions whose order could depend on alignment), and every
// instantiation adds the same terms in the same order.
template <std::size_t Out>
void linear_rows_impl(const double* __restrict x, const double* __restrict w, const double* __restrict bias,
                      std::size_t rows, std::size_t in, std::size_t out_rt, double* __restrict y) {
  if constexpr (Out == 0) {
    const std::size_t out = out_rt;
    for (std::size_t r = 0; r < rows; ++r) {
      double* __restrict yr = y + r * out;
      std::fill(yr, yr + out, 0.0);
      for (std::size_t i = 0; i < in; ++i) {
        const double xi = x[r * in + i];
        for (std::size_t o = 0; o < out; ++o) yr[o] += xi * w[i * out + o];
      }
      for (std::size_t o = 0; o < out; ++o) yr[o] += bias[o];
    }
  } else {
    using V = Eigen::Matrix<double, static_cast<int>(Out), 1>;
    const Eigen::Map<const V> b(bias);
    for (std::size_t r = 0; r < rows; ++r) {
      V acc = V::Zero();
      for (std::size_t i = 0; i < in; ++i) acc += x[r * in + i] * Eigen::Map<const V>(w + i * Out);
      Eigen::Map<V>(y + r * Out) = acc + b;
    }
  }
}

// Dot product with four fixed partial sums, combined in a fixed order.
template <std::size_t N>
double dot4(const double* __restrict a, const double* __restrict b, std::size_t n_rt) {
  const std::size_t n = N ? N : n_rt;
  using V4 = Eigen::Matrix<double, 4, 1>;
  V4 acc = V4::Zero();
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) acc += Eigen::Map<const V4>(a + j).cwiseProduct(Eigen::Map<const V4>(b + j));
  for (; j < n; ++j) acc[0] += a[j] * b[j];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

// Backward over `rows` rows sharing one weight: dx += g W^T, dW += x^T g, db += column sums of g.
// Null pointers skip a term. Sums over rows run in ascending row order.
template <std::size_t Out>
void linear_rows_backward_impl(const double* __restrict x, const double* __restrict w, const double* __restrict g,
                               std::size_t rows, std::size_t in, std::size_t out_rt, double* __restrict dx,
                               double* __restrict dw, double* __restrict db) {
  const std::size_t out = Out ? Out : out_rt;
  if (dx)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < in; ++i) dx[r * in + i] += dot4<Out>(g + r * out, w + i * out, out);
  if constexpr (Out == 0) {
    if (dw)
      for (std::size_t i = 0; i < in; ++i)
        for (std::size_t r = 0; r < rows; ++r) {
          const double xi = x[r * in + i];
          for (std::size_t o = 0; o < out; ++o) dw[i * out + o] += xi * g[r * out + o];
        }
    if (db)
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out; ++o) db[o] += g[r * out + o];
  } else {
    using V = Eigen::Matrix<double, static_cast<int>(Out), 1>;
    if (dw)
      for (std::size_t i = 0; i < in; ++i) {
        V acc = Eigen::Map<const V>(dw + i * Out);
        for (std::size_t r = 0; r < rows; ++r) acc += x[r * in + i] * Eigen::Map<const V>(g + r * Out);
        Eigen::Map<V>(dw + i * Out) = acc;
      }
    if (db) {
      V acc = Eigen::Map<const V>(db);
      for (std::size_t r = 0; r < rows; ++r) acc += Eigen::Map<const V>(g + r * Out);
      Eigen::Map<V> db_out(db);
      db_out = acc;
    }
  }
}

template <class Fn>
void dispatch_width(std::size_t out, Fn&& fn) {
  switch (out) {
    case 2: fn(std::integral_constant<std::size_t, 2>{}); break;
    case 3: fn(std::integral_constant<std::size_t, 3>{}); break;
    case 16: fn(std::integral_constant<std::size_t, 16>{}); break;
    case 32: fn(std::integral_constant<std::size_t, 32>{}); break;
    default: fn(std::integral_constant<std::size_t, 0>{}); break;
  }
}

void linear_rows(const double* x, const double* w, const double* bias, std::size_t rows, std::size_t in,
                 std::size_t out, double* y) {
  dispatch_width(out, [&](auto n) { linear_rows_impl<decltype(n)::value>(x, w, bias, rows, in, out, y); });
}

void linear_rows_backward(const double* x, const double* w, const double* g, std::size_t rows, std::size_t in,
                          std::size_t out, double* dx, double* dw, double* db) {
  dispatch_width(out, [&](auto n) {
    linear_rows_backward_impl<decltype(n)::value>(x, w, g, rows, in, out, dx, dw, db);
  });
}

// Writes the normalized row to `xhat` and returns 1/sqrt(var + eps).
double norm_row(const double* x, std::size_t d, double* xhat) {
  double m = 0.0;
  for (std::size_t j = 0; j < d; ++j) m += x[j];
  m /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t j = 0; j < d; ++j) var += (x[j] - m) * (x[j] - m);
  var /= static_cast<double>(d);
  const double is = 1.0 / std::sqrt(var + kNormEps);
  for (std::size_t j = 0; j < d; ++j) xhat[j] = (x[j] - m) * is;
  return is;
}

// x [B, P, in] -> [B, P, out] with per-sample weight and bias.
Tensor seg_linear(const Tensor& x, const Source& w, const Source& b, std::size_t in, std::size_t out) {
  const std::size_t batch = x.dim(0), points = x.dim(1);
  if (x.dim(2) != in) throw ShapeError("seg_linear: input width " + std::to_string(x.dim(2)) + " != " + std::to_string(in));
  std::vector<double> y(batch * points * out);
  const double* xv = x.values().data();
  const double* wv = w.tensor.values().data();
  const double* bv = b.tensor.values().data();
  for (std::size_t s = 0; s < batch; ++s) {
    const double* ws = wv + s * w.stride + w.offset;
    const double* bs = bv + s * b.stride + b.offset;
    linear_rows(xv + s * points * in, ws, bs, points, in, out, y.data() + s * points * out);
  }
  return Tensor::from_op(
      "seg_linear", {batch, points, out}, std::move(y), {x, w.tensor, b.tensor},
      [x, w, b, batch, points, in, out](std::span<const double> g, std::span<const std::span<double>> gi) {
        const double* xv = x.values().data();
        const double* wv = w.tensor.values().data();
        for (std::size_t s = 0; s < batch; ++s) {
          const double* ws = wv + s * w.stride + w.offset;
          linear_rows_backward(xv + s * points * in, ws, g.data() + s * points * out, points, in, out,
                               gi[0].empty() ? nullptr : gi[0].data() + s * points * in,
                               gi[1].empty() ? nullptr : gi[1].data() + s * w.stride + w.offset,
                               gi[2].empty() ? nullptr : gi[2].data() + s * b.stride + b.offset);
        }
      });
}

// LayerNorm over the last axis of x [B, P, D] with per-sample scale and shift.
Tensor seg_layer_norm(const Tensor& x, const Source& scale, const Source& shift) {
  const std::size_t batch = x.dim(0), points = x.dim(1), d = x.dim(2);
  const std::size_t rows = batch * points;
  auto xhat = std::make_shared<std::vector<double>>(rows * d);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> y(rows * d);
  const double* xv = x.values().data();
  const double* gv = scale.tensor.values().data();
  const double* bv = shift.tensor.values().data();
  for (std::size_t s = 0; s < batch; ++s) {
    const double* gs = gv + s * scale.stride + scale.offset;
    const double* bs = bv + s * shift.stride + shift.offset;
    for (std::size_t p = 0; p < points; ++p) {
      const std::size_t r = s * points + p;
      double* h = xhat->data() + r * d;
      (*inv_std)[r] = norm_row(xv + r * d, d, h);
      for (std::size_t j = 0; j < d; ++j) y[r * d + j] = h[j] * gs[j] + bs[j];
    }
  }
  return Tensor::from_op(
      "seg_layer_norm", x.shape(), std::move(y), {x, scale.tensor, shift.tensor},
      [scale, shift, xhat, inv_std, batch, points, d](std::span<const double> g, std::span<const std::span<double>> gi) {
        const double* gv = scale.tensor.values().data();
        const double nd = static_cast<double>(d);
        for (std::size_t s = 0; s < batch; ++s) {
          const double* gs = gv + s * scale.stride + scale.offset;
          for (std::size_t p = 0; p < points; ++p) {
            const std::size_t r = s * points + p;
            const double* h = xhat->data() + r * d;
            const double* gr = g.data() + r * d;
            if (!gi[0].empty()) {
              double sum_g = 0.0, sum_gh = 0.0;
              for (std::size_t j = 0; j < d; ++j) {
                const double gh = gr[j] * gs[j];
                sum_g += gh;
                sum_gh += gh * h[j];
              }
              const double is = (*inv_std)[r];
              for (std::size_t j = 0; j < d; ++j) gi[0][r * d + j] += is / nd * (nd * gr[j] * gs[j] - sum_g - h[j] * sum_gh);
            }
            if (!gi[1].empty()) {
              double* gsc = gi[1].data() + s * scale.stride + scale.offset;
              for (std::size_t j = 0; j < d; ++j) gsc[j] += gr[j] * h[j];
            }
            if (!gi[2].empty()) {
              double* gsh = gi[2].data() + s * shift.stride + shift.offset;
              for (std::size_t j = 0; j < d; ++j) gsh[j] += gr[j];
            }
          }
        }
      });
}

// Copies columns [offset, offset + len) of every row of F into a fresh [B, len] tensor.
Tensor copy_columns(const Tensor& F, std::size_t offset, std::size_t len) {
  const std::size_t batch = F.dim(0), m = F.dim(1);
  std::vector<double> out(batch * len);
  const double* fv = F.values().data();
  for (std::size_t s = 0; s < batch; ++s) std::memcpy(out.data() + s * len, fv + s * m + offset, len * sizeof(double));
  return Tensor::from_op("copy_columns", {batch, len}, std::move(out), {F},
                         [batch, m, offset, len](std::span<const double> g, std::span<const std::span<double>> gi) {
                           for (std::size_t s = 0; s < batch; ++s)
                             for (std::size_t j = 0; j < len; ++j) gi[0][s * m + offset + j] += g[s * len + j];
                         });
}

// Runs the network on x [B, P, d]; `source(offset)` locates the parameters stored at a layout offset.
template <class SourceFn>
Tensor run_net(const Layout& layout, Tensor h, SourceFn source) {
  const auto& layers = layout.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerSlots& ls = layers[l];
    h = seg_linear(h, source(ls.weight), source(ls.bias), ls.in, ls.out);
    if (ls.norm_scale) {
      h = seg_layer_norm(h, source(*ls.norm_scale), source(*ls.norm_shift));
      h = grad::relu(h);
    }
  }
  return h;
}

void check_inputs(const Layout& layout, const Tensor& F, const Tensor& X) {
  if (F.rank() != 2) throw ShapeError("apply: F must be [B, m], got " + grad::to_string(F.shape()));
  if (F.dim(1) != layout.m())
    throw LayoutMismatch("apply: FunctionVector width " + std::to_string(F.dim(1)) + " does not match layout m = " +
                         std::to_string(layout.m()));
  if ((X.rank() != 2 && X.rank() != 3) || X.dim(0) != F.dim(0) || X.shape().back() != layout.spec().dim)
    throw ShapeError("apply: states " + grad::to_string(X.shape()) + " do not match F " + grad::to_string(F.shape()) +
                     " and state dim " + std::to_string(layout.spec().dim));
}

}  // namespace

// --- layout ----------------------------------------------------------------------

Layout::Layout(const DerivNetSpec& spec) : spec_(spec) {
  if (spec.dim == 0 || spec.width == 0 || spec.depth < 1) throw ContractError("DerivNetSpec: dim, width and depth must be positive");
  std::size_t offset = 0;
  auto add = [&](std::string name, Shape shape) {
    const std::size_t len = grad::numel(shape);
    segments_.push_back({std::move(name), std::move(shape), offset, len});
    offset += len;
    return segments_.back().offset;
  };
  for (std::size_t l = 0; l < spec.depth; ++l) {
    LayerSlots ls;
    ls.in = l == 0 ? spec.dim : spec.width;
    ls.out = l + 1 == spec.depth ? spec.dim : spec.width;
    const std::string p = "layer" + std::to_string(l) + ".";
    ls.weight = add(p + "weight", {ls.in, ls.out});
    ls.bias = add(p + "bias", {ls.out});
    if (l + 1 < spec.depth) {
      ls.norm_scale = add(p + "norm_scale", {ls.out});
      ls.norm_shift = add(p + "norm_shift", {ls.out});
    }
    layers_.push_back(ls);
  }
  m_ = offset;
}

Layout build_layout(const DerivNetSpec& spec) { return Layout(spec); }

std::string_view mode_name(ExecMode mode) {
  switch (mode) {
    case ExecMode::NonVectorized: return "non_vectorized";
    case ExecMode::CopyBased: return "copy_based";
    case ExecMode::ReferenceBased: return "reference_based";
  }
  return "unknown";
}

ExecMode parse_mode(std::string_view name) {
  for (ExecMode m : {ExecMode::NonVectorized, ExecMode::CopyBased, ExecMode::ReferenceBased})
    if (mode_name(m) == name) return m;
  throw ContractError("unknown mode '" + std::string(name) + "' (expected non_vectorized, copy_based or reference_based)");
}

std::vector<ExecMode> parse_modes(std::string_view list) {
  if (list == "all") return {ExecMode::NonVectorized, ExecMode::CopyBased, ExecMode::ReferenceBased};
  std::vector<ExecMode> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const std::size_t comma = std::min(list.find(',', start), list.size());
    const ExecMode m = parse_mode(list.substr(start, comma - start));
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    start = comma + 1;
  }
  return out;
}

// --- buffer / executor --------------------------------------------------------

ParamBuffer::ParamBuffer(std::size_t max_batch, std::size_t m)
    : max_batch_(max_batch), m_(m), storage_(std::make_shared<std::vector<double>>(max_batch * m, 0.0)) {
  if (max_batch == 0 || m == 0) throw ContractError("ParamBuffer: capacity must be positive");
}

Tensor ParamBuffer::refresh(const Tensor& F) {
  if (F.rank() != 2 || F.dim(1) != m_)
    throw LayoutMismatch("ParamBuffer: expected [B, " + std::to_string(m_) + "], got " + grad::to_string(F.shape()));
  const std::size_t batch = F.dim(0);
  if (batch > max_batch_)
    throw ContractError("ParamBuffer: batch " + std::to_string(batch) + " exceeds capacity " + std::to_string(max_batch_));
  std::memcpy(storage_->data(), F.values().data(), batch * m_ * sizeof(double));
  ++refreshes_;
  return Tensor::identity_view("param_buffer", {batch, m_}, F, storage_);
}

HyperExecutor::HyperExecutor(Layout layout, ExecMode mode, std::size_t max_batch)
    : layout_(std::move(layout)), mode_(mode), max_batch_(max_batch) {
  if (mode_ == ExecMode::ReferenceBased) buffer_.emplace(max_batch_, layout_.m());
}

Tensor HyperExecutor::apply(const Tensor& F, const Tensor& X) {
  check_inputs(layout_, F, X);
  const std::size_t batch = F.dim(0), m = layout_.m(), d = layout_.spec().dim;
  const bool flat = X.rank() == 2;
  const Tensor X3 = flat ? grad::reshape(X, {batch, 1, d}) : X;
  Tensor out;
  switch (mode_) {
    case ExecMode::ReferenceBased: {
      const Tensor buf = buffer_->refresh(F);
      out = run_net(layout_, X3, [&](std::size_t offset) { return Source{buf, m, offset}; });
      break;
    }
    case ExecMode::CopyBased: {
      std::map<std::size_t, Tensor> segs;
      for (const Segment& s : layout_.segments()) segs.emplace(s.offset, copy_columns(F, s.offset, s.length));
      out = run_net(layout_, X3, [&](std::size_t offset) {
        const Tensor& t = segs.at(offset);
        return Source{t, t.dim(1), 0};
      });
      break;
    }
    case ExecMode::NonVectorized: {
      std::vector<Tensor> rows;
      rows.reserve(batch);
      for (std::size_t s = 0; s < batch; ++s) {
        const Tensor f = grad::slice(F, 0, s, s + 1);
        const Tensor x = grad::slice(X3, 0, s, s + 1);
        rows.push_back(run_net(layout_, x, [&](std::size_t offset) { return Source{f, m, offset}; }));
      }
      out = grad::concat(rows, 0);
      break;
    }
  }
  return flat ? grad::reshape(out, {batch, d}) : out;
}

Tensor apply_batched(const Layout& layout, const Tensor& F, const Tensor& X, ExecMode mode) {
  check_inputs(layout, F, X);
  HyperExecutor exec(layout, mode, F.dim(0));
  return exec.apply(F, X);
}

State deriv_net_eval(const Layout& layout, std::span<const double> f, const State& x) {
  if (f.size() != layout.m())
    throw LayoutMismatch("deriv_net_eval: FunctionVector length " + std::to_string(f.size()) + " != m = " +
                         std::to_string(layout.m()));
  if (static_cast<std::size_t>(x.size()) != layout.spec().dim) throw ShapeError("deriv_net_eval: state dimension mismatch");
  std::vector<double> h(x.data(), x.data() + x.size());
  std::vector<double> next, xhat;
  for (const LayerSlots& ls : layout.layers()) {
    next.resize(ls.out);
    linear_rows(h.data(), f.data() + ls.weight, f.data() + ls.bias, 1, ls.in, ls.out, next.data());
    if (ls.norm_scale) {
      xhat.resize(ls.out);
      norm_row(next.data(), ls.out, xhat.data());
      const double* gs = f.data() + *ls.norm_scale;
      const double* bs = f.data() + *ls.norm_shift;
      for (std::size_t j = 0; j < ls.out; ++j) {
        const double v = xhat[j] * gs[j] + bs[j];
        next[j] = v > 0.0 ? v : 0.0;
      }
    }
    h.swap(next);
  }
  return Eigen::Map<const State>(h.data(), static_cast<Eigen::Index>(h.size()));
}

// --- benchmark -----------------------------------------------------------------

const BenchRow* BenchReport::row(ExecMode mode) const {
  for (const auto& r : rows)
    if (r.mode == mode) return &r;
  return nullptr;
}

std::string environment_fingerprint() {
  std::ostringstream os;
  os << "cores=" << std::thread::hardware_concurrency() << " compiler=";
#if defined(__clang__)
  os << "clang-" << __clang_major__ << "." << __clang_minor__;
#elif defined(__GNUC__)
  os << "gcc-" << __GNUC__ << "." << __GNUC_MINOR__;
#else
  os << "unknown";
#endif
#ifdef NDEBUG
  os << " build=release";
#else
  os << " build=debug";
#endif
#ifdef __AVX2__
  os << " simd=avx2";
#endif
  os << " threads=1";
  return os.str();
}

BenchReport run_bench(const BenchConfig& config) {
  if (config.iterations < 10) throw ContractError("bench: at least 10 iterations required");
  if (config.batch == 0 || config.points == 0) throw ContractError("bench: batch and points must be positive");
  configure_allocator();
  const Layout layout(config.spec);
  const std::size_t m = layout.m(), d = config.spec.dim;
  Rng rng(derive_seed(config.seed, {0xbe7c}));
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.spec.width));
  std::vector<double> fv(config.batch * m), xv(config.batch * config.points * d), tv(xv.size());
  for (double& v : fv) v = uniform(rng, -scale, scale);
  for (double& v : xv) v = uniform(rng, -1.0, 1.0);
  for (double& v : tv) v = uniform(rng, -1.0, 1.0);
  const Tensor F = Tensor::parameter({config.batch, m}, fv);
  const Tensor X = Tensor::constant({config.batch, config.points, d}, xv);
  const Tensor target = Tensor::constant({config.batch, config.points, d}, tv);

  BenchReport report;
  report.config = config;
  report.fingerprint = environment_fingerprint();
  using Clock = std::chrono::steady_clock;
  // Modes take turns each iteration so that drifting machine load hits all of them alike.
  std::vector<HyperExecutor> execs;
  for (ExecMode mode : config.modes) execs.emplace_back(layout, mode, config.batch);
  std::vector<std::vector<double>> times(execs.size());
  double sink = 0.0;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    for (std::size_t k = 0; k < execs.size(); ++k) {
      const auto t0 = Clock::now();
      {
        const Tensor y = execs[k].apply(F, X);
        const Tensor loss = grad::mean(grad::square(grad::sub(y, target)));
        const grad::Gradients g = grad::backward(loss);
        sink += g.of(F)[0];
      }
      times[k].push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    }
  }
  if (!std::isfinite(sink)) throw Error("bench: non-finite gradient");
  for (std::size_t k = 0; k < execs.size(); ++k) {
    const auto& t = times[k];
    BenchRow row;
    row.mode = config.modes[k];
    row.first_step_s = t[0];
    const double n = static_cast<double>(t.size() - 1);
    for (std::size_t i = 1; i < t.size(); ++i) row.mean_s += t[i];
    row.mean_s /= n;
    for (std::size_t i = 1; i < t.size(); ++i) row.std_s += (t[i] - row.mean_s) * (t[i] - row.mean_s);
    row.std_s = std::sqrt(row.std_s / (n - 1.0));
    report.rows.push_back(row);
  }
  const BenchRow* base = report.row(ExecMode::NonVectorized);
  for (auto& r : report.rows) r.speedup = base ? base->mean_s / r.mean_s : std::numeric_limits<double>::quiet_NaN();
  return report;
}

std::string format_bench_table(const BenchReport& report) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %20s %28s %10s\n", "Method", "First Step Time (s)", "Avg Time (s)", "Speedup");
  os << line;
  for (const auto& r : report.rows) {
    char avg[64];
    std::snprintf(avg, sizeof avg, "%.6f +- %.6f", r.mean_s, r.std_s);
    char speed[32];
    if (std::isnan(r.speedup))
      std::snprintf(speed, sizeof speed, "n/a");
    else
      std::snprintf(speed, sizeof speed, "%.1fx", r.speedup);
    std::snprintf(line, sizeof line, "%-16s %20.6f %28s %10s\n", std::string(mode_name(r.mode)).c_str(), r.first_step_s,
                  avg, speed);
    os << line;
  }
  os << "iterations=" << report.config.iterations << " batch=" << report.config.batch << " points=" << report.config.points
     << " deriv_net=" << report.config.spec.depth << "x" << report.config.spec.width << " " << report.fingerprint << "\n";
  return os.str();
}

void write_bench_record(const BenchReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "# " << report.fingerprint << " iterations=" << report.config.iterations << " batch=" << report.config.batch
      << " points=" << report.config.points << "\n";
  out << "mode,first_step_s,mean_s,std_s,speedup\n";
  char line[200];
  for (const auto& r : report.rows) {
    std::snprintf(line, sizeof line, "%s,%.9g,%.9g,%.9g,%.6g\n", std::string(mode_name(r.mode)).c_str(), r.first_step_s,
                  r.mean_s, r.std_s, r.speedup);
    out << line;
  }
}

}  // namespace dif
