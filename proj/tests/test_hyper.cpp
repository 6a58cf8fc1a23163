#include "dif/error.hpp"
#include "dif/hyper.hpp"
#include "dif/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace dif;
using namespace dif::grad;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, bool param, double scale = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = scale * uniform(rng, -1.0, 1.0);
  return param ? Tensor::parameter(std::move(shape), std::move(v)) : Tensor::constant(std::move(shape), std::move(v));
}

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

// Plain forward written against the segment names, used as an independent oracle.
State oracle_forward(const Layout& layout, std::span<const double> f, const State& x) {
  auto seg = [&](const std::string& name) -> const Segment& {
    for (const auto& s : layout.segments())
      if (s.name == name) return s;
    throw std::runtime_error("missing " + name);
  };
  std::vector<double> h(x.data(), x.data() + x.size());
  const std::size_t L = layout.spec().depth;
  for (std::size_t l = 0; l < L; ++l) {
    const Segment& w = seg("layer" + std::to_string(l) + ".weight");
    const Segment& b = seg("layer" + std::to_string(l) + ".bias");
    const std::size_t in = w.shape[0], out = w.shape[1];
    std::vector<double> y(out);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = f[b.offset + o];
      for (std::size_t i = 0; i < in; ++i) acc += h[i] * f[w.offset + i * out + o];
      y[o] = acc;
    }
    if (l + 1 < L) {
      const Segment& sc = seg("layer" + std::to_string(l) + ".norm_scale");
      const Segment& sh = seg("layer" + std::to_string(l) + ".norm_shift");
      double mean = 0, var = 0;
      for (double v : y) mean += v / static_cast<double>(out);
      for (double v : y) var += (v - mean) * (v - mean) / static_cast<double>(out);
      for (std::size_t o = 0; o < out; ++o)
        y[o] = std::max(0.0, (y[o] - mean) / std::sqrt(var + 1e-5) * f[sc.offset + o] + f[sh.offset + o]);
    }
    h = y;
  }
  return Eigen::Map<const State>(h.data(), static_cast<Eigen::Index>(h.size()));
}

}  // namespace

TEST(Layout, ParameterCountOracle) {
  const Layout l(DerivNetSpec{2, 4, 16});
  const std::size_t weights = 2 * 16 + 16 * 16 + 16 * 16 + 16 * 2;
  const std::size_t biases = 16 + 16 + 16 + 2;
  const std::size_t norms = 3 * (16 + 16);
  EXPECT_EQ(l.m(), weights + biases + norms);
  EXPECT_EQ(l.m(), 722u);
}

TEST(Layout, ContiguousAndDeterministic) {
  for (const DerivNetSpec spec : {DerivNetSpec{2, 4, 16}, DerivNetSpec{3, 5, 32}, DerivNetSpec{2, 2, 3}}) {
    const Layout l = build_layout(spec);
    EXPECT_EQ(l, build_layout(spec));
    std::size_t next = 0;
    for (const auto& s : l.segments()) {
      EXPECT_EQ(s.offset, next) << s.name;
      EXPECT_EQ(s.length, numel(s.shape));
      next += s.length;
    }
    EXPECT_EQ(next, l.m());
  }
  const Layout small(DerivNetSpec{2, 2, 3});
  const auto& segs = small.segments();
  std::vector<std::string> names;
  for (const auto& s : segs) names.push_back(s.name);
  EXPECT_EQ(names, (std::vector<std::string>{"layer0.weight", "layer0.bias", "layer0.norm_scale", "layer0.norm_shift",
                                             "layer1.weight", "layer1.bias"}));
}

TEST(Modes, Parsing) {
  EXPECT_EQ(parse_modes("all").size(), 3u);
  EXPECT_EQ(parse_modes("copy_based,reference_based"),
            (std::vector<ExecMode>{ExecMode::CopyBased, ExecMode::ReferenceBased}));
  EXPECT_THROW(parse_mode("module_based"), ContractError);
  for (auto m : {ExecMode::NonVectorized, ExecMode::CopyBased, ExecMode::ReferenceBased})
    EXPECT_EQ(parse_mode(mode_name(m)), m);
}

TEST(Apply, MatchesPlainForwardOracle) {
  Rng rng(3);
  const Layout layout(DerivNetSpec{2, 4, 16});
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t B = 1 + rng() % 8;
    const Tensor F = random_tensor(rng, {B, layout.m()}, false, 0.5);
    const Tensor X = random_tensor(rng, {B, 2}, false, 2.0);
    for (auto mode : {ExecMode::NonVectorized, ExecMode::CopyBased, ExecMode::ReferenceBased}) {
      const Tensor y = apply_batched(layout, F, X, mode);
      const auto out = y.values();
      for (std::size_t b = 0; b < B; ++b) {
        const std::span<const double> f = F.values().subspan(b * layout.m(), layout.m());
        const State x = Eigen::Map<const State>(X.values().data() + 2 * b, 2);
        const State want = oracle_forward(layout, f, x);
        const State graph_free = deriv_net_eval(layout, f, x);
        for (int j = 0; j < 2; ++j) {
          EXPECT_NEAR(out[2 * b + j], want[j], 1e-12);
          EXPECT_EQ(out[2 * b + j], graph_free[j]);
        }
      }
    }
  }
}

TEST(Apply, CopyAndReferenceAgreeExactlyOnHundredBatches) {
  Rng rng(11);
  const Layout layout(DerivNetSpec{2, 4, 16});
  HyperExecutor copy(layout, ExecMode::CopyBased, 32), ref(layout, ExecMode::ReferenceBased, 32);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t B = 1 + rng() % 32;
    const std::size_t P = 1 + rng() % 3;
    const Tensor F = random_tensor(rng, {B, layout.m()}, true, 0.5);
    const Tensor X = random_tensor(rng, {B, P, 2}, false, 2.0);
    const Tensor W = random_tensor(rng, {B, P, 2}, false);
    const Tensor yc = copy.apply(F, X);
    const Gradients gc = backward(sum(mul(yc, W)));
    const Tensor yr = ref.apply(F, X);
    const Gradients gr = backward(sum(mul(yr, W)));
    ASSERT_EQ(to_vec(yc.values()), to_vec(yr.values()));
    ASSERT_EQ(to_vec(gc.of(F)), to_vec(gr.of(F)));
  }
}

TEST(Apply, AllModesAgreeBitwise) {
  Rng rng(12);
  const Layout layout(DerivNetSpec{3, 5, 32});
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t B = 1 + rng() % 16;
    const Tensor F = random_tensor(rng, {B, layout.m()}, true, 0.3);
    const Tensor X = random_tensor(rng, {B, 3}, false);
    const Tensor W = random_tensor(rng, {B, 3}, false);
    std::vector<std::vector<double>> outs, grads;
    for (auto mode : {ExecMode::NonVectorized, ExecMode::CopyBased, ExecMode::ReferenceBased}) {
      const Tensor y = apply_batched(layout, F, X, mode);
      outs.push_back(to_vec(y.values()));
      grads.push_back(to_vec(backward(sum(mul(y, W))).of(F)));
    }
    EXPECT_EQ(outs[0], outs[1]);
    EXPECT_EQ(outs[1], outs[2]);
    EXPECT_EQ(grads[0], grads[1]);
    EXPECT_EQ(grads[1], grads[2]);
  }
}

TEST(Apply, BatchPermutationPermutesRows) {
  Rng rng(5);
  const Layout layout(DerivNetSpec{2, 4, 16});
  const std::size_t B = 4, m = layout.m();
  const Tensor F = random_tensor(rng, {B, m}, false, 0.5);
  const Tensor X = random_tensor(rng, {B, 2}, false);
  const std::size_t perm[] = {2, 0, 3, 1};
  std::vector<double> fp, xp;
  for (std::size_t b : perm) {
    fp.insert(fp.end(), F.values().begin() + b * m, F.values().begin() + (b + 1) * m);
    xp.insert(xp.end(), X.values().begin() + 2 * b, X.values().begin() + 2 * b + 2);
  }
  const auto y = to_vec(apply_batched(layout, F, X, ExecMode::ReferenceBased).values());
  const auto yp = to_vec(apply_batched(layout, Tensor::constant({B, m}, fp), Tensor::constant({B, 2}, xp),
                                       ExecMode::ReferenceBased)
                             .values());
  for (std::size_t i = 0; i < B; ++i) {
    EXPECT_EQ(yp[2 * i], y[2 * perm[i]]);
    EXPECT_EQ(yp[2 * i + 1], y[2 * perm[i] + 1]);
  }
}

TEST(Apply, GradientWrtFunctionVectorMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Layout layout(DerivNetSpec{2, 3, 4});
    Tensor F = random_tensor(rng, {2, layout.m()}, true);
    const Tensor X = random_tensor(rng, {2, 3, 2}, false);
    const Tensor W = random_tensor(rng, {2, 3, 2}, false);
    HyperExecutor exec(layout, ExecMode::ReferenceBased, 2);
    Tensor leaves[] = {F};
    const auto r = grad_check([&] { return sum(mul(exec.apply(F, X), W)); }, leaves, 1e-6, 1e-5, 1e-3);
    EXPECT_TRUE(r.passed) << seed << " " << r.max_rel_error;
  }
}

TEST(Apply, WidthMismatchIsLayoutError) {
  const Layout layout(DerivNetSpec{2, 4, 16});
  EXPECT_THROW(apply_batched(layout, Tensor::zeros({2, 721}), Tensor::zeros({2, 2}), ExecMode::CopyBased),
               LayoutMismatch);
  EXPECT_THROW(apply_batched(layout, Tensor::zeros({2, 722}), Tensor::zeros({3, 2}), ExecMode::CopyBased), ShapeError);
}

TEST(ParamBuffer, StorageIsStableAndRefreshed) {
  Rng rng(9);
  const Layout layout(DerivNetSpec{2, 4, 16});
  HyperExecutor exec(layout, ExecMode::ReferenceBased, 32);
  ASSERT_NE(exec.buffer(), nullptr);
  const void* id = exec.buffer()->storage_id();
  const std::size_t cap = exec.buffer()->capacity();
  EXPECT_EQ(cap, 32 * layout.m());
  for (int it = 0; it < 120; ++it) {
    const std::size_t B = 1 + rng() % 32;
    const Tensor F = random_tensor(rng, {B, layout.m()}, true);
    backward(sum(exec.apply(F, random_tensor(rng, {B, 2}, false))));
    ASSERT_EQ(exec.buffer()->storage_id(), id);
    ASSERT_EQ(exec.buffer()->capacity(), cap);
  }
  EXPECT_EQ(exec.buffer()->refreshes(), 120u);
  EXPECT_THROW(exec.apply(Tensor::zeros({33, layout.m()}), Tensor::zeros({33, 2})), ContractError);
}

TEST(Bench, ReportShape) {
  BenchConfig cfg;
  cfg.iterations = 12;
  const BenchReport r = run_bench(cfg);
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.row(ExecMode::NonVectorized)->speedup, 1.0);
  for (const auto& row : r.rows) {
    EXPECT_GT(row.mean_s, 0.0);
    EXPECT_GE(row.std_s, 0.0);
    EXPECT_GT(row.first_step_s, 0.0);
  }
  EXPECT_NE(format_bench_table(r).find("First Step Time (s)"), std::string::npos);
  cfg.modes = {ExecMode::ReferenceBased};
  EXPECT_TRUE(std::isnan(run_bench(cfg).rows[0].speedup));
}
