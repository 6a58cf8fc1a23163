#include "dif/grad.hpp"

#include "dif/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>
#include <utility>

namespace dif::grad {

namespace detail {

struct Node {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool identity = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  std::size_t size() const { return grad::numel(shape); }
  double* ptr() { return data->data(); }
  const double* ptr() const { return data->data(); }
};

}  // namespace detail

namespace {

using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;
using Idx = Eigen::Index;

#ifdef NDEBUG
std::atomic<bool> g_check_finite{false};
#else
std::atomic<bool> g_check_finite{true};
#endif

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const std::string& why) {
  throw ShapeError(std::string(op) + ": shape " + to_string(a) + " " + why);
}

enum class Bcast { Same, Leading };

Bcast broadcast_kind(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Bcast::Same;
  if (a.size() == b.size() + 1 && std::equal(b.begin(), b.end(), a.begin() + 1)) return Bcast::Leading;
  shape_error(op, a, b);
}

// Splits a shape around `axis` into (outer, len, inner).
struct AxisSplit {
  std::size_t outer;
  std::size_t len;
  std::size_t inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto in = a.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return Tensor::from_op(op, a.shape(), std::move(out), {a},
                         [a, deriv](std::span<const double> g, std::span<const std::span<double>> gi) {
                           const auto x = a.values();
                           for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * deriv(x[i]);
                         });
}

void check_values(const char* op, const std::vector<double>& v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(v[i])) throw Error(std::string(op) + ": produced a non-finite value at index " + std::to_string(i));
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

void set_check_finite(bool enabled) { g_check_finite = enabled; }
bool check_finite_enabled() { return g_check_finite; }

// --- Tensor -------------------------------------------------------------------

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (grad::numel(shape) != values.size())
    throw ShapeError("constant: shape " + to_string(shape) + " holds " + std::to_string(grad::numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::make_shared<std::vector<double>>(std::move(values));
  return Tensor(std::move(n));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = grad::numel(shape);
  Tensor t = constant(std::move(shape), std::vector<double>(n, 0.0));
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double v) { return constant({}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
  const std::size_t n = grad::numel(shape);
  return constant(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::from_op_shared(const char* op, Shape shape, std::shared_ptr<std::vector<double>> storage,
                              std::vector<Tensor> inputs, BackwardFn backward_fn) {
  if (storage->size() < grad::numel(shape)) throw ShapeError(std::string(op) + ": storage smaller than shape " + to_string(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(storage);
  n->op = op;
  if (g_check_finite) check_values(op, *n->data, n->size());
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (any) {
    n->requires_grad = true;
    n->leaf = false;
    n->inputs.reserve(inputs.size());
    for (auto& t : inputs) n->inputs.push_back(t.node_);
    n->backward = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

Tensor Tensor::from_op(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                       BackwardFn backward_fn) {
  if (values.size() != grad::numel(shape))
    throw ShapeError(std::string(op) + ": produced " + std::to_string(values.size()) + " values for shape " +
                     to_string(shape));
  return from_op_shared(op, std::move(shape), std::make_shared<std::vector<double>>(std::move(values)),
                        std::move(inputs), std::move(backward_fn));
}

Tensor Tensor::identity_view(const char* op, Shape shape, const Tensor& input, std::shared_ptr<std::vector<double>> storage) {
  if (grad::numel(shape) != input.numel())
    throw ShapeError(std::string(op) + ": cannot view " + to_string(input.shape()) + " as " + to_string(shape));
  Tensor t = from_op_shared(op, std::move(shape), storage ? std::move(storage) : input.node_->data, {input},
                            [](std::span<const double> g, std::span<const std::span<double>> gi) {
                              for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                            });
  t.node_->identity = true;
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of an undefined Tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape().size()) throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return grad::numel(shape()); }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
const char* Tensor::op() const { return node_ ? node_->op : "undefined"; }

std::span<const double> Tensor::values() const {
  if (!node_) throw ContractError("use of an undefined Tensor");
  return {node_->ptr(), node_->size()};
}

std::span<double> Tensor::mutable_values() {
  if (!node_) throw ContractError("use of an undefined Tensor");
  if (!node_->leaf) throw ContractError(std::string("mutable_values: '") + node_->op + "' output is not a leaf");
  return {node_->ptr(), node_->size()};
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
  return node_->ptr()[0];
}

std::span<const double> Gradients::of(const Tensor& leaf) const {
  const auto it = grads_.find(leaf.id());
  if (it == grads_.end()) throw ContractError("Gradients: tensor is not a differentiable leaf of this loss");
  return it->second;
}

std::span<double> Gradients::mutable_of(const Tensor& leaf) {
  const auto it = grads_.find(leaf.id());
  if (it == grads_.end()) throw ContractError("Gradients: tensor is not a differentiable leaf of this loss");
  return it->second;
}

Gradients backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined loss");
  if (loss.numel() != 1) throw ContractError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  Gradients result;
  if (!loss.requires_grad()) return result;

  // post-order DFS gives a topological order (inputs before outputs)
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node_.get(), 0}};
  seen.insert(loss.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Gradient buffers are allocated on first use; a node that never receives
  // a gradient is skipped.
  for (Node* n : order) n->grad.clear();
  loss.node_->grad.assign(1, 1.0);
  std::vector<std::span<double>> in_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward || n->grad.empty()) continue;
    if (n->identity) {
      Node* in = n->inputs[0].get();
      if (in->grad.empty()) {
        in->grad = std::move(n->grad);
        continue;
      }
    }
    in_grads.clear();
    for (const auto& in : n->inputs) {
      if (in->requires_grad && in->grad.empty()) in->grad.assign(in->size(), 0.0);
      in_grads.push_back(in->requires_grad ? std::span<double>(in->grad) : std::span<double>());
    }
    n->backward(n->grad, in_grads);
  }
  for (Node* n : order) {
    if (n->leaf) {
      if (n->grad.empty()) n->grad.assign(n->size(), 0.0);
      result.grads_.emplace(n, std::move(n->grad));
    }
    std::vector<double>().swap(n->grad);
  }
  return result;
}

// --- linear algebra -----------------------------------------------------------

namespace {

/// out[n, p] = a[n, k] * b[k, p]. Rows are padded to a multiple of 8 so that
/// every row takes the same GEMM kernel path and equal rows give bit-equal results.
void shared_rhs_product(const double* a, const double* b, double* out, std::size_t n, std::size_t k, std::size_t p) {
  const CMap rhs(b, Idx(k), Idx(p));
  if (n % 8 == 0) {
    MMap(out, Idx(n), Idx(p)).noalias() = CMap(a, Idx(n), Idx(k)) * rhs;
    return;
  }
  const std::size_t padded = (n + 7) / 8 * 8;
  RowMat lhs = RowMat::Zero(Idx(padded), Idx(k));
  lhs.topRows(Idx(n)) = CMap(a, Idx(n), Idx(k));
  RowMat prod(static_cast<Idx>(padded), static_cast<Idx>(p));
  prod.noalias() = lhs * rhs;
  MMap(out, Idx(n), Idx(p)) = prod.topRows(Idx(n));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() >= 2 && sb.size() == 2) {
    const std::size_t k = sa.back();
    if (sb[0] != k) shape_error("matmul", sa, sb);
    const std::size_t p = sb[1];
    const std::size_t n = a.numel() / k;
    Shape out_shape = sa;
    out_shape.back() = p;
    std::vector<double> out(n * p);
    shared_rhs_product(a.values().data(), b.values().data(), out.data(), n, k, p);
    return Tensor::from_op("matmul", std::move(out_shape), std::move(out), {a, b},
                           [a, b, n, k, p](std::span<const double> g, std::span<const std::span<double>> gi) {
                             CMap gy(g.data(), Idx(n), Idx(p));
                             if (!gi[0].empty())
                               MMap(gi[0].data(), Idx(n), Idx(k)).noalias() += gy * CMap(b.values().data(), Idx(k), Idx(p)).transpose();
                             if (!gi[1].empty())
                               MMap(gi[1].data(), Idx(k), Idx(p)).noalias() += CMap(a.values().data(), Idx(n), Idx(k)).transpose() * gy;
                           });
  }
  if (sa.size() == 3 && sb.size() == 3) {
    const std::size_t batch = sa[0], n = sa[1], k = sa[2], p = sb[2];
    if (sb[0] != batch || sb[1] != k) shape_error("matmul", sa, sb);
    std::vector<double> out(batch * n * p);
    for (std::size_t i = 0; i < batch; ++i)
      MMap(out.data() + i * n * p, Idx(n), Idx(p)).noalias() =
          CMap(a.values().data() + i * n * k, Idx(n), Idx(k)) * CMap(b.values().data() + i * k * p, Idx(k), Idx(p));
    return Tensor::from_op("matmul", {batch, n, p}, std::move(out), {a, b},
                           [a, b, batch, n, k, p](std::span<const double> g, std::span<const std::span<double>> gi) {
                             for (std::size_t i = 0; i < batch; ++i) {
                               CMap gy(g.data() + i * n * p, Idx(n), Idx(p));
                               if (!gi[0].empty())
                                 MMap(gi[0].data() + i * n * k, Idx(n), Idx(k)).noalias() +=
                                     gy * CMap(b.values().data() + i * k * p, Idx(k), Idx(p)).transpose();
                               if (!gi[1].empty())
                                 MMap(gi[1].data() + i * k * p, Idx(k), Idx(p)).noalias() +=
                                     CMap(a.values().data() + i * n * k, Idx(n), Idx(k)).transpose() * gy;
                             }
                           });
  }
  shape_error("matmul", sa, sb);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  std::size_t batch = 1;
  if (sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0]) {
    batch = sa[0];
  } else if (!(sa.size() == 2 && sb.size() == 2)) {
    shape_error("matmul_nt", sa, sb);
  }
  const std::size_t n = sa[sa.size() - 2], k = sa.back(), p = sb[sb.size() - 2];
  if (sb.back() != k) shape_error("matmul_nt", sa, sb);
  std::vector<double> out(batch * n * p);
  for (std::size_t i = 0; i < batch; ++i)
    MMap(out.data() + i * n * p, Idx(n), Idx(p)).noalias() =
        CMap(a.values().data() + i * n * k, Idx(n), Idx(k)) * CMap(b.values().data() + i * p * k, Idx(p), Idx(k)).transpose();
  Shape out_shape = sa.size() == 3 ? Shape{batch, n, p} : Shape{n, p};
  return Tensor::from_op("matmul_nt", std::move(out_shape), std::move(out), {a, b},
                         [a, b, batch, n, k, p](std::span<const double> g, std::span<const std::span<double>> gi) {
                           for (std::size_t i = 0; i < batch; ++i) {
                             CMap gy(g.data() + i * n * p, Idx(n), Idx(p));
                             if (!gi[0].empty())
                               MMap(gi[0].data() + i * n * k, Idx(n), Idx(k)).noalias() +=
                                   gy * CMap(b.values().data() + i * p * k, Idx(p), Idx(k));
                             if (!gi[1].empty())
                               MMap(gi[1].data() + i * p * k, Idx(p), Idx(k)).noalias() +=
                                   gy.transpose() * CMap(a.values().data() + i * n * k, Idx(n), Idx(k));
                           }
                         });
}

// --- elementwise ----------------------------------------------------------------

namespace {

template <class Op, class DA, class DB>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Op op, DA da, DB db) {
  const Bcast kind = broadcast_kind(name, a.shape(), b.shape());
  const auto x = a.values();
  const auto y = b.values();
  const std::size_t n = x.size();
  const std::size_t m = y.size();
  std::vector<double> out(n);
  if (kind == Bcast::Same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = op(x[i], y[i]);
  } else {
    for (std::size_t r = 0; r < n; r += m)
      for (std::size_t j = 0; j < m; ++j) out[r + j] = op(x[r + j], y[j]);
  }
  return Tensor::from_op(name, a.shape(), std::move(out), {a, b},
                         [a, b, n, m, da, db](std::span<const double> g, std::span<const std::span<double>> gi) {
                           const auto x = a.values();
                           const auto y = b.values();
                           if (n == m) {
                             if (!gi[0].empty())
                               for (std::size_t i = 0; i < n; ++i) gi[0][i] += g[i] * da(x[i], y[i]);
                             if (!gi[1].empty())
                               for (std::size_t i = 0; i < n; ++i) gi[1][i] += g[i] * db(x[i], y[i]);
                             return;
                           }
                           for (std::size_t r = 0; r < n; r += m) {
                             if (!gi[0].empty())
                               for (std::size_t j = 0; j < m; ++j) gi[0][r + j] += g[r + j] * da(x[r + j], y[j]);
                             if (!gi[1].empty())
                               for (std::size_t j = 0; j < m; ++j) gi[1][j] += g[r + j] * db(x[r + j], y[j]);
                           }
                         });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary("add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
                [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
                [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
                [](double x, double) { return x; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary("add_scalar", a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return unary("mul_scalar", a, [c](double x) { return x * c; }, [c](double) { return c; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sin(const Tensor& a) {
  return unary("sin", a, [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); });
}

Tensor cos(const Tensor& a) {
  return unary("cos", a, [](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
  return unary("log", a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Tensor abs(const Tensor& a) {
  return unary("abs", a, [](double x) { return std::abs(x); },
               [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

// --- reductions -------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  const auto x = a.values();
  double s = 0.0;
  for (double v : x) s += v;
  return Tensor::from_op("sum", {}, {s}, {a}, [](std::span<const double> g, std::span<const std::span<double>> gi) {
    for (double& v : gi[0]) v += g[0];
  });
}

Tensor mean(const Tensor& a) {
  const auto x = a.values();
  const double n = static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += v;
  return Tensor::from_op("mean", {}, {s / n}, {a}, [n](std::span<const double> g, std::span<const std::span<double>> gi) {
    for (double& v : gi[0]) v += g[0] / n;
  });
}

Tensor sum_last(const Tensor& a) {
  const Shape& s = a.shape();
  if (s.empty()) shape_error("sum_last", s, "has no axis to reduce");
  const std::size_t len = s.back();
  const std::size_t rows = a.numel() / len;
  const auto x = a.values();
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < len; ++j) out[r] += x[r * len + j];
  Shape out_shape(s.begin(), s.end() - 1);
  return Tensor::from_op("sum_last", std::move(out_shape), std::move(out), {a},
                         [rows, len](std::span<const double> g, std::span<const std::span<double>> gi) {
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < len; ++j) gi[0][r * len + j] += g[r];
                         });
}

Tensor mean_axis(const Tensor& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) shape_error("mean_axis", s, "has no axis " + std::to_string(axis));
  const AxisSplit sp = split_axis(s, axis);
  const auto x = a.values();
  const double inv = 1.0 / static_cast<double>(sp.len);
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += x[(o * sp.len + l) * sp.inner + i];
  for (double& v : out) v *= inv;
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  return Tensor::from_op("mean_axis", std::move(out_shape), std::move(out), {a},
                         [sp, inv](std::span<const double> g, std::span<const std::span<double>> gi) {
                           for (std::size_t o = 0; o < sp.outer; ++o)
                             for (std::size_t l = 0; l < sp.len; ++l)
                               for (std::size_t i = 0; i < sp.inner; ++i)
                                 gi[0][(o * sp.len + l) * sp.inner + i] += g[o * sp.inner + i] * inv;
                         });
}

Tensor variance(const Tensor& a) {
  const auto x = a.values();
  const double n = static_cast<double>(x.size());
  double m = 0.0;
  for (double v : x) m += v;
  m /= n;
  double var = 0.0;
  for (double v : x) var += (v - m) * (v - m);
  var /= n;
  return Tensor::from_op("variance", {}, {var}, {a}, [a, n](std::span<const double> g, std::span<const std::span<double>> gi) {
    const auto x = a.values();
    double m = 0.0;
    for (double v : x) m += v;
    m /= n;
    for (std::size_t i = 0; i < x.size(); ++i) gi[0][i] += g[0] * 2.0 * (x[i] - m) / n;
  });
}

// --- normalized outputs -------------------------------------------------------------

Tensor softmax(const Tensor& a) {
  const Shape& s = a.shape();
  if (s.empty()) shape_error("softmax", s, "has no class axis");
  const std::size_t c = s.back();
  const std::size_t rows = a.numel() / c;
  const auto x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * c;
    double* yr = out.data() + r * c;
    const double mx = *std::max_element(xr, xr + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < c; ++j) yr[j] /= z;
  }
  auto y = std::make_shared<std::vector<double>>(std::move(out));
  return Tensor::from_op_shared("softmax", s, y, {a},
                                [y, rows, c](std::span<const double> g, std::span<const std::span<double>> gi) {
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    const double* yr = y->data() + r * c;
                                    const double* gr = g.data() + r * c;
                                    double dot = 0.0;
                                    for (std::size_t j = 0; j < c; ++j) dot += gr[j] * yr[j];
                                    for (std::size_t j = 0; j < c; ++j) gi[0][r * c + j] += yr[j] * (gr[j] - dot);
                                  }
                                });
}

Tensor log_softmax(const Tensor& a) {
  const Shape& s = a.shape();
  if (s.empty()) shape_error("log_softmax", s, "has no class axis");
  const std::size_t c = s.back();
  const std::size_t rows = a.numel() / c;
  const auto x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * c;
    const double mx = *std::max_element(xr, xr + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(xr[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = xr[j] - lse;
  }
  auto y = std::make_shared<std::vector<double>>(std::move(out));
  return Tensor::from_op_shared("log_softmax", s, y, {a},
                                [y, rows, c](std::span<const double> g, std::span<const std::span<double>> gi) {
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    double gs = 0.0;
                                    for (std::size_t j = 0; j < c; ++j) gs += g[r * c + j];
                                    for (std::size_t j = 0; j < c; ++j)
                                      gi[0][r * c + j] += g[r * c + j] - std::exp((*y)[r * c + j]) * gs;
                                  }
                                });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2) shape_error("cross_entropy", s, "must be [N, C]");
  const std::size_t n = s[0], c = s[1];
  if (labels.size() != n)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  auto probs = std::make_shared<std::vector<double>>(n * c);
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  const auto x = logits.values();
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int y = (*lab)[r];
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw ContractError("cross_entropy: label out of range");
    const double* xr = x.data() + r * c;
    const double mx = *std::max_element(xr, xr + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += ((*probs)[r * c + j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] /= z;
    loss += mx + std::log(z) - xr[y];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return Tensor::from_op("cross_entropy", {}, {loss * inv_n}, {logits},
                         [probs, lab, n, c, inv_n](std::span<const double> g, std::span<const std::span<double>> gi) {
                           for (std::size_t r = 0; r < n; ++r)
                             for (std::size_t j = 0; j < c; ++j) {
                               const double onehot = static_cast<int>(j) == (*lab)[r] ? 1.0 : 0.0;
                               gi[0][r * c + j] += g[0] * inv_n * ((*probs)[r * c + j] - onehot);
                             }
                         });
}

Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps) {
  const Shape& s = x.shape();
  if (s.empty()) shape_error("layer_norm", s, "has no feature axis");
  const std::size_t d = s.back();
  if (scale.shape() != Shape{d}) shape_error("layer_norm", s, scale.shape());
  if (shift.shape() != Shape{d}) shape_error("layer_norm", s, shift.shape());
  const std::size_t rows = x.numel() / d;
  const auto xv = x.values();
  const auto gv = scale.values();
  const auto bv = shift.values();
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double m = 0.0;
    for (std::size_t j = 0; j < d; ++j) m += xr[j];
    m /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - m) * (xr[j] - m);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - m) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return Tensor::from_op("layer_norm", s, std::move(out), {x, scale, shift},
                         [scale, xhat, inv_std, rows, d](std::span<const double> g, std::span<const std::span<double>> gi) {
                           const auto gv = scale.values();
                           const double nd = static_cast<double>(d);
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* h = xhat->data() + r * d;
                             const double* gr = g.data() + r * d;
                             if (!gi[0].empty()) {
                               double sum_g = 0.0, sum_gh = 0.0;
                               for (std::size_t j = 0; j < d; ++j) {
                                 const double gh = gr[j] * gv[j];
                                 sum_g += gh;
                                 sum_gh += gh * h[j];
                               }
                               const double is = (*inv_std)[r];
                               for (std::size_t j = 0; j < d; ++j)
                                 gi[0][r * d + j] += is / nd * (nd * gr[j] * gv[j] - sum_g - h[j] * sum_gh);
                             }
                             if (!gi[1].empty())
                               for (std::size_t j = 0; j < d; ++j) gi[1][j] += gr[j] * h[j];
                             if (!gi[2].empty())
                               for (std::size_t j = 0; j < d; ++j) gi[2][j] += gr[j];
                           }
                         });
}

// --- structural -------------------------------------------------------------------

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) shape_error("concat", s0, "has no axis " + std::to_string(axis));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  std::vector<AxisSplit> splits;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) shape_error("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != s0[i]) shape_error("concat", s0, s);
    out_shape[axis] += s[axis];
    splits.push_back(split_axis(s, axis));
  }
  const std::size_t outer = splits[0].outer, inner = splits[0].inner, total = out_shape[axis];
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto x = parts[k].values();
    const std::size_t len = splits[k].len;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.data() + o * len * inner, len * inner, out.data() + (o * total + offset) * inner);
    offset += len;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  std::vector<std::size_t> lens;
  for (const auto& sp : splits) lens.push_back(sp.len);
  return Tensor::from_op("concat", std::move(out_shape), std::move(out), std::move(inputs),
                         [lens, outer, inner, total](std::span<const double> g, std::span<const std::span<double>> gi) {
                           std::size_t offset = 0;
                           for (std::size_t k = 0; k < lens.size(); ++k) {
                             if (!gi[k].empty())
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t j = 0; j < lens[k] * inner; ++j)
                                   gi[k][o * lens[k] * inner + j] += g[(o * total + offset) * inner + j];
                             offset += lens[k];
                           }
                         });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size()) shape_error("slice", s, "has no axis " + std::to_string(axis));
  if (begin >= end || end > s[axis])
    shape_error("slice", s, "cannot take [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                                std::to_string(axis));
  const AxisSplit sp = split_axis(s, axis);
  const std::size_t len = end - begin;
  Shape out_shape = s;
  out_shape[axis] = len;
  const auto x = a.values();
  std::vector<double> out(sp.outer * len * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(x.data() + (o * sp.len + begin) * sp.inner, len * sp.inner, out.data() + o * len * sp.inner);
  return Tensor::from_op("slice", std::move(out_shape), std::move(out), {a},
                         [sp, begin, len](std::span<const double> g, std::span<const std::span<double>> gi) {
                           for (std::size_t o = 0; o < sp.outer; ++o)
                             for (std::size_t j = 0; j < len * sp.inner; ++j)
                               gi[0][(o * sp.len + begin) * sp.inner + j] += g[o * len * sp.inner + j];
                         });
}

Tensor permute(const Tensor& a, std::span<const std::size_t> perm) {
  const Shape& s = a.shape();
  const std::size_t r = s.size();
  if (perm.size() != r) shape_error("permute", s, "needs a permutation of rank " + std::to_string(r));
  std::vector<bool> used(r, false);
  for (std::size_t p : perm) {
    if (p >= r || used[p]) shape_error("permute", s, "given an invalid permutation");
    used[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[perm[i]];
  // in_strides[perm[i]] walks the input while the output index advances along axis i
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  std::vector<std::size_t> src_of(a.numel());
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  const std::size_t inner_len = r == 0 ? 1 : out_shape[r - 1];
  const std::size_t inner_stride = r == 0 ? 0 : in_strides[perm[r - 1]];
  for (std::size_t flat = 0; flat < src_of.size(); flat += inner_len) {
    for (std::size_t j = 0; j < inner_len; ++j) src_of[flat + j] = src + j * inner_stride;
    for (std::size_t i = r == 0 ? 0 : r - 1; i-- > 0;) {
      src += in_strides[perm[i]];
      if (++idx[i] < out_shape[i]) break;
      src -= out_shape[i] * in_strides[perm[i]];
      idx[i] = 0;
    }
  }
  const auto x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[src_of[i]];
  auto map = std::make_shared<std::vector<std::size_t>>(std::move(src_of));
  return Tensor::from_op("permute", std::move(out_shape), std::move(out), {a},
                         [map](std::span<const double> g, std::span<const std::span<double>> gi) {
                           for (std::size_t i = 0; i < g.size(); ++i) gi[0][(*map)[i]] += g[i];
                         });
}

Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rank();
  if (r < 2) shape_error("transpose", a.shape(), "needs at least two axes");
  std::vector<std::size_t> perm(r);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::swap(perm[r - 1], perm[r - 2]);
  return permute(a, perm);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (grad::numel(shape) != a.numel()) shape_error("reshape", a.shape(), "cannot become " + to_string(shape));
  return Tensor::identity_view("reshape", std::move(shape), a);
}

Tensor detach(const Tensor& a) {
  return Tensor::constant(a.shape(), std::vector<double>(a.values().begin(), a.values().end()));
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const Shape& s = x.shape();
  if (s.empty() || weight.rank() != 2 || s.back() != weight.dim(0)) shape_error("linear", s, weight.shape());
  const std::size_t in = s.back();
  const std::size_t out = weight.dim(1);
  Tensor flat = s.size() == 2 ? x : reshape(x, {x.numel() / in, in});
  Tensor y = add(matmul(flat, weight), bias);
  if (s.size() == 2) return y;
  Shape out_shape = s;
  out_shape.back() = out;
  return reshape(y, std::move(out_shape));
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || labels.size() != s[0]) shape_error("accuracy", s, "does not match the label count");
  const auto x = logits.values();
  const std::size_t c = s[1];
  std::size_t hits = 0;
  for (std::size_t r = 0; r < s[0]; ++r) {
    const double* xr = x.data() + r * c;
    const auto best = static_cast<int>(std::max_element(xr, xr + c) - xr);
    hits += best == labels[r] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(s[0]);
}

GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves, double h, double tol,
                           double floor) {
  GradCheckReport report;
  const Gradients grads = backward(f());
  for (Tensor& leaf : leaves) {
    auto vals = leaf.mutable_values();
    const bool present = grads.contains(leaf);
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + h;
      const double up = f().item();
      vals[i] = saved - h;
      const double down = f().item();
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = present ? grads.of(leaf)[i] : 0.0;
      const double abs_err = std::abs(analytic - numeric);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      report.max_rel_error = std::max(report.max_rel_error, abs_err / denom);
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace dif::grad
