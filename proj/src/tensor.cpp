#include "fdlab/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "fdlab/error.hpp"

namespace fdlab {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

MutMap as_matrix(Tensor& t) {
  return MutMap(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
  }
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (product(shape_) != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n = rows.size();
  const std::size_t m = n ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(n * m);
  for (const auto& r : rows) {
    if (r.size() != m) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor(Shape{n, m}, std::move(data));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  return Eigen::Map<const Eigen::ArrayXd>(data_.data(), static_cast<Eigen::Index>(data_.size())).allFinite();
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }

// ---------------------------------------------------------------------------
// Tape

Var Tape::constant(Tensor value) { return record(std::move(value), {}, nullptr, "constant"); }

Var Tape::leaf(Tensor value) {
  Var v = record(std::move(value), {}, nullptr, "leaf");
  nodes_.back().requires_grad = grad_enabled_;
  return v;
}

Var Tape::param(Parameter& p) {
  Var v = leaf(p.value);
  nodes_.back().param = &p;
  return v;
}

Var Tape::record(Tensor value, std::vector<int> parents, BackwardFn backward, const char* op) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  Node node;
  node.value = std::move(value);
  if (grad_enabled_ && backward) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [this](int p) { return nodes_[static_cast<std::size_t>(p)].requires_grad; });
    if (any) {
      node.parents = std::move(parents);
      node.backward = std::move(backward);
      node.requires_grad = true;
    }
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Tensor& Tape::grad_ref(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  grad_ref(loss.id()).fill(1.0);
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) {
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
}

void Tape::clear() { nodes_.clear(); }

std::size_t Tape::stored_doubles() const {
  std::size_t total = 0;
  for (const Node& n : nodes_) total += n.value.size() + n.grad.size();
  return total;
}

// ---------------------------------------------------------------------------
// Ops

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  Tensor out(Shape{av.rows(), bv.cols()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  const int ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib},
                         [ia, ib](Tape& t, int self) {
                           const auto g = as_matrix(t.grad(self));
                           if (t.requires_grad(ia)) {
                             as_matrix(t.grad_ref(ia)).noalias() += g * as_matrix(t.value(ib)).transpose();
                           }
                           if (t.requires_grad(ib)) {
                             as_matrix(t.grad_ref(ib)).noalias() += as_matrix(t.value(ia)).transpose() * g;
                           }
                         },
                         "matmul");
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul_nt");
  require_rank2(bv, "matmul_nt");
  if (av.cols() != bv.cols()) {
    throw ShapeError("matmul_nt: inner dimensions differ: " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()) + "^T");
  }
  Tensor out(Shape{av.rows(), bv.rows()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv).transpose();
  const int ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib},
                         [ia, ib](Tape& t, int self) {
                           const auto g = as_matrix(t.grad(self));
                           if (t.requires_grad(ia)) {
                             as_matrix(t.grad_ref(ia)).noalias() += g * as_matrix(t.value(ib));
                           }
                           if (t.requires_grad(ib)) {
                             as_matrix(t.grad_ref(ib)).noalias() += g.transpose() * as_matrix(t.value(ia));
                           }
                         },
                         "matmul_nt");
}

namespace {

enum class Bcast { none, left_scalar, right_scalar };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::none;
  if (a.size() == 1) return Bcast::left_scalar;
  if (b.size() == 1) return Bcast::right_scalar;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

// Accumulates `g` into the gradient of `id`, summing when that operand was broadcast.
void accumulate(Tape& t, int id, const Tensor& g, double factor, bool reduce) {
  Tensor& dst = t.grad_ref(id);
  if (reduce) {
    double s = 0.0;
    for (double v : g.data()) s += v;
    dst[0] += factor * s;
  } else {
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] += factor * g[k];
  }
}

template <typename F>
Var binary(Var a, Var b, const char* op, F f, Tape::BackwardFn backward) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Bcast kind = broadcast_kind(av, bv, op);
  const Tensor& big = kind == Bcast::left_scalar ? bv : av;
  Tensor out(big.shape());
  const std::size_t n = out.size();
  double* o = out.ptr();
  const double* x = av.ptr();
  const double* y = bv.ptr();
  switch (kind) {
    case Bcast::none:
      for (std::size_t k = 0; k < n; ++k) o[k] = f(x[k], y[k]);
      break;
    case Bcast::left_scalar:
      for (std::size_t k = 0; k < n; ++k) o[k] = f(x[0], y[k]);
      break;
    case Bcast::right_scalar:
      for (std::size_t k = 0; k < n; ++k) o[k] = f(x[k], y[0]);
      break;
  }
  return a.tape().record(std::move(out), {a.id(), b.id()}, std::move(backward), op);
}

using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXd>;

ConstArrMap as_array(const Tensor& t) { return ConstArrMap(t.ptr(), static_cast<Eigen::Index>(t.size())); }
ArrMap as_array(Tensor& t) { return ArrMap(t.ptr(), static_cast<Eigen::Index>(t.size())); }

// `f` maps the input array to the output array; `df` gives the local
// derivative from (input, output) arrays. Both are vectorized by Eigen.
template <typename F, typename D>
Var unary(Var a, const char* op, F f, D df) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  as_array(out) = f(as_array(av));
  const int ia = a.id();
  return a.tape().record(std::move(out), {ia},
                         [ia, df](Tape& t, int self) {
                           as_array(t.grad_ref(ia)) += as_array(t.grad(self)) * df(as_array(t.value(ia)), as_array(t.value(self)));
                         },
                         op);
}

}  // namespace

Var add(Var a, Var b) {
  const bool ra = a.value().size() == 1 && b.value().size() != 1;
  const bool rb = b.value().size() == 1 && a.value().size() != 1;
  const int ia = a.id(), ib = b.id();
  return binary(a, b, "add", [](double x, double y) { return x + y; },
                [ia, ib, ra, rb](Tape& t, int self) {
                  const Tensor& g = t.grad(self);
                  if (t.requires_grad(ia)) accumulate(t, ia, g, 1.0, ra);
                  if (t.requires_grad(ib)) accumulate(t, ib, g, 1.0, rb);
                });
}

Var sub(Var a, Var b) {
  const bool ra = a.value().size() == 1 && b.value().size() != 1;
  const bool rb = b.value().size() == 1 && a.value().size() != 1;
  const int ia = a.id(), ib = b.id();
  return binary(a, b, "sub", [](double x, double y) { return x - y; },
                [ia, ib, ra, rb](Tape& t, int self) {
                  const Tensor& g = t.grad(self);
                  if (t.requires_grad(ia)) accumulate(t, ia, g, 1.0, ra);
                  if (t.requires_grad(ib)) accumulate(t, ib, g, -1.0, rb);
                });
}

Var mul(Var a, Var b) {
  const bool ra = a.value().size() == 1 && b.value().size() != 1;
  const bool rb = b.value().size() == 1 && a.value().size() != 1;
  const int ia = a.id(), ib = b.id();
  return binary(a, b, "mul", [](double x, double y) { return x * y; },
                [ia, ib, ra, rb](Tape& t, int self) {
                  const Tensor& g = t.grad(self);
                  const Tensor& av = t.value(ia);
                  const Tensor& bv = t.value(ib);
                  // d(a*b)/da = b, broadcast-aware.
                  auto other_at = [&](const Tensor& o, std::size_t k) { return o.size() == 1 ? o[0] : o[k]; };
                  if (t.requires_grad(ia)) {
                    Tensor& dst = t.grad_ref(ia);
                    if (ra) {
                      double s = 0.0;
                      for (std::size_t k = 0; k < g.size(); ++k) s += g[k] * bv[k];
                      dst[0] += s;
                    } else {
                      for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k] * other_at(bv, k);
                    }
                  }
                  if (t.requires_grad(ib)) {
                    Tensor& dst = t.grad_ref(ib);
                    if (rb) {
                      double s = 0.0;
                      for (std::size_t k = 0; k < g.size(); ++k) s += g[k] * av[k];
                      dst[0] += s;
                    } else {
                      for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k] * other_at(av, k);
                    }
                  }
                });
}

Var sigmoid(Var a) {
  // exp(-x) may overflow to +inf for very negative x, which still yields 0.
  return unary(
      a, "sigmoid", [](const auto& x) { return 1.0 / (1.0 + (-x).exp()); },
      [](const auto&, const auto& y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  // 2*sigmoid(2x) - 1: vectorizes, unlike std::tanh, at ~1 ulp absolute error.
  return unary(
      a, "tanh", [](const auto& x) { return 2.0 / (1.0 + (-2.0 * x).exp()) - 1.0; },
      [](const auto&, const auto& y) { return 1.0 - y * y; });
}

Var square(Var a) {
  return unary(a, "square", [](const auto& x) { return x * x; }, [](const auto& x, const auto&) { return 2.0 * x; });
}

Var scale(Var a, double factor) {
  return unary(
      a, "scale", [factor](const auto& x) { return factor * x; },
      [factor](const auto& x, const auto&) { return Eigen::ArrayXd::Constant(x.size(), factor); });
}

Var elementwise(Elementwise kind, std::span<const Var> args) {
  const std::size_t arity =
      (kind == Elementwise::add || kind == Elementwise::sub || kind == Elementwise::mul) ? 2 : 1;
  if (args.size() != arity) {
    throw std::invalid_argument("elementwise: expected " + std::to_string(arity) + " arguments, got " +
                                std::to_string(args.size()));
  }
  switch (kind) {
    case Elementwise::add: return add(args[0], args[1]);
    case Elementwise::sub: return sub(args[0], args[1]);
    case Elementwise::mul: return mul(args[0], args[1]);
    case Elementwise::sigmoid: return sigmoid(args[0]);
    case Elementwise::tanh: return tanh(args[0]);
    case Elementwise::square: return square(args[0]);
  }
  throw std::invalid_argument("elementwise: unknown op");
}

Var add_row(Var a, Var bias) {
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  require_rank2(av, "add_row");
  if (bv.size() != av.cols()) {
    throw ShapeError("add_row: bias " + shape_str(bv.shape()) + " does not match " + shape_str(av.shape()));
  }
  Tensor out = av;
  const std::size_t n = av.rows(), k = av.cols();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c) out[r * k + c] += bv[c];
  const int ia = a.id(), ib = bias.id();
  return a.tape().record(std::move(out), {ia, ib},
                         [ia, ib, n, k](Tape& t, int self) {
                           const Tensor& g = t.grad(self);
                           if (t.requires_grad(ia)) {
                             Tensor& d = t.grad_ref(ia);
                             for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                           }
                           if (t.requires_grad(ib)) {
                             Tensor& d = t.grad_ref(ib);
                             for (std::size_t r = 0; r < n; ++r)
                               for (std::size_t c = 0; c < k; ++c) d[c] += g[r * k + c];
                           }
                         },
                         "add_row");
}

Var slice_cols(Var a, std::size_t start, std::size_t len) {
  const Tensor& av = a.value();
  require_rank2(av, "slice_cols");
  if (start + len > av.cols()) throw ShapeError("slice_cols: range exceeds " + shape_str(av.shape()));
  const std::size_t n = av.rows(), k = av.cols();
  Tensor out(Shape{n, len});
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(av.ptr() + r * k + start, len, out.ptr() + r * len);
  const int ia = a.id();
  return a.tape().record(std::move(out), {ia},
                         [ia, n, k, start, len](Tape& t, int self) {
                           const Tensor& g = t.grad(self);
                           Tensor& d = t.grad_ref(ia);
                           for (std::size_t r = 0; r < n; ++r)
                             for (std::size_t c = 0; c < len; ++c) d[r * k + start + c] += g[r * len + c];
                         },
                         "slice_cols");
}

Var gather_rows(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  require_rank2(tv, "gather_rows");
  const std::size_t e = tv.cols();
  Tensor out(Shape{ids.size(), e});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tv.rows()) {
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[r]) + " outside table of " +
                              std::to_string(tv.rows()) + " rows");
    }
    std::copy_n(tv.ptr() + static_cast<std::size_t>(ids[r]) * e, e, out.ptr() + r * e);
  }
  const int it = table.id();
  std::vector<int> rows(ids.begin(), ids.end());
  return table.tape().record(std::move(out), {it},
                             [it, e, rows = std::move(rows)](Tape& t, int self) {
                               const Tensor& g = t.grad(self);
                               Tensor& d = t.grad_ref(it);
                               for (std::size_t r = 0; r < rows.size(); ++r) {
                                 double* dst = d.ptr() + static_cast<std::size_t>(rows[r]) * e;
                                 const double* src = g.ptr() + r * e;
                                 for (std::size_t c = 0; c < e; ++c) dst[c] += src[c];
                               }
                             },
                             "gather_rows");
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const int ia = a.id();
  return a.tape().record(Tensor::scalar(s), {ia},
                         [ia](Tape& t, int self) {
                           const double g = t.grad(self)[0];
                           Tensor& d = t.grad_ref(ia);
                           for (std::size_t k = 0; k < d.size(); ++k) d[k] += g;
                         },
                         "sum");
}

Var squared_distance(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw ShapeError("squared_distance: shapes differ: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  double s = 0.0;
  for (std::size_t k = 0; k < av.size(); ++k) {
    const double d = av[k] - bv[k];
    s += d * d;
  }
  const int ia = a.id(), ib = b.id();
  return a.tape().record(Tensor::scalar(s), {ia, ib},
                         [ia, ib](Tape& t, int self) {
                           const double g = t.grad(self)[0];
                           const Tensor& x = t.value(ia);
                           const Tensor& y = t.value(ib);
                           if (t.requires_grad(ia)) {
                             Tensor& d = t.grad_ref(ia);
                             for (std::size_t k = 0; k < d.size(); ++k) d[k] += 2.0 * g * (x[k] - y[k]);
                           }
                           if (t.requires_grad(ib)) {
                             Tensor& d = t.grad_ref(ib);
                             for (std::size_t k = 0; k < d.size(); ++k) d[k] -= 2.0 * g * (x[k] - y[k]);
                           }
                         },
                         "squared_distance");
}

Var detach(Var a) { return a.tape().constant(a.value()); }

namespace {

// Row softmax of `logits` into `probs`; returns log-partition per row.
std::vector<double> softmax_into(const Tensor& logits, Tensor& probs) {
  const std::size_t n = logits.rank() == 2 ? logits.rows() : 1;
  const std::size_t m = logits.cols();
  probs = logits;
  std::vector<double> log_z(n);
  for (std::size_t r = 0; r < n; ++r) {
    ArrMap row(probs.ptr() + r * m, static_cast<Eigen::Index>(m));
    const double mx = row.maxCoeff();
    row = (row - mx).exp();
    const double z = row.sum();
    row /= z;
    log_z[r] = mx + std::log(z);
  }
  return log_z;
}

}  // namespace

Tensor softmax_rows(const Tensor& logits) {
  Tensor probs;
  softmax_into(logits, probs);
  return probs;
}

Var softmax_cross_entropy(Var logits, std::span<const int> targets, std::span<const double> weights) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 1 && lv.rank() != 2) {
    throw ShapeError("softmax_cross_entropy: logits must be rank 1 or 2, got " + shape_str(lv.shape()));
  }
  const std::size_t n = lv.rank() == 2 ? lv.rows() : 1;
  const std::size_t m = lv.cols();
  if (targets.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n) + " rows");
  }
  if (!weights.empty() && weights.size() != n) throw ShapeError("softmax_cross_entropy: weight count mismatch");
  for (int y : targets) {
    if (y < 0 || static_cast<std::size_t>(y) >= m) {
      throw std::out_of_range("softmax_cross_entropy: target " + std::to_string(y) + " outside [0," +
                              std::to_string(m) + ")");
    }
  }
  // Saved softmax doubles as the backward cache.
  Tensor probs;
  const std::vector<double> log_z = softmax_into(lv, probs);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double ce = log_z[r] - lv[r * m + static_cast<std::size_t>(targets[r])];
    loss += (weights.empty() ? 1.0 : weights[r]) * ce;
  }
  const int il = logits.id();
  std::vector<int> ys(targets.begin(), targets.end());
  std::vector<double> ws(weights.begin(), weights.end());
  return logits.tape().record(
      Tensor::scalar(loss), {il},
      [il, n, m, ys = std::move(ys), ws = std::move(ws), probs = std::move(probs)](Tape& t, int self) {
        const double g = t.grad(self)[0];
        Tensor& d = t.grad_ref(il);
        for (std::size_t r = 0; r < n; ++r) {
          const double w = g * (ws.empty() ? 1.0 : ws[r]);
          if (w == 0.0) continue;
          const double* p = probs.ptr() + r * m;
          double* dst = d.ptr() + r * m;
          for (std::size_t c = 0; c < m; ++c) dst[c] += w * p[c];
          dst[ys[r]] -= w;
        }
      },
      "softmax_cross_entropy");
}

Var softmax_cross_entropy(Var logits, int target) {
  const int t[1] = {target};
  return softmax_cross_entropy(logits, std::span<const int>(t, 1));
}

}  // namespace fdlab
