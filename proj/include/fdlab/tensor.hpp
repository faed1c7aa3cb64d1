#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace fdlab {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

/// Cache-line aligned storage. Vectorized kernels pick their peeling by
/// pointer alignment, so a fixed alignment keeps reductions bit-reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Leading dimension for rank-2 tensors, 1 otherwise.
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  /// Trailing dimension (1 for scalars).
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  /// Value of a single-element tensor.
  double item() const;

  bool all_finite() const;
  void fill(double v);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  Storage data_;
};

/// A named trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape& tape() const { return *tape_; }
  const Tensor& value() const;
  /// Gradient from the most recent backward pass (empty when none reached this node).
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so
/// parents always precede children and backward is a single reverse sweep.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int)>;

  explicit Tape(std::uint64_t seed = 0) : seed_(seed) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t seed() const { return seed_; }

  /// Non-differentiable input.
  Var constant(Tensor value);
  /// Differentiable input whose gradient can be read back through Var::grad.
  Var leaf(Tensor value);
  /// Leaf bound to a Parameter; backward adds the leaf gradient into param.grad.
  Var param(Parameter& p);

  /// Populates gradients of every node reachable from `loss` and accumulates
  /// into bound parameters. Node gradients are reset first; parameter
  /// gradients keep accumulating until zeroed by the caller.
  void backward(Var loss);

  /// When disabled, new nodes record no parents or closures (evaluation mode).
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  std::size_t size() const { return nodes_.size(); }
  void clear();

  /// Doubles currently held in node values and gradients.
  std::size_t stored_doubles() const;

  // Op-implementation interface.
  Var record(Tensor value, std::vector<int> parents, BackwardFn backward, const char* op);
  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  /// Gradient buffer of node `id`, zero-allocated on first use.
  Tensor& grad_ref(int id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::uint64_t seed_;
  bool grad_enabled_ = true;
};

// Differentiable operations. Every result is checked for finiteness and a
// NumericError is raised on NaN/Inf.

/// [n,k] x [k,m] -> [n,m].
Var matmul(Var a, Var b);
/// [n,k] x [m,k]^T -> [n,m].
Var matmul_nt(Var a, Var b);

enum class Elementwise { add, sub, mul, sigmoid, tanh, square };

/// Dispatches to the named pointwise op. Binary kinds accept equal shapes or
/// a single-element operand broadcast against the other.
Var elementwise(Elementwise kind, std::span<const Var> args);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var sigmoid(Var a);
Var tanh(Var a);
Var square(Var a);
Var scale(Var a, double factor);
/// Adds `bias` [k] to every row of `a` [n,k].
Var add_row(Var a, Var bias);
/// Columns [start, start+len) of a rank-2 tensor.
Var slice_cols(Var a, std::size_t start, std::size_t len);
/// Rows of `table` selected by `ids`, giving [ids.size(), cols].
Var gather_rows(Var table, std::span<const int> ids);
/// Sum of all elements, as a scalar.
Var sum(Var a);
/// Sum of squared differences, as a scalar.
Var squared_distance(Var a, Var b);
/// Identical value with no gradient path.
Var detach(Var a);

/// Sum over rows of weight_r * -log softmax(logits_r)[target_r]. Accepts a
/// rank-1 logits vector (one row) or rank-2 [n,m]; `weights` empty means 1.
Var softmax_cross_entropy(Var logits, std::span<const int> targets,
                          std::span<const double> weights = {});
/// Single-target convenience form.
Var softmax_cross_entropy(Var logits, int target);

/// Numerically stable row softmax of a plain tensor.
Tensor softmax_rows(const Tensor& logits);

}  // namespace fdlab
