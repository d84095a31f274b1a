#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tdsim {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Plain value type; gradients live on Var.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  void fill(double v);

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(const Tensor& grad_out)>;

struct Node {
  Tensor value;
  std::optional<Tensor> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::string op;
  std::vector<NodePtr> parents;
  BackwardFn backward;
};

std::uint64_t next_seq();

}  // namespace detail

// Autograd handle: a tensor value plus its gradient slot. Copies share the
// underlying node, so a Var behaves like a reference to one graph vertex.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->grad.has_value(); }
  const Tensor& grad() const;
  void zero_grad();
  void clear_grad() { node_->grad.reset(); }

  bool is_leaf() const { return node_->parents.empty(); }
  std::uint64_t seq() const { return node_->seq; }
  const std::string& op() const { return node_->op; }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const detail::NodePtr& node() const { return node_; }

  // Deep copy of the value as a fresh leaf with the same requires_grad flag.
  Var detached_copy() const;

 private:
  friend Var make_op(std::string op, Tensor value, std::vector<Var> parents,
                     detail::BackwardFn backward);
  detail::NodePtr node_;
};

// Gradient buffer of a node, allocated zero-filled on first touch.
Tensor& grad_buffer(const Var& v);

// Creates an op result. The backward closure is attached only when grad
// mode is on and at least one parent requires grad.
Var make_op(std::string op, Tensor value, std::vector<Var> parents, detail::BackwardFn backward);

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Ordered list of recorded operations reachable from a root.
class ComputationRecord {
 public:
  struct Entry {
    std::uint64_t seq;
    std::string op;
  };

  // Operations in forward execution order.
  static ComputationRecord trace(const Var& root);

  const std::vector<Entry>& entries() const noexcept { return entries_; }

 private:
  friend ComputationRecord backward(const Var& loss);
  std::vector<Entry> entries_;
};

// Reverse-mode pass from a scalar loss. Leaf gradients accumulate across
// calls; returns the operations in the order their rules were replayed.
ComputationRecord backward(const Var& loss);

// Insertion-ordered name -> parameter table.
class ParamRegistry {
 public:
  using Item = std::pair<std::string, Var>;

  void add(std::string name, Var param);
  void merge(const ParamRegistry& other);

  bool contains(std::string_view name) const;
  const Var& at(std::string_view name) const;
  Var& at(std::string_view name);

  std::size_t size() const noexcept { return items_.size(); }
  std::size_t numel() const;
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  void zero_grad();
  void set_requires_grad(bool on);

  // Flat copy of all parameter values, in registry order.
  std::vector<double> snapshot() const;

 private:
  std::vector<Item> items_;
};

// p <- p - lr * grad(p) for each parameter, then grads are zeroed.
void sgd_step(ParamRegistry& params, double lr);

}  // namespace tdsim
