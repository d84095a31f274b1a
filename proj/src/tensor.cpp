#include "tdsim/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "tdsim/errors.hpp"

namespace tdsim {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == 0) {
      throw DimensionError("axis " + std::to_string(i) + " of shape " + shape_str(shape) +
                           " is zero");
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_str(shape_) + " holds " +
                         std::to_string(shape_numel(shape_)) + " elements, got " +
                         std::to_string(data_.size()));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape_));
  }
  return shape_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ValidationError("item() on tensor of shape " + shape_str(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

namespace detail {

std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->seq = detail::next_seq();
  node_->op = "leaf";
}

const Tensor& Var::grad() const {
  if (!node_->grad) throw StateError("gradient not populated");
  return *node_->grad;
}

void Var::zero_grad() {
  if (node_->grad) {
    node_->grad->fill(0.0);
  } else {
    node_->grad = Tensor(node_->value.shape(), 0.0);
  }
}

Var Var::detached_copy() const { return Var(node_->value, node_->requires_grad); }

Tensor& grad_buffer(const Var& v) {
  auto& node = *v.node();
  if (!node.grad) node.grad = Tensor(node.value.shape(), 0.0);
  return *node.grad;
}

Var make_op(std::string op, Tensor value, std::vector<Var> parents, detail::BackwardFn backward) {
  Var out;
  out.node_ = std::make_shared<detail::Node>();
  auto& node = *out.node_;
  node.value = std::move(value);
  node.seq = detail::next_seq();
  node.op = std::move(op);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  node.requires_grad = true;
  node.parents.reserve(parents.size());
  for (const auto& p : parents) node.parents.push_back(p.node());
  node.backward = std::move(backward);
  return out;
}

namespace {

// Nodes reachable from root through requires_grad edges, ascending seq.
std::vector<detail::Node*> collect(const detail::NodePtr& root) {
  std::vector<detail::Node*> nodes;
  std::unordered_set<const detail::Node*> seen;
  std::vector<detail::Node*> stack{root.get()};
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    nodes.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad) stack.push_back(p.get());
    }
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq < b->seq; });
  return nodes;
}

}  // namespace

ComputationRecord ComputationRecord::trace(const Var& root) {
  ComputationRecord rec;
  for (auto* n : collect(root.node())) {
    if (!n->parents.empty()) rec.entries_.push_back({n->seq, n->op});
  }
  return rec;
}

ComputationRecord backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw ValidationError("backward() requires a scalar loss, got shape " +
                          shape_str(loss.shape()));
  }
  ComputationRecord rec;
  if (!loss.requires_grad()) return rec;
  auto nodes = collect(loss.node());
  for (auto* n : nodes) {
    if (!n->parents.empty()) n->grad = Tensor(n->value.shape(), 0.0);
  }
  auto& root = *loss.node();
  if (!root.grad) root.grad = Tensor(root.value.shape(), 0.0);
  (*root.grad)[0] += 1.0;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    auto* n = *it;
    if (n->parents.empty() || !n->backward) continue;
    n->backward(*n->grad);
    rec.entries_.push_back({n->seq, n->op});
  }
  // Interior gradients are not needed past this point.
  for (auto* n : nodes) {
    if (!n->parents.empty()) n->grad.reset();
  }
  return rec;
}

void ParamRegistry::add(std::string name, Var param) {
  if (contains(name)) throw ValidationError("duplicate parameter name '" + name + "'");
  items_.emplace_back(std::move(name), std::move(param));
}

void ParamRegistry::merge(const ParamRegistry& other) {
  for (const auto& [name, p] : other) add(name, p);
}

bool ParamRegistry::contains(std::string_view name) const {
  return std::any_of(items_.begin(), items_.end(),
                     [&](const Item& it) { return it.first == name; });
}

const Var& ParamRegistry::at(std::string_view name) const {
  for (const auto& it : items_) {
    if (it.first == name) return it.second;
  }
  throw ValidationError("unknown parameter '" + std::string(name) + "'");
}

Var& ParamRegistry::at(std::string_view name) {
  return const_cast<Var&>(std::as_const(*this).at(name));
}

std::size_t ParamRegistry::numel() const {
  std::size_t n = 0;
  for (const auto& [_, p] : items_) n += p.value().size();
  return n;
}

void ParamRegistry::zero_grad() {
  for (auto& [_, p] : items_) p.zero_grad();
}

void ParamRegistry::set_requires_grad(bool on) {
  for (auto& [_, p] : items_) p.set_requires_grad(on);
}

std::vector<double> ParamRegistry::snapshot() const {
  std::vector<double> out;
  out.reserve(numel());
  for (const auto& [_, p] : items_) {
    auto d = p.value().data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

void sgd_step(ParamRegistry& params, double lr) {
  if (!(lr >= 0.0)) throw ValidationError("learning rate must be non-negative");
  for (auto& [name, p] : params) {
    if (!p.has_grad()) throw StateError("parameter '" + name + "' has no gradient");
  }
  for (auto& [name, p] : params) {
    auto w = p.mutable_value().data();
    auto g = grad_buffer(p).data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
    p.zero_grad();
  }
}

}  // namespace tdsim
