#include "vst/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>

#include "vst/errors.hpp"

namespace vst {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

namespace {

void check_shape(const Shape& shape, std::size_t count) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be >= 1, got " + to_string(shape));
  }
  if (numel(shape) != count) {
    throw DimensionError("shape " + to_string(shape) + " does not hold " + std::to_string(count) +
                         " values");
  }
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape, values.size());
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::extent(std::ptrdiff_t axis) const {
  const auto& s = shape();
  auto r = static_cast<std::ptrdiff_t>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("axis out of range for shape " + to_string(s));
  return s[static_cast<std::size_t>(axis)];
}

std::size_t Tensor::size() const { return numel(shape()); }

std::span<const double> Tensor::values() const {
  shape();
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar tensor " + to_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  shape();
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() const {
  shape();
  node_->grad.clear();
}

Tensor Tensor::detach(bool requires_grad) const { return Tensor(shape(), node_->value, requires_grad); }

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

Tensor Tensor::from_op(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                       detail::BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  out.node_->op = op;
  bool track = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    out.node_->requires_grad = true;
    out.node_->parents.reserve(inputs.size());
    for (auto& in : inputs) out.node_->parents.push_back(in.node_);
    out.node_->backward = std::move(backward);
  }
  return out;
}

GradTape GradTape::record(const Tensor& root) {
  GradTape tape;
  if (!root.requires_grad()) return tape;
  // Iterative post-order DFS so deep transformer graphs do not blow the stack.
  std::unordered_map<const detail::Node*, bool> visited;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited[root.node().get()] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto parent = node->parents[next++];
      if (parent->requires_grad && !visited[parent.get()]) {
        visited[parent.get()] = true;
        stack.emplace_back(std::move(parent), 0);
      }
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

std::vector<GradTape::Entry> GradTape::entries() const {
  std::unordered_map<const detail::Node*, std::size_t> index;
  for (std::size_t i = 0; i < nodes_.size(); ++i) index[nodes_[i].get()] = i;
  std::vector<Entry> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) {
    Entry e{n->op, {}};
    for (const auto& p : n->parents) {
      if (auto it = index.find(p.get()); it != index.end()) e.parents.push_back(it->second);
    }
    out.push_back(std::move(e));
  }
  return out;
}

void GradTape::run() {
  if (nodes_.empty()) return;
  auto& root = *nodes_.back();
  auto& g = root.grad_buffer();
  std::fill(g.begin(), g.end(), 0.0);
  g[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto& node = **it;
    if (node.is_leaf()) continue;
    if (!node.grad.empty()) node.backward(node);
  }
  for (auto& n : nodes_) {
    if (n->is_leaf()) continue;
    n->backward = nullptr;
    n->parents.clear();
    n->released = true;
    n->requires_grad = false;
    std::vector<double>().swap(n->grad);
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward() on an undefined tensor");
  if (loss.node()->released) throw ContractError("backward() called twice on the same graph");
  if (loss.size() != 1) throw ContractError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  if (!loss.requires_grad()) throw ContractError("loss is not connected to any tensor that requires grad");
  if (loss.node()->is_leaf()) {
    loss.node()->grad_buffer()[0] += 1.0;
    return;
  }
  GradTape::record(loss).run();
}

}  // namespace vst
