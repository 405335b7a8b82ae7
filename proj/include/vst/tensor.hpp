#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vst {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

// One value in the computation graph. Values are written once at construction;
// only the gradient buffer changes afterwards.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool released = false;     // graph already consumed by backward()
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  bool is_leaf() const { return !backward; }
  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major tensor of doubles with optional gradient tracking.
///
/// A Tensor is a cheap handle: copies share the same immutable storage.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t extent(std::ptrdiff_t axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  double item() const;
  double operator[](std::size_t i) const { return values()[i]; }

  bool requires_grad() const;
  bool has_grad() const;
  /// Accumulated gradient; all zeros when nothing has flowed in yet.
  std::vector<double> grad() const;
  void zero_grad() const;

  /// Same values, no history, requires_grad as given.
  Tensor detach(bool requires_grad = false) const;

  const char* op_name() const;

  // Used by op implementations.
  static Tensor from_op(const char* op, Shape shape, std::vector<double> values,
                        std::vector<Tensor> inputs, detail::BackwardFn backward);
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered record of the graph below a root tensor.
class GradTape {
 public:
  struct Entry {
    const char* op;
    std::vector<std::size_t> parents;  // indices into entries()
  };

  static GradTape record(const Tensor& root);

  std::size_t size() const { return nodes_.size(); }
  std::vector<Entry> entries() const;

  /// Seeds d(root)/d(root) = 1 and runs every backward rule in reverse order,
  /// then releases the interior graph.
  void run();

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// reachable leaf that requires grad. Calling it twice on the same graph throws.
void backward(const Tensor& loss);

}  // namespace vst
