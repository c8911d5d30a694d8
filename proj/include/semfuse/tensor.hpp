#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace semfuse {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(const Node&)> backward;
  const char* op = "leaf";

  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense double-precision N-D array that records the operations producing it
/// so that `backward()` can propagate gradients to leaves with
/// `requires_grad` set.
///
/// Tensors are handles: copies share storage. Leaf gradients accumulate across
/// repeated `backward()` calls until `zero_grad()` is called.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value);

  // Builds an op result. `backward` is only attached when some parent needs a
  // gradient and grad recording is enabled. Throws NumericalError on
  // non-finite output, naming `op`.
  static Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                            std::vector<Tensor> parents,
                            std::function<void(const detail::Node&)> backward);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access, for parameter updates and finite-difference probes.
  std::span<double> mutable_data();

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  // Same values, cut from the graph.
  Tensor detach() const;
  // Deep copy of values (leaf, no grad).
  Tensor clone() const;

  // Reverse-mode sweep from a scalar root.
  void backward() const;

  const detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Graph recording switch, thread-local. While a NoGradGuard is alive, ops
// produce plain values with no backward links.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace semfuse
