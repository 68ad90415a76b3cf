#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "scnas/rng.hpp"
#include "scnas/shape.hpp"

namespace scnas {

// Raised when a computation produces non-finite values and has to abort.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename Scalar>
struct TensorNode {
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Storage value;
  Storage grad;  // sized on first accumulation, zero until then
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(TensorNode&)> backprop;

  Storage& ensure_grad() {
    if (grad.size() != value.size()) grad = Storage::Zero(value.size());
    return grad;
  }
};

}  // namespace detail

// Dense multi-dimensional array participating in a reverse-mode graph.
// Value-semantic handle: copies share the underlying node.
template <typename Scalar>
class TensorT {
 public:
  using Node = detail::TensorNode<Scalar>;
  using Storage = typename Node::Storage;

  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    TensorT t = make(std::move(shape));
    t.node_->value.setZero();
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static TensorT constant(Shape shape, Scalar v) {
    TensorT t = make(std::move(shape));
    t.node_->value.setConstant(v);
    return t;
  }

  static TensorT scalar(Scalar v, bool requires_grad = false) {
    TensorT t = make(Shape{1});
    t.node_->value[0] = v;
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static TensorT from_vector(Shape shape, const std::vector<Scalar>& data,
                             bool requires_grad = false) {
    TensorT t = make(std::move(shape));
    if (static_cast<std::int64_t>(data.size()) != t.size())
      throw std::invalid_argument("from_vector: got " + std::to_string(data.size()) +
                                  " values for shape " + shape_string(t.shape()));
    for (std::int64_t i = 0; i < t.size(); ++i) t.node_->value[i] = data[i];
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static TensorT randn(Shape shape, Rng& rng, Scalar stddev = Scalar(1),
                       bool requires_grad = false) {
    TensorT t = make(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i)
      t.node_->value[i] = stddev * static_cast<Scalar>(rng.gaussian());
    t.node_->requires_grad = requires_grad;
    return t;
  }

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  Storage& values() { return node_->value; }
  const Storage& values() const { return node_->value; }
  Scalar operator[](std::int64_t i) const { return node_->value[i]; }

  Scalar item() const {
    if (size() != 1)
      throw std::invalid_argument("item: tensor of shape " + shape_string(shape()) +
                                  " is not scalar");
    return node_->value[0];
  }

  // Gradient buffer; zero-sized until something accumulated into it.
  Storage grad() const {
    if (node_->grad.size() != node_->value.size()) return Storage::Zero(node_->value.size());
    return node_->grad;
  }

  void zero_grad() {
    if (node_->grad.size() == node_->value.size()) node_->grad.setZero();
  }

  bool all_finite() const {
    for (std::int64_t i = 0; i < size(); ++i)
      if (!std::isfinite(static_cast<double>(node_->value[i]))) return false;
    return true;
  }

  // Reverse-mode sweep from a scalar loss. Each reachable node is visited
  // exactly once; gradients accumulate into every requires_grad node.
  void backward() const {
    if (size() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape_string(shape()));
    if (!std::isfinite(static_cast<double>(node_->value[0])))
      throw NumericalError("backward: loss is not finite");
    if (!node_->requires_grad) return;

    // Iterative post-order over the requires_grad subgraph.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
      Node* node;
      std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({node_.get(), 0});
    visited.insert(node_.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.node->parents.size()) {
        Node* p = f.node->parents[f.next_parent++].get();
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }

    node_->ensure_grad()[0] += Scalar(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backprop) n->backprop(*n);
    }
  }

  std::shared_ptr<Node>& node() { return node_; }
  const std::shared_ptr<Node>& node() const { return node_; }
  const void* node_id() const { return node_.get(); }

  // Flat text dump: header line "shape: d0 d1 ...", one value per line.
  void dump(std::ostream& os) const {
    os << "shape:";
    for (int d : shape()) os << ' ' << d;
    os << '\n';
    os.precision(17);
    for (std::int64_t i = 0; i < size(); ++i) os << node_->value[i] << '\n';
  }

 private:
  static TensorT make(Shape shape) {
    for (int d : shape)
      if (d <= 0)
        throw std::invalid_argument("tensor extents must be positive, got " +
                                    shape_string(shape));
    TensorT t;
    t.node_ = std::make_shared<Node>();
    t.node_->value.resize(numel(shape));
    t.node_->shape = std::move(shape);
    return t;
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

// Shared constructor for op results: shape, parents, requires_grad propagation.
template <typename Scalar>
TensorT<Scalar> make_result(Shape shape,
                            std::vector<std::shared_ptr<TensorNode<Scalar>>> parents) {
  TensorT<Scalar> out = TensorT<Scalar>::zeros(std::move(shape));
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  out.node()->requires_grad = rg;
  out.node()->parents = std::move(parents);
  return out;
}

}  // namespace detail

}  // namespace scnas
