#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vrt {

using Shape = std::vector<std::size_t>;

// Thrown by primitives on incompatible operand shapes. Message carries the
// offending dimensions.
struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

namespace detail {

// One recorded value in the computation graph. Tensors are immutable after
// construction; grad is the only field written after creation.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad, accumulates into parents' grads. Empty for leaves.
  std::function<void(Node&)> backward_fn;

  std::size_t size() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

// Dense row-major tensor of doubles with a reverse-mode gradient tape.
// Handle semantics: copying a Tensor aliases the same node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor identity(std::size_t n);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> data() const { return node_->value; }
  std::span<const double> grad() const;
  bool has_grad() const { return !node_->grad.empty(); }

  double item() const;  // scalar tensors only
  double at(std::size_t i) const { return node_->value.at(i); }
  double at(std::size_t r, std::size_t c) const;

  // Fresh leaf with the same values, cut off from this tensor's history.
  // The leaf participates in backward (requires_grad = true), which is how
  // gradients w.r.t. intermediate inputs (e.g. looked-up embeddings) are read.
  Tensor detached_leaf() const;

  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  // Mutation escape hatch for leaves that are not part of any live graph
  // (weight updates in the optimizer). Never call on a recorded tensor.
  std::vector<double>& mutable_data() { return node_->value; }
  std::vector<double>& mutable_grad_buffer();

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Ordered record of the operations reachable from a root, inputs before
// consumers. Built on demand by backward().
struct Tape {
  std::vector<detail::Node*> order;

  static Tape from(const Tensor& root);
  void zero_grad();
};

// --- primitives ------------------------------------------------------------
// Every primitive computes its forward value eagerly and, when any input
// requires grad, links the result into the graph for backward().

// Elementwise sum. Accepts equal shapes, or a 1-D b broadcast across the rows
// of a 2-D a (bias add).
Tensor add(const Tensor& a, const Tensor& b);
// Multiply by a compile-time-known constant.
Tensor scale(const Tensor& a, double c);
// 2-D matrix product [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// Softmax over the last axis of a 2-D tensor, numerically stabilized.
Tensor row_softmax(const Tensor& a);
// Per-row layer normalization with learned gain/bias, both shaped [cols].
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
// tanh-approximation GELU: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
// The formula is part of the checkpoint contract; do not swap variants.
Tensor gelu(const Tensor& a);
// Rows of `table` selected by ids -> [ids.size(), table.cols()].
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);
// Stack 2-D blocks with equal column counts along the row axis.
Tensor concat_rows(std::span<const Tensor> parts);
// Copy of rows [begin, end) of a 2-D tensor.
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
// Scalar sum of per-row NLL: sum_i (logsumexp(logits[i]) - logits[i][label[i]]).
// Softmax/NLL taken over the last axis.
Tensor cross_entropy_with_logits(const Tensor& logits,
                                 std::span<const int> labels);
// Scalar sum of all entries.
Tensor sum(const Tensor& a);

// Populates d(loss)/d(leaf) for every requires_grad node reachable from loss.
// loss must be scalar. Repeated calls without zero_grad accumulate.
void backward(const Tensor& loss);

// Max over coordinates of |autodiff - central difference| / max(1, |central
// difference|) for scalar-valued f at x. f must be deterministic.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double h);

}  // namespace vrt
