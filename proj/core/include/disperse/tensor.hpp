#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace disperse::ad {

/// Dense row-major matrix of doubles with reverse-mode autodiff.
///
/// Tensors are cheap handles onto shared nodes; copying a Tensor aliases the
/// underlying storage. Every operation records its backward rule on the node
/// it produces (define-by-run), so the graph is rebuilt on each forward pass
/// and discarded when the last handle goes away. Scalars are 1x1 tensors.
///
/// Gradients accumulate: call zero_grad() between backward passes. A single
/// graph must be built and differentiated from one thread; independent graphs
/// may live on different threads concurrently.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols,
                      bool requires_grad = false);
  static Tensor from(std::vector<double> data, std::size_t rows,
                     std::size_t cols, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t size() const;
  bool requires_grad() const;

  std::span<const double> value() const;
  /// Mutable view of the raw values. Meant for leaf tensors (parameters,
  /// inputs); mutating an interior node invalidates recorded backward rules.
  std::span<double> value_mut();
  std::span<const double> grad() const;
  std::span<double> grad_mut();

  double at(std::size_t r, std::size_t c) const;
  /// Value of a 1x1 tensor.
  double item() const;

  void zero_grad();

  /// Fresh leaf with a copy of the values and no recorded history.
  Tensor detached(bool requires_grad = false) const;

  struct Node;
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;

  friend Tensor make_op_result(std::size_t rows, std::size_t cols,
                               std::vector<Tensor> parents,
                               std::function<void(Node&)> backprop);
};

struct Tensor::Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // sized iff requires_grad
  bool requires_grad = false;
  std::uint64_t seq = 0;  // creation order, drives reverse traversal
  std::vector<Tensor> parents;
  std::function<void(Node&)> backprop;  // reads this node's grad, adds to parents
};

// --- forward ops -----------------------------------------------------------

/// Standard matrix product a[m x k] * b[k x n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// a[n x d] * b[m x d]^T. With unit rows this is the pairwise cosine matrix.
Tensor cosine_matrix(const Tensor& a, const Tensor& b);

/// Divides each row by max(||row||_2, eps).
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

/// Elementwise max(0, x). Subgradient at exactly 0 is 0.
Tensor hinge(const Tensor& x);

Tensor tanh(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);

/// x[n x c] + bias[1 x c] broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

Tensor sum(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// Scalar dot(w, x) with constant weights; w.size() == x.size().
Tensor weighted_sum(const Tensor& x, const std::vector<double>& w);

/// Copies x and subtracts `amount` from entry (i, labels[i]) of each row.
Tensor subtract_at(const Tensor& x, const std::vector<std::size_t>& labels,
                   double amount);

/// Mean over rows of -log softmax(logits)[label], max-stabilized.
Tensor log_sum_exp_ce(const Tensor& logits,
                      const std::vector<std::size_t>& labels);

/// Per row, max over entries with mask != 0 (n x 1 result). Gradient flows to
/// the max entry only; ties pick the lowest column. Rows with an empty mask
/// yield 0 and receive no gradient.
Tensor row_max_masked(const Tensor& x, const std::vector<std::uint8_t>& mask);

/// Per row, log sum_{j in mask} exp(scale * x_ij), max-stabilized (n x 1).
/// Rows with an empty mask yield 0 and receive no gradient.
Tensor row_lse_masked(const Tensor& x, const std::vector<std::uint8_t>& mask,
                      double scale);

/// Per-row Euclidean norm (n x 1). Gradient guarded at zero rows.
Tensor row_l2norm(const Tensor& x);

/// Reverse pass from a scalar loss. Accumulates d(loss)/d(t) into the grad
/// buffer of every requires_grad tensor reachable from `loss`.
void backward(const Tensor& loss);

}  // namespace disperse::ad
