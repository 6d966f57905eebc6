#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "iste/tensor.hpp"

namespace iste::nn {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first accumulation
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    bool requires_grad = false;
    bool consumed = false;

    Tensor<T>& grad_buffer() {
        if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
        return grad;
    }
};

/// Handle to a value in the recorded computation. Copies share the node.
template <typename T>
class Var {
   public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
    std::size_t numel() const { return node_->value.numel(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool has_grad() const { return node_->grad.shape() == node_->value.shape(); }
    const Tensor<T>& grad() const { return node_->grad; }
    Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad = Tensor<T>(); }

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& shared() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

   private:
    std::shared_ptr<Node<T>> node_;
};

/// Thread-local switch; while disabled no graph is recorded.
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

/// While alive, every relu on this thread appends the sign pattern of its
/// input (v > 0). Gradient checks use it to spot steps that cross a kink.
class ReluTrace {
   public:
    ReluTrace();
    ~ReluTrace();
    ReluTrace(const ReluTrace&) = delete;
    ReluTrace& operator=(const ReluTrace&) = delete;
    const std::vector<bool>& signs() const { return signs_; }

   private:
    std::vector<bool> signs_;
    std::vector<bool>* previous_;
};

/// Reverse sweep from a scalar loss. Accumulates into every reachable
/// node that requires a gradient, then releases the graph. Calling twice
/// on the same loss throws.
template <typename T>
void backward(Var<T>& loss);

/// Throws NonFiniteError naming `what` if any value is NaN/Inf.
template <typename T>
void check_finite(const Tensor<T>& t, const char* what);

enum class Padding { Reflect, Replicate, Zero };
enum class Activation { None, Relu, Sine, Sigmoid };

// ---- primitives --------------------------------------------------------

template <typename T>
Var<T> constant(Tensor<T> value);

/// x: (N, Din), weight: (Din, Dout), bias: (Dout) or empty handle.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// Same-padded stride-1 convolution. x: (H, W, Cin), weight: (k, k, Cin, Cout).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Padding padding);

template <typename T>
Var<T> activate(const Var<T>& x, Activation act);
template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> sine(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& x, T factor);

/// x: (N, D) plus row vector v: (D) or (1, D), broadcast over rows.
template <typename T>
Var<T> add_row(const Var<T>& x, const Var<T>& v);

/// x: (N, D) times per-row scalars s: (N) or (N, 1).
template <typename T>
Var<T> scale_rows(const Var<T>& x, const Var<T>& s);

/// Row-wise inner product of two (N, D) matrices, result (N, 1).
template <typename T>
Var<T> row_dot(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> softmax_rows(const Var<T>& x);

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t end);
template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t end);

/// out[i] = x[index[i]] over the leading axis of a (M, D) matrix.
template <typename T>
Var<T> gather_rows(const Var<T>& x, std::vector<std::size_t> index);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

template <typename T>
Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> mean(const Var<T>& x);

/// mean |pred - target|; target is treated as a constant.
template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Tensor<T>& target);

/// Column-wise mean of a (N, D) matrix, result (1, D).
template <typename T>
Var<T> mean_rows(const Var<T>& x);

// ---- dense helpers shared with the non-differentiable paths ----------

/// C = alpha * op(A) * op(B) + beta * C, row-major.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc);

/// Index of the source pixel for a padded read at (y, x) in an extent-n axis.
std::size_t pad_index(std::ptrdiff_t i, std::size_t n, Padding padding, bool& inside);

}  // namespace iste::nn
