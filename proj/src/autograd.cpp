#include "iste/autograd.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace iste {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
    os << ')';
    return os.str();
}

template <typename T>
bool all_finite(std::span<const T> values) {
    for (T v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

template bool all_finite<float>(std::span<const float>);
template bool all_finite<double>(std::span<const double>);

}  // namespace iste

namespace iste::nn {

namespace {

thread_local bool t_grad_enabled = true;
thread_local std::vector<bool>* t_relu_trace = nullptr;

template <typename T>
using NodePtr = Node<T>*;

template <typename T>
Var<T> make_result(Tensor<T> value, std::initializer_list<const Var<T>*> inputs, const char* what,
                   std::function<void(Node<T>&)> bw) {
    check_finite(value, what);
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    bool needs = false;
    if (t_grad_enabled) {
        for (const Var<T>* in : inputs) needs = needs || (in->node() && in->requires_grad());
    }
    if (needs) {
        node->requires_grad = true;
        for (const Var<T>* in : inputs) {
            if (in->node()) node->parents.push_back(in->shared());
        }
        node->backward = std::move(bw);
    }
    return Var<T>(std::move(node));
}

template <typename T>
Var<T> make_result_n(Tensor<T> value, const std::vector<Var<T>>& inputs, const char* what,
                     std::function<void(Node<T>&)> bw) {
    check_finite(value, what);
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    bool needs = false;
    if (t_grad_enabled) {
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        for (const auto& in : inputs) node->parents.push_back(in.shared());
        node->backward = std::move(bw);
    }
    return Var<T>(std::move(node));
}

template <typename T>
bool wants(Node<T>* n) {
    return n != nullptr && n->requires_grad;
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

template <typename T>
void require_matrix(const Var<T>& x, const char* op) {
    require(x.shape().size() == 2, std::string(op) + ": expected a matrix, got " + shape_str(x.shape()));
}

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
    require(a.shape() == b.shape(),
            std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
    if (!all_finite(t.span())) throw NonFiniteError(std::string("non-finite value produced by ") + what);
}

template <typename T>
void backward(Var<T>& loss) {
    Node<T>* root = loss.node();
    if (root == nullptr) throw std::invalid_argument("backward: empty loss handle");
    if (loss.numel() != 1) throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
    if (root->consumed) throw std::logic_error("backward: graph already consumed; rebuild the forward pass first");
    root->consumed = true;
    if (!root->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root, 0}};
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (!node->backward || node->grad.shape() != node->value.shape()) continue;
        check_finite(node->grad, "backward pass");
        node->backward(*node);
    }
    for (Node<T>* node : order) {
        if (node->backward) {
            node->backward = nullptr;
            node->parents.clear();
            node->grad = Tensor<T>();
        } else {
            check_finite(node->grad, "parameter gradient");
        }
    }
}

std::size_t pad_index(std::ptrdiff_t i, std::size_t n, Padding padding, bool& inside) {
    inside = true;
    const auto sn = static_cast<std::ptrdiff_t>(n);
    if (i >= 0 && i < sn) return static_cast<std::size_t>(i);
    switch (padding) {
        case Padding::Zero:
            inside = false;
            return 0;
        case Padding::Replicate:
            return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, sn - 1));
        case Padding::Reflect:
            if (n == 1) return 0;
            while (i < 0 || i >= sn) {
                if (i < 0) i = -i;
                if (i >= sn) i = 2 * sn - 2 - i;
            }
            return static_cast<std::size_t>(i);
    }
    return 0;
}

template <>
void gemm<float>(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
                 std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc) {
    if (m == 0 || n == 0) return;
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda), b,
                static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

template <>
void gemm<double>(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
                  const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
                  std::size_t ldc) {
    if (m == 0 || n == 0) return;
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda), b,
                static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

template <typename T>
Var<T> constant(Tensor<T> value) {
    check_finite(value, "constant");
    return Var<T>(std::move(value), false);
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    require_matrix(x, "linear");
    require(weight.shape().size() == 2 && weight.dim(0) == x.dim(1),
            "linear: input width " + std::to_string(x.dim(1)) + " does not match weight " + shape_str(weight.shape()));
    const std::size_t n = x.dim(0), din = x.dim(1), dout = weight.dim(1);
    if (bias) require(bias.numel() == dout, "linear: bias length mismatch");
    Tensor<T> out({n, dout});
    if (bias) {
        for (std::size_t r = 0; r < n; ++r) std::copy_n(bias.value().data(), dout, out.data() + r * dout);
    }
    gemm<T>(false, false, n, dout, din, T(1), x.value().data(), din, weight.value().data(), dout, bias ? T(1) : T(0),
            out.data(), dout);
    NodePtr<T> xp = x.node(), wp = weight.node(), bp = bias ? bias.node() : nullptr;
    return make_result<T>(std::move(out), {&x, &weight, &bias}, "linear", [xp, wp, bp, n, din, dout](Node<T>& self) {
        const T* g = self.grad.data();
        if (wants(xp)) gemm<T>(false, true, n, din, dout, T(1), g, dout, wp->value.data(), dout, T(1),
                               xp->grad_buffer().data(), din);
        if (wants(wp)) gemm<T>(true, false, din, dout, n, T(1), xp->value.data(), din, g, dout, T(1),
                               wp->grad_buffer().data(), dout);
        if (wants(bp)) {
            T* gb = bp->grad_buffer().data();
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < dout; ++c) gb[c] += g[r * dout + c];
        }
    });
}

namespace {

// Rows are output pixels, columns run over (ky, kx, cin).
template <typename T>
void im2col(const Tensor<T>& x, std::size_t k, Padding padding, Tensor<T>& cols) {
    const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
    const auto r = static_cast<std::ptrdiff_t>(k / 2);
    const std::size_t width = k * k * c;
    cols = Tensor<T>({h * w, width});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
            T* row = cols.data() + (y * w + xx) * width;
            for (std::size_t ky = 0; ky < k; ++ky) {
                bool in_y = true;
                const std::size_t sy = pad_index(static_cast<std::ptrdiff_t>(y) + static_cast<std::ptrdiff_t>(ky) - r,
                                                 h, padding, in_y);
                for (std::size_t kx = 0; kx < k; ++kx) {
                    bool in_x = true;
                    const std::size_t sx = pad_index(
                        static_cast<std::ptrdiff_t>(xx) + static_cast<std::ptrdiff_t>(kx) - r, w, padding, in_x);
                    T* dst = row + (ky * k + kx) * c;
                    if (in_y && in_x) {
                        std::copy_n(x.data() + (sy * w + sx) * c, c, dst);
                    } else {
                        std::fill_n(dst, c, T(0));
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const Tensor<T>& dcols, std::size_t h, std::size_t w, std::size_t c, std::size_t k, Padding padding,
                Tensor<T>& dx) {
    const auto r = static_cast<std::ptrdiff_t>(k / 2);
    const std::size_t width = k * k * c;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
            const T* row = dcols.data() + (y * w + xx) * width;
            for (std::size_t ky = 0; ky < k; ++ky) {
                bool in_y = true;
                const std::size_t sy = pad_index(static_cast<std::ptrdiff_t>(y) + static_cast<std::ptrdiff_t>(ky) - r,
                                                 h, padding, in_y);
                if (!in_y) continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                    bool in_x = true;
                    const std::size_t sx = pad_index(
                        static_cast<std::ptrdiff_t>(xx) + static_cast<std::ptrdiff_t>(kx) - r, w, padding, in_x);
                    if (!in_x) continue;
                    const T* src = row + (ky * k + kx) * c;
                    T* dst = dx.data() + (sy * w + sx) * c;
                    for (std::size_t ci = 0; ci < c; ++ci) dst[ci] += src[ci];
                }
            }
        }
    }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Padding padding) {
    require(x.shape().size() == 3, "conv2d: input must be (H, W, C), got " + shape_str(x.shape()));
    require(weight.shape().size() == 4 && weight.dim(0) == weight.dim(1) && weight.dim(0) % 2 == 1,
            "conv2d: weight must be (k, k, Cin, Cout) with odd k, got " + shape_str(weight.shape()));
    require(weight.dim(2) == x.dim(2), "conv2d: input has " + std::to_string(x.dim(2)) +
                                           " channels but weight expects " + std::to_string(weight.dim(2)));
    const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2), k = weight.dim(0), cout = weight.dim(3);
    if (bias) require(bias.numel() == cout, "conv2d: bias length mismatch");
    const std::size_t width = k * k * cin;

    auto cols = std::make_shared<Tensor<T>>();
    im2col(x.value(), k, padding, *cols);
    Tensor<T> out({h, w, cout});
    if (bias) {
        for (std::size_t p = 0; p < h * w; ++p) std::copy_n(bias.value().data(), cout, out.data() + p * cout);
    }
    gemm<T>(false, false, h * w, cout, width, T(1), cols->data(), width, weight.value().data(), cout,
            bias ? T(1) : T(0), out.data(), cout);
    if (!grad_enabled()) cols.reset();

    NodePtr<T> xp = x.node(), wp = weight.node(), bp = bias ? bias.node() : nullptr;
    return make_result<T>(
        std::move(out), {&x, &weight, &bias}, "conv2d",
        [xp, wp, bp, cols, h, w, cin, k, cout, width, padding](Node<T>& self) {
            const T* g = self.grad.data();
            const std::size_t npix = h * w;
            if (wants(wp)) gemm<T>(true, false, width, cout, npix, T(1), cols->data(), width, g, cout, T(1),
                                   wp->grad_buffer().data(), cout);
            if (wants(bp)) {
                T* gb = bp->grad_buffer().data();
                for (std::size_t p = 0; p < npix; ++p)
                    for (std::size_t c = 0; c < cout; ++c) gb[c] += g[p * cout + c];
            }
            if (wants(xp)) {
                Tensor<T> dcols({npix, width});
                gemm<T>(false, true, npix, width, cout, T(1), g, cout, wp->value.data(), cout, T(0), dcols.data(),
                        width);
                col2im_add(dcols, h, w, cin, k, padding, xp->grad_buffer());
            }
        });
}

namespace {

template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& x, const char* what, F f, D dfdx) {
    Tensor<T> out(x.shape());
    const T* in = x.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(in[i]);
    NodePtr<T> xp = x.node();
    return make_result<T>(std::move(out), {&x}, what, [xp, dfdx](Node<T>& self) {
        T* gx = xp->grad_buffer().data();
        const T* v = xp->value.data();
        const T* y = self.value.data();
        const T* g = self.grad.data();
        for (std::size_t i = 0; i < self.value.numel(); ++i) gx[i] += g[i] * dfdx(v[i], y[i]);
    });
}

}  // namespace

ReluTrace::ReluTrace() : previous_(t_relu_trace) { t_relu_trace = &signs_; }
ReluTrace::~ReluTrace() { t_relu_trace = previous_; }

template <typename T>
Var<T> relu(const Var<T>& x) {
    if (t_relu_trace) {
        for (const T v : x.value().vec()) t_relu_trace->push_back(v > T(0));
    }
    return unary(
        x, "relu", [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sine(const Var<T>& x) {
    return unary(
        x, "sine", [](T v) { return std::sin(v); }, [](T v, T) { return std::cos(v); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    return unary(
        x, "sigmoid", [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> activate(const Var<T>& x, Activation act) {
    switch (act) {
        case Activation::Relu:
            return relu(x);
        case Activation::Sine:
            return sine(x);
        case Activation::Sigmoid:
            return sigmoid(x);
        case Activation::None:
            break;
    }
    return x;
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same(a, b, "add");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
    NodePtr<T> ap = a.node(), bp = b.node();
    return make_result<T>(std::move(out), {&a, &b}, "add", [ap, bp](Node<T>& self) {
        const std::size_t n = self.grad.numel();
        for (NodePtr<T> p : {ap, bp}) {
            if (!wants(p)) continue;
            T* gp = p->grad_buffer().data();
            for (std::size_t i = 0; i < n; ++i) gp[i] += self.grad[i];
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same(a, b, "sub");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    NodePtr<T> ap = a.node(), bp = b.node();
    return make_result<T>(std::move(out), {&a, &b}, "sub", [ap, bp](Node<T>& self) {
        const std::size_t n = self.grad.numel();
        if (wants(ap)) {
            T* g = ap->grad_buffer().data();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
        }
        if (wants(bp)) {
            T* g = bp->grad_buffer().data();
            for (std::size_t i = 0; i < n; ++i) g[i] -= self.grad[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same(a, b, "mul");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    NodePtr<T> ap = a.node(), bp = b.node();
    return make_result<T>(std::move(out), {&a, &b}, "mul", [ap, bp](Node<T>& self) {
        const std::size_t n = self.grad.numel();
        if (wants(ap)) {
            T* g = ap->grad_buffer().data();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * bp->value[i];
        }
        if (wants(bp)) {
            T* g = bp->grad_buffer().data();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * ap->value[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
    Tensor<T> out = x.value();
    for (auto& v : out.vec()) v *= factor;
    NodePtr<T> xp = x.node();
    return make_result<T>(std::move(out), {&x}, "scale", [xp, factor](Node<T>& self) {
        T* g = xp->grad_buffer().data();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += factor * self.grad[i];
    });
}

template <typename T>
Var<T> add_row(const Var<T>& x, const Var<T>& v) {
    require_matrix(x, "add_row");
    const std::size_t n = x.dim(0), d = x.dim(1);
    require(v.numel() == d, "add_row: row vector length " + std::to_string(v.numel()) + " != " + std::to_string(d));
    Tensor<T> out = x.value();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] += v.value()[c];
    NodePtr<T> xp = x.node(), vp = v.node();
    return make_result<T>(std::move(out), {&x, &v}, "add_row", [xp, vp, n, d](Node<T>& self) {
        if (wants(xp)) {
            T* g = xp->grad_buffer().data();
            for (std::size_t i = 0; i < n * d; ++i) g[i] += self.grad[i];
        }
        if (wants(vp)) {
            T* g = vp->grad_buffer().data();
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) g[c] += self.grad[r * d + c];
        }
    });
}

template <typename T>
Var<T> scale_rows(const Var<T>& x, const Var<T>& s) {
    require_matrix(x, "scale_rows");
    const std::size_t n = x.dim(0), d = x.dim(1);
    require(s.numel() == n, "scale_rows: expected " + std::to_string(n) + " row scalars");
    Tensor<T> out = x.value();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] *= s.value()[r];
    NodePtr<T> xp = x.node(), sp = s.node();
    return make_result<T>(std::move(out), {&x, &s}, "scale_rows", [xp, sp, n, d](Node<T>& self) {
        if (wants(xp)) {
            T* g = xp->grad_buffer().data();
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) g[r * d + c] += self.grad[r * d + c] * sp->value[r];
        }
        if (wants(sp)) {
            T* g = sp->grad_buffer().data();
            for (std::size_t r = 0; r < n; ++r) {
                T acc = 0;
                for (std::size_t c = 0; c < d; ++c) acc += self.grad[r * d + c] * xp->value[r * d + c];
                g[r] += acc;
            }
        }
    });
}

template <typename T>
Var<T> row_dot(const Var<T>& a, const Var<T>& b) {
    require_matrix(a, "row_dot");
    require_same(a, b, "row_dot");
    const std::size_t n = a.dim(0), d = a.dim(1);
    Tensor<T> out({n, 1});
    for (std::size_t r = 0; r < n; ++r) {
        T acc = 0;
        for (std::size_t c = 0; c < d; ++c) acc += a.value()[r * d + c] * b.value()[r * d + c];
        out[r] = acc;
    }
    NodePtr<T> ap = a.node(), bp = b.node();
    return make_result<T>(std::move(out), {&a, &b}, "row_dot", [ap, bp, n, d](Node<T>& self) {
        if (wants(ap)) {
            T* g = ap->grad_buffer().data();
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) g[r * d + c] += self.grad[r] * bp->value[r * d + c];
        }
        if (wants(bp)) {
            T* g = bp->grad_buffer().data();
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) g[r * d + c] += self.grad[r] * ap->value[r * d + c];
        }
    });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
    require_matrix(x, "softmax_rows");
    const std::size_t n = x.dim(0), d = x.dim(1);
    Tensor<T> out({n, d});
    for (std::size_t r = 0; r < n; ++r) {
        const T* in = x.value().data() + r * d;
        T* o = out.data() + r * d;
        const T mx = *std::max_element(in, in + d);
        T total = 0;
        for (std::size_t c = 0; c < d; ++c) total += (o[c] = std::exp(in[c] - mx));
        for (std::size_t c = 0; c < d; ++c) o[c] /= total;
    }
    NodePtr<T> xp = x.node();
    return make_result<T>(std::move(out), {&x}, "softmax", [xp, n, d](Node<T>& self) {
        T* g = xp->grad_buffer().data();
        for (std::size_t r = 0; r < n; ++r) {
            const T* y = self.value.data() + r * d;
            const T* gy = self.grad.data() + r * d;
            T dot = 0;
            for (std::size_t c = 0; c < d; ++c) dot += gy[c] * y[c];
            for (std::size_t c = 0; c < d; ++c) g[r * d + c] += y[c] * (gy[c] - dot);
        }
    });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const std::size_t n = parts.front().dim(0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_matrix(p, "concat_cols");
        require(p.dim(0) == n, "concat_cols: row count mismatch");
        widths.push_back(p.dim(1));
        total += p.dim(1);
    }
    Tensor<T> out({n, total});
    std::size_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        for (std::size_t r = 0; r < n; ++r)
            std::copy_n(parts[i].value().data() + r * widths[i], widths[i], out.data() + r * total + off);
        off += widths[i];
    }
    std::vector<NodePtr<T>> ptrs;
    for (const auto& p : parts) ptrs.push_back(p.node());
    return make_result_n<T>(std::move(out), parts, "concat_cols", [ptrs, widths, n, total](Node<T>& self) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < ptrs.size(); ++i) {
            if (wants(ptrs[i])) {
                T* g = ptrs[i]->grad_buffer().data();
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < widths[i]; ++c) g[r * widths[i] + c] += self.grad[r * total + off + c];
            }
            off += widths[i];
        }
    });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    const std::size_t d = parts.front().dim(1);
    std::size_t rows = 0;
    for (const auto& p : parts) {
        require_matrix(p, "concat_rows");
        require(p.dim(1) == d, "concat_rows: column count mismatch");
        rows += p.dim(0);
    }
    Tensor<T> out({rows, d});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy_n(p.value().data(), p.numel(), out.data() + off);
        off += p.numel();
    }
    std::vector<NodePtr<T>> ptrs;
    for (const auto& p : parts) ptrs.push_back(p.node());
    return make_result_n<T>(std::move(out), parts, "concat_rows", [ptrs](Node<T>& self) {
        std::size_t off = 0;
        for (NodePtr<T> p : ptrs) {
            const std::size_t n = p->value.numel();
            if (wants(p)) {
                T* g = p->grad_buffer().data();
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
            }
            off += n;
        }
    });
}

template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t end) {
    require_matrix(x, "slice_rows");
    require(begin <= end && end <= x.dim(0), "slice_rows: range out of bounds");
    const std::size_t d = x.dim(1);
    Tensor<T> out({end - begin, d});
    std::copy_n(x.value().data() + begin * d, (end - begin) * d, out.data());
    NodePtr<T> xp = x.node();
    return make_result<T>(std::move(out), {&x}, "slice_rows", [xp, begin, d](Node<T>& self) {
        T* g = xp->grad_buffer().data() + begin * d;
        for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i];
    });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t end) {
    require_matrix(x, "slice_cols");
    require(begin <= end && end <= x.dim(1), "slice_cols: range out of bounds");
    const std::size_t n = x.dim(0), d = x.dim(1), w = end - begin;
    Tensor<T> out({n, w});
    for (std::size_t r = 0; r < n; ++r) std::copy_n(x.value().data() + r * d + begin, w, out.data() + r * w);
    NodePtr<T> xp = x.node();
    return make_result<T>(std::move(out), {&x}, "slice_cols", [xp, begin, n, d, w](Node<T>& self) {
        T* g = xp->grad_buffer().data();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < w; ++c) g[r * d + begin + c] += self.grad[r * w + c];
    });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::vector<std::size_t> index) {
    require_matrix(x, "gather_rows");
    const std::size_t m = x.dim(0), d = x.dim(1), n = index.size();
    Tensor<T> out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        if (index[i] >= m) throw RangeError("gather_rows: index " + std::to_string(index[i]) + " >= " + std::to_string(m));
        std::copy_n(x.value().data() + index[i] * d, d, out.data() + i * d);
    }
    NodePtr<T> xp = x.node();
    return make_result<T>(std::move(out), {&x}, "gather_rows", [xp, idx = std::move(index), d](Node<T>& self) {
        T* g = xp->grad_buffer().data();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const T* src = self.grad.data() + i * d;
            T* dst = g + idx[i] * d;
            for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
        }
    });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    Tensor<T> out = x.value().reshaped(std::move(shape));
    NodePtr<T> xp = x.node();
    return make_result<T>(std::move(out), {&x}, "reshape", [xp](Node<T>& self) {
        T* g = xp->grad_buffer().data();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i];
    });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
    T acc = 0;
    for (T v : x.value().vec()) acc += v;
    NodePtr<T> xp = x.node();
    return make_result<T>(Tensor<T>({1}, {acc}), {&x}, "sum", [xp](Node<T>& self) {
        T* g = xp->grad_buffer().data();
        for (std::size_t i = 0; i < xp->value.numel(); ++i) g[i] += self.grad[0];
    });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(std::max<std::size_t>(1, x.numel())));
}

template <typename T>
Var<T> mean_rows(const Var<T>& x) {
    require_matrix(x, "mean_rows");
    const std::size_t n = x.dim(0), d = x.dim(1);
    Tensor<T> out({1, d});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) out[c] += x.value()[r * d + c];
    for (auto& v : out.vec()) v /= static_cast<T>(n);
    NodePtr<T> xp = x.node();
    return make_result<T>(std::move(out), {&x}, "mean_rows", [xp, n, d](Node<T>& self) {
        T* g = xp->grad_buffer().data();
        const T inv = T(1) / static_cast<T>(n);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) g[r * d + c] += self.grad[c] * inv;
    });
}

template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Tensor<T>& target) {
    require(pred.shape() == target.shape(),
            "l1_loss: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
    const std::size_t n = pred.numel();
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(pred.value()[i] - target[i]);
    const T inv = T(1) / static_cast<T>(std::max<std::size_t>(1, n));
    NodePtr<T> pp = pred.node();
    auto tgt = std::make_shared<Tensor<T>>(target);
    return make_result<T>(Tensor<T>({1}, {acc * inv}), {&pred}, "l1_loss", [pp, tgt, inv](Node<T>& self) {
        T* g = pp->grad_buffer().data();
        const T gy = self.grad[0] * inv;
        for (std::size_t i = 0; i < pp->value.numel(); ++i) {
            const T diff = pp->value[i] - (*tgt)[i];
            g[i] += diff > T(0) ? gy : (diff < T(0) ? -gy : T(0));
        }
    });
}

#define ISTE_INSTANTIATE(T)                                                                                         \
    template class Var<T>;                                                                                          \
    template void backward<T>(Var<T>&);                                                                             \
    template void check_finite<T>(const Tensor<T>&, const char*);                                                   \
    template Var<T> constant<T>(Tensor<T>);                                                                         \
    template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                                         \
    template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, Padding);                                \
    template Var<T> activate<T>(const Var<T>&, Activation);                                                         \
    template Var<T> relu<T>(const Var<T>&);                                                                         \
    template Var<T> sine<T>(const Var<T>&);                                                                         \
    template Var<T> sigmoid<T>(const Var<T>&);                                                                      \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                           \
    template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                                           \
    template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                                           \
    template Var<T> scale<T>(const Var<T>&, T);                                                                     \
    template Var<T> add_row<T>(const Var<T>&, const Var<T>&);                                                       \
    template Var<T> scale_rows<T>(const Var<T>&, const Var<T>&);                                                    \
    template Var<T> row_dot<T>(const Var<T>&, const Var<T>&);                                                       \
    template Var<T> softmax_rows<T>(const Var<T>&);                                                                 \
    template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                                                     \
    template Var<T> concat_rows<T>(const std::vector<Var<T>>&);                                                     \
    template Var<T> slice_rows<T>(const Var<T>&, std::size_t, std::size_t);                                         \
    template Var<T> slice_cols<T>(const Var<T>&, std::size_t, std::size_t);                                         \
    template Var<T> gather_rows<T>(const Var<T>&, std::vector<std::size_t>);                                        \
    template Var<T> reshape<T>(const Var<T>&, Shape);                                                               \
    template Var<T> sum<T>(const Var<T>&);                                                                          \
    template Var<T> mean<T>(const Var<T>&);                                                                         \
    template Var<T> mean_rows<T>(const Var<T>&);                                                                    \
    template Var<T> l1_loss<T>(const Var<T>&, const Tensor<T>&);

ISTE_INSTANTIATE(float)
ISTE_INSTANTIATE(double)

#undef ISTE_INSTANTIATE

}  // namespace iste::nn
