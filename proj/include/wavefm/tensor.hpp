#pragma once

// Minimal reverse-mode autodiff over dense row-major tensors. The scalar
// type is a template parameter: training runs in float, gradient oracles
// instantiate double. All loops are sequential with a fixed reduction
// order, so results are bit-reproducible for a given build.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "wavefm/common.hpp"
#include "wavefm/fft.hpp"

namespace wavefm {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

template <typename S>
struct Node {
    Shape shape;
    std::vector<S> val;
    std::vector<S> grad;  // allocated on demand
    bool needs_grad = false;
    bool is_leaf = false;
    std::vector<std::shared_ptr<Node<S>>> parents;
    std::function<void()> backprop;  // scatter this->grad into parents

    size_t numel() const { return val.size(); }
    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), S(0));
    }
};

template <typename S>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<S>> n) : node_(std::move(n)) {}

    static Tensor zeros(const Shape& shape) { return full(shape, S(0)); }

    static Tensor full(const Shape& shape, S value) {
        auto n = std::make_shared<Node<S>>();
        n->shape = shape;
        n->val.assign(shape_numel(shape), value);
        return Tensor(n);
    }

    static Tensor from(const Shape& shape, std::vector<S> data) {
        require(shape_numel(shape) == data.size(), "ShapeMismatch",
                "tensor data size " + std::to_string(data.size()) + " vs shape " + shape_str(shape));
        auto n = std::make_shared<Node<S>>();
        n->shape = shape;
        n->val = std::move(data);
        return Tensor(n);
    }

    // Learnable leaf.
    static Tensor param(const Shape& shape, std::vector<S> data) {
        Tensor t = from(shape, std::move(data));
        t.node_->needs_grad = true;
        t.node_->is_leaf = true;
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    size_t numel() const { return node_->numel(); }
    size_t dim(size_t i) const { return node_->shape[i]; }
    bool needs_grad() const { return node_->needs_grad; }

    std::vector<S>& val() { return node_->val; }
    const std::vector<S>& val() const { return node_->val; }
    S item() const {
        require(numel() == 1, "ShapeMismatch", "item() on non-scalar " + shape_str(shape()));
        return node_->val[0];
    }
    std::vector<S>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }

    void zero_grad() { node_->grad.assign(node_->numel(), S(0)); }

    std::shared_ptr<Node<S>>& node() { return node_; }
    const std::shared_ptr<Node<S>>& node() const { return node_; }

    Tensor detach() const {
        auto n = std::make_shared<Node<S>>();
        n->shape = node_->shape;
        n->val = node_->val;
        return Tensor(n);
    }

    // Reverse accumulation from a scalar root.
    void backward() const {
        require(numel() == 1, "ShapeMismatch", "backward() root must be scalar");
        std::vector<Node<S>*> order;
        std::unordered_set<Node<S>*> seen;
        std::vector<std::pair<Node<S>*, size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, idx] = stack.back();
            if (idx < n->parents.size()) {
                Node<S>* p = n->parents[idx++].get();
                if (p->needs_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        node_->ensure_grad();
        node_->grad[0] = S(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backprop) (*it)->backprop();
        }
    }

private:
    std::shared_ptr<Node<S>> node_;
};

namespace detail {

template <typename S>
std::shared_ptr<Node<S>> make_out(const Shape& shape, std::vector<Tensor<S>> parents) {
    auto n = std::make_shared<Node<S>>();
    n->shape = shape;
    n->val.resize(shape_numel(shape));
    for (auto& p : parents) {
        if (p.node()->needs_grad) n->needs_grad = true;
        n->parents.push_back(p.node());
    }
    if (!n->needs_grad) n->parents.clear();  // prune dead branches from the tape
    return n;
}

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    require(a.shape() == b.shape(), "ShapeMismatch",
            std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "add");
    auto out = detail::make_out<S>(a.shape(), {a, b});
    const size_t n = out->numel();
    for (size_t i = 0; i < n; ++i) out->val[i] = a.val()[i] + b.val()[i];
    if (out->needs_grad) {
        auto an = a.node(), bn = b.node();
        Node<S>* o = out.get();
        out->backprop = [o, an, bn, n] {
            if (an->needs_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < n; ++i) an->grad[i] += o->grad[i];
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < n; ++i) bn->grad[i] += o->grad[i];
            }
        };
    }
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "sub");
    auto out = detail::make_out<S>(a.shape(), {a, b});
    const size_t n = out->numel();
    for (size_t i = 0; i < n; ++i) out->val[i] = a.val()[i] - b.val()[i];
    if (out->needs_grad) {
        auto an = a.node(), bn = b.node();
        Node<S>* o = out.get();
        out->backprop = [o, an, bn, n] {
            if (an->needs_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < n; ++i) an->grad[i] += o->grad[i];
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < n; ++i) bn->grad[i] -= o->grad[i];
            }
        };
    }
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "mul");
    auto out = detail::make_out<S>(a.shape(), {a, b});
    const size_t n = out->numel();
    for (size_t i = 0; i < n; ++i) out->val[i] = a.val()[i] * b.val()[i];
    if (out->needs_grad) {
        auto an = a.node(), bn = b.node();
        Node<S>* o = out.get();
        out->backprop = [o, an, bn, n] {
            if (an->needs_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < n; ++i) an->grad[i] += o->grad[i] * bn->val[i];
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < n; ++i) bn->grad[i] += o->grad[i] * an->val[i];
            }
        };
    }
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "div");
    auto out = detail::make_out<S>(a.shape(), {a, b});
    const size_t n = out->numel();
    for (size_t i = 0; i < n; ++i) out->val[i] = a.val()[i] / b.val()[i];
    if (out->needs_grad) {
        auto an = a.node(), bn = b.node();
        Node<S>* o = out.get();
        out->backprop = [o, an, bn, n] {
            if (an->needs_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < n; ++i) an->grad[i] += o->grad[i] / bn->val[i];
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < n; ++i)
                    bn->grad[i] -= o->grad[i] * an->val[i] / (bn->val[i] * bn->val[i]);
            }
        };
    }
    return Tensor<S>(out);
}

// k*x + c
template <typename S>
Tensor<S> affine(const Tensor<S>& x, S k, S c = S(0)) {
    auto out = detail::make_out<S>(x.shape(), {x});
    const size_t n = out->numel();
    for (size_t i = 0; i < n; ++i) out->val[i] = k * x.val()[i] + c;
    if (out->needs_grad) {
        auto xn = x.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn, k, n] {
            xn->ensure_grad();
            for (size_t i = 0; i < n; ++i) xn->grad[i] += k * o->grad[i];
        };
    }
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S k) { return affine(x, k); }

template <typename S>
Tensor<S> neg(const Tensor<S>& x) { return affine(x, S(-1)); }

namespace detail {

template <typename S, typename F, typename DF>
Tensor<S> unary_op(const Tensor<S>& x, F f, DF df) {
    auto out = make_out<S>(x.shape(), {x});
    const size_t n = out->numel();
    for (size_t i = 0; i < n; ++i) out->val[i] = f(x.val()[i]);
    if (out->needs_grad) {
        auto xn = x.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn, df, n] {
            xn->ensure_grad();
            for (size_t i = 0; i < n; ++i) xn->grad[i] += o->grad[i] * df(xn->val[i], o->val[i]);
        };
    }
    return Tensor<S>(out);
}

}  // namespace detail

template <typename S>
Tensor<S> exp_t(const Tensor<S>& x) {
    return detail::unary_op(x, [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

template <typename S>
Tensor<S> log_t(const Tensor<S>& x) {
    return detail::unary_op(x, [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; });
}

template <typename S>
Tensor<S> sqrt_t(const Tensor<S>& x) {
    return detail::unary_op(x, [](S v) { return std::sqrt(v); },
                            [](S, S y) { return S(0.5) / y; });
}

template <typename S>
Tensor<S> abs_t(const Tensor<S>& x) {
    return detail::unary_op(x, [](S v) { return std::abs(v); },
                            [](S v, S) { return v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0)); });
}

template <typename S>
Tensor<S> tanh_t(const Tensor<S>& x) {
    return detail::unary_op(x, [](S v) { return std::tanh(v); },
                            [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Tensor<S> relu_t(const Tensor<S>& x) {
    return detail::unary_op(x, [](S v) { return v > S(0) ? v : S(0); },
                            [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> leaky_relu_t(const Tensor<S>& x, S slope) {
    return detail::unary_op(x, [slope](S v) { return v > S(0) ? v : slope * v; },
                            [slope](S v, S) { return v > S(0) ? S(1) : slope; });
}

template <typename S>
Tensor<S> clamp_t(const Tensor<S>& x, S lo, S hi) {
    return detail::unary_op(x, [lo, hi](S v) { return v < lo ? lo : (v > hi ? hi : v); },
                            [lo, hi](S v, S) { return (v < lo || v > hi) ? S(0) : S(1); });
}

// Exact erf-based GELU.
template <typename S>
Tensor<S> gelu_t(const Tensor<S>& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return detail::unary_op(
        x,
        [](S v) { return static_cast<S>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2))); },
        [](S v, S) {
            double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * double(v) * double(v));
            return static_cast<S>(cdf + double(v) * pdf);
        });
}

template <typename S>
Tensor<S> silu_t(const Tensor<S>& x) {
    return detail::unary_op(
        x, [](S v) { return v / (S(1) + std::exp(-v)); },
        [](S v, S) {
            S sig = S(1) / (S(1) + std::exp(-v));
            return sig * (S(1) + v * (S(1) - sig));
        });
}

template <typename S>
Tensor<S> square_t(const Tensor<S>& x) {
    return detail::unary_op(x, [](S v) { return v * v; }, [](S v, S) { return S(2) * v; });
}

// Snake activation x + sin^2(alpha*x)/alpha with a learnable per-channel alpha.
// x is [C, T], alpha is [C].
template <typename S>
Tensor<S> snake(const Tensor<S>& x, const Tensor<S>& alpha) {
    require(x.shape().size() == 2, "ShapeMismatch", "snake expects [C,T]");
    const size_t C = x.dim(0), T = x.dim(1);
    require(alpha.shape() == Shape{C}, "ShapeMismatch", "snake alpha must be [C]");
    for (S a : alpha.val()) require(a > S(0), "NonPositiveAlpha", "snake alpha must be positive");
    auto out = detail::make_out<S>(x.shape(), {x, alpha});
    for (size_t c = 0; c < C; ++c) {
        const S a = alpha.val()[c];
        for (size_t t = 0; t < T; ++t) {
            S v = x.val()[c * T + t];
            S s = std::sin(a * v);
            out->val[c * T + t] = v + s * s / a;
        }
    }
    if (out->needs_grad) {
        auto xn = x.node(), an = alpha.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn, an, C, T] {
            if (xn->needs_grad) xn->ensure_grad();
            if (an->needs_grad) an->ensure_grad();
            for (size_t c = 0; c < C; ++c) {
                const S a = an->val[c];
                for (size_t t = 0; t < T; ++t) {
                    const size_t i = c * T + t;
                    const S v = xn->val[i];
                    const S g = o->grad[i];
                    const S s = std::sin(a * v);
                    const S s2 = std::sin(S(2) * a * v);
                    if (xn->needs_grad) xn->grad[i] += g * (S(1) + s2);
                    if (an->needs_grad) an->grad[c] += g * (s2 * v / a - s * s / (a * a));
                }
            }
        };
    }
    return Tensor<S>(out);
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
    auto out = detail::make_out<S>({1}, {x});
    S acc = 0;
    for (S v : x.val()) acc += v;
    out->val[0] = acc;
    if (out->needs_grad) {
        auto xn = x.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn] {
            xn->ensure_grad();
            const S g = o->grad[0];
            for (auto& gi : xn->grad) gi += g;
        };
    }
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
    return scale(sum_all(x), static_cast<S>(1.0 / static_cast<double>(x.numel())));
}

// [R, C] -> [C]
template <typename S>
Tensor<S> sum_axis0(const Tensor<S>& x) {
    require(x.shape().size() == 2, "ShapeMismatch", "sum_axis0 expects 2-D");
    const size_t R = x.dim(0), C = x.dim(1);
    auto out = detail::make_out<S>({C}, {x});
    std::fill(out->val.begin(), out->val.end(), S(0));
    for (size_t r = 0; r < R; ++r)
        for (size_t c = 0; c < C; ++c) out->val[c] += x.val()[r * C + c];
    if (out->needs_grad) {
        auto xn = x.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn, R, C] {
            xn->ensure_grad();
            for (size_t r = 0; r < R; ++r)
                for (size_t c = 0; c < C; ++c) xn->grad[r * C + c] += o->grad[c];
        };
    }
    return Tensor<S>(out);
}

// [R, C] -> [R]
template <typename S>
Tensor<S> sum_axis1(const Tensor<S>& x) {
    require(x.shape().size() == 2, "ShapeMismatch", "sum_axis1 expects 2-D");
    const size_t R = x.dim(0), C = x.dim(1);
    auto out = detail::make_out<S>({R}, {x});
    for (size_t r = 0; r < R; ++r) {
        S acc = 0;
        for (size_t c = 0; c < C; ++c) acc += x.val()[r * C + c];
        out->val[r] = acc;
    }
    if (out->needs_grad) {
        auto xn = x.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn, R, C] {
            xn->ensure_grad();
            for (size_t r = 0; r < R; ++r)
                for (size_t c = 0; c < C; ++c) xn->grad[r * C + c] += o->grad[r];
        };
    }
    return Tensor<S>(out);
}

// ---------------------------------------------------------------------------
// broadcasting over one axis of a 2-D tensor
// ---------------------------------------------------------------------------

namespace detail {

template <typename S, bool kMul, bool kAlongRows>
Tensor<S> bcast_op(const Tensor<S>& x, const Tensor<S>& v) {
    require(x.shape().size() == 2, "ShapeMismatch", "broadcast expects 2-D");
    const size_t R = x.dim(0), C = x.dim(1);
    const size_t vlen = kAlongRows ? R : C;
    require(v.shape() == Shape{vlen}, "ShapeMismatch", "broadcast vector length mismatch");
    auto out = make_out<S>(x.shape(), {x, v});
    for (size_t r = 0; r < R; ++r) {
        for (size_t c = 0; c < C; ++c) {
            const S b = v.val()[kAlongRows ? r : c];
            const S a = x.val()[r * C + c];
            out->val[r * C + c] = kMul ? a * b : a + b;
        }
    }
    if (out->needs_grad) {
        auto xn = x.node(), vn = v.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn, vn, R, C] {
            if (xn->needs_grad) xn->ensure_grad();
            if (vn->needs_grad) vn->ensure_grad();
            for (size_t r = 0; r < R; ++r) {
                for (size_t c = 0; c < C; ++c) {
                    const size_t i = r * C + c;
                    const size_t j = kAlongRows ? r : c;
                    if constexpr (kMul) {
                        if (xn->needs_grad) xn->grad[i] += o->grad[i] * vn->val[j];
                        if (vn->needs_grad) vn->grad[j] += o->grad[i] * xn->val[i];
                    } else {
                        if (xn->needs_grad) xn->grad[i] += o->grad[i];
                        if (vn->needs_grad) vn->grad[j] += o->grad[i];
                    }
                }
            }
        };
    }
    return Tensor<S>(out);
}

}  // namespace detail

// x[R,C] * u[R] (each row scaled by its entry)
template <typename S>
Tensor<S> bcast_mul_rows(const Tensor<S>& x, const Tensor<S>& u) {
    return detail::bcast_op<S, true, true>(x, u);
}
template <typename S>
Tensor<S> bcast_add_rows(const Tensor<S>& x, const Tensor<S>& u) {
    return detail::bcast_op<S, false, true>(x, u);
}
// x[R,C] * v[C] (every row elementwise by v)
template <typename S>
Tensor<S> bcast_mul_cols(const Tensor<S>& x, const Tensor<S>& v) {
    return detail::bcast_op<S, true, false>(x, v);
}
template <typename S>
Tensor<S> bcast_add_cols(const Tensor<S>& x, const Tensor<S>& v) {
    return detail::bcast_op<S, false, false>(x, v);
}

// x / (s + eps) where s is a single-element tensor broadcast over all of x.
template <typename S>
Tensor<S> div_scalar(const Tensor<S>& x, const Tensor<S>& s, S eps = S(0)) {
    require(s.numel() == 1, "ShapeMismatch", "div_scalar wants a scalar divisor");
    const S d = s.val()[0] + eps;
    require(d != S(0), "NonFinite", "div_scalar by zero");
    auto out = detail::make_out<S>(x.shape(), {x, s});
    for (size_t i = 0; i < x.numel(); ++i) out->val[i] = x.val()[i] / d;
    if (out->needs_grad) {
        auto xn = x.node(), sn = s.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn, sn, d] {
            if (xn->needs_grad) xn->ensure_grad();
            if (sn->needs_grad) sn->ensure_grad();
            S acc = 0;
            for (size_t i = 0; i < o->val.size(); ++i) {
                if (xn->needs_grad) xn->grad[i] += o->grad[i] / d;
                acc += o->grad[i] * xn->val[i];
            }
            if (sn->needs_grad) sn->grad[0] += -acc / (d * d);
        };
    }
    return Tensor<S>(out);
}

// ---------------------------------------------------------------------------
// shape manipulation
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, const Shape& shape) {
    require(shape_numel(shape) == x.numel(), "ShapeMismatch",
            "reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
    auto out = detail::make_out<S>(shape, {x});
    out->val = x.val();
    if (out->needs_grad) {
        auto xn = x.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn] {
            xn->ensure_grad();
            for (size_t i = 0; i < o->grad.size(); ++i) xn->grad[i] += o->grad[i];
        };
    }
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> transpose2d(const Tensor<S>& x) {
    require(x.shape().size() == 2, "ShapeMismatch", "transpose2d expects 2-D");
    const size_t R = x.dim(0), C = x.dim(1);
    auto out = detail::make_out<S>({C, R}, {x});
    for (size_t r = 0; r < R; ++r)
        for (size_t c = 0; c < C; ++c) out->val[c * R + r] = x.val()[r * C + c];
    if (out->needs_grad) {
        auto xn = x.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn, R, C] {
            xn->ensure_grad();
            for (size_t r = 0; r < R; ++r)
                for (size_t c = 0; c < C; ++c) xn->grad[r * C + c] += o->grad[c * R + r];
        };
    }
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, size_t r0, size_t r1) {
    require(x.shape().size() == 2 && r0 <= r1 && r1 <= x.dim(0), "ShapeMismatch", "slice_rows bounds");
    const size_t C = x.dim(1);
    auto out = detail::make_out<S>({r1 - r0, C}, {x});
    std::copy(x.val().begin() + r0 * C, x.val().begin() + r1 * C, out->val.begin());
    if (out->needs_grad) {
        auto xn = x.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn, r0, C] {
            xn->ensure_grad();
            for (size_t i = 0; i < o->grad.size(); ++i) xn->grad[r0 * C + i] += o->grad[i];
        };
    }
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, size_t c0, size_t c1) {
    require(x.shape().size() == 2 && c0 <= c1 && c1 <= x.dim(1), "ShapeMismatch", "slice_cols bounds");
    const size_t R = x.dim(0), C = x.dim(1), W = c1 - c0;
    auto out = detail::make_out<S>({R, W}, {x});
    for (size_t r = 0; r < R; ++r)
        std::copy(x.val().begin() + r * C + c0, x.val().begin() + r * C + c1,
                  out->val.begin() + r * W);
    if (out->needs_grad) {
        auto xn = x.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn, R, C, W, c0] {
            xn->ensure_grad();
            for (size_t r = 0; r < R; ++r)
                for (size_t w = 0; w < W; ++w) xn->grad[r * C + c0 + w] += o->grad[r * W + w];
        };
    }
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& xs) {
    require(!xs.empty(), "ShapeMismatch", "concat_rows of nothing");
    const size_t C = xs[0].dim(1);
    size_t R = 0;
    for (auto& x : xs) {
        require(x.shape().size() == 2 && x.dim(1) == C, "ShapeMismatch", "concat_rows col mismatch");
        R += x.dim(0);
    }
    auto out = detail::make_out<S>({R, C}, xs);
    size_t off = 0;
    for (auto& x : xs) {
        std::copy(x.val().begin(), x.val().end(), out->val.begin() + off);
        off += x.numel();
    }
    if (out->needs_grad) {
        std::vector<std::shared_ptr<Node<S>>> nodes;
        for (auto& x : xs) nodes.push_back(x.node());
        Node<S>* o = out.get();
        out->backprop = [o, nodes] {
            size_t off = 0;
            for (auto& n : nodes) {
                if (n->needs_grad) {
                    n->ensure_grad();
                    for (size_t i = 0; i < n->val.size(); ++i) n->grad[i] += o->grad[off + i];
                }
                off += n->val.size();
            }
        };
    }
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& xs) {
    require(!xs.empty(), "ShapeMismatch", "concat_cols of nothing");
    const size_t R = xs[0].dim(0);
    size_t C = 0;
    for (auto& x : xs) {
        require(x.shape().size() == 2 && x.dim(0) == R, "ShapeMismatch", "concat_cols row mismatch");
        C += x.dim(1);
    }
    auto out = detail::make_out<S>({R, C}, xs);
    size_t coff = 0;
    for (auto& x : xs) {
        const size_t w = x.dim(1);
        for (size_t r = 0; r < R; ++r)
            std::copy(x.val().begin() + r * w, x.val().begin() + (r + 1) * w,
                      out->val.begin() + r * C + coff);
        coff += w;
    }
    if (out->needs_grad) {
        std::vector<std::shared_ptr<Node<S>>> nodes;
        for (auto& x : xs) nodes.push_back(x.node());
        Node<S>* o = out.get();
        out->backprop = [o, nodes, R, C] {
            size_t coff = 0;
            for (auto& n : nodes) {
                const size_t w = n->shape[1];
                if (n->needs_grad) {
                    n->ensure_grad();
                    for (size_t r = 0; r < R; ++r)
                        for (size_t c = 0; c < w; ++c)
                            n->grad[r * w + c] += o->grad[r * C + coff + c];
                }
                coff += w;
            }
        };
    }
    return Tensor<S>(out);
}

enum class PadMode { kZero, kReflect };

// Pads the last axis of [C, T].
template <typename S>
Tensor<S> pad_cols(const Tensor<S>& x, size_t left, size_t right, PadMode mode = PadMode::kZero) {
    require(x.shape().size() == 2, "ShapeMismatch", "pad_cols expects 2-D");
    const size_t C = x.dim(0), T = x.dim(1), Tp = T + left + right;
    if (mode == PadMode::kReflect)
        require(left < T && right < T, "ShapeMismatch", "reflect pad wider than signal");
    auto out = detail::make_out<S>({C, Tp}, {x});
    auto src_index = [left, T, mode](long tp) -> long {
        long t = tp - static_cast<long>(left);
        if (t >= 0 && t < static_cast<long>(T)) return t;
        if (mode == PadMode::kZero) return -1;
        if (t < 0) return -t;                      // reflect without edge repeat
        return 2 * static_cast<long>(T) - 2 - t;
    };
    for (size_t c = 0; c < C; ++c) {
        for (size_t tp = 0; tp < Tp; ++tp) {
            long s = src_index(static_cast<long>(tp));
            out->val[c * Tp + tp] = s < 0 ? S(0) : x.val()[c * T + s];
        }
    }
    if (out->needs_grad) {
        auto xn = x.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn, C, T, Tp, src_index] {
            xn->ensure_grad();
            for (size_t c = 0; c < C; ++c)
                for (size_t tp = 0; tp < Tp; ++tp) {
                    long s = src_index(static_cast<long>(tp));
                    if (s >= 0) xn->grad[c * T + s] += o->grad[c * Tp + tp];
                }
        };
    }
    return Tensor<S>(out);
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2 && a.dim(1) == b.dim(0),
            "ShapeMismatch", "matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
    auto out = detail::make_out<S>({M, N}, {a, b});
    std::fill(out->val.begin(), out->val.end(), S(0));
    for (size_t m = 0; m < M; ++m)
        for (size_t k = 0; k < K; ++k) {
            const S av = a.val()[m * K + k];
            const S* brow = b.val().data() + k * N;
            S* orow = out->val.data() + m * N;
            for (size_t n = 0; n < N; ++n) orow[n] += av * brow[n];
        }
    if (out->needs_grad) {
        auto an = a.node(), bn = b.node();
        Node<S>* o = out.get();
        out->backprop = [o, an, bn, M, K, N] {
            if (an->needs_grad) {
                an->ensure_grad();
                for (size_t m = 0; m < M; ++m)
                    for (size_t k = 0; k < K; ++k) {
                        S acc = 0;
                        const S* brow = bn->val.data() + k * N;
                        const S* grow = o->grad.data() + m * N;
                        for (size_t n = 0; n < N; ++n) acc += grow[n] * brow[n];
                        an->grad[m * K + k] += acc;
                    }
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                for (size_t m = 0; m < M; ++m)
                    for (size_t k = 0; k < K; ++k) {
                        const S av = an->val[m * K + k];
                        const S* grow = o->grad.data() + m * N;
                        S* brow = bn->grad.data() + k * N;
                        for (size_t n = 0; n < N; ++n) brow[n] += av * grow[n];
                    }
            }
        };
    }
    return Tensor<S>(out);
}

// ---------------------------------------------------------------------------
// normalization / softmax
// ---------------------------------------------------------------------------

// Row-wise softmax of [R, C].
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
    require(x.shape().size() == 2, "ShapeMismatch", "softmax_rows expects 2-D");
    const size_t R = x.dim(0), C = x.dim(1);
    auto out = detail::make_out<S>(x.shape(), {x});
    for (size_t r = 0; r < R; ++r) {
        const S* xi = x.val().data() + r * C;
        S* yi = out->val.data() + r * C;
        S mx = xi[0];
        for (size_t c = 1; c < C; ++c) mx = std::max(mx, xi[c]);
        S denom = 0;
        for (size_t c = 0; c < C; ++c) {
            yi[c] = std::exp(xi[c] - mx);
            denom += yi[c];
        }
        for (size_t c = 0; c < C; ++c) yi[c] /= denom;
    }
    if (out->needs_grad) {
        auto xn = x.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn, R, C] {
            xn->ensure_grad();
            for (size_t r = 0; r < R; ++r) {
                const S* y = o->val.data() + r * C;
                const S* g = o->grad.data() + r * C;
                S dot = 0;
                for (size_t c = 0; c < C; ++c) dot += y[c] * g[c];
                S* gx = xn->grad.data() + r * C;
                for (size_t c = 0; c < C; ++c) gx[c] += y[c] * (g[c] - dot);
            }
        };
    }
    return Tensor<S>(out);
}

// Non-affine per-row layer normalization: (v - mean) / sqrt(var + eps).
template <typename S>
Tensor<S> layer_norm_rows(const Tensor<S>& x, S eps) {
    require(x.shape().size() == 2, "ShapeMismatch", "layer_norm_rows expects 2-D");
    const size_t R = x.dim(0), C = x.dim(1);
    auto out = detail::make_out<S>(x.shape(), {x});
    auto inv_std = std::make_shared<std::vector<S>>(R);
    for (size_t r = 0; r < R; ++r) {
        const S* xi = x.val().data() + r * C;
        S mean = 0;
        for (size_t c = 0; c < C; ++c) mean += xi[c];
        mean /= static_cast<S>(C);
        S var = 0;
        for (size_t c = 0; c < C; ++c) var += (xi[c] - mean) * (xi[c] - mean);
        var /= static_cast<S>(C);
        const S istd = S(1) / std::sqrt(var + eps);
        (*inv_std)[r] = istd;
        S* yi = out->val.data() + r * C;
        for (size_t c = 0; c < C; ++c) yi[c] = (xi[c] - mean) * istd;
    }
    if (out->needs_grad) {
        auto xn = x.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn, inv_std, R, C] {
            xn->ensure_grad();
            for (size_t r = 0; r < R; ++r) {
                const S* y = o->val.data() + r * C;
                const S* g = o->grad.data() + r * C;
                const S istd = (*inv_std)[r];
                S gsum = 0, gysum = 0;
                for (size_t c = 0; c < C; ++c) {
                    gsum += g[c];
                    gysum += g[c] * y[c];
                }
                const S invC = S(1) / static_cast<S>(C);
                S* gx = xn->grad.data() + r * C;
                for (size_t c = 0; c < C; ++c)
                    gx[c] += istd * (g[c] - invC * gsum - y[c] * invC * gysum);
            }
        };
    }
    return Tensor<S>(out);
}

// Per-row RMS normalization x / sqrt(mean(x^2) + eps).
template <typename S>
Tensor<S> rms_norm_rows(const Tensor<S>& x, S eps) {
    require(x.shape().size() == 2, "ShapeMismatch", "rms_norm_rows expects 2-D");
    const size_t R = x.dim(0), C = x.dim(1);
    auto out = detail::make_out<S>(x.shape(), {x});
    auto inv_rms = std::make_shared<std::vector<S>>(R);
    for (size_t r = 0; r < R; ++r) {
        const S* xi = x.val().data() + r * C;
        S ms = 0;
        for (size_t c = 0; c < C; ++c) ms += xi[c] * xi[c];
        ms /= static_cast<S>(C);
        const S irms = S(1) / std::sqrt(ms + eps);
        (*inv_rms)[r] = irms;
        S* yi = out->val.data() + r * C;
        for (size_t c = 0; c < C; ++c) yi[c] = xi[c] * irms;
    }
    if (out->needs_grad) {
        auto xn = x.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn, inv_rms, R, C] {
            xn->ensure_grad();
            for (size_t r = 0; r < R; ++r) {
                const S* xi = xn->val.data() + r * C;
                const S* g = o->grad.data() + r * C;
                const S irms = (*inv_rms)[r];
                S gxdot = 0;
                for (size_t c = 0; c < C; ++c) gxdot += g[c] * xi[c];
                const S k = gxdot * irms * irms * irms / static_cast<S>(C);
                S* gx = xn->grad.data() + r * C;
                for (size_t c = 0; c < C; ++c) gx[c] += g[c] * irms - xi[c] * k;
            }
        };
    }
    return Tensor<S>(out);
}

// ---------------------------------------------------------------------------
// embedding / rope
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> embed(const Tensor<S>& table, const std::vector<size_t>& ids) {
    require(table.shape().size() == 2, "ShapeMismatch", "embed table must be [V,E]");
    const size_t V = table.dim(0), E = table.dim(1), L = ids.size();
    for (size_t id : ids)
        require(id < V, "UnknownToken", "token id " + std::to_string(id) + " >= vocab " + std::to_string(V));
    auto out = detail::make_out<S>({L, E}, {table});
    for (size_t l = 0; l < L; ++l)
        std::copy(table.val().begin() + ids[l] * E, table.val().begin() + (ids[l] + 1) * E,
                  out->val.begin() + l * E);
    if (out->needs_grad) {
        auto tn = table.node();
        Node<S>* o = out.get();
        auto idv = ids;
        out->backprop = [o, tn, idv, E] {
            tn->ensure_grad();
            for (size_t l = 0; l < idv.size(); ++l)
                for (size_t e = 0; e < E; ++e) tn->grad[idv[l] * E + e] += o->grad[l * E + e];
        };
    }
    return Tensor<S>(out);
}

// Rotary embedding over [T, H*hd]; row t uses position pos_offset + t.
// Pairs (2j, 2j+1) within each head are rotated; the backward pass is the
// inverse rotation (the map is orthogonal).
template <typename S>
Tensor<S> rope_apply(const Tensor<S>& x, size_t n_heads, long pos_offset, double base = 10000.0) {
    require(x.shape().size() == 2, "ShapeMismatch", "rope expects [T, H*hd]");
    const size_t T = x.dim(0), W = x.dim(1);
    require(W % n_heads == 0, "ShapeMismatch", "rope width not divisible by heads");
    const size_t hd = W / n_heads;
    require(hd % 2 == 0, "OddHeadDim", "rope head dim must be even");
    auto out = detail::make_out<S>(x.shape(), {x});
    auto rotate = [n_heads, hd, base](const S* in, S* dst, long pos, bool inverse) {
        for (size_t h = 0; h < n_heads; ++h) {
            for (size_t j = 0; j < hd / 2; ++j) {
                const double theta =
                    static_cast<double>(pos) * std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(hd));
                const S c = static_cast<S>(std::cos(theta));
                const S s = static_cast<S>((inverse ? -1.0 : 1.0) * std::sin(theta));
                const size_t i0 = h * hd + 2 * j, i1 = i0 + 1;
                const S a = in[i0], b = in[i1];
                dst[i0] = a * c - b * s;
                dst[i1] = a * s + b * c;
            }
        }
    };
    for (size_t t = 0; t < T; ++t)
        rotate(x.val().data() + t * W, out->val.data() + t * W, pos_offset + static_cast<long>(t), false);
    if (out->needs_grad) {
        auto xn = x.node();
        Node<S>* o = out.get();
        out->backprop = [o, xn, rotate, T, W, pos_offset] {
            xn->ensure_grad();
            std::vector<S> tmp(W);
            for (size_t t = 0; t < T; ++t) {
                rotate(o->grad.data() + t * W, tmp.data(), pos_offset + static_cast<long>(t), true);
                for (size_t i = 0; i < W; ++i) xn->grad[t * W + i] += tmp[i];
            }
        };
    }
    return Tensor<S>(out);
}

// ---------------------------------------------------------------------------
// convolutions
// ---------------------------------------------------------------------------

// x [Cin, T], w [Cout, Cin, K]; zero padding. Output [Cout, To].
template <typename S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                 size_t stride = 1, size_t dilation = 1, size_t pad_left = 0, size_t pad_right = 0) {
    require(x.shape().size() == 2 && w.shape().size() == 3, "ShapeMismatch", "conv1d shapes");
    const size_t Ci = x.dim(0), T = x.dim(1);
    const size_t Co = w.dim(0), K = w.dim(2);
    require(w.dim(1) == Ci, "ShapeMismatch", "conv1d channel mismatch");
    const size_t Tp = T + pad_left + pad_right;
    const size_t span = (K - 1) * dilation + 1;
    require(Tp >= span, "ShapeMismatch", "conv1d input shorter than kernel span");
    const size_t To = (Tp - span) / stride + 1;
    const bool has_bias = b.defined();
    if (has_bias) require(b.shape() == Shape{Co}, "ShapeMismatch", "conv1d bias shape");

    std::vector<Tensor<S>> parents{x, w};
    if (has_bias) parents.push_back(b);
    auto out = detail::make_out<S>({Co, To}, parents);

    // materialized zero-padded input keeps the inner loops branch free
    std::vector<S> xp(Ci * Tp, S(0));
    for (size_t c = 0; c < Ci; ++c)
        std::copy(x.val().begin() + c * T, x.val().begin() + (c + 1) * T, xp.begin() + c * Tp + pad_left);

    for (size_t oc = 0; oc < Co; ++oc) {
        S* orow = out->val.data() + oc * To;
        std::fill(orow, orow + To, has_bias ? b.val()[oc] : S(0));
        for (size_t ic = 0; ic < Ci; ++ic) {
            const S* xrow = xp.data() + ic * Tp;
            const S* wrow = w.val().data() + (oc * Ci + ic) * K;
            for (size_t k = 0; k < K; ++k) {
                const S wv = wrow[k];
                const size_t off = k * dilation;
                for (size_t t = 0; t < To; ++t) orow[t] += wv * xrow[t * stride + off];
            }
        }
    }
    if (out->needs_grad) {
        auto xn = x.node(), wn = w.node();
        auto bn = has_bias ? b.node() : nullptr;
        Node<S>* o = out.get();
        auto xp_keep = std::make_shared<std::vector<S>>(std::move(xp));
        out->backprop = [o, xn, wn, bn, xp_keep, Ci, T, Tp, Co, K, To, stride, dilation, pad_left] {
            if (bn && bn->needs_grad) {
                bn->ensure_grad();
                for (size_t oc = 0; oc < Co; ++oc) {
                    S acc = 0;
                    const S* g = o->grad.data() + oc * To;
                    for (size_t t = 0; t < To; ++t) acc += g[t];
                    bn->grad[oc] += acc;
                }
            }
            if (wn->needs_grad) {
                wn->ensure_grad();
                for (size_t oc = 0; oc < Co; ++oc) {
                    const S* g = o->grad.data() + oc * To;
                    for (size_t ic = 0; ic < Ci; ++ic) {
                        const S* xrow = xp_keep->data() + ic * Tp;
                        S* wrow = wn->grad.data() + (oc * Ci + ic) * K;
                        for (size_t k = 0; k < K; ++k) {
                            S acc = 0;
                            const size_t off = k * dilation;
                            for (size_t t = 0; t < To; ++t) acc += g[t] * xrow[t * stride + off];
                            wrow[k] += acc;
                        }
                    }
                }
            }
            if (xn->needs_grad) {
                xn->ensure_grad();
                std::vector<S> gx(Ci * Tp, S(0));
                for (size_t oc = 0; oc < Co; ++oc) {
                    const S* g = o->grad.data() + oc * To;
                    for (size_t ic = 0; ic < Ci; ++ic) {
                        S* gxrow = gx.data() + ic * Tp;
                        const S* wrow = wn->val.data() + (oc * Ci + ic) * K;
                        for (size_t k = 0; k < K; ++k) {
                            const S wv = wrow[k];
                            const size_t off = k * dilation;
                            for (size_t t = 0; t < To; ++t) gxrow[t * stride + off] += wv * g[t];
                        }
                    }
                }
                for (size_t c = 0; c < Ci; ++c)
                    for (size_t t = 0; t < T; ++t) xn->grad[c * T + t] += gx[c * Tp + pad_left + t];
            }
        };
    }
    return Tensor<S>(out);
}

// Transposed convolution; x [Cin, T], w [Cin, Cout, K]. Full output length
// (T-1)*stride + K, then pad_left/pad_right are trimmed off the ends.
template <typename S>
Tensor<S> conv1d_transpose(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                           size_t stride = 1, size_t pad_left = 0, size_t pad_right = 0) {
    require(x.shape().size() == 2 && w.shape().size() == 3, "ShapeMismatch", "conv1d_transpose shapes");
    const size_t Ci = x.dim(0), T = x.dim(1);
    require(w.dim(0) == Ci, "ShapeMismatch", "conv1d_transpose channel mismatch");
    const size_t Co = w.dim(1), K = w.dim(2);
    const size_t Tf = (T - 1) * stride + K;
    require(Tf >= pad_left + pad_right, "ShapeMismatch", "conv1d_transpose trim too large");
    const size_t To = Tf - pad_left - pad_right;
    const bool has_bias = b.defined();
    if (has_bias) require(b.shape() == Shape{Co}, "ShapeMismatch", "conv1d_transpose bias shape");

    std::vector<Tensor<S>> parents{x, w};
    if (has_bias) parents.push_back(b);
    auto out = detail::make_out<S>({Co, To}, parents);

    std::vector<S> full(Co * Tf, S(0));
    for (size_t ic = 0; ic < Ci; ++ic) {
        const S* xrow = x.val().data() + ic * T;
        for (size_t oc = 0; oc < Co; ++oc) {
            S* frow = full.data() + oc * Tf;
            const S* wrow = w.val().data() + (ic * Co + oc) * K;
            for (size_t t = 0; t < T; ++t) {
                const S xv = xrow[t];
                S* dst = frow + t * stride;
                for (size_t k = 0; k < K; ++k) dst[k] += xv * wrow[k];
            }
        }
    }
    for (size_t oc = 0; oc < Co; ++oc) {
        const S bias = has_bias ? b.val()[oc] : S(0);
        for (size_t t = 0; t < To; ++t) out->val[oc * To + t] = full[oc * Tf + pad_left + t] + bias;
    }
    if (out->needs_grad) {
        auto xn = x.node(), wn = w.node();
        auto bn = has_bias ? b.node() : nullptr;
        Node<S>* o = out.get();
        out->backprop = [o, xn, wn, bn, Ci, T, Co, K, Tf, To, stride, pad_left] {
            std::vector<S> gfull(Co * Tf, S(0));
            for (size_t oc = 0; oc < Co; ++oc)
                for (size_t t = 0; t < To; ++t) gfull[oc * Tf + pad_left + t] = o->grad[oc * To + t];
            if (bn && bn->needs_grad) {
                bn->ensure_grad();
                for (size_t oc = 0; oc < Co; ++oc) {
                    S acc = 0;
                    for (size_t t = 0; t < To; ++t) acc += o->grad[oc * To + t];
                    bn->grad[oc] += acc;
                }
            }
            if (wn->needs_grad) {
                wn->ensure_grad();
                for (size_t ic = 0; ic < Ci; ++ic) {
                    const S* xrow = xn->val.data() + ic * T;
                    for (size_t oc = 0; oc < Co; ++oc) {
                        const S* grow = gfull.data() + oc * Tf;
                        S* wrow = wn->grad.data() + (ic * Co + oc) * K;
                        for (size_t k = 0; k < K; ++k) {
                            S acc = 0;
                            for (size_t t = 0; t < T; ++t) acc += xrow[t] * grow[t * stride + k];
                            wrow[k] += acc;
                        }
                    }
                }
            }
            if (xn->needs_grad) {
                xn->ensure_grad();
                for (size_t ic = 0; ic < Ci; ++ic) {
                    S* gxrow = xn->grad.data() + ic * T;
                    for (size_t oc = 0; oc < Co; ++oc) {
                        const S* grow = gfull.data() + oc * Tf;
                        const S* wrow = wn->val.data() + (ic * Co + oc) * K;
                        for (size_t t = 0; t < T; ++t) {
                            S acc = 0;
                            const S* g = grow + t * stride;
                            for (size_t k = 0; k < K; ++k) acc += wrow[k] * g[k];
                            gxrow[t] += acc;
                        }
                    }
                }
            }
        };
    }
    return Tensor<S>(out);
}

// Depthwise conv along time: x [C, T], w [C, K], same-length zero padding.
template <typename S>
Tensor<S> dwconv1d_same(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    require(x.shape().size() == 2 && w.shape().size() == 2 && x.dim(0) == w.dim(0),
            "ShapeMismatch", "dwconv1d shapes");
    const size_t C = x.dim(0), T = x.dim(1), K = w.dim(1);
    const size_t pl = (K - 1) / 2, pr = K - 1 - pl;
    const bool has_bias = b.defined();
    std::vector<Tensor<S>> parents{x, w};
    if (has_bias) parents.push_back(b);
    auto out = detail::make_out<S>({C, T}, parents);
    auto at = [T](const S* row, long t) -> S {
        return (t < 0 || t >= static_cast<long>(T)) ? S(0) : row[t];
    };
    for (size_t c = 0; c < C; ++c) {
        const S* xrow = x.val().data() + c * T;
        const S* wrow = w.val().data() + c * K;
        S* orow = out->val.data() + c * T;
        const S bias = has_bias ? b.val()[c] : S(0);
        for (size_t t = 0; t < T; ++t) {
            S acc = bias;
            for (size_t k = 0; k < K; ++k) acc += wrow[k] * at(xrow, static_cast<long>(t + k) - static_cast<long>(pl));
            orow[t] = acc;
        }
    }
    if (out->needs_grad) {
        auto xn = x.node(), wn = w.node();
        auto bn = has_bias ? b.node() : nullptr;
        Node<S>* o = out.get();
        out->backprop = [o, xn, wn, bn, C, T, K, pl, at] {
            for (size_t c = 0; c < C; ++c) {
                const S* g = o->grad.data() + c * T;
                if (bn && bn->needs_grad) {
                    bn->ensure_grad();
                    S acc = 0;
                    for (size_t t = 0; t < T; ++t) acc += g[t];
                    bn->grad[c] += acc;
                }
                if (wn->needs_grad) {
                    wn->ensure_grad();
                    const S* xrow = xn->val.data() + c * T;
                    for (size_t k = 0; k < K; ++k) {
                        S acc = 0;
                        for (size_t t = 0; t < T; ++t)
                            acc += g[t] * at(xrow, static_cast<long>(t + k) - static_cast<long>(pl));
                        wn->grad[c * K + k] += acc;
                    }
                }
                if (xn->needs_grad) {
                    xn->ensure_grad();
                    const S* wrow = wn->val.data() + c * K;
                    S* gx = xn->grad.data() + c * T;
                    for (size_t t = 0; t < T; ++t)
                        for (size_t k = 0; k < K; ++k) {
                            long s = static_cast<long>(t + k) - static_cast<long>(pl);
                            if (s >= 0 && s < static_cast<long>(T)) gx[s] += wrow[k] * g[t];
                        }
                }
            }
        };
    }
    return Tensor<S>(out);
}

// x [Cin, H, W], w [Cout, Cin, Kh, Kw]; zero padding.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                 size_t sh, size_t sw, size_t ph, size_t pw) {
    require(x.shape().size() == 3 && w.shape().size() == 4 && w.dim(1) == x.dim(0),
            "ShapeMismatch", "conv2d shapes");
    const size_t Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
    const size_t Co = w.dim(0), Kh = w.dim(2), Kw = w.dim(3);
    const size_t Hp = H + 2 * ph, Wp = W + 2 * pw;
    require(Hp >= Kh && Wp >= Kw, "ShapeMismatch", "conv2d input smaller than kernel");
    const size_t Ho = (Hp - Kh) / sh + 1, Wo = (Wp - Kw) / sw + 1;
    const bool has_bias = b.defined();
    std::vector<Tensor<S>> parents{x, w};
    if (has_bias) parents.push_back(b);
    auto out = detail::make_out<S>({Co, Ho, Wo}, parents);

    std::vector<S> xp(Ci * Hp * Wp, S(0));
    for (size_t c = 0; c < Ci; ++c)
        for (size_t i = 0; i < H; ++i)
            std::copy(x.val().begin() + (c * H + i) * W, x.val().begin() + (c * H + i + 1) * W,
                      xp.begin() + (c * Hp + i + ph) * Wp + pw);

    for (size_t oc = 0; oc < Co; ++oc) {
        for (size_t i = 0; i < Ho; ++i) {
            S* orow = out->val.data() + (oc * Ho + i) * Wo;
            std::fill(orow, orow + Wo, has_bias ? b.val()[oc] : S(0));
            for (size_t ic = 0; ic < Ci; ++ic)
                for (size_t kh = 0; kh < Kh; ++kh) {
                    const S* xrow = xp.data() + (ic * Hp + i * sh + kh) * Wp;
                    const S* wrow = w.val().data() + ((oc * Ci + ic) * Kh + kh) * Kw;
                    for (size_t kw = 0; kw < Kw; ++kw) {
                        const S wv = wrow[kw];
                        for (size_t j = 0; j < Wo; ++j) orow[j] += wv * xrow[j * sw + kw];
                    }
                }
        }
    }
    if (out->needs_grad) {
        auto xn = x.node(), wn = w.node();
        auto bn = has_bias ? b.node() : nullptr;
        Node<S>* o = out.get();
        auto xp_keep = std::make_shared<std::vector<S>>(std::move(xp));
        out->backprop = [o, xn, wn, bn, xp_keep, Ci, H, W, Hp, Wp, Co, Kh, Kw, Ho, Wo, sh, sw, ph, pw] {
            if (bn && bn->needs_grad) {
                bn->ensure_grad();
                for (size_t oc = 0; oc < Co; ++oc) {
                    S acc = 0;
                    const S* g = o->grad.data() + oc * Ho * Wo;
                    for (size_t i = 0; i < Ho * Wo; ++i) acc += g[i];
                    bn->grad[oc] += acc;
                }
            }
            if (wn->needs_grad) {
                wn->ensure_grad();
                for (size_t oc = 0; oc < Co; ++oc)
                    for (size_t ic = 0; ic < Ci; ++ic)
                        for (size_t kh = 0; kh < Kh; ++kh)
                            for (size_t kw = 0; kw < Kw; ++kw) {
                                S acc = 0;
                                for (size_t i = 0; i < Ho; ++i) {
                                    const S* g = o->grad.data() + (oc * Ho + i) * Wo;
                                    const S* xrow = xp_keep->data() + (ic * Hp + i * sh + kh) * Wp + kw;
                                    for (size_t j = 0; j < Wo; ++j) acc += g[j] * xrow[j * sw];
                                }
                                wn->grad[((oc * Ci + ic) * Kh + kh) * Kw + kw] += acc;
                            }
            }
            if (xn->needs_grad) {
                xn->ensure_grad();
                std::vector<S> gx(Ci * Hp * Wp, S(0));
                for (size_t oc = 0; oc < Co; ++oc)
                    for (size_t ic = 0; ic < Ci; ++ic)
                        for (size_t kh = 0; kh < Kh; ++kh) {
                            const S* wrow = wn->val.data() + ((oc * Ci + ic) * Kh + kh) * Kw;
                            for (size_t i = 0; i < Ho; ++i) {
                                const S* g = o->grad.data() + (oc * Ho + i) * Wo;
                                S* gxrow = gx.data() + (ic * Hp + i * sh + kh) * Wp;
                                for (size_t kw = 0; kw < Kw; ++kw) {
                                    const S wv = wrow[kw];
                                    for (size_t j = 0; j < Wo; ++j) gxrow[j * sw + kw] += wv * g[j];
                                }
                            }
                        }
                for (size_t c = 0; c < Ci; ++c)
                    for (size_t i = 0; i < H; ++i)
                        for (size_t j = 0; j < W; ++j)
                            xn->grad[(c * H + i) * W + j] += gx[(c * Hp + i + ph) * Wp + j + pw];
            }
        };
    }
    return Tensor<S>(out);
}

// ---------------------------------------------------------------------------
// STFT as a differentiable op
// ---------------------------------------------------------------------------

// x is flat [T]. Output packs real/imag as [2, bins, frames] with
// bins = fft/2+1. Frames are centered: reflect pad by fft/2 on both sides,
// frame m starts at m*hop in the padded signal, Hann window of length win
// zero-centered inside the fft buffer.
template <typename S>
Tensor<S> stft_packed(const Tensor<S>& x, size_t fft_size, size_t hop, size_t win) {
    require(x.shape().size() == 1, "ShapeMismatch", "stft input must be flat [T]");
    require(is_pow2(fft_size), "InvalidRange", "fft size must be a power of two");
    require(hop > 0 && hop <= win && win <= fft_size, "InvalidRange", "need 0 < hop <= win <= fft");
    const size_t T = x.dim(0);
    require(T >= win, "SignalTooShort",
            "signal length " + std::to_string(T) + " < window " + std::to_string(win));
    const size_t pad = fft_size / 2;
    const size_t Tp = T + 2 * pad;
    const size_t frames = Tp >= fft_size ? (Tp - fft_size) / hop + 1 : 0;
    const size_t bins = fft_size / 2 + 1;

    std::vector<S> window(fft_size, S(0));
    const size_t w0 = (fft_size - win) / 2;
    for (size_t i = 0; i < win; ++i)
        window[w0 + i] = static_cast<S>(0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(win)));

    auto reflect = [T](long t) -> size_t {
        if (t < 0) t = -t;
        if (t >= static_cast<long>(T)) t = 2 * static_cast<long>(T) - 2 - t;
        return static_cast<size_t>(t);
    };

    auto out = detail::make_out<S>({2, bins, frames}, {x});
    std::vector<S> frame(fft_size);
    for (size_t m = 0; m < frames; ++m) {
        for (size_t i = 0; i < fft_size; ++i) {
            long t = static_cast<long>(m * hop + i) - static_cast<long>(pad);
            frame[i] = x.val()[reflect(t)] * window[i];
        }
        auto spec = rfft(frame);
        for (size_t k = 0; k < bins; ++k) {
            out->val[(0 * bins + k) * frames + m] = spec[k].real();
            out->val[(1 * bins + k) * frames + m] = spec[k].imag();
        }
    }
    if (out->needs_grad) {
        auto xn = x.node();
        Node<S>* o = out.get();
        auto win_keep = std::make_shared<std::vector<S>>(std::move(window));
        out->backprop = [o, xn, win_keep, T, fft_size, hop, pad, frames, bins, reflect] {
            xn->ensure_grad();
            std::vector<std::complex<S>> g(bins);
            for (size_t m = 0; m < frames; ++m) {
                for (size_t k = 0; k < bins; ++k)
                    g[k] = std::complex<S>(o->grad[(0 * bins + k) * frames + m],
                                           o->grad[(1 * bins + k) * frames + m]);
                auto gframe = rfft_adjoint(g, fft_size);
                for (size_t i = 0; i < fft_size; ++i) {
                    long t = static_cast<long>(m * hop + i) - static_cast<long>(pad);
                    xn->grad[reflect(t)] += gframe[i] * (*win_keep)[i];
                }
            }
        };
    }
    return Tensor<S>(out);
}

// |S| from packed [2, bins, frames] -> [bins, frames].
template <typename S>
Tensor<S> complex_mag(const Tensor<S>& p) {
    require(p.shape().size() == 3 && p.dim(0) == 2, "ShapeMismatch", "complex_mag expects [2,B,F]");
    const size_t B = p.dim(1), F = p.dim(2), n = B * F;
    auto out = detail::make_out<S>({B, F}, {p});
    for (size_t i = 0; i < n; ++i) {
        const S re = p.val()[i], im = p.val()[n + i];
        out->val[i] = std::sqrt(re * re + im * im);
    }
    if (out->needs_grad) {
        auto pn = p.node();
        Node<S>* o = out.get();
        out->backprop = [o, pn, n] {
            pn->ensure_grad();
            for (size_t i = 0; i < n; ++i) {
                const S mag = o->val[i];
                if (mag <= S(0)) continue;  // subgradient 0 at the cone point
                const S g = o->grad[i] / mag;
                pn->grad[i] += g * pn->val[i];
                pn->grad[n + i] += g * pn->val[n + i];
            }
        };
    }
    return Tensor<S>(out);
}

}  // namespace wavefm
