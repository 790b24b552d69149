#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "miniseg/errors.hpp"
#include "miniseg/kernels.hpp"
#include "miniseg/rng.hpp"

// Dense row-major tensors with reverse-mode autodiff. Scalars are float for
// model math and double for the finite-difference oracles; everything here is
// templated on the element type so both instantiations share one graph
// implementation. Tensors are immutable values once created except for grad
// accumulation.

namespace miniseg {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

namespace autograd {

inline thread_local bool g_grad_enabled = true;

inline bool grad_enabled() { return g_grad_enabled; }

// RAII switch that disables graph recording (inference paths).
class NoGradGuard {
public:
    NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
    ~NoGradGuard() { g_grad_enabled = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

}  // namespace autograd

namespace detail {

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;  // same length as data once touched
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    std::function<void(TensorNode<T>&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

}  // namespace detail

template <typename T>
class Tensor {
public:
    using Node = detail::TensorNode<T>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        return filled(std::move(shape), value, requires_grad);
    }

    static Tensor from_vector(Shape shape, std::vector<T> data,
                              bool requires_grad = false) {
        if (data.size() != shape_numel(shape)) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->data = std::move(data);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    // Truncated normal (+/- 2 stddev), the default projection-weight init.
    static Tensor trunc_normal(Shape shape, T stddev, Rng& rng,
                               bool requires_grad = false) {
        std::vector<T> data(shape_numel(shape));
        for (auto& v : data) {
            v = static_cast<T>(rng.trunc_normal(static_cast<double>(stddev)));
        }
        return from_vector(std::move(shape), std::move(data), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->data.size(); }
    std::size_t extent(std::size_t axis) const { return node_->shape[axis]; }

    T* data() { return node_->data.data(); }
    const T* data() const { return node_->data.data(); }
    std::span<T> values() { return node_->data; }
    std::span<const T> values() const { return node_->data; }

    T item() const {
        if (numel() != 1) {
            throw ContractError("item() requires a scalar tensor, got shape " +
                                shape_str(shape()));
        }
        return node_->data[0];
    }

    bool requires_grad() const { return node_ && node_->requires_grad; }

    // Empty span until a backward pass has touched this tensor.
    std::span<const T> grad() const { return node_->grad; }

    void zero_grad() {
        if (node_) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    static Tensor filled(Shape shape, T value, bool requires_grad) {
        auto node = std::make_shared<Node>();
        node->data.assign(shape_numel(shape), value);
        node->shape = std::move(shape);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    std::shared_ptr<Node> node_;
};

namespace detail {

// Builds an op result node. `backward_fn` reads the node's grad and
// accumulates into node.parents[i]->grad; it is dropped entirely when no
// input needs gradients or recording is off.
template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> data,
                  std::vector<Tensor<T>> inputs,
                  std::function<void(TensorNode<T>&)> backward_fn) {
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    bool needs = false;
    if (autograd::grad_enabled()) {
        for (const auto& in : inputs) {
            needs = needs || in.requires_grad();
        }
    }
    if (needs) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (auto& in : inputs) node->parents.push_back(in.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(std::move(node));
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "add");
    const std::size_t n = a.numel();
    std::vector<T> out(n);
    kernels::table<T>().add(a.data(), b.data(), out.data(), n);
    return detail::make_op<T>(a.shape(), std::move(out), {a, b},
                              [n](detail::TensorNode<T>& self) {
        for (int p = 0; p < 2; ++p) {
            auto& par = self.parents[p];
            if (!par->requires_grad) continue;
            par->ensure_grad();
            kernels::table<T>().axpy(T(1), self.grad.data(), par->grad.data(), n);
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "sub");
    const std::size_t n = a.numel();
    std::vector<T> out(n);
    kernels::table<T>().sub(a.data(), b.data(), out.data(), n);
    return detail::make_op<T>(a.shape(), std::move(out), {a, b},
                              [n](detail::TensorNode<T>& self) {
        if (self.parents[0]->requires_grad) {
            self.parents[0]->ensure_grad();
            kernels::table<T>().axpy(T(1), self.grad.data(),
                                     self.parents[0]->grad.data(), n);
        }
        if (self.parents[1]->requires_grad) {
            self.parents[1]->ensure_grad();
            kernels::table<T>().axpy(T(-1), self.grad.data(),
                                     self.parents[1]->grad.data(), n);
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "mul");
    const std::size_t n = a.numel();
    std::vector<T> out(n);
    kernels::table<T>().mul(a.data(), b.data(), out.data(), n);
    return detail::make_op<T>(a.shape(), std::move(out), {a, b},
                              [n](detail::TensorNode<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        std::vector<T> tmp(n);
        if (pa->requires_grad) {
            pa->ensure_grad();
            kernels::table<T>().mul(self.grad.data(), pb->data.data(), tmp.data(), n);
            kernels::table<T>().axpy(T(1), tmp.data(), pa->grad.data(), n);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            kernels::table<T>().mul(self.grad.data(), pa->data.data(), tmp.data(), n);
            kernels::table<T>().axpy(T(1), tmp.data(), pb->grad.data(), n);
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T alpha) {
    const std::size_t n = a.numel();
    std::vector<T> out(n);
    kernels::table<T>().scale(a.data(), alpha, out.data(), n);
    return detail::make_op<T>(a.shape(), std::move(out), {a},
                              [n, alpha](detail::TensorNode<T>& self) {
        auto& par = self.parents[0];
        par->ensure_grad();
        kernels::table<T>().axpy(alpha, self.grad.data(), par->grad.data(), n);
    });
}

// y[i, :] = x[i, :] + v  for a rank-2 x and rank-1 v (bias rows).
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
    if (x.rank() != 2 || v.rank() != 1 || x.extent(1) != v.extent(0)) {
        throw ShapeError("add_rowvec: incompatible shapes " +
                         shape_str(x.shape()) + " and " + shape_str(v.shape()));
    }
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    std::vector<T> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        kernels::table<T>().add(x.data() + r * cols, v.data(),
                                out.data() + r * cols, cols);
    }
    return detail::make_op<T>(x.shape(), std::move(out), {x, v},
                              [rows, cols](detail::TensorNode<T>& self) {
        auto& px = self.parents[0];
        auto& pv = self.parents[1];
        if (px->requires_grad) {
            px->ensure_grad();
            kernels::table<T>().axpy(T(1), self.grad.data(), px->grad.data(),
                                     rows * cols);
        }
        if (pv->requires_grad) {
            pv->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                kernels::table<T>().axpy(T(1), self.grad.data() + r * cols,
                                         pv->grad.data(), cols);
            }
        }
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    const std::size_t n = a.numel();
    const T s = kernels::table<T>().reduce_sum(a.data(), n);
    return detail::make_op<T>(Shape{}, std::vector<T>{s}, {a},
                              [n](detail::TensorNode<T>& self) {
        auto& par = self.parents[0];
        par->ensure_grad();
        const T g = self.grad[0];
        for (std::size_t i = 0; i < n; ++i) par->grad[i] += g;
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    const std::size_t n = a.numel();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
    return detail::make_op<T>(a.shape(), std::move(out), {a},
                              [n](detail::TensorNode<T>& self) {
        auto& par = self.parents[0];
        par->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
            if (par->data[i] > T(0)) par->grad[i] += self.grad[i];
        }
    });
}

// Exact GELU, x * Phi(x) with the erf-based normal CDF.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    const std::size_t n = a.numel();
    std::vector<T> out(n);
    kernels::table<T>().gelu_fwd(a.data(), out.data(), n);
    return detail::make_op<T>(a.shape(), std::move(out), {a},
                              [n](detail::TensorNode<T>& self) {
        auto& par = self.parents[0];
        par->ensure_grad();
        std::vector<T> tmp(n);
        kernels::table<T>().gelu_bwd(par->data.data(), self.grad.data(),
                                     tmp.data(), n);
        kernels::table<T>().axpy(T(1), tmp.data(), par->grad.data(), n);
    });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    }
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    std::vector<T> out(m * n);
    kernels::table<T>().gemm(a.data(), b.data(), out.data(), m, k, n, false);
    return detail::make_op<T>(Shape{m, n}, std::move(out), {a, b},
                              [m, k, n](detail::TensorNode<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        const auto& kt = kernels::table<T>();
        if (pa->requires_grad) {
            pa->ensure_grad();
            std::vector<T> bt(k * n);
            kt.transpose(pb->data.data(), bt.data(), k, n);
            kt.gemm(self.grad.data(), bt.data(), pa->grad.data(), m, n, k, true);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            std::vector<T> at(m * k);
            kt.transpose(pa->data.data(), at.data(), m, k);
            kt.gemm(at.data(), self.grad.data(), pb->grad.data(), k, m, n, true);
        }
    });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
    if (a.rank() != 2) {
        throw ShapeError("transpose2d: want rank 2, got " + shape_str(a.shape()));
    }
    const std::size_t r = a.extent(0), c = a.extent(1);
    std::vector<T> out(r * c);
    kernels::table<T>().transpose(a.data(), out.data(), r, c);
    return detail::make_op<T>(Shape{c, r}, std::move(out), {a},
                              [r, c](detail::TensorNode<T>& self) {
        auto& par = self.parents[0];
        par->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                par->grad[i * c + j] += self.grad[j * r + i];
            }
        }
    });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) +
                         " as " + shape_str(new_shape));
    }
    std::vector<T> out(a.values().begin(), a.values().end());
    return detail::make_op<T>(std::move(new_shape), std::move(out), {a},
                              [](detail::TensorNode<T>& self) {
        auto& par = self.parents[0];
        par->ensure_grad();
        kernels::table<T>().axpy(T(1), self.grad.data(), par->grad.data(),
                                 self.grad.size());
    });
}

// Column slice [c0, c1) of a rank-2 tensor.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t c0, std::size_t c1) {
    if (a.rank() != 2 || c0 >= c1 || c1 > a.extent(1)) {
        throw ShapeError("slice_cols: invalid range [" + std::to_string(c0) +
                         "," + std::to_string(c1) + ") for " +
                         shape_str(a.shape()));
    }
    const std::size_t rows = a.extent(0), cols = a.extent(1), w = c1 - c0;
    std::vector<T> out(rows * w);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(a.data() + r * cols + c0, w, out.data() + r * w);
    }
    return detail::make_op<T>(Shape{rows, w}, std::move(out), {a},
                              [rows, cols, c0, w](detail::TensorNode<T>& self) {
        auto& par = self.parents[0];
        par->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            kernels::table<T>().axpy(T(1), self.grad.data() + r * w,
                                     par->grad.data() + r * cols + c0, w);
        }
    });
}

// Concatenate rank-2 tensors along the column axis.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const std::size_t rows = parts[0].extent(0);
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.extent(0) != rows) {
            throw ShapeError("concat_cols: row mismatch at " + shape_str(p.shape()));
        }
        total += p.extent(1);
    }
    std::vector<T> out(rows * total);
    std::size_t off = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        const std::size_t w = p.extent(1);
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(p.data() + r * w, w, out.data() + r * total + off);
        }
        widths.push_back(w);
        off += w;
    }
    return detail::make_op<T>(Shape{rows, total}, std::move(out), parts,
                              [rows, total, widths](detail::TensorNode<T>& self) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            auto& par = self.parents[p];
            const std::size_t w = widths[p];
            if (par->requires_grad) {
                par->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    kernels::table<T>().axpy(T(1),
                                             self.grad.data() + r * total + off,
                                             par->grad.data() + r * w, w);
                }
            }
            off += w;
        }
    });
}

// Concatenate along axis 0 (used for channel stacking of [C,H,W] maps).
template <typename T>
Tensor<T> concat0(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ContractError("concat0: no inputs");
    Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    std::size_t lead = 0;
    for (const auto& p : parts) {
        Shape t(p.shape().begin() + 1, p.shape().end());
        if (p.rank() == 0 || t != tail) {
            throw ShapeError("concat0: trailing-extent mismatch at " +
                             shape_str(p.shape()));
        }
        lead += p.extent(0);
    }
    Shape out_shape;
    out_shape.push_back(lead);
    out_shape.insert(out_shape.end(), tail.begin(), tail.end());
    std::vector<T> out;
    out.reserve(shape_numel(out_shape));
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
        out.insert(out.end(), p.values().begin(), p.values().end());
        sizes.push_back(p.numel());
    }
    return detail::make_op<T>(std::move(out_shape), std::move(out), parts,
                              [sizes](detail::TensorNode<T>& self) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            auto& par = self.parents[p];
            if (par->requires_grad) {
                par->ensure_grad();
                kernels::table<T>().axpy(T(1), self.grad.data() + off,
                                         par->grad.data(), sizes[p]);
            }
            off += sizes[p];
        }
    });
}

// ---------------------------------------------------------------------------
// softmax / layer_norm
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw ShapeError("softmax: axis " + std::to_string(axis) +
                         " out of range for " + shape_str(x.shape()));
    }
    for (T v : x.values()) {
        if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
    }
    const Shape& s = x.shape();
    const std::size_t len = s[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];

    std::vector<T> out(x.numel());
    if (inner == 1) {
        kernels::table<T>().softmax_rows(x.data(), out.data(), outer, len);
    } else {
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const T* xp = x.data() + o * len * inner + in;
                T* op = out.data() + o * len * inner + in;
                T mx = xp[0];
                for (std::size_t l = 1; l < len; ++l)
                    mx = std::max(mx, xp[l * inner]);
                T total(0);
                for (std::size_t l = 0; l < len; ++l) {
                    op[l * inner] = std::exp(xp[l * inner] - mx);
                    total += op[l * inner];
                }
                const T inv = T(1) / total;
                for (std::size_t l = 0; l < len; ++l) op[l * inner] *= inv;
            }
        }
    }
    return detail::make_op<T>(x.shape(), std::move(out), {x},
                              [outer, len, inner](detail::TensorNode<T>& self) {
        auto& par = self.parents[0];
        par->ensure_grad();
        // dx = s * (dy - sum(dy * s))
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                T dot(0);
                for (std::size_t l = 0; l < len; ++l) {
                    dot += self.grad[base + l * inner] * self.data[base + l * inner];
                }
                for (std::size_t l = 0; l < len; ++l) {
                    const std::size_t i = base + l * inner;
                    par->grad[i] += self.data[i] * (self.grad[i] - dot);
                }
            }
        }
    });
}

// Normalizes the last axis to zero mean / unit variance (population variance
// plus eps), then applies the gamma/beta affine.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps) {
    if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
    const std::size_t c = x.shape().back();
    if (gamma.rank() != 1 || beta.rank() != 1 || gamma.extent(0) != c ||
        beta.extent(0) != c) {
        throw ShapeError("layer_norm: affine extents " + shape_str(gamma.shape()) +
                         "/" + shape_str(beta.shape()) +
                         " do not match normalized extent " + std::to_string(c));
    }
    const std::size_t rows = x.numel() / c;
    std::vector<T> out(x.numel());
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto inv_std = std::make_shared<std::vector<T>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xp = x.data() + r * c;
        T mu(0);
        for (std::size_t j = 0; j < c; ++j) mu += xp[j];
        mu /= static_cast<T>(c);
        T var(0);
        for (std::size_t j = 0; j < c; ++j) {
            const T d = xp[j] - mu;
            var += d * d;
        }
        var /= static_cast<T>(c);
        const T inv = T(1) / std::sqrt(var + eps);
        (*inv_std)[r] = inv;
        for (std::size_t j = 0; j < c; ++j) {
            const T xh = (xp[j] - mu) * inv;
            (*xhat)[r * c + j] = xh;
            out[r * c + j] = gamma.data()[j] * xh + beta.data()[j];
        }
    }
    return detail::make_op<T>(x.shape(), std::move(out), {x, gamma, beta},
                              [rows, c, xhat, inv_std](detail::TensorNode<T>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        const T* g = pg->data.data();
        if (pg->requires_grad) pg->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        if (px->requires_grad) px->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t base = r * c;
            if (pg->requires_grad || pb->requires_grad) {
                for (std::size_t j = 0; j < c; ++j) {
                    const T dy = self.grad[base + j];
                    if (pg->requires_grad) pg->grad[j] += dy * (*xhat)[base + j];
                    if (pb->requires_grad) pb->grad[j] += dy;
                }
            }
            if (px->requires_grad) {
                T mean_dyg(0), mean_dyg_xh(0);
                for (std::size_t j = 0; j < c; ++j) {
                    const T dyg = self.grad[base + j] * g[j];
                    mean_dyg += dyg;
                    mean_dyg_xh += dyg * (*xhat)[base + j];
                }
                mean_dyg /= static_cast<T>(c);
                mean_dyg_xh /= static_cast<T>(c);
                const T inv = (*inv_std)[r];
                for (std::size_t j = 0; j < c; ++j) {
                    const T dyg = self.grad[base + j] * g[j];
                    px->grad[base + j] +=
                        inv * (dyg - mean_dyg - (*xhat)[base + j] * mean_dyg_xh);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace detail {

struct ConvGeometry {
    std::size_t c_in, h, w;
    std::size_t c_out, kh, kw;
    std::size_t stride, pad, groups;
    std::size_t oh, ow;
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w,
                                  std::size_t stride, std::size_t pad,
                                  std::size_t groups) {
    if (x.size() != 3) {
        throw ShapeError("conv2d: input must be [C,H,W], got " + shape_str(x));
    }
    if (w.size() != 4) {
        throw ShapeError("conv2d: weight must be [C_out,C_in/g,kh,kw], got " +
                         shape_str(w));
    }
    ConvGeometry g{};
    g.c_in = x[0];
    g.h = x[1];
    g.w = x[2];
    g.c_out = w[0];
    g.kh = w[2];
    g.kw = w[3];
    g.stride = stride;
    g.pad = pad;
    g.groups = groups;
    if (groups == 0 || g.c_in % groups != 0 || g.c_out % groups != 0) {
        throw GeometryError("conv2d: groups " + std::to_string(groups) +
                            " does not divide channels " + std::to_string(g.c_in) +
                            "/" + std::to_string(g.c_out));
    }
    if (w[1] != g.c_in / groups) {
        throw ShapeError("conv2d: weight in-channels " + std::to_string(w[1]) +
                         " != C_in/groups = " + std::to_string(g.c_in / groups));
    }
    if (stride == 0) throw GeometryError("conv2d: stride must be positive");
    const std::ptrdiff_t oh =
        (static_cast<std::ptrdiff_t>(g.h) + 2 * static_cast<std::ptrdiff_t>(pad) -
         static_cast<std::ptrdiff_t>(g.kh)) / static_cast<std::ptrdiff_t>(stride) + 1;
    const std::ptrdiff_t ow =
        (static_cast<std::ptrdiff_t>(g.w) + 2 * static_cast<std::ptrdiff_t>(pad) -
         static_cast<std::ptrdiff_t>(g.kw)) / static_cast<std::ptrdiff_t>(stride) + 1;
    if (oh < 1 || ow < 1 ||
        g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw) {
        throw GeometryError("conv2d: kernel " + std::to_string(g.kh) + "x" +
                            std::to_string(g.kw) + " stride " +
                            std::to_string(stride) + " pad " + std::to_string(pad) +
                            " does not fit input " + shape_str(x));
    }
    g.oh = static_cast<std::size_t>(oh);
    g.ow = static_cast<std::size_t>(ow);
    return g;
}

// Patch matrix for one channel group: rows index (ci,ky,kx), columns index
// output pixels. Zero padding.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, std::size_t group,
            std::vector<T>& cols) {
    const std::size_t cg = g.c_in / g.groups;
    const std::size_t pixels = g.oh * g.ow;
    cols.assign(cg * g.kh * g.kw * pixels, T(0));
    const T* xg = x + group * cg * g.h * g.w;
    for (std::size_t ci = 0; ci < cg; ++ci) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                T* row = cols.data() + ((ci * g.kh + ky) * g.kw + kx) * pixels;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                        static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        row[oy * g.ow + ox] =
                            xg[(ci * g.h + static_cast<std::size_t>(iy)) * g.w +
                               static_cast<std::size_t>(ix)];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_accumulate(const std::vector<T>& cols, const ConvGeometry& g,
                       std::size_t group, T* dx) {
    const std::size_t cg = g.c_in / g.groups;
    const std::size_t pixels = g.oh * g.ow;
    T* xg = dx + group * cg * g.h * g.w;
    for (std::size_t ci = 0; ci < cg; ++ci) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const T* row = cols.data() + ((ci * g.kh + ky) * g.kw + kx) * pixels;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                        static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        xg[(ci * g.h + static_cast<std::size_t>(iy)) * g.w +
                           static_cast<std::size_t>(ix)] += row[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// Cross-correlation (no kernel flip) with zero padding, the deep-learning
// convention. bias may be an empty handle.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad, std::size_t groups = 1) {
    const detail::ConvGeometry g =
        detail::conv_geometry(x.shape(), w.shape(), stride, pad, groups);
    if (bias.defined() && (bias.rank() != 1 || bias.extent(0) != g.c_out)) {
        throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) +
                         " != [" + std::to_string(g.c_out) + "]");
    }
    const std::size_t cg_out = g.c_out / g.groups;
    const std::size_t patch = (g.c_in / g.groups) * g.kh * g.kw;
    const std::size_t pixels = g.oh * g.ow;

    std::vector<T> out(g.c_out * pixels);
    auto cols_groups = std::make_shared<std::vector<std::vector<T>>>(g.groups);
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
        detail::im2col(x.data(), g, grp, (*cols_groups)[grp]);
        kernels::table<T>().gemm(w.data() + grp * cg_out * patch,
                                 (*cols_groups)[grp].data(),
                                 out.data() + grp * cg_out * pixels,
                                 cg_out, patch, pixels, false);
    }
    if (bias.defined()) {
        for (std::size_t co = 0; co < g.c_out; ++co) {
            const T b = bias.data()[co];
            T* row = out.data() + co * pixels;
            for (std::size_t i = 0; i < pixels; ++i) row[i] += b;
        }
    }

    std::vector<Tensor<T>> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    const bool has_bias = bias.defined();
    return detail::make_op<T>(
        Shape{g.c_out, g.oh, g.ow}, std::move(out), std::move(inputs),
        [g, cg_out, patch, pixels, cols_groups, has_bias](detail::TensorNode<T>& self) {
            auto& px = self.parents[0];
            auto& pw = self.parents[1];
            const auto& kt = kernels::table<T>();
            if (has_bias) {
                auto& pb = self.parents[2];
                if (pb->requires_grad) {
                    pb->ensure_grad();
                    for (std::size_t co = 0; co < g.c_out; ++co) {
                        pb->grad[co] +=
                            kt.reduce_sum(self.grad.data() + co * pixels, pixels);
                    }
                }
            }
            std::vector<T> tmp;
            for (std::size_t grp = 0; grp < g.groups; ++grp) {
                const T* dy = self.grad.data() + grp * cg_out * pixels;
                const auto& cols = (*cols_groups)[grp];
                if (pw->requires_grad) {
                    pw->ensure_grad();
                    tmp.resize(pixels * patch);
                    kt.transpose(cols.data(), tmp.data(), patch, pixels);
                    kt.gemm(dy, tmp.data(), pw->grad.data() + grp * cg_out * patch,
                            cg_out, pixels, patch, true);
                }
                if (px->requires_grad) {
                    px->ensure_grad();
                    tmp.resize(patch * cg_out);
                    kt.transpose(pw->data.data() + grp * cg_out * patch, tmp.data(),
                                 cg_out, patch);
                    std::vector<T> dcols(patch * pixels);
                    kt.gemm(tmp.data(), dy, dcols.data(), patch, cg_out, pixels,
                            false);
                    detail::col2im_accumulate(dcols, g, grp, px->grad.data());
                }
            }
        });
}

// ---------------------------------------------------------------------------
// bilinear_resize
// ---------------------------------------------------------------------------

namespace detail {

struct ResizeTap {
    std::size_t i0, i1;
    double w1;  // weight of i1; i0 gets (1 - w1)
};

inline std::vector<ResizeTap> resize_taps(std::size_t in, std::size_t out,
                                          bool align_corners) {
    std::vector<ResizeTap> taps(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src;
        if (align_corners) {
            src = out > 1 ? static_cast<double>(i) *
                                (static_cast<double>(in) - 1.0) /
                                (static_cast<double>(out) - 1.0)
                          : 0.0;
        } else {
            src = (static_cast<double>(i) + 0.5) * static_cast<double>(in) /
                      static_cast<double>(out) - 0.5;
        }
        src = std::clamp(src, 0.0, static_cast<double>(in) - 1.0);
        const std::size_t i0 = static_cast<std::size_t>(src);
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        taps[i] = {i0, i1, src - static_cast<double>(i0)};
    }
    return taps;
}

}  // namespace detail

// Standard bilinear interpolation over [C,H,W]. With align_corners the
// corner pixels map exactly onto each other; without it sample positions use
// half-pixel centers clamped to the input (the decoder path uses the latter).
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h,
                          std::size_t out_w, bool align_corners) {
    if (x.rank() != 3) {
        throw ShapeError("bilinear_resize: input must be [C,H,W], got " +
                         shape_str(x.shape()));
    }
    if (out_h == 0 || out_w == 0) {
        throw ShapeError("bilinear_resize: output extents must be positive");
    }
    const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    if (out_h == h && out_w == w) {
        // exact identity; keeps score fusion at scale 1.0 bit-identical
        std::vector<T> out(x.values().begin(), x.values().end());
        return detail::make_op<T>(x.shape(), std::move(out), {x},
                                  [](detail::TensorNode<T>& self) {
            auto& par = self.parents[0];
            par->ensure_grad();
            kernels::table<T>().axpy(T(1), self.grad.data(), par->grad.data(),
                                     self.grad.size());
        });
    }
    const auto ty = detail::resize_taps(h, out_h, align_corners);
    const auto tx = detail::resize_taps(w, out_w, align_corners);
    std::vector<T> out(c * out_h * out_w);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T* xc = x.data() + ch * h * w;
        T* oc = out.data() + ch * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const auto& a = ty[oy];
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const auto& b = tx[ox];
                const double v =
                    (1.0 - a.w1) * ((1.0 - b.w1) * xc[a.i0 * w + b.i0] +
                                    b.w1 * xc[a.i0 * w + b.i1]) +
                    a.w1 * ((1.0 - b.w1) * xc[a.i1 * w + b.i0] +
                            b.w1 * xc[a.i1 * w + b.i1]);
                oc[oy * out_w + ox] = static_cast<T>(v);
            }
        }
    }
    return detail::make_op<T>(
        Shape{c, out_h, out_w}, std::move(out), {x},
        [c, h, w, out_h, out_w, ty, tx](detail::TensorNode<T>& self) {
            auto& par = self.parents[0];
            par->ensure_grad();
            for (std::size_t ch = 0; ch < c; ++ch) {
                T* gx = par->grad.data() + ch * h * w;
                const T* gy = self.grad.data() + ch * out_h * out_w;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const auto& a = ty[oy];
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const auto& b = tx[ox];
                        const T g = gy[oy * out_w + ox];
                        gx[a.i0 * w + b.i0] +=
                            static_cast<T>((1.0 - a.w1) * (1.0 - b.w1)) * g;
                        gx[a.i0 * w + b.i1] +=
                            static_cast<T>((1.0 - a.w1) * b.w1) * g;
                        gx[a.i1 * w + b.i0] +=
                            static_cast<T>(a.w1 * (1.0 - b.w1)) * g;
                        gx[a.i1 * w + b.i1] += static_cast<T>(a.w1 * b.w1) * g;
                    }
                }
            }
        });
}

// Mirror of the W axis of a [C,H,W] map; inference-only utility.
template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& x) {
    if (x.rank() != 3) {
        throw ShapeError("flip_horizontal: input must be [C,H,W], got " +
                         shape_str(x.shape()));
    }
    const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    std::vector<T> out(x.numel());
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < h; ++y) {
            const T* row = x.data() + (ch * h + y) * w;
            T* orow = out.data() + (ch * h + y) * w;
            for (std::size_t i = 0; i < w; ++i) orow[i] = row[w - 1 - i];
        }
    }
    return Tensor<T>::from_vector(x.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

template <typename T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward: root must be a scalar tensor");
    }
    auto root = loss.node();
    if (!root->requires_grad) return;

    // Depth-first topological order over grad-requiring nodes.
    std::vector<detail::TensorNode<T>*> order;
    std::unordered_set<detail::TensorNode<T>*> seen;
    std::vector<std::pair<detail::TensorNode<T>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            detail::TensorNode<T>* parent = node->parents[idx].get();
            ++idx;
            if (parent->requires_grad && !seen.count(parent)) {
                seen.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorNode<T>* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

}  // namespace miniseg
