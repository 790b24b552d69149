#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "miniseg/rng.hpp"
#include "miniseg/tensor.hpp"

// Shared test utilities. The finite-difference oracle lives here, in test
// code only, and is independent of the autograd path it checks.

namespace testing {

template <typename T>
std::vector<T> random_values(std::size_t n, miniseg::Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return v;
}

template <typename T>
miniseg::Tensor<T> random_tensor(miniseg::Shape shape, miniseg::Rng& rng,
                                 bool requires_grad = false, double lo = -1.0,
                                 double hi = 1.0) {
    auto data = random_values<T>(miniseg::shape_numel(shape), rng, lo, hi);
    return miniseg::Tensor<T>::from_vector(std::move(shape), std::move(data),
                                           requires_grad);
}

// max over elements of |a-n| / max(1, |a|+|n|)
inline double max_rel_error(const std::vector<double>& analytic,
                            const std::vector<double>& numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom =
            std::max(1.0, std::abs(analytic[i]) + std::abs(numeric[i]));
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

// Central finite differences on 64-bit scalars, h = 1e-3. `forward` maps the
// current contents of `inputs` to a scalar; the returned per-input vectors
// approximate d forward / d input element.
inline std::vector<std::vector<double>> numeric_gradient(
    const std::function<double()>& forward,
    std::vector<miniseg::Tensor<double>>& inputs, double h = 1e-3) {
    std::vector<std::vector<double>> grads;
    for (auto& t : inputs) {
        std::vector<double> g(t.numel());
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double saved = t.data()[i];
            t.data()[i] = saved + h;
            const double fp = forward();
            t.data()[i] = saved - h;
            const double fm = forward();
            t.data()[i] = saved;
            g[i] = (fp - fm) / (2.0 * h);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

// Runs backward on loss_fn(inputs) and compares every input's analytic
// gradient against the central-difference oracle. Returns the worst relative
// error across all inputs.
inline double gradcheck(
    const std::function<miniseg::Tensor<double>(
        const std::vector<miniseg::Tensor<double>>&)>& loss_fn,
    std::vector<miniseg::Tensor<double>>& inputs, double h = 1e-3) {
    miniseg::Tensor<double> loss = loss_fn(inputs);
    miniseg::backward(loss);
    auto numeric = numeric_gradient(
        [&]() { return loss_fn(inputs).item(); }, inputs, h);
    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto g = inputs[i].grad();
        std::vector<double> analytic(g.begin(), g.end());
        if (analytic.empty()) analytic.assign(inputs[i].numel(), 0.0);
        worst = std::max(worst, max_rel_error(analytic, numeric[i]));
    }
    return worst;
}

// Reduces a tensor to a scalar via a fixed random projection, so gradients
// of every output element are exercised.
template <typename T>
miniseg::Tensor<T> project_to_scalar(const miniseg::Tensor<T>& x,
                                     const std::vector<double>& proj) {
    std::vector<T> p(proj.size());
    for (std::size_t i = 0; i < proj.size(); ++i) p[i] = static_cast<T>(proj[i]);
    auto pt = miniseg::Tensor<T>::from_vector(x.shape(), std::move(p));
    return miniseg::sum(miniseg::mul(x, pt));
}

// --- plain-loop reference implementations (independent of the ops under
// test; double accumulation) ---

inline std::vector<float> oracle_linear(const std::vector<float>& x,
                                        std::size_t rows, std::size_t in,
                                        std::size_t out,
                                        const miniseg::Tensor<float>& w,
                                        const miniseg::Tensor<float>& b) {
    std::vector<float> y(rows * out, 0.0f);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < out; ++o) {
            double acc = b.data()[o];
            for (std::size_t i = 0; i < in; ++i) {
                acc += double(x[r * in + i]) * double(w.data()[i * out + o]);
            }
            y[r * out + o] = float(acc);
        }
    }
    return y;
}

inline std::vector<float> oracle_layer_norm(const std::vector<float>& x,
                                            std::size_t rows, std::size_t c,
                                            const miniseg::Tensor<float>& gamma,
                                            const miniseg::Tensor<float>& beta,
                                            double eps) {
    std::vector<float> y(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        double mu = 0, var = 0;
        for (std::size_t j = 0; j < c; ++j) mu += x[r * c + j];
        mu /= c;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = x[r * c + j] - mu;
            var += d * d;
        }
        var /= c;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            y[r * c + j] = float(gamma.data()[j] * (x[r * c + j] - mu) * inv +
                                 beta.data()[j]);
        }
    }
    return y;
}

}  // namespace testing
