#pragma once

// Shared helpers for the unit and acceptance suites: random tensors and a
// central finite-difference gradient checker. The checker is the independent
// oracle for every differentiable op, so it deliberately re-runs the forward
// closure instead of reusing any adjoint code.

#include <cmath>
#include <functional>
#include <vector>

#include "crossl/autodiff.hpp"
#include "crossl/rng.hpp"

namespace crossl::test {

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.values) v = rng.normal() * scale;
    return t;
}

inline Tensor random_uniform_tensor(std::vector<std::size_t> shape, Rng& rng, double lo,
                                    double hi) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.values) v = lo + (hi - lo) * rng.uniform();
    return t;
}

struct GradCheck {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

// Central finite differences at step h against the recorded adjoints.
// forward() must rebuild the graph from the current leaf values and return a
// scalar. Relative error uses max(|analytic|, |numeric|, 1e-3) as the
// denominator so near-zero gradients are compared absolutely at 1e-3 scale.
inline GradCheck gradient_check(const std::vector<Var>& leaves,
                                const std::function<Var()>& forward, double h = 1e-5) {
    for (const auto& l : leaves) {
        l->ensure_grad();
        std::fill(l->grad.values.begin(), l->grad.values.end(), 0.0);
    }
    Var loss = forward();
    backward(loss);

    std::vector<Tensor> analytic;
    analytic.reserve(leaves.size());
    for (const auto& l : leaves) analytic.push_back(l->grad);

    GradCheck result;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor& value = leaves[li]->value;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double orig = value.values[i];
            value.values[i] = orig + h;
            const double f_plus = forward()->value.item();
            value.values[i] = orig - h;
            const double f_minus = forward()->value.item();
            value.values[i] = orig;
            const double numeric = (f_plus - f_minus) / (2.0 * h);
            const double a = analytic[li].values[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
            result.max_rel_err = std::max(result.max_rel_err, std::abs(a - numeric) / denom);
            ++result.checked;
        }
    }
    return result;
}

} // namespace crossl::test
