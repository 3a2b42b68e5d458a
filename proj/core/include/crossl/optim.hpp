#pragma once

#include <string>
#include <vector>

#include "crossl/autodiff.hpp"

namespace crossl {

// A named trainable leaf of the graph. The Var persists across forward
// passes; its grad accumulates until the optimizer zeroes it.
struct Parameter {
    std::string name;
    Var node;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Tensor value, bool train = true)
        : name(std::move(n)), node(leaf(std::move(value))), trainable(train) {}

    Tensor& value() { return node->value; }
    const Tensor& value() const { return node->value; }
    Tensor& grad() { return node->grad; }
    const Tensor& grad() const { return node->grad; }
};

// Standard Adam with bias correction. Moments are kept per parameter slot;
// frozen parameters are skipped entirely (values, moments) but all grads are
// zeroed after each step so accumulation starts fresh.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);

    void step(std::vector<Parameter>& params);
    std::uint64_t step_count() const { return t_; }
    double learning_rate() const { return lr_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

} // namespace crossl
