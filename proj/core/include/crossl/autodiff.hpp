#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "crossl/tensor.hpp"

namespace crossl {

// One node of the dynamically recorded computation graph. Graphs are rebuilt
// per forward pass; leaves (parameters, or inputs whose gradient a caller
// wants) persist across passes and accumulate gradient until explicitly
// zeroed. Ownership follows the shared_ptr parents, so a graph is freed when
// its root handle drops.
struct Node {
    Tensor value;
    Tensor grad; // same shape as value once touched by backward()
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad();
    void accumulate_grad_from(const Tensor& g);
};

using Var = std::shared_ptr<Node>;

// Leaf constructors.
Var constant(Tensor value);         // gradient never tracked
Var leaf(Tensor value);             // gradient tracked and accumulated

// Forward ops. Every op validates shapes eagerly and records an exact
// reverse-mode adjoint; nothing broadcasts.
//
// conv1d: input [N,T,C_in], kernel [W,C_in,C_out], bias [C_out], "valid"
// padding, T_out = (T - W)/stride + 1.
Var conv1d(const Var& input, const Var& kernel, const Var& bias, std::size_t stride);
// dense: input [N,F_in] * weight [F_in,F_out] + bias [F_out].
Var dense(const Var& input, const Var& weight, const Var& bias);
Var relu(const Var& x);
// global_mean_pool: [N,T,C] -> [N,C], mean over T.
Var global_mean_pool(const Var& x);
// concat_features: rank-2 inputs [N,K_i] -> [N, sum K_i].
Var concat_features(const std::vector<Var>& xs);
// reshape: free relayout, sizes must match.
Var reshape(const Var& x, std::vector<std::size_t> shape);
// mul_tensor: elementwise product with a non-differentiated tensor (masks).
Var mul_tensor(const Var& x, Tensor factor);
Var add(const Var& a, const Var& b); // same shape
Var scale(const Var& x, double factor);
Var sum(const Var& x); // -> scalar [1]

// Mean cross-entropy of softmax(logits) against integer labels; returns a
// scalar node. Gradient w.r.t. logits is (softmax - onehot)/N.
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);

// Plain softmax probabilities (no graph), rows sum to 1.
Tensor softmax_rows(const Tensor& logits);

// Reverse-mode sweep from a scalar root: seeds d(root)/d(root) = 1 and
// accumulates into every reachable node with requires_grad set.
void backward(const Var& root);

} // namespace crossl
