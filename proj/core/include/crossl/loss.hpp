#pragma once

#include "crossl/autodiff.hpp"

namespace crossl {

// Coefficients of the self-supervised objective
//   L = lambda * s(Z1,Z2) + mu * [v(Z1) + v(Z2)] + nu * [c(Z1) + c(Z2)]
// Defaults follow the tuned values (10, 10, 100); gamma is the target batch
// standard deviation of each embedding dimension and eps keeps the sqrt away
// from zero.
struct LossWeights {
    double lambda_inv = 10.0;
    double mu_var = 10.0;
    double nu_cov = 100.0;
    double gamma = 1.0;
    double eps_var = 1e-4;

    void validate() const;
};

struct LossBreakdown {
    double invariance = 0.0;
    double variance_v1 = 0.0;
    double variance_v2 = 0.0;
    double covariance_v1 = 0.0;
    double covariance_v2 = 0.0;
    double total = 0.0;
};

// s(Z1,Z2) = (1/N) sum_i (1/D) sum_j (z1[i,j] - z2[i,j])^2
Var invariance_term(const Var& z1, const Var& z2);

// v(Z) = (1/D) sum_j max(0, gamma - sqrt(Var_N(z[:,j]) + eps)), population
// variance over the batch. Hinge subgradient at the kink is 0. N >= 2.
Var variance_term(const Var& z, double gamma, double eps_var);

// c(Z) = (1/D) sum_{j != j'} C[j,j']^2 with C = Zc^T Zc / (N-1) over
// column-centered Zc. N >= 2.
Var covariance_term(const Var& z);

struct TotalLoss {
    Var node;
    LossBreakdown breakdown;
};

TotalLoss total_loss(const Var& z1, const Var& z2, const LossWeights& weights);

// Value-only conveniences for evaluation code and tests.
double invariance_value(const Tensor& z1, const Tensor& z2);
double variance_value(const Tensor& z, double gamma, double eps_var);
double covariance_value(const Tensor& z);
LossBreakdown total_loss_value(const Tensor& z1, const Tensor& z2, const LossWeights& w);

} // namespace crossl
