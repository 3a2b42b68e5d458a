#include "crossl/loss.hpp"

#include <cmath>

namespace crossl {

void LossWeights::validate() const {
    if (lambda_inv < 0.0 || mu_var < 0.0 || nu_cov < 0.0) {
        throw config_error("loss: weights must be >= 0");
    }
    if (gamma <= 0.0) throw config_error("loss: gamma must be > 0");
    if (eps_var <= 0.0) throw config_error("loss: eps must be > 0");
}

namespace {

void check_batch(const Var& z, const char* what, std::size_t min_n) {
    if (z->value.rank() != 2) {
        throw shape_error(std::string(what) + ": expected [N,D], got " +
                          shape_to_string(z->value.shape));
    }
    if (z->value.shape[0] < min_n) {
        throw shape_error(std::string(what) + ": batch of " +
                          std::to_string(z->value.shape[0]) + " too small (need >= " +
                          std::to_string(min_n) + ")");
    }
}

Var make_scalar_op(double value, std::vector<Var> parents, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = Tensor::scalar(value);
    for (const auto& p : parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    n->parents = std::move(parents);
    if (n->requires_grad) n->backward_fn = std::move(bw);
    return n;
}

std::vector<double> column_means(const Tensor& z) {
    const std::size_t n = z.shape[0], d = z.shape[1];
    std::vector<double> mu(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = z.values.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) mu[j] += row[j];
    }
    for (double& m : mu) m /= static_cast<double>(n);
    return mu;
}

} // namespace

Var invariance_term(const Var& z1, const Var& z2) {
    check_batch(z1, "invariance_term", 1);
    if (!z1->value.same_shape(z2->value)) {
        throw shape_error("invariance_term: shapes " + shape_to_string(z1->value.shape) +
                          " vs " + shape_to_string(z2->value.shape));
    }
    const std::size_t n = z1->value.shape[0], d = z1->value.shape[1];
    const double inv_nd = 1.0 / (static_cast<double>(n) * static_cast<double>(d));
    double acc = 0.0;
    for (std::size_t i = 0; i < z1->value.size(); ++i) {
        const double diff = z1->value.values[i] - z2->value.values[i];
        acc += diff * diff;
    }
    acc *= inv_nd;

    return make_scalar_op(acc, {z1, z2}, [inv_nd](Node& self) {
        Node& a = *self.parents[0];
        Node& b = *self.parents[1];
        const double g = self.grad.values[0];
        if (a.requires_grad) a.ensure_grad();
        if (b.requires_grad) b.ensure_grad();
        for (std::size_t i = 0; i < a.value.size(); ++i) {
            const double d2 = 2.0 * (a.value.values[i] - b.value.values[i]) * inv_nd * g;
            if (a.requires_grad) a.grad.values[i] += d2;
            if (b.requires_grad) b.grad.values[i] -= d2;
        }
    });
}

Var variance_term(const Var& z, double gamma, double eps_var) {
    check_batch(z, "variance_term", 2);
    const std::size_t n = z->value.shape[0], d = z->value.shape[1];
    const auto mu = column_means(z->value);

    std::vector<double> stds(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dv = z->value.values[i * d + j] - mu[j];
            var += dv * dv;
        }
        var /= static_cast<double>(n);
        stds[j] = std::sqrt(var + eps_var);
    }

    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += std::max(0.0, gamma - stds[j]);
    acc /= static_cast<double>(d);

    auto mu_p = std::make_shared<std::vector<double>>(mu);
    auto std_p = std::make_shared<std::vector<double>>(stds);
    return make_scalar_op(acc, {z}, [mu_p, std_p, gamma, n, d](Node& self) {
        Node& zn = *self.parents[0];
        if (!zn.requires_grad) return;
        zn.ensure_grad();
        const double g = self.grad.values[0];
        // d/dz_ij of (1/D) max(0, gamma - sqrt(var_j + eps)):
        //   active hinge: -(z_ij - mu_j) / (D * N * std_j)
        for (std::size_t j = 0; j < d; ++j) {
            if (gamma - (*std_p)[j] <= 0.0) continue;
            const double coef = -g / (static_cast<double>(d) * static_cast<double>(n) * (*std_p)[j]);
            for (std::size_t i = 0; i < n; ++i) {
                zn.grad.values[i * d + j] += coef * (zn.value.values[i * d + j] - (*mu_p)[j]);
            }
        }
    });
}

Var covariance_term(const Var& z) {
    check_batch(z, "covariance_term", 2);
    const std::size_t n = z->value.shape[0], d = z->value.shape[1];
    const auto mu = column_means(z->value);

    // Centered copy and covariance matrix C = Zc^T Zc / (N-1).
    auto zc = std::make_shared<Tensor>(z->value);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) zc->values[i * d + j] -= mu[j];

    auto cov = std::make_shared<Tensor>(Tensor::zeros({d, d}));
    const double inv_nm1 = 1.0 / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = zc->values.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            const double v = row[j];
            double* crow = cov->values.data() + j * d;
            for (std::size_t k = 0; k < d; ++k) crow[k] += v * row[k];
        }
    }
    for (double& v : cov->values) v *= inv_nm1;

    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < d; ++k)
            if (j != k) acc += cov->values[j * d + k] * cov->values[j * d + k];
    acc /= static_cast<double>(d);

    return make_scalar_op(acc, {z}, [zc, cov, inv_nm1, n, d](Node& self) {
        Node& zn = *self.parents[0];
        if (!zn.requires_grad) return;
        zn.ensure_grad();
        const double g = self.grad.values[0];
        // dL/dC_jk = (2/D) C_jk off-diagonal; dL/dZc = Zc (G + G^T)/(N-1) with
        // G symmetric zero-diagonal, and the centering correction vanishes
        // because Zc columns sum to zero.
        const double coef = g * 4.0 * inv_nm1 / static_cast<double>(d);
        for (std::size_t i = 0; i < n; ++i) {
            const double* zrow = zc->values.data() + i * d;
            double* grow = zn.grad.values.data() + i * d;
            for (std::size_t k = 0; k < d; ++k) {
                double acc2 = 0.0;
                const double* ccol = cov->values.data() + k;
                for (std::size_t j = 0; j < d; ++j) {
                    if (j == k) continue;
                    acc2 += zrow[j] * ccol[j * d];
                }
                grow[k] += coef * acc2;
            }
        }
    });
}

TotalLoss total_loss(const Var& z1, const Var& z2, const LossWeights& w) {
    w.validate();
    check_batch(z1, "total_loss", 2);
    check_batch(z2, "total_loss", 2);

    Var s = invariance_term(z1, z2);
    Var v1 = variance_term(z1, w.gamma, w.eps_var);
    Var v2 = variance_term(z2, w.gamma, w.eps_var);
    Var c1 = covariance_term(z1);
    Var c2 = covariance_term(z2);

    Var total = add(scale(s, w.lambda_inv),
                    add(scale(add(v1, v2), w.mu_var), scale(add(c1, c2), w.nu_cov)));

    TotalLoss out;
    out.node = total;
    out.breakdown.invariance = s->value.item();
    out.breakdown.variance_v1 = v1->value.item();
    out.breakdown.variance_v2 = v2->value.item();
    out.breakdown.covariance_v1 = c1->value.item();
    out.breakdown.covariance_v2 = c2->value.item();
    out.breakdown.total = total->value.item();
    return out;
}

double invariance_value(const Tensor& z1, const Tensor& z2) {
    return invariance_term(constant(z1), constant(z2))->value.item();
}

double variance_value(const Tensor& z, double gamma, double eps_var) {
    return variance_term(constant(z), gamma, eps_var)->value.item();
}

double covariance_value(const Tensor& z) {
    return covariance_term(constant(z))->value.item();
}

LossBreakdown total_loss_value(const Tensor& z1, const Tensor& z2, const LossWeights& w) {
    return total_loss(constant(z1), constant(z2), w).breakdown;
}

} // namespace crossl
