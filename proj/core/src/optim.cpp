#include "crossl/optim.hpp"

#include <cmath>

namespace crossl {

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::vector<Parameter>& params) {
    if (m_.empty()) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const auto& p : params) {
            m_.push_back(Tensor::zeros(p.value().shape));
            v_.push_back(Tensor::zeros(p.value().shape));
        }
    }
    if (m_.size() != params.size()) {
        throw shape_error("Adam: parameter count changed between steps");
    }

    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));

    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = params[i];
        p.node->ensure_grad();
        if (p.trainable) {
            double* pv = p.value().values.data();
            double* pg = p.grad().values.data();
            double* pm = m_[i].values.data();
            double* psv = v_[i].values.data();
            const std::size_t n = p.value().size();
            for (std::size_t j = 0; j < n; ++j) {
                pm[j] = beta1_ * pm[j] + (1.0 - beta1_) * pg[j];
                psv[j] = beta2_ * psv[j] + (1.0 - beta2_) * pg[j] * pg[j];
                const double mhat = pm[j] / bc1;
                const double vhat = psv[j] / bc2;
                pv[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
        std::fill(p.grad().values.begin(), p.grad().values.end(), 0.0);
    }
}

} // namespace crossl
