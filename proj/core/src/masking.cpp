#include "crossl/masking.hpp"

#include <cstdio>

namespace crossl {

std::string MaskSpec::describe() const {
    char buf[64];
    if (strategy == Strategy::random) {
        std::snprintf(buf, sizeof(buf), "random(%.4g)", rate);
    } else {
        std::snprintf(buf, sizeof(buf), "spatial(%zu)", count);
    }
    return buf;
}

namespace {

void validate_spec(const MaskSpec& spec, std::size_t m) {
    if (spec.strategy == MaskSpec::Strategy::random) {
        if (spec.rate < 0.0 || spec.rate > 1.0) {
            throw config_error("masking: rate " + std::to_string(spec.rate) +
                               " outside [0,1]");
        }
    } else {
        if (spec.count > m) {
            throw config_error("masking: spatial count " + std::to_string(spec.count) +
                               " exceeds modality count " + std::to_string(m));
        }
    }
}

} // namespace

MaskMatrix sample_mask(const MaskSpec& spec, std::size_t n, std::size_t m,
                       std::size_t k, Rng& rng) {
    validate_spec(spec, m);
    MaskMatrix mask;
    mask.bits = Tensor::full({n, m, k}, 1.0);
    if (spec.strategy == MaskSpec::Strategy::random) {
        if (spec.rate == 0.0) return mask;
        for (double& b : mask.bits.values) {
            if (rng.uniform() < spec.rate) b = 0.0;
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            auto dropped = rng.sample_without_replacement(m, spec.count);
            for (std::size_t mod : dropped) {
                double* row = mask.bits.values.data() + (i * m + mod) * k;
                for (std::size_t j = 0; j < k; ++j) row[j] = 0.0;
            }
        }
    }
    return mask;
}

std::pair<MaskMatrix, MaskMatrix> sample_masks(const MaskSpec& spec, std::size_t n,
                                               std::size_t m, std::size_t k, Rng& rng) {
    MaskMatrix a = sample_mask(spec, n, m, k, rng);
    MaskMatrix b = sample_mask(spec, n, m, k, rng);
    return {std::move(a), std::move(b)};
}

MaskMatrix forced_modality_mask(const BoolMatrix& available, std::size_t k) {
    MaskMatrix mask;
    mask.bits = Tensor::full({available.rows, available.cols, k}, 1.0);
    for (std::size_t i = 0; i < available.rows; ++i) {
        for (std::size_t m = 0; m < available.cols; ++m) {
            if (!available.get(i, m)) {
                double* row = mask.bits.values.data() + (i * available.cols + m) * k;
                for (std::size_t j = 0; j < k; ++j) row[j] = 0.0;
            }
        }
    }
    return mask;
}

MaskMatrix intersect(const MaskMatrix& a, const MaskMatrix& b) {
    if (a.bits.shape != b.bits.shape) {
        throw shape_error("mask intersect: shapes " + shape_to_string(a.bits.shape) +
                          " vs " + shape_to_string(b.bits.shape));
    }
    MaskMatrix out = a;
    for (std::size_t i = 0; i < out.bits.values.size(); ++i) {
        out.bits.values[i] = (a.bits.values[i] != 0.0 && b.bits.values[i] != 0.0) ? 1.0 : 0.0;
    }
    return out;
}

Var apply_mask(const Var& q, const MaskMatrix& mask) {
    if (q->value.shape != mask.bits.shape) {
        throw shape_error("apply_mask: embedding " + shape_to_string(q->value.shape) +
                          " vs mask " + shape_to_string(mask.bits.shape));
    }
    return mul_tensor(q, mask.bits);
}

Tensor apply_mask(const Tensor& q, const MaskMatrix& mask) {
    if (q.shape != mask.bits.shape) {
        throw shape_error("apply_mask: embedding " + shape_to_string(q.shape) +
                          " vs mask " + shape_to_string(mask.bits.shape));
    }
    Tensor out = q;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= mask.bits.values[i];
    return out;
}

} // namespace crossl
