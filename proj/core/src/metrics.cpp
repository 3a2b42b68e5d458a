#include "crossl/metrics.hpp"

#include <stdexcept>
#include <string>

namespace crossl {

MacroF1 macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels,
                 std::size_t num_classes) {
    if (predictions.size() != labels.size()) {
        throw std::invalid_argument("macro_f1: " + std::to_string(predictions.size()) +
                                    " predictions for " + std::to_string(labels.size()) +
                                    " labels");
    }
    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        const int p = predictions[i];
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes || p < 0 ||
            static_cast<std::size_t>(p) >= num_classes) {
            throw std::out_of_range("macro_f1: class id outside [0, " +
                                    std::to_string(num_classes) + ") at index " +
                                    std::to_string(i));
        }
        if (p == y) {
            ++tp[static_cast<std::size_t>(y)];
        } else {
            ++fp[static_cast<std::size_t>(p)];
            ++fn[static_cast<std::size_t>(y)];
        }
    }

    MacroF1 out;
    out.per_class.resize(num_classes, 0.0);
    double total = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
        out.per_class[c] = denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
        total += out.per_class[c];
    }
    out.macro = total / static_cast<double>(num_classes);
    return out;
}

} // namespace crossl
