#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace crossl {

// Per-class F1 = 2PR/(P+R); a class with P+R = 0 scores 0 and still counts
// toward the unweighted mean, so never-predicted classes drag the macro down.
struct MacroF1 {
    double macro = 0.0;
    std::vector<double> per_class;
};

MacroF1 macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels,
                 std::size_t num_classes);

} // namespace crossl
