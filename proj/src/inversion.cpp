// SPDX-License-Identifier: Apache-2.0
#include "ilm/inversion.hpp"

#include <set>

namespace ilm {

TokenMetrics token_metrics(const std::vector<int>& pred, const std::vector<int>& ref) {
    std::set<int> up(pred.begin(), pred.end());
    std::set<int> ur(ref.begin(), ref.end());
    size_t inter = 0;
    for (int t : ur)
        if (up.count(t)) ++inter;

    TokenMetrics m;
    if (ur.empty())
        m.recall = up.empty() ? 1.0 : 0.0;
    else
        m.recall = static_cast<double>(inter) / static_cast<double>(ur.size());
    if (up.empty())
        m.precision = ur.empty() ? 1.0 : 0.0;
    else
        m.precision = static_cast<double>(inter) / static_cast<double>(up.size());
    m.f1 = (m.precision + m.recall) == 0.0
               ? 0.0
               : 2.0 * m.precision * m.recall / (m.precision + m.recall);

    if (ref.empty()) {
        m.positional_accuracy = pred.empty() ? 1.0 : 0.0;
    } else {
        size_t matches = 0;
        size_t upto = std::min(pred.size(), ref.size());
        for (size_t i = 0; i < upto; ++i)
            if (pred[i] == ref[i]) ++matches;
        m.positional_accuracy = static_cast<double>(matches) / static_cast<double>(ref.size());
    }
    return m;
}

}  // namespace ilm
