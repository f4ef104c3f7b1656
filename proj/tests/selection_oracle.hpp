#pragma once

// Reference greedy selector used by the selection tests and the acceptance
// runner. Recomputes every set distance and every normalisation range from
// scratch at each step; shares nothing with the incremental implementation
// beyond the input data.

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <vector>

namespace madeval::testing {

struct OracleInput {
    std::vector<std::string> ids;           // ascending
    std::vector<double> d1;                 // per candidate
    std::vector<std::vector<double>> feat;  // per candidate
};

inline double oracle_feature_mse(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += (a[k] - b[k]) * (a[k] - b[k]);
    return acc / static_cast<double>(a.size());
}

/// Returns picked ids in order. `blocked` ids are never picked but stay in the
/// D2 normalisation population.
inline std::vector<std::string> oracle_greedy(const OracleInput& in, int k, double lambda1, bool normalize,
                                              bool use_mean = false, const std::set<std::string>& blocked = {}) {
    const std::size_t n = in.ids.size();
    auto norm = [&](double v, double lo, double hi) { return hi > lo ? (v - lo) / (hi - lo) : 0.0; };
    const double d1_lo = *std::min_element(in.d1.begin(), in.d1.end());
    const double d1_hi = *std::max_element(in.d1.begin(), in.d1.end());

    std::vector<std::size_t> picked;
    std::vector<bool> taken(n, false);
    for (int step = 0; step < k; ++step) {
        std::vector<double> d2(n, 0.0);
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        if (!picked.empty()) {
            for (std::size_t c = 0; c < n; ++c) {
                if (taken[c]) continue;
                double agg = use_mean ? 0.0 : std::numeric_limits<double>::infinity();
                for (std::size_t s : picked) {
                    const double d = oracle_feature_mse(in.feat[c], in.feat[s]);
                    agg = use_mean ? agg + d : std::min(agg, d);
                }
                if (use_mean) agg /= static_cast<double>(picked.size());
                d2[c] = agg;
                lo = std::min(lo, agg);
                hi = std::max(hi, agg);
            }
        }
        std::size_t best = n;
        double best_total = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < n; ++c) {
            if (taken[c] || blocked.count(in.ids[c])) continue;
            const double t1 = normalize ? norm(in.d1[c], d1_lo, d1_hi) : in.d1[c];
            const double t2 = picked.empty() ? 0.0 : (normalize ? norm(d2[c], lo, hi) : d2[c]);
            const double total = t1 + lambda1 * t2;
            if (total > best_total) {  // strict: earlier (smaller) id wins ties
                best_total = total;
                best = c;
            }
        }
        if (best == n) break;
        taken[best] = true;
        picked.push_back(best);
    }
    std::vector<std::string> out;
    for (std::size_t p : picked) out.push_back(in.ids[p]);
    return out;
}

}  // namespace madeval::testing
