#pragma once

// Brute-force Wilcoxon signed-rank reference: enumerates every sign pattern.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace oracle {

struct Wilcoxon {
    double w_plus = 0.0;
    double w_minus = 0.0;
    double w = 0.0;
    double p = 1.0;
    std::size_t n = 0;
};

inline Wilcoxon wilcoxon_enumerate(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> d;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] != y[i]) d.push_back(x[i] - y[i]);
    }
    const std::size_t n = d.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
    // doubled ranks keep tie averages integral
    std::vector<std::int64_t> rank2(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = static_cast<std::int64_t>(i + j + 2);
        i = j + 1;
    }
    std::int64_t plus2 = 0, total2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        total2 += rank2[i];
        if (d[i] > 0) plus2 += rank2[i];
    }
    const std::int64_t w2 = std::min(plus2, total2 - plus2);
    std::uint64_t count = 0;
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
        std::int64_t s = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask >> i & 1U) s += rank2[i];
        }
        if (s <= w2) ++count;
    }
    Wilcoxon r;
    r.n = n;
    r.w_plus = static_cast<double>(plus2) / 2.0;
    r.w_minus = static_cast<double>(total2 - plus2) / 2.0;
    r.w = static_cast<double>(w2) / 2.0;
    r.p = std::min(1.0, 2.0 * static_cast<double>(count) / std::ldexp(1.0, static_cast<int>(n)));
    return r;
}

}  // namespace oracle
