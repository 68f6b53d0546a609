#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

namespace obsv {

// Exponent multi-index. All keys of one polynomial have the same length.
using Mono = std::vector<int>;

inline int mono_degree(const Mono& m) { return std::accumulate(m.begin(), m.end(), 0); }

// Graded lexicographic order: total degree first, then lex. Gives printers
// and iteration a deterministic term order.
struct GradedLex {
    bool operator()(const Mono& a, const Mono& b) const {
        int da = mono_degree(a);
        int db = mono_degree(b);
        if (da != db) return da < db;
        size_t n = std::max(a.size(), b.size());
        for (size_t i = 0; i < n; ++i) {
            int ea = i < a.size() ? a[i] : 0;
            int eb = i < b.size() ? b[i] : 0;
            if (ea != eb) return ea > eb;  // earlier variables rank higher within a degree
        }
        return false;
    }
};

inline double factorial(int k) {
    double f = 1.0;
    for (int i = 2; i <= k; ++i) f *= i;
    return f;
}

inline double mono_factorial(const Mono& m) {
    double f = 1.0;
    for (int e : m) f *= factorial(e);
    return f;
}

// All multi-indices of length n with total degree <= order, graded-lex sorted.
inline std::vector<Mono> monos_up_to(int n, int order) {
    std::vector<Mono> out;
    Mono cur(static_cast<size_t>(n), 0);
    auto rec = [&](auto&& self, int pos, int remaining) -> void {
        if (pos == n) {
            out.push_back(cur);
            return;
        }
        for (int e = 0; e <= remaining; ++e) {
            cur[static_cast<size_t>(pos)] = e;
            self(self, pos + 1, remaining - e);
        }
        cur[static_cast<size_t>(pos)] = 0;
    };
    rec(rec, 0, order);
    std::sort(out.begin(), out.end(), GradedLex{});
    return out;
}

}  // namespace obsv
