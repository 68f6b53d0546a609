#pragma once

// Executable identity suite for the matrix-polynomial calculus: exact
// rational checks of the Vandermonde decomposition, the closed form of the
// top coefficient, the increment identity and degree bounds, plus the
// symbolic-vs-numeric agreement of the F maps in floating point.
//
// Compiling with OBSV_IDENTITY_MUTATION flips one sign inside the suite's
// reconstruction; the suite must then fail. Test harness use only.

#include "obsv/jets.hpp"
#include "obsv/matpoly.hpp"

#include <random>
#include <string>
#include <vector>

namespace obsv {

struct IdentityRow {
    std::string name;
    bool pass = false;
    double residual = 0.0;  // 0 for exact checks that hold
    std::string detail;     // offending polynomials, graded-lex printed
};

struct IdentityReport {
    std::vector<IdentityRow> rows;
    bool all_pass = true;

    void add(std::string name, bool pass, double residual = 0.0, std::string detail = {}) {
        rows.push_back({std::move(name), pass, residual, std::move(detail)});
        if (!pass) all_pass = false;
    }
};

struct IdentitySuiteOptions {
    int num_systems = 10;
    int max_dim = 3;
    int imax = 4;
    int kmax = 4;
    int fmap_samples = 50;
    int fmap_max_dim = 4;
    int fmap_kmax = 6;
    unsigned seed = 20240101;
};

inline IdentityReport run_identity_suite(const IdentitySuiteOptions& opt = {},
                                         const Config& cfg = default_config()) {
    if (opt.kmax + opt.imax > cfg.kmax_limit)
        throw std::invalid_argument("identity suite: imax + kmax exceeds the configured polynomial order limit");
    IdentityReport rep;
    std::mt19937 rng(opt.seed);
    std::uniform_int_distribution<int> num(-4, 4);
    std::uniform_int_distribution<int> den(1, 4);

    auto rand_mat = [&](int n) {
        MatQ m(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) m(i, j) = Rational(num(rng), den(rng));
        return m;
    };

    for (int sysi = 0; sysi < opt.num_systems; ++sysi) {
        int n = 2 + sysi % (opt.max_dim - 1);
        MatQ a = rand_mat(n), b = rand_mat(n);
        auto ps = p_sequence(a, b, opt.imax + opt.kmax, std::max(cfg.kmax_limit, opt.imax + opt.kmax));
        std::string tag = "system " + std::to_string(sysi) + " (n=" + std::to_string(n) + ")";

        bool vandermonde_ok = true, closed_ok = true, increment_ok = true, degree_ok = true;
        std::string mismatch;
        for (int i = 1; i <= opt.imax && vandermonde_ok; ++i) {
            auto rd = r_decomposition(a, b, i, cfg);
            for (int k = 0; k <= opt.kmax; ++k) {
                MatPoly<Rational> lhs = q_partial(ps[static_cast<size_t>(i + k)], i);
                MatPoly<Rational> rhs(n, 0);
                Rational node(k), pw(1);
                for (int j = 0; j < i; ++j) {
                    rhs += rd.r[static_cast<size_t>(j)] * pw;
                    pw *= node;
                }
#ifdef OBSV_IDENTITY_MUTATION
                rhs = rhs * Rational(-1);  // deliberate sign flip: the suite must notice
#endif
                if (!(lhs == rhs)) {
                    vandermonde_ok = false;
                    if (mismatch.empty())
                        mismatch = "i=" + std::to_string(i) + " k=" + std::to_string(k) + ": " + lhs.to_string() +
                                   "  !=  " + rhs.to_string();
                }
            }
            Rational fact(1);
            for (int j = 2; j < i; ++j) fact *= Rational(j);
            if (!(rd.r.back() * fact == ps[static_cast<size_t>(i - 1)].left_mul(b))) closed_ok = false;
        }
        for (int i = 1; i + 1 <= opt.imax && increment_ok; ++i)
            for (int l = 1; l <= std::min(3, opt.kmax); ++l) {
                auto lhs = q_partial(ps[static_cast<size_t>(i + 1 + l)], i + 1);
                auto rhs = psi(q_partial(ps[static_cast<size_t>(i + l)], i), a, b) +
                           q_partial(ps[static_cast<size_t>(i + l)], i + 1);
                if (!(lhs == rhs)) increment_ok = false;
            }
        for (size_t k = 0; k < ps.size(); ++k)
            if (ps[k].total_degree() > static_cast<int>(k) || ps[k].min_nvars() > static_cast<int>(k))
                degree_ok = false;

        rep.add("vandermonde decomposition, " + tag, vandermonde_ok, 0.0, mismatch);
        rep.add("top-coefficient closed form, " + tag, closed_ok);
        rep.add("increment identity, " + tag, increment_ok);
        rep.add("degree and variable bounds, " + tag, degree_ok);
    }

    if (opt.fmap_samples == 0) return rep;

    // symbolic vs numeric F maps, floating point
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    double worst = 0.0;
    bool fmap_ok = true;
    for (int t = 0; t < opt.fmap_samples; ++t) {
        int n = 2 + t % (opt.fmap_max_dim - 1);
        BilinearSystem s;
        s.A.resize(n, n);
        s.B.resize(n, n);
        s.C = Eigen::MatrixXd::Zero(1, n);
        s.b = Eigen::VectorXd::Zero(n);
        for (int i = 0; i < n; ++i) {
            s.C(0, i) = d(rng);
            for (int j = 0; j < n; ++j) {
                s.A(i, j) = d(rng);
                s.B(i, j) = d(rng);
            }
        }
        Eigen::VectorXd om(n);
        for (int i = 0; i < n; ++i) om(i) = d(rng);
        int k = 1 + t % opt.fmap_kmax;
        int m = t % n;
        Jet u;
        std::vector<double> v;
        for (int j = 0; j <= k; ++j) {
            u.d.push_back(d(rng) * factorial(j));
            if (j < k) v.push_back(u.d.back());
        }
        double sym = f_symbolic(s.A, s.B, s.C, m, k, v, om, cfg)(0);
        double numv = f_numeric(s, m, u, om, k)(0);
        double rel = std::abs(sym - numv) / (1.0 + std::abs(sym));
        worst = std::max(worst, rel);
        if (rel > 1e-8) fmap_ok = false;
    }
    rep.add("symbolic vs numeric F maps (" + std::to_string(opt.fmap_samples) + " samples)", fmap_ok, worst);
    return rep;
}

}  // namespace obsv
