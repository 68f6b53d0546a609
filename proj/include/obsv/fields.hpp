#pragma once

// Smooth scalar fields on R^n with exact evaluation of every mixed partial
// up to a requested order. Two representations: multivariate polynomials and
// sums of radial mollifier bumps, plus their sum. Derivatives come from
// closed forms, never from finite differences.

#include "obsv/config.hpp"
#include "obsv/multiindex.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

namespace obsv {

// Sparse multivariate polynomial with double coefficients; also the working
// form of a truncated Taylor expansion.
class MultiPoly {
  public:
    explicit MultiPoly(int nvars) : n_(nvars) {
        if (nvars <= 0) throw std::invalid_argument("MultiPoly: nvars must be positive");
    }

    int nvars() const { return n_; }
    const std::map<Mono, double, GradedLex>& coeffs() const { return c_; }
    bool empty() const { return c_.empty(); }

    void add(Mono m, double v) {
        if (static_cast<int>(m.size()) != n_) throw std::invalid_argument("MultiPoly: index length mismatch");
        auto it = c_.find(m);
        if (it == c_.end()) {
            if (v != 0.0) c_.emplace(std::move(m), v);
        } else {
            it->second += v;
            if (it->second == 0.0) c_.erase(it);
        }
    }

    double coeff(const Mono& m) const {
        auto it = c_.find(m);
        return it == c_.end() ? 0.0 : it->second;
    }

    int degree() const {
        int d = 0;
        for (const auto& [m, v] : c_) d = std::max(d, mono_degree(m));
        return d;
    }

    MultiPoly& operator+=(const MultiPoly& o) {
        for (const auto& [m, v] : o.c_) add(m, v);
        return *this;
    }
    friend MultiPoly operator+(MultiPoly a, const MultiPoly& b) { return a += b; }
    MultiPoly scaled(double s) const {
        MultiPoly out(n_);
        if (s == 0.0) return out;
        for (const auto& [m, v] : c_) out.add(m, v * s);
        return out;
    }

    MultiPoly mul_truncated(const MultiPoly& o, int max_degree) const {
        MultiPoly out(n_);
        for (const auto& [ma, va] : c_) {
            int da = mono_degree(ma);
            for (const auto& [mb, vb] : o.c_) {
                if (da + mono_degree(mb) > max_degree) continue;
                Mono m(ma);
                for (size_t i = 0; i < m.size(); ++i) m[i] += mb[i];
                out.add(std::move(m), va * vb);
            }
        }
        return out;
    }

    MultiPoly partial(int i) const {
        MultiPoly out(n_);
        for (const auto& [m, v] : c_) {
            if (m[static_cast<size_t>(i)] == 0) continue;
            Mono d(m);
            d[static_cast<size_t>(i)] -= 1;
            out.add(std::move(d), v * m[static_cast<size_t>(i)]);
        }
        return out;
    }

    double eval(const Eigen::VectorXd& x) const {
        double acc = 0.0;
        for (const auto& [m, v] : c_) {
            double t = v;
            for (size_t i = 0; i < m.size(); ++i)
                for (int e = 0; e < m[i]; ++e) t *= x(static_cast<Eigen::Index>(i));
            acc += t;
        }
        return acc;
    }

    // Exact re-expansion around x0: returns q with q(h) = p(x0 + h).
    MultiPoly shifted(const Eigen::VectorXd& x0) const {
        MultiPoly out(n_);
        for (const auto& [m, v] : c_) {
            MultiPoly term(n_);
            term.add(Mono(static_cast<size_t>(n_), 0), v);
            for (int i = 0; i < n_; ++i) {
                int e = m[static_cast<size_t>(i)];
                if (e == 0) continue;
                // (x0_i + h_i)^e by binomial expansion
                MultiPoly binom(n_);
                for (int j = 0; j <= e; ++j) {
                    double cj = factorial(e) / (factorial(j) * factorial(e - j));
                    double xp = 1.0;
                    for (int t = 0; t < e - j; ++t) xp *= x0(i);
                    Mono hm(static_cast<size_t>(n_), 0);
                    hm[static_cast<size_t>(i)] = j;
                    binom.add(std::move(hm), cj * xp);
                }
                term = term.mul_truncated(binom, degree());
            }
            out += term;
        }
        return out;
    }

  private:
    int n_;
    std::map<Mono, double, GradedLex> c_;
};

// Mixed partials of a scalar field at a point, up to a fixed order. This is
// the data the composition jet and the C^k norm scans consume.
struct FieldJet {
    int nvars = 0;
    int order = 0;
    std::map<Mono, double, GradedLex> partials;  // alpha -> d^alpha g(x0)

    double partial(const Mono& alpha) const {
        auto it = partials.find(alpha);
        return it == partials.end() ? 0.0 : it->second;
    }
    double taylor_coeff(const Mono& alpha) const { return partial(alpha) / mono_factorial(alpha); }
    double value() const { return partial(Mono(static_cast<size_t>(nvars), 0)); }
};

// One radial mollifier atom a * psi(|x - c|^2 / r^2), with
// psi(s) = exp(-1/(1-s)) for s < 1 and 0 beyond. Smooth and compactly
// supported on the closed ball B(c, r).
struct BumpAtom {
    Eigen::VectorXd center;
    double radius = 1.0;
    double amplitude = 0.0;
};

namespace detail {

// Coefficient table of the polynomials p_j with psi^(j)(s) = p_j(w) e^{-w},
// w = 1/(1-s); p_0 = 1, p_{j+1} = w^2 (p_j' - p_j).
inline const std::vector<std::vector<double>>& psi_poly_table(int max_order) {
    static const int kCap = 40;
    static const std::vector<std::vector<double>> table = [] {
        std::vector<std::vector<double>> t;
        t.push_back({1.0});
        for (int j = 0; j < kCap; ++j) {
            const auto& p = t.back();
            std::vector<double> next(p.size() + 2, 0.0);
            for (size_t d = 0; d < p.size(); ++d) {
                if (d >= 1) next[d + 1] += p[d] * static_cast<double>(d);  // w^2 * p'
                next[d + 2] -= p[d];                                      // w^2 * (-p)
            }
            t.push_back(std::move(next));
        }
        return t;
    }();
    if (max_order >= static_cast<int>(table.size()))
        throw std::invalid_argument("bump field: derivative order beyond supported cap");
    return table;
}

// psi^(j)(s0) for j = 0..order, exact closed forms.
inline std::vector<double> psi_derivatives(double s0, int order) {
    std::vector<double> out(static_cast<size_t>(order) + 1, 0.0);
    if (s0 >= 1.0) return out;
    double w = 1.0 / (1.0 - s0);
    if (w > 700.0) return out;  // e^{-w} underflows; all terms vanish
    double ew = std::exp(-w);
    const auto& table = psi_poly_table(order);
    for (int j = 0; j <= order; ++j) {
        double p = 0.0, wp = 1.0;
        for (double cd : table[static_cast<size_t>(j)]) {
            p += cd * wp;
            wp *= w;
        }
        out[static_cast<size_t>(j)] = p * ew;
    }
    return out;
}

}  // namespace detail

// A scalar field stored as polynomial + bump-sum; either part may be empty.
class SmoothField {
  public:
    explicit SmoothField(int n) : n_(n), poly_(n) {
        if (n <= 0) throw std::invalid_argument("SmoothField: dimension must be positive");
    }

    static SmoothField zero(int n) { return SmoothField(n); }

    static SmoothField polynomial(MultiPoly p) {
        SmoothField f(p.nvars());
        f.poly_ = std::move(p);
        return f;
    }

    static SmoothField bump_sum(int n, std::vector<BumpAtom> atoms) {
        SmoothField f(n);
        for (const auto& a : atoms)
            if (a.center.size() != n || a.radius <= 0.0)
                throw std::invalid_argument("SmoothField: malformed bump atom");
        f.atoms_ = std::move(atoms);
        return f;
    }

    // Feedback laws must vanish at the origin.
    SmoothField& require_vanishes_at_origin() {
        if (std::abs(value(Eigen::VectorXd::Zero(n_))) > 1e-14)
            throw std::invalid_argument("SmoothField: feedback must satisfy lambda(0) = 0");
        return *this;
    }

    int dim() const { return n_; }
    int order_cap() const { return 39; }  // psi derivative table limit
    const MultiPoly& poly_part() const { return poly_; }
    const std::vector<BumpAtom>& atoms() const { return atoms_; }

    SmoothField& operator+=(const SmoothField& o) {
        if (o.n_ != n_) throw std::invalid_argument("SmoothField: dimension mismatch");
        poly_ += o.poly_;
        atoms_.insert(atoms_.end(), o.atoms_.begin(), o.atoms_.end());
        return *this;
    }
    friend SmoothField operator+(SmoothField a, const SmoothField& b) { return a += b; }

    double value(const Eigen::VectorXd& x) const {
        double acc = poly_.eval(x);
        for (const auto& a : atoms_) {
            double s = (x - a.center).squaredNorm() / (a.radius * a.radius);
            if (s < 1.0) {
                double w = 1.0 / (1.0 - s);
                if (w <= 700.0) acc += a.amplitude * std::exp(-w);
            }
        }
        return acc;
    }

    // Truncated Taylor expansion at x0 in the offset h, total degree <= order.
    MultiPoly taylor(const Eigen::VectorXd& x0, int order) const {
        if (order > order_cap()) throw std::invalid_argument("SmoothField: order beyond derivative cap");
        MultiPoly out(n_);
        if (!poly_.empty()) {
            MultiPoly whole = poly_.shifted(x0);
            for (const auto& [m, v] : whole.coeffs())
                if (mono_degree(m) <= order) out.add(m, v);
        }
        for (const auto& a : atoms_) {
            double r2 = a.radius * a.radius;
            double s0 = (x0 - a.center).squaredNorm() / r2;
            auto psis = detail::psi_derivatives(s0, order);
            bool all_zero = true;
            for (double v : psis)
                if (v != 0.0) all_zero = false;
            if (all_zero) continue;
            // sigma(h) = s(x0 + h) - s0, an exact quadratic with no constant term
            MultiPoly sigma(n_);
            for (int i = 0; i < n_; ++i) {
                Mono lin(static_cast<size_t>(n_), 0);
                lin[static_cast<size_t>(i)] = 1;
                sigma.add(lin, 2.0 * (x0(i) - a.center(i)) / r2);
                Mono quad(static_cast<size_t>(n_), 0);
                quad[static_cast<size_t>(i)] = 2;
                sigma.add(quad, 1.0 / r2);
            }
            MultiPoly acc(n_);
            acc.add(Mono(static_cast<size_t>(n_), 0), psis[0]);
            MultiPoly sig_pow = sigma;
            for (int j = 1; j <= order; ++j) {
                acc += sig_pow.scaled(psis[static_cast<size_t>(j)] / factorial(j));
                if (j < order) sig_pow = sig_pow.mul_truncated(sigma, order);
            }
            out += acc.scaled(a.amplitude);
        }
        return out;
    }

    // Exact mixed partials at x0 up to `order`.
    FieldJet jet_at(const Eigen::VectorXd& x0, int order) const {
        MultiPoly t = taylor(x0, order);
        FieldJet jet;
        jet.nvars = n_;
        jet.order = order;
        for (const auto& [m, v] : t.coeffs())
            if (mono_degree(m) <= order) jet.partials[m] = v * mono_factorial(m);
        return jet;
    }

    double partial(const Mono& alpha, const Eigen::VectorXd& x0) const {
        return jet_at(x0, mono_degree(alpha)).partial(alpha);
    }

    Eigen::VectorXd gradient(const Eigen::VectorXd& x0) const {
        FieldJet j = jet_at(x0, 1);
        Eigen::VectorXd g(n_);
        for (int i = 0; i < n_; ++i) {
            Mono e(static_cast<size_t>(n_), 0);
            e[static_cast<size_t>(i)] = 1;
            g(i) = j.partial(e);
        }
        return g;
    }

  private:
    int n_;
    MultiPoly poly_;
    std::vector<BumpAtom> atoms_;
};

}  // namespace obsv
