#pragma once

// Taylor-coefficient (jet) propagation at t = 0 for the coupled system,
// composition jets for u = (lambda + delta)(xhat), and the numeric side of
// the F_k^m cross-check.
//
// Internally everything works on normalized coefficients c_j = d^j/dt^j / j!,
// so products are plain Cauchy convolutions; the public Jet types carry raw
// derivatives to match the v^(i) notation.

#include "obsv/coupled_state.hpp"
#include "obsv/fields.hpp"
#include "obsv/observers.hpp"
#include "obsv/systems.hpp"

#include <optional>
#include <vector>

namespace obsv {

struct Jet {
    std::vector<double> d;  // d[j] = j-th derivative at 0
    int order() const { return static_cast<int>(d.size()) - 1; }
};

struct VecJet {
    std::vector<Eigen::VectorXd> d;
    int order() const { return static_cast<int>(d.size()) - 1; }
};

struct MatJet {
    std::vector<Eigen::MatrixXd> d;
    int order() const { return static_cast<int>(d.size()) - 1; }
};

namespace detail {

// Truncated Cauchy product of normalized coefficient sequences.
inline std::vector<double> series_mul(const std::vector<double>& a, const std::vector<double>& b, int order) {
    std::vector<double> out(static_cast<size_t>(order) + 1, 0.0);
    for (int i = 0; i <= order && i < static_cast<int>(a.size()); ++i) {
        if (a[static_cast<size_t>(i)] == 0.0) continue;
        for (int j = 0; i + j <= order && j < static_cast<int>(b.size()); ++j)
            out[static_cast<size_t>(i + j)] += a[static_cast<size_t>(i)] * b[static_cast<size_t>(j)];
    }
    return out;
}

// Composition coefficients: field Taylor polynomial (in the offset from the
// path base point) evaluated on the path series. Path coefficients are
// normalized; the path constant term is dropped, which makes every h_i^alpha
// start at order >= |alpha| and the truncation exact.
inline std::vector<double> compose_series(const MultiPoly& taylor, const std::vector<Eigen::VectorXd>& path_coeffs,
                                          int order) {
    const int n = taylor.nvars();
    std::vector<std::vector<double>> h(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::vector<double> s(static_cast<size_t>(order) + 1, 0.0);
        for (int j = 1; j <= order && j < static_cast<int>(path_coeffs.size()); ++j)
            s[static_cast<size_t>(j)] = path_coeffs[static_cast<size_t>(j)](i);
        h[static_cast<size_t>(i)] = std::move(s);
    }
    std::vector<double> acc(static_cast<size_t>(order) + 1, 0.0);
    for (const auto& [alpha, c] : taylor.coeffs()) {
        if (mono_degree(alpha) > order) continue;
        std::vector<double> prod(static_cast<size_t>(order) + 1, 0.0);
        prod[0] = c;
        for (int i = 0; i < n; ++i)
            for (int e = 0; e < alpha[static_cast<size_t>(i)]; ++e) prod = series_mul(prod, h[static_cast<size_t>(i)], order);
        for (int j = 0; j <= order; ++j) acc[static_cast<size_t>(j)] += prod[static_cast<size_t>(j)];
    }
    return acc;
}

}  // namespace detail

// Jet of g(xhat(t)) at t = 0 from the mixed partials of g at xhat(0) and the
// jet of the path; the multivariate higher-order chain rule in Taylor form.
inline Jet faa_di_bruno(const FieldJet& field, const VecJet& path) {
    if (field.order != path.order()) throw std::invalid_argument("faa_di_bruno: order mismatch");
    const int k = field.order;
    MultiPoly taylor(field.nvars);
    for (const auto& [alpha, val] : field.partials) taylor.add(alpha, val / mono_factorial(alpha));
    std::vector<Eigen::VectorXd> coeffs;
    for (int j = 0; j <= k; ++j) coeffs.push_back(path.d[static_cast<size_t>(j)] / factorial(j));
    auto series = detail::compose_series(taylor, coeffs, k);
    Jet out;
    for (int j = 0; j <= k; ++j) out.d.push_back(series[static_cast<size_t>(j)] * factorial(j));
    return out;
}

struct CoupledJets {
    VecJet xhat, eps, omega;
    MatJet xi;
    Jet u;
};

// Taylor coefficients at t = 0 of the coupled closed-loop system, by
// recursive differentiation of the right-hand side: state coefficient j+1
// comes from RHS coefficient j, products use Cauchy/Leibniz convolutions and
// the feedback composition uses faa_di_bruno's series form.
inline CoupledJets ode_jet(const BilinearSystem& sys, const ObserverSpec& spec, const SmoothField& lambda,
                           const SmoothField& delta, const CoupledState& x0, int order) {
    sys.validate();
    const int n = sys.n();
    x0.validate(n);
    if (order < 0) throw std::invalid_argument("ode_jet: negative order");
    if (!is_spd(x0.xi)) throw std::invalid_argument("ode_jet: xi0 must be symmetric positive definite");

    SmoothField feedback = lambda + delta;
    MultiPoly gtaylor = feedback.taylor(x0.xhat, order);  // throws beyond the field cap

    const Eigen::MatrixXd ctc = sys.C.transpose() * sys.C;
    std::vector<Eigen::VectorXd> X{x0.xhat}, E{x0.eps}, W{x0.omega};
    std::vector<Eigen::MatrixXd> Xi{x0.xi};
    std::vector<double> U;           // normalized coefficients of u
    std::vector<Eigen::MatrixXd> AU;  // normalized coefficients of A + u(t) B

    auto u_coeff = [&](int j) {
        auto series = detail::compose_series(gtaylor, X, j);
        return series[static_cast<size_t>(j)];
    };

    for (int j = 0; j <= order; ++j) {
        U.push_back(u_coeff(j));
        AU.push_back(j == 0 ? Eigen::MatrixXd(sys.A_u(U[0])) : Eigen::MatrixXd(U[static_cast<size_t>(j)] * sys.B));
        if (j == order) break;

        Eigen::VectorXd rx = Eigen::VectorXd::Zero(n);
        Eigen::VectorXd re = Eigen::VectorXd::Zero(n);
        Eigen::VectorXd rw = Eigen::VectorXd::Zero(n);
        Eigen::MatrixXd rxi = Eigen::MatrixXd::Zero(n, n);
        for (int i = 0; i <= j; ++i) {
            const auto& au = AU[static_cast<size_t>(i)];
            rx += au * X[static_cast<size_t>(j - i)];
            re += au * E[static_cast<size_t>(j - i)];
            rw += au * W[static_cast<size_t>(j - i)];
            // correction term L(xi) C eps = xi C^T C eps
            rx -= Xi[static_cast<size_t>(i)] * (ctc * E[static_cast<size_t>(j - i)]);
            re -= Xi[static_cast<size_t>(i)] * (ctc * E[static_cast<size_t>(j - i)]);
            if (spec.kind == ObserverKind::kalman) {
                rxi += Xi[static_cast<size_t>(j - i)] * au.transpose() + au * Xi[static_cast<size_t>(j - i)];
                rxi -= Xi[static_cast<size_t>(i)] * ctc * Xi[static_cast<size_t>(j - i)];
            }
        }
        rx += sys.b * U[static_cast<size_t>(j)];
        if (spec.kind == ObserverKind::kalman && j == 0) rxi += spec.Q;

        double inv = 1.0 / (j + 1);
        X.push_back(inv * rx);
        E.push_back(inv * re);
        W.push_back(inv * rw);
        Xi.push_back(inv * rxi);
    }

    CoupledJets out;
    for (int j = 0; j <= order; ++j) {
        double f = factorial(j);
        out.xhat.d.push_back(f * X[static_cast<size_t>(j)]);
        out.eps.d.push_back(f * E[static_cast<size_t>(j)]);
        out.omega.d.push_back(f * W[static_cast<size_t>(j)]);
        out.xi.d.push_back(f * Xi[static_cast<size_t>(j)]);
        out.u.d.push_back(f * U[static_cast<size_t>(j)]);
    }
    return out;
}

// Jet of omega alone under a supplied input jet: omega' = (A + u(t) B) omega.
inline VecJet omega_jet(const BilinearSystem& sys, const Jet& u_jet, const Eigen::VectorXd& omega0, int order) {
    sys.validate();
    if (u_jet.order() < order - 1 && order > 0)
        throw std::invalid_argument("omega_jet: input jet too short for the requested order");
    std::vector<double> un;
    for (int j = 0; j <= u_jet.order(); ++j) un.push_back(u_jet.d[static_cast<size_t>(j)] / factorial(j));
    std::vector<Eigen::MatrixXd> au;
    for (int j = 0; j <= u_jet.order(); ++j)
        au.push_back(j == 0 ? Eigen::MatrixXd(sys.A_u(un[0])) : Eigen::MatrixXd(un[static_cast<size_t>(j)] * sys.B));
    std::vector<Eigen::VectorXd> W{omega0};
    for (int j = 0; j < order; ++j) {
        Eigen::VectorXd rw = Eigen::VectorXd::Zero(sys.n());
        for (int i = 0; i <= j && i < static_cast<int>(au.size()); ++i)
            rw += au[static_cast<size_t>(i)] * W[static_cast<size_t>(j - i)];
        W.push_back(rw / (j + 1));
    }
    VecJet out;
    for (int j = 0; j <= order; ++j) out.d.push_back(factorial(j) * W[static_cast<size_t>(j)]);
    return out;
}

// F_k^m(u, omega0) = C B^m omega^(k)(0), evaluated numerically from the jet
// propagation above.
inline Eigen::VectorXd f_numeric(const BilinearSystem& sys, int m, const Jet& u_jet, const Eigen::VectorXd& omega0,
                                 int k) {
    VecJet w = omega_jet(sys, u_jet, omega0, k);
    Eigen::MatrixXd cbm = sys.C;
    for (int j = 0; j < m; ++j) cbm = cbm * sys.B;
    return cbm * w.d[static_cast<size_t>(k)];
}

// ---------------------------------------------------------------------------
// Executable hypothesis probes.

struct NfotReport {
    std::optional<int> k_star;           // first order >= 1 with a nonzero xhat derivative
    std::vector<double> magnitudes;      // normalized |xhat coeff| per order, 0..kmax
    double scale = 0.0;                  // largest normalized coefficient seen across the state
    double threshold = 0.0;
};

// Probes "no flat observer trajectories": smallest k >= 1 with
// xhat^(k)(0) != 0, against a tolerance scaled by the largest normalized jet
// coefficient (jets grow factorially; the relative scaling avoids false
// flats). No k within kmax is reported as inconclusive, not as an error.
inline NfotReport nfot_probe(const BilinearSystem& sys, const ObserverSpec& spec, const SmoothField& lambda,
                             const SmoothField& delta, const CoupledState& x0, int kmax,
                             double tol = default_config().jet_tol) {
    auto jets = ode_jet(sys, spec, lambda, delta, x0, kmax);
    NfotReport rep;
    for (int j = 0; j <= kmax; ++j) {
        double f = factorial(j);
        rep.magnitudes.push_back(jets.xhat.d[static_cast<size_t>(j)].cwiseAbs().maxCoeff() / f);
        rep.scale = std::max({rep.scale, rep.magnitudes.back(),
                              jets.eps.d[static_cast<size_t>(j)].cwiseAbs().maxCoeff() / f,
                              jets.omega.d[static_cast<size_t>(j)].cwiseAbs().maxCoeff() / f,
                              jets.xi.d[static_cast<size_t>(j)].cwiseAbs().maxCoeff() / f});
    }
    rep.threshold = tol * std::max(1.0, rep.scale);
    for (int j = 1; j <= kmax; ++j)
        if (rep.magnitudes[static_cast<size_t>(j)] > rep.threshold) {
            rep.k_star = j;
            break;
        }
    return rep;
}

struct MainEqReport {
    std::optional<int> k0;          // first order with a nonzero output derivative
    std::vector<double> values;     // normalized |C omega coeff| per order
    double threshold = 0.0;
};

// Executable form of the nonvanishing-output-derivative condition: the first
// k0 <= kmax with d^{k0}/dt^{k0} (C omega)(0) above the scaled tolerance.
inline MainEqReport main_eq_check(const BilinearSystem& sys, const ObserverSpec& spec, const SmoothField& lambda,
                                  const SmoothField& delta, const CoupledState& x0, int kmax,
                                  double tol = default_config().jet_tol) {
    if (std::abs(x0.omega.norm() - 1.0) > 1e-9)
        throw std::invalid_argument("main_eq_check: omega0 must lie on the unit sphere");
    auto jets = ode_jet(sys, spec, lambda, delta, x0, kmax);
    MainEqReport rep;
    double scale = 0.0;
    for (int j = 0; j <= kmax; ++j) {
        double v = (sys.C * jets.omega.d[static_cast<size_t>(j)]).norm() / factorial(j);
        rep.values.push_back(v);
        scale = std::max(scale, v);
    }
    rep.threshold = tol * std::max(1.0, scale);
    for (int j = 0; j <= kmax; ++j)
        if (rep.values[static_cast<size_t>(j)] > rep.threshold) {
            rep.k0 = j;
            break;
        }
    return rep;
}

inline int default_jet_kmax(int n) { return 2 * n + 4; }

}  // namespace obsv
