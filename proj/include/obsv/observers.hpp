#pragma once

// Luenberger and Kalman observer dynamics, the gain map L(xi) = xi C^T,
// transformation covariance and block-compatibility checks, and the
// frozen-input equilibrium probe.

#include "obsv/fields.hpp"
#include "obsv/integrate.hpp"
#include "obsv/region.hpp"
#include "obsv/systems.hpp"

#include <Eigen/Cholesky>

#include <random>
#include <vector>

namespace obsv {

enum class ObserverKind { luenberger, kalman };

// One code path serves both observers: Luenberger is the frozen-xi special
// case with f identically zero.
struct ObserverSpec {
    ObserverKind kind = ObserverKind::luenberger;
    Eigen::MatrixXd Q;  // Kalman process noise, SPD

    static ObserverSpec luenberger() { return {ObserverKind::luenberger, Eigen::MatrixXd()}; }
    static ObserverSpec kalman(Eigen::MatrixXd q) { return {ObserverKind::kalman, std::move(q)}; }
};

inline bool is_spd(const Eigen::MatrixXd& m, double sym_tol = 1e-9) {
    if (m.rows() != m.cols() || m.size() == 0) return false;
    double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > sym_tol * scale) return false;
    Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (m + m.transpose()));
    return llt.info() == Eigen::Success;
}

// Positive-definiteness up to a scale-relative floor: eigenvalues above
// -tol * |m| pass. Integration guards use this so that rounding on a large
// well-conditioned state cannot masquerade as SPD loss.
inline bool is_spd_relaxed(const Eigen::MatrixXd& m, double sym_tol = 1e-6, double eig_floor_rel = 1e-10) {
    if (m.rows() != m.cols() || m.size() == 0) return false;
    double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > sym_tol * scale) return false;
    Eigen::MatrixXd reg = 0.5 * (m + m.transpose()) +
                          eig_floor_rel * scale * Eigen::MatrixXd::Identity(m.rows(), m.cols());
    Eigen::LLT<Eigen::MatrixXd> llt(reg);
    return llt.info() == Eigen::Success;
}

inline Eigen::MatrixXd gain(const Eigen::MatrixXd& xi, const Eigen::MatrixXd& c) {
    if (xi.rows() != xi.cols() || c.cols() != xi.rows()) throw std::invalid_argument("gain: dimension mismatch");
    return xi * c.transpose();
}

// Observer internal dynamics f(xi, u): zero for Luenberger, the symmetrized
// Riccati right-hand side for Kalman.
inline Eigen::MatrixXd observer_rhs(const ObserverSpec& spec, const Eigen::MatrixXd& xi, const Eigen::MatrixXd& a_u,
                                    const Eigen::MatrixXd& c, double sym_tol = 1e-6) {
    double scale = std::max(1.0, xi.cwiseAbs().maxCoeff());
    if ((xi - xi.transpose()).cwiseAbs().maxCoeff() > sym_tol * scale)
        throw std::invalid_argument("observer_rhs: xi drifted away from symmetry");
    if (spec.kind == ObserverKind::luenberger) return Eigen::MatrixXd::Zero(xi.rows(), xi.cols());
    Eigen::MatrixXd r = xi * a_u.transpose() + a_u * xi + spec.Q - xi * c.transpose() * c * xi;
    return 0.5 * (r + r.transpose());
}

// ---------------------------------------------------------------------------
// Hypothesis (H1): transformation covariance and block compatibility.

struct H1Report {
    double max_covariance_residual = 0.0;
    double max_gain_covariance_residual = 0.0;
    double max_block_residual = 0.0;
    double max_gain_block_residual = 0.0;
    int samples = 0;
};

namespace detail {

inline Eigen::MatrixXd observer_f(const ObserverSpec& spec, const Eigen::MatrixXd& q, const Eigen::MatrixXd& xi,
                                  const Eigen::MatrixXd& abar, const Eigen::MatrixXd& cbar) {
    if (spec.kind == ObserverKind::luenberger) return Eigen::MatrixXd::Zero(xi.rows(), xi.cols());
    return xi * abar.transpose() + abar * xi + q - xi * cbar.transpose() * cbar * xi;
}

inline Eigen::MatrixXd random_spd(int n, std::mt19937& rng, double shift = 0.5) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m(i, j) = g(rng);
    return m * m.transpose() + shift * Eigen::MatrixXd::Identity(n, n);
}

inline Eigen::MatrixXd random_mat(int r, int c, std::mt19937& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = g(rng);
    return m;
}

}  // namespace detail

// Covariance residual for one sample: || f_bar(T xi T*, T A T^-1, C T^-1) -
// T f(xi, A, C) T* ||_inf, with the Kalman noise transported to T Q T*.
inline double h1_covariance_residual(const ObserverSpec& spec, const Eigen::MatrixXd& t, const Eigen::MatrixXd& xi,
                                     const Eigen::MatrixXd& abar, const Eigen::MatrixXd& cbar) {
    Eigen::MatrixXd tinv = t.inverse();
    Eigen::MatrixXd q = spec.kind == ObserverKind::kalman ? spec.Q : Eigen::MatrixXd::Zero(xi.rows(), xi.cols());
    Eigen::MatrixXd lhs = detail::observer_f(spec, t * q * t.transpose(), t * xi * t.transpose(), t * abar * tinv,
                                             cbar * tinv);
    Eigen::MatrixXd rhs = t * detail::observer_f(spec, q, xi, abar, cbar) * t.transpose();
    return (lhs - rhs).cwiseAbs().maxCoeff();
}

inline double h1_gain_covariance_residual(const Eigen::MatrixXd& t, const Eigen::MatrixXd& xi,
                                          const Eigen::MatrixXd& cbar) {
    Eigen::MatrixXd tinv = t.inverse();
    Eigen::MatrixXd lhs = gain(t * xi * t.transpose(), cbar * tinv);
    Eigen::MatrixXd rhs = t * gain(xi, cbar);
    return (lhs - rhs).cwiseAbs().maxCoeff();
}

// Block residual for one structured sample (eq-struct pattern with block
// size k): the upper-left block of f must equal the same-family observer
// built from (xi_11, A_11, C_1), and the top of L must equal xi_11 C_1^T.
struct H1BlockResidual {
    double f_block = 0.0;
    double gain_block = 0.0;
};

inline H1BlockResidual h1_block_residual(const ObserverSpec& spec, int k, const Eigen::MatrixXd& xi,
                                         const Eigen::MatrixXd& abar, const Eigen::MatrixXd& cbar) {
    const int n = static_cast<int>(abar.rows());
    Eigen::MatrixXd q = spec.kind == ObserverKind::kalman ? spec.Q : Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd full = detail::observer_f(spec, q, xi, abar, cbar);
    ObserverSpec reduced = spec;
    if (spec.kind == ObserverKind::kalman) reduced.Q = spec.Q.topLeftCorner(k, k);
    Eigen::MatrixXd small = detail::observer_f(reduced, reduced.kind == ObserverKind::kalman ? reduced.Q : Eigen::MatrixXd::Zero(k, k),
                                               xi.topLeftCorner(k, k), abar.topLeftCorner(k, k), cbar.leftCols(k));
    H1BlockResidual out;
    out.f_block = (full.topLeftCorner(k, k) - small).cwiseAbs().maxCoeff();
    Eigen::MatrixXd lfull = gain(xi, cbar);
    Eigen::MatrixXd lsmall = gain(xi.topLeftCorner(k, k), cbar.leftCols(k));
    out.gain_block = (lfull.topRows(k) - lsmall).cwiseAbs().maxCoeff();
    return out;
}

// Samples random transformations, SPD states and structured pairs around the
// given system and reports worst-case residuals for both parts of (H1).
inline H1Report check_h1(const ObserverSpec& spec, const BilinearSystem& sys, int block_k, int num_samples,
                         unsigned seed = 12345) {
    sys.validate();
    const int n = sys.n();
    const int m = sys.output_dim();
    if (block_k < 1 || block_k > n) throw std::invalid_argument("check_h1: block size out of range");
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u_dist(-2.0, 2.0);
    H1Report rep;
    for (int s = 0; s < num_samples; ++s) {
        Eigen::MatrixXd t = Eigen::MatrixXd::Identity(n, n) + 0.4 * detail::random_mat(n, n, rng);
        if (std::abs(t.determinant()) < 0.1) {
            --s;
            continue;
        }
        Eigen::MatrixXd xi = detail::random_spd(n, rng);
        Eigen::MatrixXd abar = s % 3 == 0 ? Eigen::MatrixXd(sys.A_u(u_dist(rng))) : detail::random_mat(n, n, rng);
        Eigen::MatrixXd cbar = s % 2 == 0 ? sys.C : detail::random_mat(m, n, rng);

        rep.max_covariance_residual = std::max(rep.max_covariance_residual,
                                               h1_covariance_residual(spec, t, xi, abar, cbar));
        rep.max_gain_covariance_residual = std::max(rep.max_gain_covariance_residual,
                                                    h1_gain_covariance_residual(t, xi, cbar));

        Eigen::MatrixXd astruct = detail::random_mat(n, n, rng);
        astruct.topRightCorner(block_k, n - block_k).setZero();
        Eigen::MatrixXd cstruct = detail::random_mat(m, n, rng);
        cstruct.rightCols(n - block_k).setZero();
        auto br = h1_block_residual(spec, block_k, xi, astruct, cstruct);
        rep.max_block_residual = std::max(rep.max_block_residual, br.f_block);
        rep.max_gain_block_residual = std::max(rep.max_gain_block_residual, br.gain_block);
        ++rep.samples;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Hypothesis (H2): decay of the correction term on the observable block.

struct H2Report {
    std::vector<double> final_correction_norms;
    double worst = 0.0;
    double tol = 0.0;
    bool pass = false;
};

// Integrates the reduced observable-block system and reports
// ||L1(xi_11(T)) C1 eps_1(T)|| for each initial condition.
inline H2Report check_h2(const ObserverSpec& spec, const Eigen::MatrixXd& a11, const Eigen::MatrixXd& c1,
                         const Eigen::VectorXd& b1,
                         const std::vector<std::tuple<Eigen::VectorXd, Eigen::VectorXd, Eigen::MatrixXd>>& initial,
                         double horizon, double tol, const Config& cfg = default_config()) {
    const int k = static_cast<int>(a11.rows());
    if (!is_observable_pair(c1, a11, cfg))
        throw std::invalid_argument("check_h2: (C1, A11) must be an observable pair");
    H2Report rep;
    rep.tol = tol;
    rep.pass = true;
    for (const auto& [x0, e0, xi0] : initial) {
        if (!is_spd(xi0)) throw std::invalid_argument("check_h2: xi0 must be SPD");
        Eigen::VectorXd y0(2 * k + k * k);
        y0.head(k) = x0;
        y0.segment(k, k) = e0;
        Eigen::Map<Eigen::MatrixXd>(y0.data() + 2 * k, k, k) = xi0;

        OdeRhs rhs = [&](double, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
            Eigen::Map<const Eigen::MatrixXd> xi(y.data() + 2 * k, k, k);
            Eigen::MatrixXd l = gain(0.5 * (xi + xi.transpose()), c1);
            dy.resize(y.size());
            dy.head(k) = a11 * y.head(k) + b1 - l * c1 * y.segment(k, k);
            dy.segment(k, k) = (a11 - l * c1) * y.segment(k, k);
            Eigen::MatrixXd fxi = observer_rhs(spec, 0.5 * (xi + xi.transpose()), a11, c1);
            Eigen::Map<Eigen::MatrixXd>(dy.data() + 2 * k, k, k) = fxi;
        };
        IntegratorOptions opt;
        opt.rtol = cfg.integrator_rtol;
        opt.atol = cfg.integrator_atol;
        opt.blow_up_norm = cfg.blow_up_norm;
        opt.guard = [&](double, const Eigen::VectorXd& y) {
            Eigen::Map<const Eigen::MatrixXd> xi(y.data() + 2 * k, k, k);
            return is_spd_relaxed(Eigen::MatrixXd(xi));
        };
        opt.post_accept = [&](double, Eigen::VectorXd& y) {
            Eigen::Map<Eigen::MatrixXd> xi(y.data() + 2 * k, k, k);
            xi = 0.5 * (xi + xi.transpose()).eval();
        };
        auto sol = integrate_dopri5(rhs, y0, 0.0, horizon, opt);
        const auto& yf = sol.final_state();
        Eigen::Map<const Eigen::MatrixXd> xif(yf.data() + 2 * k, k, k);
        double corr = (gain(Eigen::MatrixXd(xif), c1) * c1 * yf.segment(k, k)).norm();
        rep.final_correction_norms.push_back(corr);
        rep.worst = std::max(rep.worst, corr);
        if (corr >= tol) rep.pass = false;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Hypothesis (H3): ker L1(xi_11) meets Im C1 only at zero.

struct H3Report {
    std::vector<double> restricted_sigma_min;
    double worst = 0.0;
    bool pass = false;
};

inline H3Report check_h3(const std::vector<Eigen::MatrixXd>& xi_samples, const Eigen::MatrixXd& c1,
                         double margin = 1e-12) {
    H3Report rep;
    rep.pass = true;
    for (const auto& xi : xi_samples) {
        if (!is_spd(xi)) throw std::invalid_argument("check_h3: sample is not SPD");
        // orthonormal basis of Im C1 in output space
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(c1, Eigen::ComputeFullU);
        double thresh = std::max(c1.rows(), c1.cols()) * svd.singularValues()(0) * 1e-12;
        int r = 0;
        for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
            if (svd.singularValues()(i) > thresh) ++r;
        Eigen::MatrixXd u = svd.matrixU().leftCols(r);
        Eigen::MatrixXd restricted = gain(xi, c1) * u;  // xi C1^T restricted to Im C1
        Eigen::JacobiSVD<Eigen::MatrixXd> rsvd(restricted);
        double smin = rsvd.singularValues()(rsvd.singularValues().size() - 1);
        rep.restricted_sigma_min.push_back(smin);
        if (rep.restricted_sigma_min.size() == 1 || smin < rep.worst) rep.worst = smin;
        if (smin <= margin) rep.pass = false;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Frozen-input probe: with constant u0, a constant estimate forces a null
// correction term. Reports both quantities so the caller can assert or
// diagnose a stuck estimate.

struct FrozenProbeReport {
    bool xhat_constant = false;   // max ||dxhat/dt|| stayed below tol
    bool applicable = false;      // alias of xhat_constant; the reduction needs a parked estimate
    double max_xhat_derivative = 0.0;
    double max_correction = 0.0;  // max ||L(xi) C eps|| along the run
    double tol = 0.0;
};

inline FrozenProbeReport frozen_equilibrium_probe(const BilinearSystem& sys, const ObserverSpec& spec, double u0,
                                                  const Eigen::VectorXd& xhat0, const Eigen::VectorXd& eps0,
                                                  const Eigen::MatrixXd& xi0, double horizon, double tol = 1e-8,
                                                  const Config& cfg = default_config()) {
    sys.validate();
    const int n = sys.n();
    if (!is_spd(xi0)) throw std::invalid_argument("frozen_equilibrium_probe: xi0 must be SPD");
    Eigen::MatrixXd a0 = sys.A_u(u0);
    Eigen::VectorXd y0(2 * n + n * n);
    y0.head(n) = xhat0;
    y0.segment(n, n) = eps0;
    Eigen::Map<Eigen::MatrixXd>(y0.data() + 2 * n, n, n) = xi0;

    OdeRhs rhs = [&](double, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
        Eigen::Map<const Eigen::MatrixXd> xi(y.data() + 2 * n, n, n);
        Eigen::MatrixXd xis = 0.5 * (xi + xi.transpose());
        Eigen::MatrixXd l = gain(xis, sys.C);
        dy.resize(y.size());
        dy.head(n) = a0 * y.head(n) + sys.b * u0 - l * sys.C * y.segment(n, n);
        dy.segment(n, n) = (a0 - l * sys.C) * y.segment(n, n);
        Eigen::Map<Eigen::MatrixXd>(dy.data() + 2 * n, n, n) = observer_rhs(spec, xis, a0, sys.C);
    };
    IntegratorOptions opt;
    opt.rtol = cfg.integrator_rtol;
    opt.atol = cfg.integrator_atol;
    opt.blow_up_norm = cfg.blow_up_norm;
    opt.post_accept = [&](double, Eigen::VectorXd& y) {
        Eigen::Map<Eigen::MatrixXd> xi(y.data() + 2 * n, n, n);
        xi = 0.5 * (xi + xi.transpose()).eval();
    };
    auto sol = integrate_dopri5(rhs, y0, 0.0, horizon, opt);

    FrozenProbeReport rep;
    rep.tol = tol;
    const int samples = 400;
    Eigen::VectorXd dy;
    for (int s = 0; s <= samples; ++s) {
        double t = horizon * s / samples;
        Eigen::VectorXd y = sol.eval(t);
        rhs(t, y, dy);
        rep.max_xhat_derivative = std::max(rep.max_xhat_derivative, dy.head(n).norm());
        Eigen::Map<const Eigen::MatrixXd> xi(y.data() + 2 * n, n, n);
        Eigen::MatrixXd xis = 0.5 * (xi + xi.transpose());
        rep.max_correction = std::max(rep.max_correction, (gain(xis, sys.C) * sys.C * y.segment(n, n)).norm());
    }
    rep.xhat_constant = rep.max_xhat_derivative <= tol;
    rep.applicable = rep.xhat_constant;
    return rep;
}

// ---------------------------------------------------------------------------
// Closed-loop vector field F_mu(x) = A_{mu(x)} x + b mu(x) and the
// equilibrium-uniqueness bound eta = C1/C2: perturbations with sup-norm
// below eta cannot create equilibria in K1 away from the origin.

inline Eigen::VectorXd closed_loop_field(const BilinearSystem& sys, const SmoothField& mu, const Eigen::VectorXd& x) {
    double u = mu.value(x);
    return sys.A_u(u) * x + sys.b * u;
}

struct EquilibriumEtaBound {
    double c1 = 0.0;  // min |F_lambda| over K1 minus the ball B(0, R)
    double c2 = 0.0;  // max |Bx + b| over K1
    double eta = 0.0;
    int grid_points = 0;
};

inline EquilibriumEtaBound equilibrium_uniqueness_eta(const BilinearSystem& sys, const SmoothField& lambda,
                                                      const Region& k1, double radius, int grid_per_dim) {
    EquilibriumEtaBound out;
    out.c1 = std::numeric_limits<double>::infinity();
    for (const auto& x : k1.grid(grid_per_dim)) {
        ++out.grid_points;
        out.c2 = std::max(out.c2, (sys.B * x + sys.b).norm());
        if (x.norm() <= radius) continue;
        out.c1 = std::min(out.c1, closed_loop_field(sys, lambda, x).norm());
    }
    if (!std::isfinite(out.c1) || out.c2 <= 0.0)
        out.eta = 0.0;
    else
        out.eta = out.c1 / out.c2;
    return out;
}

}  // namespace obsv
