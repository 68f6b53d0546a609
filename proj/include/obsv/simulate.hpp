#pragma once

// Time-domain integration of the coupled closed-loop system, observability
// Gramians along input traces, the quantitative small-input bounds, and
// end-to-end observability verdicts over initial-condition grids.

#include "obsv/coupled_state.hpp"
#include "obsv/integrate.hpp"
#include "obsv/jets.hpp"
#include "obsv/observers.hpp"
#include "obsv/parallel.hpp"
#include "obsv/region.hpp"

#include <cstdio>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace obsv {

namespace detail {

inline Eigen::VectorXd pack_coupled(const CoupledState& s) {
    const int n = static_cast<int>(s.xhat.size());
    Eigen::VectorXd y(3 * n + n * n);
    y.head(n) = s.xhat;
    y.segment(n, n) = s.eps;
    y.segment(2 * n, n) = s.omega;
    Eigen::Map<Eigen::MatrixXd>(y.data() + 3 * n, n, n) = s.xi;
    return y;
}

inline CoupledState unpack_coupled(const Eigen::VectorXd& y, int n) {
    CoupledState s;
    s.xhat = y.head(n);
    s.eps = y.segment(n, n);
    s.omega = y.segment(2 * n, n);
    s.xi = Eigen::Map<const Eigen::MatrixXd>(y.data() + 3 * n, n, n);
    return s;
}

}  // namespace detail

// Dense-output solution of one coupled run, with the feedback that produced
// it, so u(t) can be re-evaluated exactly from the interpolated estimate.
class Trajectory {
  public:
    Trajectory(DenseSolution sol, SmoothField feedback, int n, double horizon)
        : sol_(std::move(sol)), feedback_(std::move(feedback)), n_(n), horizon_(horizon) {}

    double horizon() const { return horizon_; }
    int dim() const { return n_; }

    CoupledState at(double t) const { return detail::unpack_coupled(sol_.eval(t), n_); }
    double input_at(double t) const { return feedback_.value(sol_.eval(t).head(n_)); }
    std::function<double(double)> input_trace() const {
        return [this](double t) { return input_at(t); };
    }

    const std::vector<IntegrationEvent>& events() const { return sol_.events(); }
    const DenseSolution& solution() const { return sol_; }

  private:
    DenseSolution sol_;
    SmoothField feedback_;
    int n_;
    double horizon_;
};

// Integrates the coupled system over [0, T]. Steps that lose positive
// definiteness of xi are rejected and halved; accepted states are
// re-symmetrized. Norm blow-up aborts with blow_up_error.
inline Trajectory integrate_coupled(const BilinearSystem& sys, const ObserverSpec& spec, const SmoothField& lambda,
                                    const SmoothField& delta, const CoupledState& initial, double horizon,
                                    const Config& cfg = default_config()) {
    sys.validate();
    const int n = sys.n();
    initial.validate(n);
    if (!(horizon > 0)) throw std::invalid_argument("integrate_coupled: horizon must be positive");
    if (!is_spd(initial.xi)) throw std::invalid_argument("integrate_coupled: xi0 must be SPD");
    SmoothField lam = lambda;
    lam.require_vanishes_at_origin();
    SmoothField feedback = lambda + delta;

    const Eigen::MatrixXd ctc = sys.C.transpose() * sys.C;
    OdeRhs rhs = [&sys, &feedback, &spec, ctc, n](double, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
        double u = feedback.value(y.head(n));
        Eigen::MatrixXd au = sys.A_u(u);
        Eigen::Map<const Eigen::MatrixXd> xi(y.data() + 3 * n, n, n);
        Eigen::MatrixXd xis = 0.5 * (xi + xi.transpose());
        Eigen::MatrixXd corr = xis * ctc;
        dy.resize(y.size());
        dy.head(n) = au * y.head(n) + sys.b * u - corr * y.segment(n, n);
        dy.segment(n, n) = (au - corr) * y.segment(n, n);
        dy.segment(2 * n, n) = au * y.segment(2 * n, n);
        Eigen::Map<Eigen::MatrixXd>(dy.data() + 3 * n, n, n) = observer_rhs(spec, xis, au, sys.C);
    };

    IntegratorOptions opt;
    opt.rtol = cfg.integrator_rtol;
    opt.atol = cfg.integrator_atol;
    opt.blow_up_norm = cfg.blow_up_norm;
    opt.guard = [n](double, const Eigen::VectorXd& y) {
        Eigen::Map<const Eigen::MatrixXd> xi(y.data() + 3 * n, n, n);
        return is_spd_relaxed(Eigen::MatrixXd(xi));
    };
    opt.post_accept = [n](double, Eigen::VectorXd& y) {
        Eigen::Map<Eigen::MatrixXd> xi(y.data() + 3 * n, n, n);
        xi = 0.5 * (xi + xi.transpose()).eval();
    };
    // omega is a linear flow and may grow exponentially without violating
    // forward completeness; the blow-up bound watches the other blocks.
    opt.blow_up_measure = [n](const Eigen::VectorXd& y) {
        return std::sqrt(y.head(2 * n).squaredNorm() + y.tail(n * n).squaredNorm());
    };

    DenseSolution sol = integrate_dopri5(rhs, detail::pack_coupled(initial), 0.0, horizon, opt);
    return Trajectory(std::move(sol), std::move(feedback), n, horizon);
}

// ---------------------------------------------------------------------------
// Observability Gramian W(T) = int_0^T Phi_u^T C^T C Phi_u dt.

struct GramianReport {
    Eigen::MatrixXd W;
    Eigen::MatrixXd Phi_T;          // fundamental matrix at T
    Eigen::VectorXd eigenvalues;    // ascending
    double lambda_min = 0.0;
    double tol_used = 0.0;
    bool observable = false;
};

// Dense co-integration of the fundamental flow and the Gramian; also usable
// for evaluating W(t) along the way.
class GramianFlow {
  public:
    GramianFlow(const BilinearSystem& sys, const std::function<double(double)>& u, double horizon,
                const Config& cfg = default_config())
        : n_(sys.n()) {
        sys.validate();
        const Eigen::MatrixXd ctc = sys.C.transpose() * sys.C;
        const int n = n_;
        OdeRhs rhs = [&sys, &u, ctc, n](double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
            Eigen::Map<const Eigen::MatrixXd> phi(y.data(), n, n);
            dy.resize(y.size());
            Eigen::Map<Eigen::MatrixXd>(dy.data(), n, n) = sys.A_u(u(t)) * phi;
            Eigen::Map<Eigen::MatrixXd>(dy.data() + n * n, n, n) = phi.transpose() * ctc * phi;
        };
        Eigen::VectorXd y0 = Eigen::VectorXd::Zero(2 * n * n);
        Eigen::Map<Eigen::MatrixXd>(y0.data(), n, n).setIdentity();
        IntegratorOptions opt;
        opt.rtol = cfg.integrator_rtol;
        opt.atol = cfg.integrator_atol;
        // the fundamental flow grows exponentially by nature; only guard
        // against floating-point overflow here
        opt.blow_up_norm = 1e200;
        sol_ = integrate_dopri5(rhs, y0, 0.0, horizon, opt);
    }

    Eigen::MatrixXd phi(double t) const {
        return Eigen::Map<const Eigen::MatrixXd>(sol_.eval(t).data(), n_, n_);
    }
    Eigen::MatrixXd gramian_at(double t) const {
        Eigen::VectorXd y = sol_.eval(t);
        Eigen::MatrixXd w = Eigen::Map<const Eigen::MatrixXd>(y.data() + n_ * n_, n_, n_);
        return 0.5 * (w + w.transpose());
    }

  private:
    int n_;
    DenseSolution sol_;
};

inline GramianReport gramian(const BilinearSystem& sys, const std::function<double(double)>& u, double horizon,
                             const Config& cfg = default_config()) {
    GramianFlow flow(sys, u, horizon, cfg);
    GramianReport rep;
    rep.W = flow.gramian_at(horizon);
    rep.Phi_T = flow.phi(horizon);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(rep.W);
    rep.eigenvalues = es.eigenvalues();
    rep.lambda_min = rep.eigenvalues(0);
    rep.tol_used = cfg.tol_obs_rel * rep.W.trace() / sys.n();
    rep.observable = rep.lambda_min > rep.tol_used;
    return rep;
}

inline GramianReport gramian(const BilinearSystem& sys, double constant_u, double horizon,
                             const Config& cfg = default_config()) {
    return gramian(sys, [constant_u](double) { return constant_u; }, horizon, cfg);
}

inline GramianReport gramian(const BilinearSystem& sys, const Trajectory& traj, double horizon,
                             const Config& cfg = default_config()) {
    return gramian(sys, traj.input_trace(), horizon, cfg);
}

// Tabulated input signal: piecewise-linear interpolation on a sample grid.
inline std::function<double(double)> tabulated_input(std::vector<double> times, std::vector<double> values) {
    if (times.size() != values.size() || times.size() < 2)
        throw std::invalid_argument("tabulated_input: need matching sample arrays of length >= 2");
    for (size_t i = 1; i < times.size(); ++i)
        if (!(times[i] > times[i - 1])) throw std::invalid_argument("tabulated_input: times must increase");
    return [times = std::move(times), values = std::move(values)](double t) {
        if (t <= times.front()) return values.front();
        if (t >= times.back()) return values.back();
        size_t hi = static_cast<size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin());
        double w = (t - times[hi - 1]) / (times[hi] - times[hi - 1]);
        return values[hi - 1] + w * (values[hi] - values[hi - 1]);
    };
}

// ---------------------------------------------------------------------------
// Deterministic unit-sphere samples: antipodal pair, uniform circle,
// Fibonacci sphere, or a product-of-angles lattice up to dimension 5.

inline std::vector<Eigen::VectorXd> sphere_points(int n, int resolution) {
    std::vector<Eigen::VectorXd> pts;
    if (n == 1) {
        pts.push_back(Eigen::VectorXd::Constant(1, 1.0));
        pts.push_back(Eigen::VectorXd::Constant(1, -1.0));
        return pts;
    }
    if (n == 2) {
        for (int i = 0; i < resolution; ++i) {
            double a = 2.0 * M_PI * i / resolution;
            Eigen::VectorXd p(2);
            p << std::cos(a), std::sin(a);
            pts.push_back(p);
        }
        return pts;
    }
    if (n == 3) {
        const double golden = M_PI * (3.0 - std::sqrt(5.0));
        for (int i = 0; i < resolution; ++i) {
            double z = 1.0 - 2.0 * (i + 0.5) / resolution;
            double r = std::sqrt(std::max(0.0, 1.0 - z * z));
            double a = golden * i;
            Eigen::VectorXd p(3);
            p << r * std::cos(a), r * std::sin(a), z;
            pts.push_back(p);
        }
        return pts;
    }
    if (n > 5) throw std::invalid_argument("sphere_points: dimensions above 5 are not supported");
    // product of angles: theta_1..theta_{n-1}
    int per = std::max(3, static_cast<int>(std::round(std::pow(static_cast<double>(resolution), 1.0 / (n - 1)))));
    std::vector<int> idx(static_cast<size_t>(n - 1), 0);
    while (true) {
        Eigen::VectorXd p(n);
        double sinprod = 1.0;
        for (int i = 0; i < n - 1; ++i) {
            double frac = (idx[static_cast<size_t>(i)] + 0.5) / per;
            double theta = (i == n - 2 ? 2.0 * M_PI : M_PI) * frac;
            p(i) = sinprod * std::cos(theta);
            sinprod *= std::sin(theta);
        }
        p(n - 1) = sinprod;
        pts.push_back(p.normalized());
        int c = 0;
        while (c < n - 1) {
            if (++idx[static_cast<size_t>(c)] < per) break;
            idx[static_cast<size_t>(c)] = 0;
            ++c;
        }
        if (c == n - 1) break;
    }
    return pts;
}

// ---------------------------------------------------------------------------
// eta0: min over the sphere of the max over [0, T] of |C Phi_0(t) w0|.
// Positive exactly when (C, A) is observable under this min-max reading.

struct Eta0Report {
    double eta0 = 0.0;
    Eigen::VectorXd worst_omega;
    double worst_time = 0.0;
    int sphere_samples = 0;
};

namespace detail {

inline double max_output_over_time(const BilinearSystem& sys, const GramianFlow& flow, const Eigen::VectorXd& w0,
                                   double horizon, int tgrid, double* argmax = nullptr) {
    double best = -1.0, bt = 0.0;
    for (int i = 0; i <= tgrid; ++i) {
        double t = horizon * i / tgrid;
        double v = (sys.C * flow.phi(t) * w0).norm();
        if (v > best) {
            best = v;
            bt = t;
        }
    }
    // local refinement by interval shrinking around the best grid node
    double lo = std::max(0.0, bt - horizon / tgrid), hi = std::min(horizon, bt + horizon / tgrid);
    for (int it = 0; it < 40; ++it) {
        double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
        double v1 = (sys.C * flow.phi(m1) * w0).norm();
        double v2 = (sys.C * flow.phi(m2) * w0).norm();
        if (v1 > v2)
            hi = m2;
        else
            lo = m1;
    }
    double tb = 0.5 * (lo + hi);
    double vb = (sys.C * flow.phi(tb) * w0).norm();
    if (vb < best) {
        vb = best;
        tb = bt;
    }
    if (argmax) *argmax = tb;
    return vb;
}

}  // namespace detail

inline Eta0Report eta0(const BilinearSystem& sys, double horizon, int sphere_resolution = 64,
                       const Config& cfg = default_config()) {
    sys.validate();
    if (!(horizon > 0)) throw std::invalid_argument("eta0: horizon must be positive");
    GramianFlow flow(sys, [](double) { return 0.0; }, horizon, cfg);
    auto pts = sphere_points(sys.n(), sphere_resolution);

    Eta0Report rep;
    rep.sphere_samples = static_cast<int>(pts.size());
    double best = std::numeric_limits<double>::infinity();
    Eigen::VectorXd worst;
    for (const auto& w0 : pts) {
        double v = detail::max_output_over_time(sys, flow, w0, horizon, 200);
        if (v < best) {
            best = v;
            worst = w0;
        }
    }
    // local sphere refinement from the worst sample
    double step = 0.5;
    for (int round = 0; round < 60 && step > 1e-7; ++round) {
        bool improved = false;
        for (int i = 0; i < sys.n() && !improved; ++i)
            for (double sgn : {1.0, -1.0}) {
                Eigen::VectorXd cand = worst;
                cand(i) += sgn * step;
                cand.normalize();
                double v = detail::max_output_over_time(sys, flow, cand, horizon, 200);
                if (v < best) {
                    best = v;
                    worst = cand;
                    improved = true;
                    break;
                }
            }
        if (!improved) step *= 0.5;
    }
    rep.eta0 = best;
    rep.worst_omega = worst;
    detail::max_output_over_time(sys, flow, worst, horizon, 200, &rep.worst_time);
    return rep;
}

// ---------------------------------------------------------------------------
// Deviation bound: measured max_t ||Phi_u(t) - Phi_0(t)|| against the
// variation-of-constants estimate M K u_M e^{K u_M}, K = M ||B|| T.

struct DeviationBound {
    double lhs = 0.0;  // measured max deviation over the time grid (operator norm)
    double rhs = 0.0;  // M K u_M e^{K u_M}
    double M = 0.0;
    double K = 0.0;
    double u_M = 0.0;
};

inline DeviationBound deviation_bound(const BilinearSystem& sys, const std::function<double(double)>& u,
                                      double horizon, const Config& cfg = default_config()) {
    sys.validate();
    const int n = sys.n();
    GramianFlow zero_flow(sys, [](double) { return 0.0; }, horizon, cfg);
    GramianFlow u_flow(sys, u, horizon, cfg);

    DeviationBound out;
    const int tgrid = 400;
    for (int i = 0; i <= tgrid; ++i) {
        double t = horizon * i / tgrid;
        Eigen::JacobiSVD<Eigen::MatrixXd> svd0(zero_flow.phi(t));
        out.M = std::max(out.M, svd0.singularValues()(0));
        Eigen::JacobiSVD<Eigen::MatrixXd> svdd(u_flow.phi(t) - zero_flow.phi(t));
        out.lhs = std::max(out.lhs, svdd.singularValues()(0));
        out.u_M = std::max(out.u_M, std::abs(u(t)));
    }
    for (int i = 0; i < 1000; ++i) out.u_M = std::max(out.u_M, std::abs(u(horizon * i / 999.0)));
    Eigen::JacobiSVD<Eigen::MatrixXd> svdb(sys.B);
    double bnorm = svdb.singularValues()(0);
    out.K = out.M * bnorm * horizon;
    out.rhs = out.M * out.K * out.u_M * std::exp(out.K * out.u_M);
    (void)n;
    return out;
}

// ---------------------------------------------------------------------------
// Near-target certificate: a ball radius R and a perturbation budget eta1
// such that any trajectory confined to B(0, R) over [0, T], under any
// perturbation of sup-norm below eta1, produces an observable input.

struct NearTargetReport {
    double R = 0.0;
    double eta1 = 0.0;
    double eta0 = 0.0;
    double M = 0.0;
    double K = 0.0;
    double u_M_at_R = 0.0;
};

inline NearTargetReport near_target_radius(const BilinearSystem& sys, const SmoothField& lambda, double horizon,
                                           const Region& k1, int sphere_resolution = 64,
                                           const Config& cfg = default_config()) {
    sys.validate();
    SmoothField lam = lambda;
    lam.require_vanishes_at_origin();

    NearTargetReport rep;
    auto e0 = eta0(sys, horizon, sphere_resolution, cfg);
    rep.eta0 = e0.eta0;
    if (rep.eta0 <= 1e-12) throw std::invalid_argument("near_target_radius: (C, A) is not observable (eta0 = 0)");

    GramianFlow flow(sys, [](double) { return 0.0; }, horizon, cfg);
    const int tgrid = 400;
    for (int i = 0; i <= tgrid; ++i) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(flow.phi(horizon * i / tgrid));
        rep.M = std::max(rep.M, svd.singularValues()(0));
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svdb(sys.B);
    rep.K = rep.M * svdb.singularValues()(0) * horizon;

    auto g = [&](double x) { return rep.M * rep.K * x * std::exp(rep.K * x); };
    // eta1 solves g(eta1) = eta0 / 2 (monotone, bisection)
    double hi = 1.0;
    while (g(hi) < rep.eta0 / 2) hi *= 2.0;
    double lo = 0.0;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        (g(mid) < rep.eta0 / 2 ? lo : hi) = mid;
    }
    rep.eta1 = lo;

    // largest ball inside K1 (0 must be interior)
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(sys.n());
    if (!k1.contains(zero)) throw std::invalid_argument("near_target_radius: 0 must lie in K1");
    double r_max = std::numeric_limits<double>::infinity();
    if (k1.is_box()) {
        for (int i = 0; i < sys.n(); ++i)
            r_max = std::min({r_max, -k1.box().lo(i), k1.box().hi(i)});
    } else {
        r_max = k1.annulus().outer;
    }
    if (!(r_max > 0)) throw std::invalid_argument("near_target_radius: 0 must be interior to K1");

    auto u_sup_on_ball = [&](double radius) {
        double m = 0.0;
        auto dirs = sphere_points(sys.n(), 32);
        for (int ri = 1; ri <= 16; ++ri)
            for (const auto& d : dirs) m = std::max(m, std::abs(lam.value(radius * ri / 16.0 * d)));
        return m;
    };
    auto condition = [&](double radius) { return g(u_sup_on_ball(radius) + rep.eta1) < 0.95 * rep.eta0; };

    if (condition(r_max)) {
        rep.R = r_max;
    } else {
        double rlo = 0.0, rhi = r_max;
        for (int it = 0; it < 60; ++it) {
            double mid = 0.5 * (rlo + rhi);
            (condition(mid) ? rlo : rhi) = mid;
        }
        rep.R = rlo;
    }
    if (!(rep.R > 0)) throw std::invalid_argument("near_target_radius: no positive radius satisfies the bound");
    rep.u_M_at_R = u_sup_on_ball(rep.R);
    return rep;
}

// ---------------------------------------------------------------------------
// End-to-end observability verdict over a grid of initial conditions.

struct VerdictRow {
    CoupledState initial;
    double lambda_min = 0.0;
    double tol = 0.0;
    bool observable = false;
    bool blew_up = false;
    std::optional<int> k0;  // first nonvanishing output-derivative order
};

struct VerdictReport {
    std::vector<VerdictRow> rows;
    double worst_lambda_min = 0.0;
    double worst_tol = 0.0;
    int max_k0 = -1;
    bool all_observable = false;
};

inline VerdictReport observability_verdict(const BilinearSystem& sys, const ObserverSpec& spec,
                                           const SmoothField& lambda, const SmoothField& delta,
                                           const std::vector<CoupledState>& grid, double horizon,
                                           const Config& cfg = default_config()) {
    if (grid.empty()) throw std::invalid_argument("observability_verdict: empty initial grid");
    VerdictReport rep;
    rep.rows.resize(grid.size());
    parallel_for(grid.size(), [&](size_t i) {
        VerdictRow row;
        row.initial = grid[i];
        try {
            Trajectory traj = integrate_coupled(sys, spec, lambda, delta, grid[i], horizon, cfg);
            auto gram = gramian(sys, traj, horizon, cfg);
            row.lambda_min = gram.lambda_min;
            row.tol = gram.tol_used;
            row.observable = gram.observable;
            row.k0 = main_eq_check(sys, spec, lambda, delta, grid[i], default_jet_kmax(sys.n()), cfg.jet_tol).k0;
        } catch (const blow_up_error&) {
            row.blew_up = true;
            row.observable = false;
        }
        rep.rows[i] = std::move(row);
    });
    rep.all_observable = true;
    bool first = true;
    for (const auto& row : rep.rows) {
        if (!row.observable) rep.all_observable = false;
        if (row.k0) rep.max_k0 = std::max(rep.max_k0, *row.k0);
        if (first || row.lambda_min < rep.worst_lambda_min) {
            rep.worst_lambda_min = row.lambda_min;
            rep.worst_tol = row.tol;
            first = false;
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Trajectory CSV export: one row per sample with the estimate, error, input,
// distinguishability output, and cumulative Gramian floor.

inline std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void export_trajectory_csv(std::ostream& os, const BilinearSystem& sys, const Trajectory& traj,
                                  int samples = 200, const Config& cfg = default_config()) {
    const int n = sys.n();
    GramianFlow flow(sys, traj.input_trace(), traj.horizon(), cfg);
    os << "t";
    for (int i = 1; i <= n; ++i) os << ",xhat_" << i;
    for (int i = 1; i <= n; ++i) os << ",eps_" << i;
    os << ",eps_norm,u,C_omega,lambda_min_W\n";
    for (int s = 0; s <= samples; ++s) {
        double t = traj.horizon() * s / samples;
        CoupledState st = traj.at(t);
        Eigen::MatrixXd w = flow.gramian_at(t);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w);
        Eigen::VectorXd cw = sys.C * st.omega;
        os << format_g17(t);
        for (int i = 0; i < n; ++i) os << "," << format_g17(st.xhat(i));
        for (int i = 0; i < n; ++i) os << "," << format_g17(st.eps(i));
        os << "," << format_g17(st.eps.norm());
        os << "," << format_g17(traj.input_at(t));
        os << "," << format_g17(sys.output_dim() == 1 ? cw(0) : cw.norm());
        os << "," << format_g17(es.eigenvalues()(0));
        os << "\n";
    }
}

}  // namespace obsv
