#pragma once

// Adaptive Dormand-Prince 5(4) integrator with dense output. The caller can
// veto a candidate step (SPD guards) and transform an accepted state
// (symmetrization); vetoed steps are retried with half the step size.

#include "obsv/config.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace obsv {

struct blow_up_error : std::runtime_error {
    double t;
    explicit blow_up_error(double at) : std::runtime_error("integration aborted: state norm blow-up"), t(at) {}
};

struct step_rejection_error : std::runtime_error {
    double t;
    step_rejection_error(const std::string& what, double at) : std::runtime_error(what), t(at) {}
};

enum class EventKind { step_rejected, guard_rejected, blow_up };

struct IntegrationEvent {
    double t = 0.0;
    EventKind kind = EventKind::step_rejected;
};

struct IntegratorOptions {
    double rtol = default_config().integrator_rtol;
    double atol = default_config().integrator_atol;
    double blow_up_norm = default_config().blow_up_norm;
    long max_steps = 2000000;
    int max_guard_halvings = 60;
    // Veto on the candidate state of a step (e.g. SPD check); false rejects.
    std::function<bool(double, const Eigen::VectorXd&)> guard;
    // Applied to each accepted state (e.g. re-symmetrization).
    std::function<void(double, Eigen::VectorXd&)> post_accept;
    // Norm the blow-up bound applies to; defaults to the full state norm.
    // Lets callers exclude blocks whose exponential growth is legitimate.
    std::function<double(const Eigen::VectorXd&)> blow_up_measure;
};

using OdeRhs = std::function<void(double, const Eigen::VectorXd&, Eigen::VectorXd&)>;

namespace dopri5 {
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                        a65 = -5103.0 / 18656;
inline constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                        e6 = 22.0 / 525, e7 = -1.0 / 40;
inline constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                        d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                        d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
}  // namespace dopri5

// One accepted step together with its quartic interpolation coefficients.
struct DenseStep {
    double t0 = 0.0;
    double h = 0.0;
    Eigen::VectorXd r1, r2, r3, r4, r5;

    Eigen::VectorXd eval(double t) const {
        double theta = (t - t0) / h;
        double th1 = 1.0 - theta;
        return r1 + theta * (r2 + th1 * (r3 + theta * (r4 + th1 * r5)));
    }
};

class DenseSolution {
  public:
    double t_begin() const { return steps_.empty() ? 0.0 : steps_.front().t0; }
    double t_end() const { return steps_.empty() ? 0.0 : steps_.back().t0 + steps_.back().h; }

    Eigen::VectorXd eval(double t) const {
        if (steps_.empty()) throw std::logic_error("DenseSolution: empty");
        if (t <= t_begin()) return steps_.front().eval(t_begin());
        if (t >= t_end()) return final_state_;
        size_t lo = 0, hi = steps_.size() - 1;
        while (lo < hi) {
            size_t mid = (lo + hi + 1) / 2;
            if (steps_[mid].t0 <= t)
                lo = mid;
            else
                hi = mid - 1;
        }
        return steps_[lo].eval(t);
    }

    const Eigen::VectorXd& final_state() const { return final_state_; }
    const std::vector<DenseStep>& steps() const { return steps_; }
    const std::vector<IntegrationEvent>& events() const { return events_; }

    void push(DenseStep s) { steps_.push_back(std::move(s)); }
    void set_final(Eigen::VectorXd y) { final_state_ = std::move(y); }
    void log(IntegrationEvent e) { events_.push_back(e); }

  private:
    std::vector<DenseStep> steps_;
    std::vector<IntegrationEvent> events_;
    Eigen::VectorXd final_state_;
};

inline DenseSolution integrate_dopri5(const OdeRhs& rhs, Eigen::VectorXd y0, double t0, double t1,
                                      const IntegratorOptions& opt = {}) {
    using namespace dopri5;
    if (!(t1 > t0)) throw std::invalid_argument("integrate_dopri5: need t1 > t0");
    const Eigen::Index n = y0.size();
    DenseSolution sol;

    Eigen::VectorXd k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), y1(n), yerr(n);
    rhs(t0, y0, k1);

    // conservative automatic initial step
    double d0 = y0.norm(), d1n = k1.norm();
    double h = (d1n > 1e-10) ? 0.01 * std::max(d0, 1.0) / d1n : (t1 - t0) / 100.0;
    h = std::min(h, (t1 - t0) / 10.0);

    double t = t0;
    long nsteps = 0;
    int guard_fails = 0;
    bool last_rejected = false;
    auto measure = [&](const Eigen::VectorXd& y) { return opt.blow_up_measure ? opt.blow_up_measure(y) : y.norm(); };

    while (t < t1) {
        if (++nsteps > opt.max_steps) throw step_rejection_error("integrate_dopri5: max step count exceeded", t);
        if (!y0.allFinite() || measure(y0) > opt.blow_up_norm) {
            sol.log({t, EventKind::blow_up});
            throw blow_up_error(t);
        }
        double hmin = 16.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(t), 1.0);
        if (h < hmin) {
            // A super-linear escape can compress the approach to infinity
            // below step resolution while the norm is still moderate; a
            // stalled step far outside the working region is the same event
            // as a norm blow-up.
            if (measure(y0) > std::sqrt(opt.blow_up_norm)) {
                sol.log({t, EventKind::blow_up});
                throw blow_up_error(t);
            }
            throw step_rejection_error("integrate_dopri5: step size underflow", t);
        }
        if (t + h > t1) h = t1 - t;

        ytmp = y0 + h * (a21 * k1);
        rhs(t + c2 * h, ytmp, k2);
        ytmp = y0 + h * (a31 * k1 + a32 * k2);
        rhs(t + c3 * h, ytmp, k3);
        ytmp = y0 + h * (a41 * k1 + a42 * k2 + a43 * k3);
        rhs(t + c4 * h, ytmp, k4);
        ytmp = y0 + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
        rhs(t + c5 * h, ytmp, k5);
        ytmp = y0 + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
        rhs(t + h, ytmp, k6);
        y1 = y0 + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        rhs(t + h, y1, k7);

        if (!y1.allFinite() || measure(y1) > opt.blow_up_norm) {
            sol.log({t, EventKind::blow_up});
            throw blow_up_error(t);
        }

        yerr = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        double err = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double sc = opt.atol + opt.rtol * std::max(std::abs(y0(i)), std::abs(y1(i)));
            double q = yerr(i) / sc;
            err += q * q;
        }
        err = std::sqrt(err / static_cast<double>(n));

        if (err > 1.0) {
            sol.log({t, EventKind::step_rejected});
            h *= std::max(0.1, 0.9 * std::pow(err, -0.2));
            last_rejected = true;
            continue;
        }
        if (opt.guard && !opt.guard(t + h, y1)) {
            sol.log({t, EventKind::guard_rejected});
            if (++guard_fails > opt.max_guard_halvings)
                throw step_rejection_error("integrate_dopri5: state guard kept rejecting steps", t);
            h *= 0.5;
            last_rejected = true;
            continue;
        }
        guard_fails = 0;

        DenseStep ds;
        ds.t0 = t;
        ds.h = h;
        ds.r1 = y0;
        ds.r2 = y1 - y0;
        ds.r3 = h * k1 - ds.r2;
        ds.r4 = ds.r2 - h * k7 - ds.r3;
        ds.r5 = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
        sol.push(std::move(ds));

        t += h;
        y0 = y1;
        if (opt.post_accept) {
            opt.post_accept(t, y0);
            rhs(t, y0, k7);  // state may have moved; refresh the FSAL slope
        }
        k1 = k7;

        double fac = 0.9 * std::pow(std::max(err, 1e-10), -0.2);
        fac = std::min(last_rejected ? 1.0 : 5.0, std::max(0.2, fac));
        h *= fac;
        last_rejected = false;
    }
    sol.set_final(y0);
    return sol;
}

// Fixed-step variant of the same pair; used by convergence-order tests.
inline Eigen::VectorXd integrate_dopri5_fixed(const OdeRhs& rhs, Eigen::VectorXd y0, double t0, double t1,
                                              int nsteps) {
    using namespace dopri5;
    const double h = (t1 - t0) / nsteps;
    const Eigen::Index n = y0.size();
    Eigen::VectorXd k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), ytmp(n);
    double t = t0;
    for (int s = 0; s < nsteps; ++s) {
        rhs(t, y0, k1);
        ytmp = y0 + h * (a21 * k1);
        rhs(t + c2 * h, ytmp, k2);
        ytmp = y0 + h * (a31 * k1 + a32 * k2);
        rhs(t + c3 * h, ytmp, k3);
        ytmp = y0 + h * (a41 * k1 + a42 * k2 + a43 * k3);
        rhs(t + c4 * h, ytmp, k4);
        ytmp = y0 + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
        rhs(t + c5 * h, ytmp, k5);
        ytmp = y0 + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
        rhs(t + h, ytmp, k6);
        y0 = y0 + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        t += h;
    }
    return y0;
}

}  // namespace obsv
