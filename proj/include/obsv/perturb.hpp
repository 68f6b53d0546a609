#pragma once

// The implementable perturbation class: finite sums of radial mollifier
// bumps whose supports avoid the ball B(0, R), with C^k-norm estimation and
// a randomized search for a perturbation restoring closed-loop
// observability.

#include "obsv/fields.hpp"
#include "obsv/parallel.hpp"
#include "obsv/region.hpp"
#include "obsv/simulate.hpp"

#include <random>
#include <utility>

namespace obsv {

struct BumpPerturbation {
    std::vector<BumpAtom> atoms;

    bool empty() const {
        for (const auto& a : atoms)
            if (a.amplitude != 0.0) return false;
        return true;
    }

    // Membership in the class vanishing on B(0, R): every support ball must
    // be disjoint from the closed ball, i.e. |c| - r > R.
    bool vanishes_on_ball(double radius) const {
        for (const auto& a : atoms)
            if (a.center.norm() - a.radius <= radius) return false;
        return true;
    }

    void validate(int n, double radius) const {
        for (const auto& a : atoms) {
            if (a.center.size() != n || a.radius <= 0.0 || !a.center.allFinite() || !std::isfinite(a.amplitude))
                throw std::invalid_argument("BumpPerturbation: malformed atom");
        }
        if (!vanishes_on_ball(radius))
            throw std::invalid_argument("BumpPerturbation: an atom support touches the protected ball");
    }

    SmoothField field(int n) const { return SmoothField::bump_sum(n, atoms); }

    BumpPerturbation scaled(double s) const {
        BumpPerturbation out = *this;
        for (auto& a : out.atoms) a.amplitude *= s;
        return out;
    }
};

struct NormEstimate {
    double value = 0.0;
    int order = 0;
    int grid_points = 0;  // total evaluation points, grid plus ring refinement
};

// Estimate of sup over K of all mixed partials up to order k. A sup over a
// continuum sampled on a finite grid is an estimate; candidate scaling keeps
// a 0.9 safety factor against it.
inline NormEstimate norm_k_K(const BumpPerturbation& delta, int k, const Region& domain, int grid_per_dim = 17,
                             int ring_directions = 16) {
    const int n = domain.dim();
    NormEstimate est;
    est.order = k;
    SmoothField f = delta.field(n);

    auto visit = [&](const Eigen::VectorXd& x) {
        ++est.grid_points;
        MultiPoly t = f.taylor(x, k);
        for (const auto& [alpha, c] : t.coeffs())
            est.value = std::max(est.value, std::abs(c) * mono_factorial(alpha));
    };

    for (const auto& x : domain.grid(grid_per_dim)) visit(x);
    // derivative magnitudes peak on rings inside each support; refine there
    auto dirs = sphere_points(n, ring_directions);
    for (const auto& a : delta.atoms) {
        if (a.amplitude == 0.0) continue;
        for (int ri = 1; ri <= 12; ++ri) {
            double rho = a.radius * ri / 12.5;
            for (const auto& d : dirs) {
                Eigen::VectorXd x = a.center + rho * d;
                if (domain.contains(x)) visit(x);
            }
        }
    }
    return est;
}

struct CandidateSpec {
    double protected_radius = 0.0;  // R
    Region k1;
    double eta = 0.0;   // C^k norm budget
    int k = 2;          // derivative order of the norm
    int atom_budget = 3;
    double center_margin_rel = 0.1;  // centers stay outside B(0, R (1 + margin))
    int norm_grid = 17;
};

// Draws one random admissible perturbation, amplitudes rescaled so the
// estimated norm is 0.9 * eta. Deterministic in the seed.
inline BumpPerturbation sample_candidate(std::uint64_t seed, const CandidateSpec& spec) {
    const int n = spec.k1.dim();
    BumpPerturbation out;
    if (spec.eta <= 0.0) return out;
    std::mt19937_64 rng(seed);
    Box bb = spec.k1.bounding_box();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> amp(0.0, 1.0);
    const double rmin = spec.protected_radius * (1.0 + spec.center_margin_rel);

    int draws = 0;
    while (static_cast<int>(out.atoms.size()) < spec.atom_budget) {
        if (++draws > 200 * spec.atom_budget)
            throw std::invalid_argument("sample_candidate: no room for atom supports in K1 outside the ball");
        Eigen::VectorXd c(n);
        for (int i = 0; i < n; ++i) c(i) = bb.lo(i) + unit(rng) * (bb.hi(i) - bb.lo(i));
        double a = amp(rng);
        double rfrac = 0.3 + 0.6 * unit(rng);
        if (!spec.k1.contains(c) || c.norm() <= rmin) continue;
        BumpAtom atom;
        atom.center = c;
        atom.radius = rfrac * (c.norm() - spec.protected_radius);
        atom.amplitude = a;
        out.atoms.push_back(std::move(atom));
    }
    auto nrm = norm_k_K(out, spec.k, spec.k1, spec.norm_grid);
    if (nrm.value > 0.0) out = out.scaled(0.9 * spec.eta / nrm.value);
    return out;
}

// ---------------------------------------------------------------------------
// Randomized search for an observability-restoring perturbation.

struct SearchScenario {
    CandidateSpec candidate;
    std::vector<CoupledState> grid;  // initial conditions, omega0 on the sphere
    double horizon = 1.0;
};

struct SearchCandidateRecord {
    int index = -1;
    double worst_margin = 0.0;  // min over rows of lambda_min / tol
    bool accepted = false;
};

struct SearchReport {
    bool accepted = false;
    int accepted_index = -1;
    int candidates_tried = 0;
    BumpPerturbation best;
    double best_margin = 0.0;
    VerdictReport best_verdict;
    std::vector<SearchCandidateRecord> trace;
    bool warned_ca_unobservable = false;
    bool warned_cb_unobservable = false;
};

// Tries the zero perturbation first, then random candidates in index order;
// accepts the first one whose whole initial grid gets an observable Gramian
// verdict. Budget exhaustion returns the best candidate seen, not an error.
inline SearchReport search_delta(const BilinearSystem& sys, const ObserverSpec& spec, const SmoothField& lambda,
                                 const SearchScenario& scenario, int budget, std::uint64_t seed,
                                 const Config& cfg = default_config()) {
    sys.validate();
    if (scenario.grid.empty()) throw std::invalid_argument("search_delta: empty initial grid");
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(sys.n());
    if (!scenario.candidate.k1.contains(zero))
        throw std::invalid_argument("search_delta: 0 must lie in the interior of K1");

    SearchReport rep;
    rep.warned_ca_unobservable = !is_observable_pair(sys.C, sys.A, cfg);
    rep.warned_cb_unobservable = !is_observable_pair(sys.C, sys.B, cfg);

    auto candidate_for = [&](int index) {
        if (index == 0) return BumpPerturbation{};
        return sample_candidate(seed + 1000003ull * static_cast<std::uint64_t>(index), scenario.candidate);
    };
    auto evaluate = [&](const BumpPerturbation& delta) {
        SmoothField df = delta.atoms.empty() ? SmoothField::zero(sys.n()) : delta.field(sys.n());
        VerdictReport v;
        try {
            v = observability_verdict(sys, spec, lambda, df, scenario.grid, scenario.horizon, cfg);
        } catch (const step_rejection_error&) {
            // a candidate that stalls the integrator is simply a failed candidate
            return std::make_pair(VerdictReport{}, 0.0);
        }
        double margin = std::numeric_limits<double>::infinity();
        for (const auto& row : v.rows) {
            double m = row.blew_up ? 0.0 : (row.tol > 0 ? row.lambda_min / row.tol : 0.0);
            margin = std::min(margin, m);
        }
        return std::make_pair(std::move(v), margin);
    };

    const int batch = std::max(1, max_threads());
    bool have_best = false;
    for (int base = 0; base <= budget && !rep.accepted; base += batch) {
        int count = std::min(batch, budget + 1 - base);
        if (count <= 0) break;
        std::vector<std::pair<VerdictReport, double>> results(static_cast<size_t>(count));
        std::vector<BumpPerturbation> cands(static_cast<size_t>(count));
        parallel_for(static_cast<size_t>(count), [&](size_t i) {
            cands[i] = candidate_for(base + static_cast<int>(i));
            results[i] = evaluate(cands[i]);
        });
        // reduction strictly in candidate order keeps the outcome
        // independent of thread scheduling
        for (int i = 0; i < count && !rep.accepted; ++i) {
            const auto& [verdict, margin] = results[static_cast<size_t>(i)];
            ++rep.candidates_tried;
            SearchCandidateRecord rec;
            rec.index = base + i;
            rec.worst_margin = margin;
            rec.accepted = verdict.all_observable;
            rep.trace.push_back(rec);
            if (!have_best || margin > rep.best_margin) {
                have_best = true;
                rep.best = cands[static_cast<size_t>(i)];
                rep.best_margin = margin;
                rep.best_verdict = verdict;
            }
            if (verdict.all_observable) {
                rep.accepted = true;
                rep.accepted_index = base + i;
                rep.best = cands[static_cast<size_t>(i)];
                rep.best_margin = margin;
                rep.best_verdict = verdict;
            }
        }
    }
    return rep;
}

}  // namespace obsv
