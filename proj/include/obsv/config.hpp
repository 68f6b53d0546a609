#pragma once

#include <stdexcept>
#include <string>

namespace obsv {

// Global numeric policy. Every threshold that decides a verdict lives here,
// so a run is reproducible from the scenario file alone.
struct Config {
    // Numerical rank rule: rank = #{sigma > max(rows, cols) * sigma_max * rank_svd_rtol}.
    double rank_svd_rtol = 1e-12;
    // Hard cap on the P_k sequence length; term count grows quickly past this.
    int kmax_limit = 12;
    // "Nonzero derivative" threshold, scaled by the largest jet magnitude seen.
    double jet_tol = 1e-9;
    // Gramian verdict: observable iff lambda_min(W) > tol_obs_rel * trace(W)/n.
    double tol_obs_rel = 1e-8;
    // State-norm bound; beyond this an integration aborts with a blow-up event.
    double blow_up_norm = 1e8;
    double integrator_rtol = 1e-10;
    double integrator_atol = 1e-12;
    // Residual allowed on exact identities evaluated in the float backend.
    double identity_tol = 1e-10;
};

inline const Config& default_config() {
    static const Config cfg{};
    return cfg;
}

// Thrown when a mathematical identity the library is built on fails to hold
// numerically. This always signals an implementation bug, not bad input data.
struct identity_violation : std::logic_error {
    explicit identity_violation(const std::string& what) : std::logic_error(what) {}
};

}  // namespace obsv
