#pragma once

// Scenario files: one JSON file describes one experiment. Parsing is strict:
// unknown keys, inconsistent dimensions and violated positivity constraints
// are hard errors raised before any computation starts.

#include "obsv/perturb.hpp"
#include "obsv/simulate.hpp"

#include <json.hpp>

#include <fstream>
#include <optional>
#include <set>
#include <string>

namespace obsv {

struct scenario_error : std::runtime_error {
    explicit scenario_error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

using nlohmann::json;

inline void require_keys(const json& j, const std::set<std::string>& allowed, const std::string& ctx) {
    if (!j.is_object()) throw scenario_error(ctx + ": expected an object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw scenario_error(ctx + ": unknown key '" + key + "'");
}

inline const json& require(const json& j, const std::string& key, const std::string& ctx) {
    if (!j.contains(key)) throw scenario_error(ctx + ": missing key '" + key + "'");
    return j.at(key);
}

inline double as_number(const json& j, const std::string& ctx) {
    if (!j.is_number()) throw scenario_error(ctx + ": expected a number");
    return j.get<double>();
}

inline int as_int(const json& j, const std::string& ctx) {
    if (!j.is_number_integer()) throw scenario_error(ctx + ": expected an integer");
    return j.get<int>();
}

inline Eigen::VectorXd parse_vector(const json& j, const std::string& ctx) {
    if (!j.is_array() || j.empty()) throw scenario_error(ctx + ": expected a nonempty array");
    Eigen::VectorXd v(j.size());
    for (size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = as_number(j[i], ctx);
    return v;
}

inline Eigen::MatrixXd parse_matrix(const json& j, const std::string& ctx) {
    if (!j.is_array() || j.empty()) throw scenario_error(ctx + ": expected a nonempty array of rows");
    const size_t cols = j[0].is_array() ? j[0].size() : 0;
    if (cols == 0) throw scenario_error(ctx + ": rows must be nonempty arrays");
    Eigen::MatrixXd m(j.size(), cols);
    for (size_t r = 0; r < j.size(); ++r) {
        if (!j[r].is_array() || j[r].size() != cols) throw scenario_error(ctx + ": ragged rows");
        for (size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = as_number(j[r][c], ctx);
    }
    return m;
}

inline Region parse_region(const json& j, int n, const std::string& ctx) {
    std::string type = require(j, "type", ctx).get<std::string>();
    if (type == "box") {
        require_keys(j, {"type", "lo", "hi"}, ctx);
        Box b;
        b.lo = parse_vector(require(j, "lo", ctx), ctx + ".lo");
        b.hi = parse_vector(require(j, "hi", ctx), ctx + ".hi");
        if (b.lo.size() != n || b.hi.size() != n) throw scenario_error(ctx + ": dimension mismatch");
        if ((b.hi.array() < b.lo.array()).any()) throw scenario_error(ctx + ": hi must dominate lo");
        return Region(b);
    }
    if (type == "annulus") {
        require_keys(j, {"type", "center", "inner", "outer"}, ctx);
        Annulus a;
        a.center = parse_vector(require(j, "center", ctx), ctx + ".center");
        a.inner = as_number(require(j, "inner", ctx), ctx + ".inner");
        a.outer = as_number(require(j, "outer", ctx), ctx + ".outer");
        if (a.center.size() != n) throw scenario_error(ctx + ": dimension mismatch");
        if (a.inner < 0 || a.outer <= a.inner) throw scenario_error(ctx + ": need 0 <= inner < outer");
        return Region(a);
    }
    throw scenario_error(ctx + ": unknown region type '" + type + "'");
}

}  // namespace detail

struct Scenario {
    BilinearSystem system;
    SmoothField feedback = SmoothField::zero(1);
    ObserverSpec observer;
    Eigen::MatrixXd xi0;

    Region k1;
    std::optional<Region> k2;                                   // eps0 range; defaults to {0}
    std::optional<std::pair<Eigen::VectorXd, Eigen::VectorXd>> k3_diag;  // xi0 diagonal range

    double protected_radius = 0.0;  // R
    double eta = 0.0;
    int k_order = 2;
    int atom_budget = 3;
    double center_margin = 0.1;

    double horizon = 1.0;
    int initial_per_dim = 2;
    int eps_per_dim = 1;
    int xi_samples = 1;
    int sphere = 8;
    int norm_grid = 17;
    int time_samples = 200;
    std::vector<CoupledState> explicit_initials;

    Config cfg;
    int search_budget = 100;
    std::uint64_t seed = 0;
    std::string output_dir = "out";

    // Full initial-condition grid: explicit list when given, otherwise the
    // product of the K1/K2/K3 grids with the sphere samples.
    std::vector<CoupledState> initial_grid() const {
        if (!explicit_initials.empty()) return explicit_initials;
        const int n = system.n();
        std::vector<CoupledState> out;
        std::vector<Eigen::VectorXd> eps_pts;
        if (k2)
            eps_pts = k2->grid(eps_per_dim);
        else
            eps_pts.push_back(Eigen::VectorXd::Zero(n));
        std::vector<Eigen::MatrixXd> xis;
        if (k3_diag && xi_samples > 1) {
            for (int s = 0; s < xi_samples; ++s) {
                double t = xi_samples == 1 ? 0.5 : static_cast<double>(s) / (xi_samples - 1);
                Eigen::VectorXd d = k3_diag->first + t * (k3_diag->second - k3_diag->first);
                xis.push_back(d.asDiagonal());
            }
        } else {
            xis.push_back(xi0);
        }
        auto omegas = sphere_points(n, sphere);
        for (const auto& xh : k1.grid(initial_per_dim))
            for (const auto& ep : eps_pts)
                for (const auto& xi : xis)
                    for (const auto& om : omegas) out.push_back({xh, ep, xi, om});
        if (out.size() > 10000) throw scenario_error("initial grid exceeds 10000 points; shrink the grid counts");
        if (out.empty()) throw scenario_error("initial grid is empty");
        return out;
    }

    SearchScenario search_scenario() const {
        SearchScenario sc;
        sc.candidate.protected_radius = protected_radius;
        sc.candidate.k1 = k1;
        sc.candidate.eta = eta;
        sc.candidate.k = k_order;
        sc.candidate.atom_budget = atom_budget;
        sc.candidate.center_margin_rel = center_margin;
        sc.candidate.norm_grid = norm_grid;
        sc.grid = initial_grid();
        sc.horizon = horizon;
        return sc;
    }
};

inline Scenario parse_scenario_json(const nlohmann::json& root) {
    using detail::as_int;
    using detail::as_number;
    using detail::parse_matrix;
    using detail::parse_region;
    using detail::parse_vector;
    using detail::require;
    using detail::require_keys;

    require_keys(root,
                 {"system", "feedback", "observer", "sets", "perturbation", "horizon", "grids",
                  "initial_conditions", "tolerances", "search", "seed", "output_dir"},
                 "scenario");

    Scenario sc;

    const auto& jsys = require(root, "system", "scenario");
    require_keys(jsys, {"A", "B", "C", "b"}, "system");
    sc.system.A = parse_matrix(require(jsys, "A", "system"), "system.A");
    sc.system.B = parse_matrix(require(jsys, "B", "system"), "system.B");
    sc.system.C = parse_matrix(require(jsys, "C", "system"), "system.C");
    sc.system.b = parse_vector(require(jsys, "b", "system"), "system.b");
    try {
        sc.system.validate();
    } catch (const std::invalid_argument& e) {
        throw scenario_error(std::string("system: ") + e.what());
    }
    const int n = sc.system.n();

    const auto& jfb = require(root, "feedback", "scenario");
    require_keys(jfb, {"polynomial"}, "feedback");
    MultiPoly poly(n);
    for (const auto& term : require(jfb, "polynomial", "feedback")) {
        require_keys(term, {"exponents", "coefficient"}, "feedback.polynomial[]");
        const auto& je = require(term, "exponents", "feedback.polynomial[]");
        if (!je.is_array() || static_cast<int>(je.size()) != n)
            throw scenario_error("feedback.polynomial[].exponents: need exactly n entries");
        Mono mono;
        for (const auto& e : je) {
            int v = as_int(e, "feedback.polynomial[].exponents");
            if (v < 0) throw scenario_error("feedback.polynomial[].exponents: negative exponent");
            mono.push_back(v);
        }
        poly.add(mono, as_number(require(term, "coefficient", "feedback.polynomial[]"), "feedback.coefficient"));
    }
    sc.feedback = SmoothField::polynomial(poly);
    try {
        sc.feedback.require_vanishes_at_origin();
    } catch (const std::invalid_argument& e) {
        throw scenario_error(std::string("feedback: ") + e.what());
    }

    const auto& job = require(root, "observer", "scenario");
    std::string kind = require(job, "kind", "observer").get<std::string>();
    if (kind == "kalman") {
        require_keys(job, {"kind", "Q", "xi0"}, "observer");
        sc.observer = ObserverSpec::kalman(parse_matrix(require(job, "Q", "observer"), "observer.Q"));
        if (!is_spd(sc.observer.Q)) throw scenario_error("observer.Q: must be symmetric positive definite");
    } else if (kind == "luenberger") {
        require_keys(job, {"kind", "xi0"}, "observer");
        sc.observer = ObserverSpec::luenberger();
    } else {
        throw scenario_error("observer.kind: expected 'kalman' or 'luenberger'");
    }
    sc.xi0 = parse_matrix(require(job, "xi0", "observer"), "observer.xi0");
    if (sc.xi0.rows() != n || !is_spd(sc.xi0)) throw scenario_error("observer.xi0: must be n x n SPD");

    const auto& jsets = require(root, "sets", "scenario");
    require_keys(jsets, {"K1", "K2", "K3"}, "sets");
    sc.k1 = parse_region(require(jsets, "K1", "sets"), n, "sets.K1");
    if (jsets.contains("K2")) sc.k2 = parse_region(jsets.at("K2"), n, "sets.K2");
    if (jsets.contains("K3")) {
        const auto& jk3 = jsets.at("K3");
        require_keys(jk3, {"type", "lo", "hi"}, "sets.K3");
        if (require(jk3, "type", "sets.K3").get<std::string>() != "diag_box")
            throw scenario_error("sets.K3.type: only 'diag_box' is supported");
        auto lo = parse_vector(require(jk3, "lo", "sets.K3"), "sets.K3.lo");
        auto hi = parse_vector(require(jk3, "hi", "sets.K3"), "sets.K3.hi");
        if (lo.size() != n || hi.size() != n || (lo.array() <= 0).any() || (hi.array() < lo.array()).any())
            throw scenario_error("sets.K3: need 0 < lo <= hi of dimension n");
        sc.k3_diag = std::make_pair(lo, hi);
    }

    const auto& jp = require(root, "perturbation", "scenario");
    require_keys(jp, {"R", "eta", "k", "atoms", "center_margin"}, "perturbation");
    sc.protected_radius = as_number(require(jp, "R", "perturbation"), "perturbation.R");
    sc.eta = as_number(require(jp, "eta", "perturbation"), "perturbation.eta");
    sc.k_order = as_int(require(jp, "k", "perturbation"), "perturbation.k");
    sc.atom_budget = as_int(require(jp, "atoms", "perturbation"), "perturbation.atoms");
    if (jp.contains("center_margin"))
        sc.center_margin = as_number(jp.at("center_margin"), "perturbation.center_margin");
    if (sc.protected_radius <= 0 || sc.eta < 0 || sc.k_order < 0 || sc.atom_budget < 1 || sc.center_margin < 0)
        throw scenario_error("perturbation: R > 0, eta >= 0, k >= 0, atoms >= 1 required");

    sc.horizon = as_number(require(root, "horizon", "scenario"), "horizon");
    if (!(sc.horizon > 0)) throw scenario_error("horizon: must be positive");

    const auto& jg = require(root, "grids", "scenario");
    require_keys(jg, {"initial_per_dim", "eps_per_dim", "xi_samples", "sphere", "norm_grid", "time_samples"},
                 "grids");
    sc.initial_per_dim = as_int(require(jg, "initial_per_dim", "grids"), "grids.initial_per_dim");
    sc.sphere = as_int(require(jg, "sphere", "grids"), "grids.sphere");
    if (jg.contains("eps_per_dim")) sc.eps_per_dim = as_int(jg.at("eps_per_dim"), "grids.eps_per_dim");
    if (jg.contains("xi_samples")) sc.xi_samples = as_int(jg.at("xi_samples"), "grids.xi_samples");
    if (jg.contains("norm_grid")) sc.norm_grid = as_int(jg.at("norm_grid"), "grids.norm_grid");
    if (jg.contains("time_samples")) sc.time_samples = as_int(jg.at("time_samples"), "grids.time_samples");
    if (sc.initial_per_dim < 1 || sc.sphere < 1 || sc.eps_per_dim < 1 || sc.xi_samples < 1 || sc.norm_grid < 3 ||
        sc.time_samples < 2)
        throw scenario_error("grids: counts out of range");

    if (root.contains("initial_conditions")) {
        for (const auto& jic : root.at("initial_conditions")) {
            require_keys(jic, {"xhat", "eps", "omega", "xi"}, "initial_conditions[]");
            CoupledState st;
            st.xhat = parse_vector(require(jic, "xhat", "initial_conditions[]"), "initial_conditions[].xhat");
            st.eps = parse_vector(require(jic, "eps", "initial_conditions[]"), "initial_conditions[].eps");
            st.omega = parse_vector(require(jic, "omega", "initial_conditions[]"), "initial_conditions[].omega");
            st.xi = jic.contains("xi") ? parse_matrix(jic.at("xi"), "initial_conditions[].xi") : sc.xi0;
            try {
                st.validate(n);
            } catch (const std::invalid_argument& e) {
                throw scenario_error(std::string("initial_conditions[]: ") + e.what());
            }
            if (std::abs(st.omega.norm() - 1.0) > 1e-9)
                throw scenario_error("initial_conditions[].omega: must lie on the unit sphere");
            if (!is_spd(st.xi)) throw scenario_error("initial_conditions[].xi: must be SPD");
            sc.explicit_initials.push_back(std::move(st));
        }
    }

    if (root.contains("tolerances")) {
        const auto& jt = root.at("tolerances");
        require_keys(jt,
                     {"tol_obs_rel", "rank_svd_rtol", "jet_tol", "integrator_rtol", "integrator_atol",
                      "blow_up_norm", "kmax_limit", "identity_tol"},
                     "tolerances");
        if (jt.contains("tol_obs_rel")) sc.cfg.tol_obs_rel = as_number(jt.at("tol_obs_rel"), "tolerances");
        if (jt.contains("rank_svd_rtol")) sc.cfg.rank_svd_rtol = as_number(jt.at("rank_svd_rtol"), "tolerances");
        if (jt.contains("jet_tol")) sc.cfg.jet_tol = as_number(jt.at("jet_tol"), "tolerances");
        if (jt.contains("integrator_rtol")) sc.cfg.integrator_rtol = as_number(jt.at("integrator_rtol"), "tolerances");
        if (jt.contains("integrator_atol")) sc.cfg.integrator_atol = as_number(jt.at("integrator_atol"), "tolerances");
        if (jt.contains("blow_up_norm")) sc.cfg.blow_up_norm = as_number(jt.at("blow_up_norm"), "tolerances");
        if (jt.contains("kmax_limit")) sc.cfg.kmax_limit = as_int(jt.at("kmax_limit"), "tolerances");
        if (jt.contains("identity_tol")) sc.cfg.identity_tol = as_number(jt.at("identity_tol"), "tolerances");
        if (sc.cfg.tol_obs_rel <= 0 || sc.cfg.rank_svd_rtol <= 0 || sc.cfg.jet_tol <= 0 ||
            sc.cfg.integrator_rtol <= 0 || sc.cfg.integrator_atol <= 0 || sc.cfg.blow_up_norm <= 0 ||
            sc.cfg.kmax_limit < 1)
            throw scenario_error("tolerances: all thresholds must be positive");
    }

    if (root.contains("search")) {
        const auto& js = root.at("search");
        require_keys(js, {"budget"}, "search");
        sc.search_budget = as_int(require(js, "budget", "search"), "search.budget");
        if (sc.search_budget < 0) throw scenario_error("search.budget: must be >= 0");
    }

    if (root.contains("seed")) {
        if (!root.at("seed").is_number_unsigned() && !root.at("seed").is_number_integer())
            throw scenario_error("seed: expected an integer");
        sc.seed = root.at("seed").get<std::uint64_t>();
    }
    if (root.contains("output_dir")) sc.output_dir = root.at("output_dir").get<std::string>();
    return sc;
}

inline Scenario parse_scenario_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw scenario_error("cannot open scenario file: " + path);
    nlohmann::json root;
    try {
        in >> root;
    } catch (const nlohmann::json::exception& e) {
        throw scenario_error(std::string("JSON parse error: ") + e.what());
    }
    return parse_scenario_json(root);
}

// ---------------------------------------------------------------------------
// Perturbation (de)serialization; doubles survive the JSON round trip
// exactly (shortest-round-trip formatting).

inline nlohmann::json delta_to_json(const BumpPerturbation& delta) {
    nlohmann::json atoms = nlohmann::json::array();
    for (const auto& a : delta.atoms) {
        nlohmann::json ja;
        ja["center"] = std::vector<double>(a.center.data(), a.center.data() + a.center.size());
        ja["radius"] = a.radius;
        ja["amplitude"] = a.amplitude;
        atoms.push_back(ja);
    }
    return nlohmann::json{{"atoms", atoms}};
}

inline BumpPerturbation delta_from_json(const nlohmann::json& j, int n) {
    detail::require_keys(j, {"atoms"}, "delta");
    BumpPerturbation out;
    for (const auto& ja : detail::require(j, "atoms", "delta")) {
        detail::require_keys(ja, {"center", "radius", "amplitude"}, "delta.atoms[]");
        BumpAtom a;
        a.center = detail::parse_vector(detail::require(ja, "center", "delta"), "delta.atoms[].center");
        if (a.center.size() != n) throw scenario_error("delta.atoms[].center: dimension mismatch");
        a.radius = detail::as_number(detail::require(ja, "radius", "delta"), "delta.atoms[].radius");
        a.amplitude = detail::as_number(detail::require(ja, "amplitude", "delta"), "delta.atoms[].amplitude");
        if (a.radius <= 0) throw scenario_error("delta.atoms[].radius: must be positive");
        out.atoms.push_back(std::move(a));
    }
    return out;
}

}  // namespace obsv
