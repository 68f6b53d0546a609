// Acceptance suite: one check per shipped guarantee, each printed as a
// single pass/fail line. Exits nonzero if any criterion fails.
//
// usage: acceptance <fixtures-dir> [<cli-binary>]

#include "obsv/identities.hpp"
#include "obsv/perturb.hpp"
#include "obsv/scenario.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace obsv;

namespace {

std::string g_fixtures;
std::string g_cli;

BilinearSystem sys2d() {
    BilinearSystem s;
    s.A.resize(2, 2);
    s.A << 0, 1, 0, 0;
    s.B.resize(2, 2);
    s.B << 0, 1, 1, 0;
    s.C.resize(1, 2);
    s.C << 1, 0;
    s.b.resize(2);
    s.b << 0, 1;
    return s;
}

SmoothField linear_lambda() {
    MultiPoly p(2);
    p.add({1, 0}, -1.0);
    p.add({0, 1}, -1.0);
    return SmoothField::polynomial(p);
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome c1_exact_identity_suite() {
    auto t0 = std::chrono::steady_clock::now();
    IdentitySuiteOptions opt;
    opt.num_systems = 10;
    opt.max_dim = 3;
    opt.imax = 4;
    opt.kmax = 4;
    opt.fmap_samples = 0;
    auto rep = run_identity_suite(opt);
    double dt = seconds_since(t0);
    std::ostringstream os;
    os << rep.rows.size() << " exact checks, " << dt << " s";
    return {rep.all_pass && dt < 60.0, os.str()};
}

Outcome c2_symbolic_numeric() {
    auto t0 = std::chrono::steady_clock::now();
    IdentitySuiteOptions opt;
    opt.num_systems = 0;
    opt.fmap_samples = 50;
    opt.fmap_max_dim = 4;
    opt.fmap_kmax = 6;
    auto rep = run_identity_suite(opt);
    double dt = seconds_since(t0);
    double worst = rep.rows.empty() ? 1.0 : rep.rows.back().residual;
    std::ostringstream os;
    os << "50 samples, worst relative error " << worst << ", " << dt << " s";
    return {rep.all_pass && dt < 120.0, os.str()};
}

Outcome c3_rank_gramian_equivalence() {
    std::mt19937 rng(314159);
    std::normal_distribution<double> g(0.0, 1.0);
    int disagreements = 0;
    for (int trial = 0; trial < 20; ++trial) {
        int n = 2 + trial % 3;
        BilinearSystem s;
        s.B = Eigen::MatrixXd::Zero(n, n);
        s.b = Eigen::VectorXd::Zero(n);
        s.C = Eigen::MatrixXd::Zero(1, n);
        if (trial % 2 == 0) {
            // observable by construction: companion pair
            s.A = Eigen::MatrixXd::Zero(n, n);
            for (int i = 0; i + 1 < n; ++i) s.A(i, i + 1) = 1.0;
            for (int j = 0; j < n; ++j) s.A(n - 1, j) = g(rng);
            s.C(0, 0) = 1.0;
        } else {
            // unobservable by construction: planted block pattern conjugated
            int k = std::max(1, n - 1);
            Eigen::MatrixXd abar = Eigen::MatrixXd::Zero(n, n);
            for (int i = 0; i + 1 < k; ++i) abar(i, i + 1) = 1.0;
            for (int j = 0; j < k; ++j) abar(k - 1, j) = g(rng);
            for (int i = k; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    if (j < k || j >= k) abar(i, j) = g(rng);
            abar.topRightCorner(k, n - k).setZero();
            Eigen::MatrixXd cbar = Eigen::MatrixXd::Zero(1, n);
            cbar(0, 0) = 1.0;
            Eigen::MatrixXd m(n, n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) m(i, j) = g(rng);
            Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ();
            s.A = q.transpose() * abar * q;
            s.C = cbar * q;
        }
        bool rank_obs = is_observable_pair(s.C, s.A);
        bool gram_obs = gramian(s, 0.0, 1.0).observable;
        if (rank_obs != gram_obs) ++disagreements;
    }
    std::ostringstream os;
    os << "20 pairs, " << disagreements << " disagreement(s)";
    return {disagreements == 0, os.str()};
}

Outcome c4_singular_certificate() {
    auto s = sys2d();
    auto rep = singular_input_scan(s, ScanMethod::symbolic_determinant);
    bool one_root = rep.inputs.size() == 1 && !rep.unobservable_for_every_input;
    bool at_minus_one = one_root && std::abs(rep.inputs[0].u + 1.0) <= 1e-8;
    auto gram = gramian(s, -1.0, 5.0);
    bool gram_singular = gram.lambda_min <= gram.tol_used;
    std::ostringstream os;
    os << "u* = " << (one_root ? rep.inputs[0].u : std::nan("")) << ", certificate "
       << (one_root ? rep.inputs[0].certificate : std::nan("")) << ", lambda_min(W) = " << gram.lambda_min;
    return {one_root && at_minus_one && rep.inputs[0].certificate <= 1e-8 && gram_singular, os.str()};
}

Outcome c5_gramian_closed_form() {
    auto rep = gramian(sys2d(), 0.0, 1.0);
    Eigen::MatrixXd expected(2, 2);
    expected << 1.0, 0.5, 0.5, 1.0 / 3.0;
    double err = (rep.W - expected).cwiseAbs().maxCoeff();
    std::ostringstream os;
    os << "entrywise error " << err;
    return {err <= 1e-9, os.str()};
}

Outcome c6_deviation_bound_samples() {
    auto s = sys2d();
    std::mt19937 rng(2718);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    int violations = 0, count = 0;
    for (double c : {-2.0, -1.5, -1.0, -0.5, -0.1, 0.1, 0.5, 1.0, 1.5, 2.0}) {
        double horizon = 0.7 + 0.13 * count;
        if (horizon > 2.0) horizon = 2.0;
        auto dev = deviation_bound(s, [c](double) { return c; }, horizon);
        if (dev.lhs > dev.rhs) ++violations;
        ++count;
    }
    for (int i = 0; i < 10; ++i) {
        double a0 = d(rng), a1 = d(rng), a2 = d(rng);
        double horizon = 0.5 + 0.15 * i;
        auto dev = deviation_bound(s, [=](double t) { return a0 + a1 * t + a2 * t * t; }, horizon);
        if (dev.lhs > dev.rhs) ++violations;
        ++count;
    }
    std::ostringstream os;
    os << count << " traces, " << violations << " violation(s)";
    return {count == 20 && violations == 0, os.str()};
}

Outcome c7_near_target_certificate() {
    auto s = sys2d();
    Box box;
    box.lo = Eigen::Vector2d(-2, -2);
    box.hi = Eigen::Vector2d(2, 2);
    auto rep = near_target_radius(s, linear_lambda(), 1.0, Region(box));
    if (!(rep.R > 0.0) || !(rep.eta1 > 0.0)) return {false, "no positive certificate"};

    auto spec = ObserverSpec::kalman(Eigen::MatrixXd::Identity(2, 2));
    auto dirs = sphere_points(2, 10);
    int confined = 0, observable = 0;
    for (const auto& dir : dirs) {
        CoupledState ic{0.3 * rep.R * dir, Eigen::Vector2d::Zero(), Eigen::MatrixXd::Identity(2, 2),
                        Eigen::Vector2d(1, 0)};
        auto traj = integrate_coupled(s, spec, linear_lambda(), SmoothField::zero(2), ic, 1.0);
        double max_norm = 0.0;
        for (int i = 0; i <= 200; ++i) max_norm = std::max(max_norm, traj.at(i / 200.0).xhat.norm());
        if (max_norm < rep.R) ++confined;
        if (gramian(s, traj, 1.0).observable) ++observable;
    }
    std::ostringstream os;
    os << "R = " << rep.R << ", eta1 = " << rep.eta1 << ", " << confined << "/10 confined, " << observable
       << "/10 observable";
    return {confined == 10 && observable == 10, os.str()};
}

Outcome c8_observer_hypotheses() {
    auto s = sys2d();
    BilinearSystem s3;
    s3.A = Eigen::MatrixXd::Random(3, 3);
    s3.B = Eigen::MatrixXd::Random(3, 3);
    s3.C = Eigen::MatrixXd::Random(1, 3);
    s3.b = Eigen::VectorXd::Random(3);

    double h1_worst = 0.0;
    for (auto spec : {ObserverSpec::luenberger(), ObserverSpec::kalman(Eigen::MatrixXd::Identity(3, 3))}) {
        auto rep = check_h1(spec, s3, 2, 100, 2026);
        h1_worst = std::max({h1_worst, rep.max_covariance_residual, rep.max_gain_covariance_residual,
                             rep.max_block_residual, rep.max_gain_block_residual});
    }
    bool h1_ok = h1_worst <= 1e-10;

    std::mt19937 rng(11);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<Eigen::MatrixXd> spd;
    for (int i = 0; i < 100; ++i) {
        Eigen::MatrixXd m(2, 2);
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c) m(r, c) = g(rng);
        spd.push_back(m * m.transpose() + 0.2 * Eigen::MatrixXd::Identity(2, 2));
    }
    auto h3 = check_h3(spd, s.C);
    bool h3_ok = h3.pass && h3.worst > 0.0;

    std::vector<std::tuple<Eigen::VectorXd, Eigen::VectorXd, Eigen::MatrixXd>> ics;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 3; ++i)
        ics.emplace_back(Eigen::Vector2d(u(rng), u(rng)), Eigen::Vector2d(u(rng), u(rng)),
                         Eigen::MatrixXd::Identity(2, 2));
    auto h2k = check_h2(ObserverSpec::kalman(Eigen::MatrixXd::Identity(2, 2)), s.A, s.C, s.b, ics, 35.0, 1e-6);
    Eigen::MatrixXd xi0(2, 2);
    xi0 << 1, 1, 1, 2;  // A - xi0 C^T C is Hurwitz (s^2 + s + 1)
    std::vector<std::tuple<Eigen::VectorXd, Eigen::VectorXd, Eigen::MatrixXd>> ics_l;
    for (const auto& [x0, e0, xi] : ics) ics_l.emplace_back(x0, e0, xi0);
    auto h2l = check_h2(ObserverSpec::luenberger(), s.A, s.C, s.b, ics_l, 35.0, 1e-6);

    std::ostringstream os;
    os << "H1 worst residual " << h1_worst << "; H3 worst sigma " << h3.worst << "; H2 worst correction "
       << std::max(h2k.worst, h2l.worst);
    return {h1_ok && h3_ok && h2k.pass && h2l.pass, os.str()};
}

Outcome c9_frozen_estimate_null_correction() {
    auto s = sys2d();
    auto rep = frozen_equilibrium_probe(s, ObserverSpec::kalman(Eigen::MatrixXd::Identity(2, 2)), -1.0,
                                        Eigen::Vector2d(-1.0, -1.0), Eigen::Vector2d(0.0, 0.7),
                                        Eigen::MatrixXd::Identity(2, 2), 10.0, 1e-8);
    std::ostringstream os;
    os << "max ||dxhat/dt|| = " << rep.max_xhat_derivative << ", max ||L C eps|| = " << rep.max_correction;
    return {rep.applicable && rep.max_correction <= 1e-8, os.str()};
}

Outcome c10_flagship_search() {
    auto sc = parse_scenario_file(g_fixtures + "/sys2d_flagship.json");
    auto grid = sc.initial_grid();
    auto base = observability_verdict(sc.system, sc.observer, sc.feedback, SmoothField::zero(sc.system.n()), grid,
                                      sc.horizon, sc.cfg);
    bool failure_planted = !base.all_observable && base.worst_lambda_min <= base.worst_tol;

    auto rep = search_delta(sc.system, sc.observer, sc.feedback, sc.search_scenario(), sc.search_budget, sc.seed,
                            sc.cfg);
    bool class_ok = false;
    if (rep.accepted) {
        bool vr = rep.best.vanishes_on_ball(sc.protected_radius);
        double nrm = norm_k_K(rep.best, sc.k_order, sc.k1, sc.norm_grid).value;
        class_ok = vr && nrm < sc.eta;
    }
    std::ostringstream os;
    os << "delta=0 worst lambda_min " << base.worst_lambda_min << " (tol " << base.worst_tol << "); accepted index "
       << rep.accepted_index << " of budget " << sc.search_budget << ", margin " << rep.best_margin;
    return {failure_planted && rep.accepted && class_ok && rep.best_margin >= 1.0, os.str()};
}

Outcome c11_byte_identical_runs() {
    if (g_cli.empty()) return {false, "CLI binary path not provided"};
    fs::path tmp = fs::temp_directory_path() / "obsv_acceptance";
    fs::create_directories(tmp);
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    auto run = [&](const std::string& cmd, const fs::path& out) {
        std::string full = g_cli + " " + cmd + " --out " + out.string() + " > " + (out.string() + ".log") + " 2>&1";
        return std::system(full.c_str());
    };
    bool ok = true;
    std::string detail;
    {
        fs::path a = tmp / "sim_a", b = tmp / "sim_b";
        run("simulate --scenario " + g_fixtures + "/sys2d.json", a);
        run("simulate --scenario " + g_fixtures + "/sys2d.json", b);
        if (slurp(a / "summary.csv") != slurp(b / "summary.csv") ||
            slurp(a / "trajectory_000.csv") != slurp(b / "trajectory_000.csv")) {
            ok = false;
            detail += "simulate differs; ";
        }
    }
    {
        fs::path a = tmp / "search_a", b = tmp / "search_b";
        run("search-delta --scenario " + g_fixtures + "/sys2d_flagship.json", a);
        run("search-delta --scenario " + g_fixtures + "/sys2d_flagship.json", b);
        if (slurp(a / "search_trace.csv") != slurp(b / "search_trace.csv") ||
            slurp(a / "delta_accepted.json") != slurp(b / "delta_accepted.json")) {
            ok = false;
            detail += "search-delta differs; ";
        }
    }
    {
        fs::path a = tmp / "scan_a", b = tmp / "scan_b";
        run("scan-singular --scenario " + g_fixtures + "/sys2d.json", a);
        run("scan-singular --scenario " + g_fixtures + "/sys2d.json", b);
        if (slurp(a / "singular_inputs.csv") != slurp(b / "singular_inputs.csv")) {
            ok = false;
            detail += "scan-singular differs; ";
        }
    }
    if (detail.empty()) detail = "simulate, search-delta and scan-singular byte-identical across runs";
    return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: acceptance <fixtures-dir> [<cli-binary>]\n";
        return 2;
    }
    g_fixtures = argv[1];
    if (argc > 2) g_cli = argv[2];

    struct Criterion {
        const char* name;
        std::function<Outcome()> fn;
    };
    const std::vector<Criterion> criteria = {
        {"exact polynomial identity suite", c1_exact_identity_suite},
        {"symbolic vs numeric jet theorem", c2_symbolic_numeric},
        {"rank/Gramian equivalence", c3_rank_gramian_equivalence},
        {"singular-input certificate", c4_singular_certificate},
        {"Gramian closed form", c5_gramian_closed_form},
        {"deviation bound on sampled traces", c6_deviation_bound_samples},
        {"near-target certificate", c7_near_target_certificate},
        {"observer hypotheses (H1)(H2)(H3)", c8_observer_hypotheses},
        {"frozen estimate nulls the correction", c9_frozen_estimate_null_correction},
        {"flagship perturbation search", c10_flagship_search},
        {"byte-identical reruns", c11_byte_identical_runs},
    };

    int failures = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        Outcome out;
        try {
            out = criteria[i].fn();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        if (!out.pass) ++failures;
        std::cout << (out.pass ? "[PASS] " : "[FAIL] ") << "criterion " << (i + 1) << ": " << criteria[i].name
                  << " -- " << out.detail << "\n";
    }
    std::cout << (failures == 0 ? "all criteria passed\n" : std::to_string(failures) + " criteria failed\n");
    return failures == 0 ? 0 : 1;
}
