#include <catch2/catch_amalgamated.hpp>

#include "obsv/integrate.hpp"
#include "obsv/jets.hpp"
#include "obsv/matpoly.hpp"

#include <random>

using namespace obsv;

namespace {

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

// lambda with a planted second equilibrium at (-1, 1) where lambda = -1.
SmoothField fixture_lambda() {
    MultiPoly p(2);
    p.add({1, 0}, -1.0);
    p.add({0, 1}, -1.0);
    p.add({0, 2}, -5.0);
    p.add({0, 3}, 4.0);
    return SmoothField::polynomial(p);
}

SmoothField constant_field(int n, double v) {
    MultiPoly p(n);
    p.add(Mono(static_cast<size_t>(n), 0), v);
    return SmoothField::polynomial(p);
}

CoupledState state(const Eigen::VectorXd& xh, const Eigen::VectorXd& ep, const Eigen::MatrixXd& xi,
                   const Eigen::VectorXd& om) {
    return CoupledState{xh, ep, xi, om};
}

// Right-hand side of the coupled system, written independently of the jet
// code; drives the numeric cross-checks.
OdeRhs coupled_rhs(const BilinearSystem& sys, const ObserverSpec& spec, const SmoothField& fb) {
    const int n = sys.n();
    return [=, &fb](double, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
        Eigen::VectorXd xh = y.head(n), ep = y.segment(n, n), om = y.segment(2 * n, n);
        Eigen::Map<const Eigen::MatrixXd> xi(y.data() + 3 * n, n, n);
        double u = fb.value(xh);
        Eigen::MatrixXd au = sys.A_u(u);
        Eigen::MatrixXd corr = xi * sys.C.transpose() * sys.C;
        dy.resize(y.size());
        dy.head(n) = au * xh + sys.b * u - corr * ep;
        dy.segment(n, n) = (au - corr) * ep;
        dy.segment(2 * n, n) = au * om;
        Eigen::MatrixXd fxi = spec.kind == ObserverKind::kalman
                                  ? Eigen::MatrixXd(xi * au.transpose() + au * xi + spec.Q -
                                                    xi * sys.C.transpose() * sys.C * xi)
                                  : Eigen::MatrixXd::Zero(n, n);
        Eigen::Map<Eigen::MatrixXd>(dy.data() + 3 * n, n, n) = fxi;
    };
}

Eigen::VectorXd pack(const CoupledState& s) {
    const int n = static_cast<int>(s.xhat.size());
    Eigen::VectorXd y(3 * n + n * n);
    y.head(n) = s.xhat;
    y.segment(n, n) = s.eps;
    y.segment(2 * n, n) = s.omega;
    Eigen::Map<Eigen::MatrixXd>(y.data() + 3 * n, n, n) = s.xi;
    return y;
}

Eigen::VectorXd taylor_eval(const CoupledJets& jets, double t) {
    const int n = static_cast<int>(jets.xhat.d[0].size());
    CoupledState s{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), Eigen::MatrixXd::Zero(n, n),
                   Eigen::VectorXd::Zero(n)};
    double tp = 1.0;
    for (int j = 0; j <= jets.xhat.order(); ++j) {
        double w = tp / factorial(j);
        s.xhat += w * jets.xhat.d[static_cast<size_t>(j)];
        s.eps += w * jets.eps.d[static_cast<size_t>(j)];
        s.omega += w * jets.omega.d[static_cast<size_t>(j)];
        s.xi += w * jets.xi.d[static_cast<size_t>(j)];
        tp *= t;
    }
    return pack(s);
}

}  // namespace

TEST_CASE("composition jet of a linear field acts coefficient-wise") {
    MultiPoly p(2);
    p.add({1, 0}, 2.0);
    p.add({0, 1}, -3.0);
    auto g = SmoothField::polynomial(p);
    VecJet path;
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (int j = 0; j <= 4; ++j) {
        Eigen::VectorXd v(2);
        v << d(rng), d(rng);
        path.d.push_back(v);
    }
    Jet u = faa_di_bruno(g.jet_at(path.d[0], 4), path);
    for (int j = 0; j <= 4; ++j)
        CHECK(u.d[static_cast<size_t>(j)] ==
              Catch::Approx(2.0 * path.d[static_cast<size_t>(j)](0) - 3.0 * path.d[static_cast<size_t>(j)](1))
                  .margin(1e-13));
}

TEST_CASE("composition jet of x1^2 along (t, 0)") {
    MultiPoly p(2);
    p.add({2, 0}, 1.0);
    auto g = SmoothField::polynomial(p);
    VecJet path;
    path.d.push_back(Eigen::VectorXd::Zero(2));
    Eigen::VectorXd e1(2);
    e1 << 1, 0;
    path.d.push_back(e1);
    for (int j = 2; j <= 4; ++j) path.d.push_back(Eigen::VectorXd::Zero(2));
    Jet u = faa_di_bruno(g.jet_at(path.d[0], 4), path);
    // g(path(t)) = t^2: derivatives (0, 0, 2, 0, 0)
    CHECK(u.d[0] == Catch::Approx(0.0).margin(1e-14));
    CHECK(u.d[1] == Catch::Approx(0.0).margin(1e-14));
    CHECK(u.d[2] == Catch::Approx(2.0));
    CHECK(u.d[3] == Catch::Approx(0.0).margin(1e-14));
    CHECK(u.d[4] == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("composition jet of a constant path") {
    auto g = fixture_lambda();
    Eigen::VectorXd x0(2);
    x0 << 0.4, -0.9;
    VecJet path;
    path.d.push_back(x0);
    for (int j = 1; j <= 3; ++j) path.d.push_back(Eigen::VectorXd::Zero(2));
    Jet u = faa_di_bruno(g.jet_at(x0, 3), path);
    CHECK(u.d[0] == Catch::Approx(g.value(x0)));
    for (int j = 1; j <= 3; ++j) CHECK(u.d[static_cast<size_t>(j)] == Catch::Approx(0.0).margin(1e-13));

    VecJet bad = path;
    bad.d.pop_back();
    CHECK_THROWS_AS(faa_di_bruno(g.jet_at(x0, 3), bad), std::invalid_argument);
}

TEST_CASE("composition jet equals exact polynomial composition") {
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    const int k = 6;
    for (int trial = 0; trial < 10; ++trial) {
        MultiPoly g(2);
        for (const Mono& alpha : monos_up_to(2, 4)) g.add(alpha, d(rng));
        // polynomial path x(t), degree <= k per component
        std::vector<std::vector<double>> path_coeffs(2, std::vector<double>(k + 1));
        for (auto& pc : path_coeffs)
            for (auto& c : pc) c = d(rng);

        // oracle: substitute the path into g with plain univariate convolutions
        std::vector<double> comp(1, 0.0);
        auto mul = [](const std::vector<double>& a, const std::vector<double>& b) {
            std::vector<double> out(a.size() + b.size() - 1, 0.0);
            for (size_t i = 0; i < a.size(); ++i)
                for (size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
            return out;
        };
        for (const auto& [alpha, c] : g.coeffs()) {
            std::vector<double> term{c};
            for (int i = 0; i < 2; ++i)
                for (int e = 0; e < alpha[static_cast<size_t>(i)]; ++e) term = mul(term, path_coeffs[static_cast<size_t>(i)]);
            if (term.size() > comp.size()) comp.resize(term.size(), 0.0);
            for (size_t i = 0; i < term.size(); ++i) comp[i] += term[i];
        }

        VecJet path;
        for (int j = 0; j <= k; ++j) {
            Eigen::VectorXd v(2);
            v << path_coeffs[0][static_cast<size_t>(j)] * factorial(j), path_coeffs[1][static_cast<size_t>(j)] * factorial(j);
            path.d.push_back(v);
        }
        Jet u = faa_di_bruno(SmoothField::polynomial(g).jet_at(path.d[0], k), path);
        for (int j = 0; j <= k; ++j)
            CHECK(u.d[static_cast<size_t>(j)] == Catch::Approx(comp[static_cast<size_t>(j)] * factorial(j)).margin(1e-10));
    }
}

TEST_CASE("ode_jet with zero feedback propagates omega by powers of A") {
    auto s = sys2d();
    auto spec = ObserverSpec::luenberger();
    Eigen::VectorXd om(2);
    om << 0.6, -0.8;
    auto st = state(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), om);
    auto jets = ode_jet(s, spec, SmoothField::zero(2), SmoothField::zero(2), st, 5);
    Eigen::MatrixXd ak = Eigen::MatrixXd::Identity(2, 2);
    for (int j = 0; j <= 5; ++j) {
        CHECK((jets.omega.d[static_cast<size_t>(j)] - ak * om).cwiseAbs().maxCoeff() <= 1e-13);
        ak = s.A * ak;
    }
    for (int j = 0; j <= 5; ++j) CHECK(jets.u.d[static_cast<size_t>(j)] == 0.0);
}

TEST_CASE("ode_jet is flat at the closed-loop equilibrium") {
    auto s = sys2d();
    auto spec = ObserverSpec::kalman(Eigen::MatrixXd::Identity(2, 2));
    auto lam = linear_lambda();
    Eigen::VectorXd om(2);
    om << 1, 0;
    auto st = state(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), om);
    auto jets = ode_jet(s, spec, lam, SmoothField::zero(2), st, 6);
    for (int j = 1; j <= 6; ++j) {
        CHECK(jets.xhat.d[static_cast<size_t>(j)].cwiseAbs().maxCoeff() <= 1e-13);
        CHECK(jets.eps.d[static_cast<size_t>(j)].cwiseAbs().maxCoeff() <= 1e-13);
    }
}

TEST_CASE("ode_jet first coefficients match the hand computation") {
    auto s = sys2d();
    auto spec = ObserverSpec::luenberger();
    auto lam = linear_lambda();
    Eigen::VectorXd xh(2), om(2);
    xh << 1, 0;
    om << 0, 1;
    auto st = state(xh, Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), om);
    auto jets = ode_jet(s, spec, lam, SmoothField::zero(2), st, 3);
    CHECK(jets.u.d[0] == Catch::Approx(-1.0));
    // xhat' = A_{-1} xhat + b * (-1) = (0, -1) + (0, -1)
    CHECK(jets.xhat.d[1](0) == Catch::Approx(0.0).margin(1e-14));
    CHECK(jets.xhat.d[1](1) == Catch::Approx(-2.0));
    CHECK_THROWS_AS(ode_jet(s, spec, lam, SmoothField::zero(2),
                            state(xh, Eigen::VectorXd::Zero(2), -Eigen::MatrixXd::Identity(2, 2), om), 3),
                    std::invalid_argument);
}

TEST_CASE("ode_jet Taylor polynomial converges at the pair order") {
    auto s = sys2d();
    auto spec = ObserverSpec::kalman(Eigen::MatrixXd::Identity(2, 2));
    auto lam = linear_lambda();
    Eigen::VectorXd xh(2), ep(2), om(2);
    xh << 1.0, 0.5;
    ep << 0.2, -0.1;
    om << 0.6, 0.8;
    auto st = state(xh, ep, Eigen::MatrixXd::Identity(2, 2), om);
    const int k = 5;
    auto jets = ode_jet(s, spec, lam, SmoothField::zero(2), st, k);

    IntegratorOptions opt;
    opt.rtol = 1e-13;
    opt.atol = 1e-14;
    auto rhs = coupled_rhs(s, spec, lam);
    auto err_at = [&](double t) {
        auto sol = integrate_dopri5(rhs, pack(st), 0.0, t, opt);
        return (taylor_eval(jets, t) - sol.final_state()).norm();
    };
    double e1 = err_at(0.2), e2 = err_at(0.1);
    double ratio = e1 / e2;
    // truncation error O(t^{k+1}): halving t divides the error by ~2^{k+1}
    CHECK(ratio > std::pow(2.0, k + 1) / 2.0);
    CHECK(ratio < std::pow(2.0, k + 1) * 2.0);
}

TEST_CASE("frozen-input jets replicate the flat-trajectory reduction") {
    // At the singular equilibrium (-1, 1) with eps in the unobservable
    // direction, xhat is flat; the frozen-input system must then carry the
    // same eps and xi jets at every order.
    auto s = sys2d();
    auto spec = ObserverSpec::kalman(Eigen::MatrixXd::Identity(2, 2));
    auto lam = fixture_lambda();
    Eigen::VectorXd xh(2), ep(2), om(2);
    xh << -1, 1;
    ep << 0, 0.7;
    om << 1, 0;
    auto st = state(xh, ep, Eigen::MatrixXd::Identity(2, 2), om);
    const int kmax = 8;
    auto jets = ode_jet(s, spec, lam, SmoothField::zero(2), st, kmax);
    for (int j = 1; j <= kmax; ++j)
        REQUIRE(jets.xhat.d[static_cast<size_t>(j)].cwiseAbs().maxCoeff() <= 1e-10);

    double u0 = lam.value(xh);
    CHECK(u0 == Catch::Approx(-1.0));
    auto frozen = ode_jet(s, spec, constant_field(2, u0), SmoothField::zero(2), st, kmax);
    for (int j = 0; j <= kmax; ++j) {
        CHECK((jets.eps.d[static_cast<size_t>(j)] - frozen.eps.d[static_cast<size_t>(j)]).cwiseAbs().maxCoeff() <=
              1e-10);
        CHECK((jets.xi.d[static_cast<size_t>(j)] - frozen.xi.d[static_cast<size_t>(j)]).cwiseAbs().maxCoeff() <=
              1e-10);
    }
}

TEST_CASE("f_numeric closed forms") {
    auto s = sys2d();
    Eigen::VectorXd om(2);
    om << 0.3, 0.9;
    Jet zero_u;
    zero_u.d.assign(7, 0.0);

    CHECK(f_numeric(s, 0, zero_u, om, 0)(0) == Catch::Approx(0.3));
    CHECK(f_numeric(s, 1, zero_u, om, 0)(0) == Catch::Approx(0.9));  // C B omega
    for (int k = 1; k <= 5; ++k) {
        Eigen::MatrixXd ak = Eigen::MatrixXd::Identity(2, 2);
        for (int j = 0; j < k; ++j) ak = s.A * ak;
        CHECK(f_numeric(s, 0, zero_u, om, k)(0) == Catch::Approx((s.C * ak * om)(0)).margin(1e-13));
    }
    Jet too_short;
    too_short.d.assign(2, 0.0);
    CHECK_THROWS_AS(f_numeric(s, 0, too_short, om, 5), std::invalid_argument);
}

TEST_CASE("symbolic and numeric F maps agree on random data") {
    std::mt19937 rng(20260811);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (int trial = 0; trial < 15; ++trial) {
        int n = 2 + trial % 2;
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
        const int k = 1 + trial % 5;
        const int m = trial % n;
        Jet u;
        std::vector<double> v;
        for (int j = 0; j <= k; ++j) {
            double c = d(rng);
            u.d.push_back(c * factorial(j));
            if (j < k) v.push_back(u.d.back());
        }
        double sym = f_symbolic(s.A, s.B, s.C, m, k, v, om)(0);
        double num = f_numeric(s, m, u, om, k)(0);
        CHECK(std::abs(sym - num) <= 1e-8 * (1.0 + std::abs(sym)));
    }
}

TEST_CASE("nfot probe on flat and non-flat starts") {
    auto s = sys2d();
    auto lam = linear_lambda();
    auto spec = ObserverSpec::luenberger();
    Eigen::VectorXd om(2);
    om << 1, 0;

    auto flat = nfot_probe(s, spec, lam, SmoothField::zero(2),
                           state(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2),
                                 Eigen::MatrixXd::Identity(2, 2), om),
                           8);
    CHECK_FALSE(flat.k_star.has_value());

    Eigen::VectorXd xh(2);
    xh << 1, 0;
    auto moving = nfot_probe(s, spec, lam, SmoothField::zero(2),
                             state(xh, Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), om), 8);
    REQUIRE(moving.k_star.has_value());
    CHECK(*moving.k_star == 1);

    // Kalman observer, observable pair, random nonzero starts: record the
    // observed first orders; the theory gives no uniform bound to assert.
    auto kspec = ObserverSpec::kalman(Eigen::MatrixXd::Identity(2, 2));
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    int max_seen = 0;
    for (int t = 0; t < 10; ++t) {
        Eigen::VectorXd x0(2), e0(2);
        x0 << d(rng), d(rng);
        e0 << d(rng), d(rng);
        auto rep = nfot_probe(s, kspec, lam, SmoothField::zero(2),
                              state(x0, e0, Eigen::MatrixXd::Identity(2, 2), om), 2 * 2 + 4);
        if (rep.k_star) max_seen = std::max(max_seen, *rep.k_star);
    }
    INFO("largest first nonzero order observed: " << max_seen);
    SUCCEED();
}

TEST_CASE("main_eq_check finds the first nonvanishing output derivative") {
    auto s = sys2d();
    auto spec = ObserverSpec::luenberger();
    auto lam = linear_lambda();
    Eigen::VectorXd om(2);

    // C omega0 != 0: order zero
    om << 1, 0;
    auto r0 = main_eq_check(s, spec, lam, SmoothField::zero(2),
                            state(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2),
                                  Eigen::MatrixXd::Identity(2, 2), om),
                            8);
    REQUIRE(r0.k0.has_value());
    CHECK(*r0.k0 == 0);

    // u = 0, omega0 orthogonal to C: C A omega0 = omega0_2 != 0, order one
    om << 0, 1;
    auto r1 = main_eq_check(s, spec, SmoothField::zero(2), SmoothField::zero(2),
                            state(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2),
                                  Eigen::MatrixXd::Identity(2, 2), om),
                            8);
    REQUIRE(r1.k0.has_value());
    CHECK(*r1.k0 == 1);

    // At the singular equilibrium with an eps kick: C omega = C A_{-1} omega = 0
    // but the moving input brings the B-term in at order two.
    Eigen::VectorXd xh(2), ep(2);
    xh << -1, 1;
    ep << 1, 0;
    auto r2 = main_eq_check(s, spec, fixture_lambda(), SmoothField::zero(2),
                            state(xh, ep, Eigen::MatrixXd::Identity(2, 2), om), 8);
    REQUIRE(r2.k0.has_value());
    CHECK(*r2.k0 == 2);

    // pinned exactly at the singular equilibrium: every order vanishes
    auto r3 = main_eq_check(s, spec, fixture_lambda(), SmoothField::zero(2),
                            state(xh, Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), om), 10);
    CHECK_FALSE(r3.k0.has_value());

    om << 1, 1;  // not unit
    CHECK_THROWS_AS(main_eq_check(s, spec, lam, SmoothField::zero(2),
                                  state(xh, ep, Eigen::MatrixXd::Identity(2, 2), om), 4),
                    std::invalid_argument);
}
