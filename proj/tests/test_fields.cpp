#include <catch2/catch_amalgamated.hpp>

#include "obsv/fields.hpp"

#include <cmath>
#include <random>

using namespace obsv;

namespace {

// Feedback used by the singular-equilibrium fixture:
// lambda(x) = -x1 - x2 - 5 x2^2 + 4 x2^3.
SmoothField fixture_lambda() {
    MultiPoly p(2);
    p.add({1, 0}, -1.0);
    p.add({0, 1}, -1.0);
    p.add({0, 2}, -5.0);
    p.add({0, 3}, 4.0);
    return SmoothField::polynomial(p);
}

// Nested central differences; the step must grow with the order or the
// division by (2h)^k amplifies rounding noise past the signal.
double fd_nested(const SmoothField& f, Mono alpha, const Eigen::VectorXd& x, double h) {
    int axis = -1;
    for (size_t i = 0; i < alpha.size(); ++i)
        if (alpha[i] > 0) axis = static_cast<int>(i);
    if (axis < 0) return f.value(x);
    Mono lower = alpha;
    lower[static_cast<size_t>(axis)] -= 1;
    Eigen::VectorXd xp = x, xm = x;
    xp(axis) += h;
    xm(axis) -= h;
    return (fd_nested(f, lower, xp, h) - fd_nested(f, lower, xm, h)) / (2 * h);
}

// Richardson-extrapolated oracle, O(h^4) truncation.
double fd_partial(const SmoothField& f, const Mono& alpha, const Eigen::VectorXd& x) {
    double h = mono_degree(alpha) <= 1 ? 1e-4 : 0.02;
    double coarse = fd_nested(f, alpha, x, h);
    double fine = fd_nested(f, alpha, x, h / 2);
    return (4.0 * fine - coarse) / 3.0;
}

}  // namespace

TEST_CASE("polynomial shift is an exact re-expansion") {
    MultiPoly p(2);
    p.add({2, 1}, 3.0);   // 3 x1^2 x2
    p.add({0, 3}, -1.0);  // -x2^3
    p.add({1, 0}, 0.5);
    Eigen::VectorXd x0(2);
    x0 << 1.2, -0.7;
    MultiPoly q = p.shifted(x0);
    std::mt19937 rng(1);
    std::uniform_real_distribution<double> d(-2.0, 2.0);
    for (int t = 0; t < 20; ++t) {
        Eigen::VectorXd h(2);
        h << d(rng), d(rng);
        CHECK(q.eval(h) == Catch::Approx(p.eval(x0 + h)).epsilon(1e-12));
    }
}

TEST_CASE("polynomial field partials are exact") {
    auto f = fixture_lambda();
    Eigen::VectorXd x(2);
    x << -1.0, 1.0;
    CHECK(f.value(x) == Catch::Approx(-1.0));  // lambda at the planted equilibrium
    CHECK(f.partial({1, 0}, x) == Catch::Approx(-1.0));
    CHECK(f.partial({0, 1}, x) == Catch::Approx(-1.0 - 10.0 * x(1) + 12.0 * x(1) * x(1)));
    CHECK(f.partial({0, 2}, x) == Catch::Approx(-10.0 + 24.0 * x(1)));
    CHECK(f.partial({0, 3}, x) == Catch::Approx(24.0));
    CHECK(f.partial({0, 4}, x) == 0.0);
    CHECK(f.partial({2, 1}, x) == 0.0);

    Eigen::VectorXd g = f.gradient(x);
    CHECK(g(0) == Catch::Approx(-1.0));
    CHECK(g(1) == Catch::Approx(1.0));
}

TEST_CASE("feedback flag rejects fields that do not vanish at zero") {
    MultiPoly p(2);
    p.add({0, 0}, 0.3);
    auto f = SmoothField::polynomial(p);
    CHECK_THROWS_AS(f.require_vanishes_at_origin(), std::invalid_argument);
    CHECK_NOTHROW(fixture_lambda().require_vanishes_at_origin());
}

TEST_CASE("bump value at center and outside the support") {
    BumpAtom atom;
    atom.center = Eigen::VectorXd::Zero(2);
    atom.radius = 1.5;
    atom.amplitude = 2.0;
    auto f = SmoothField::bump_sum(2, {atom});

    CHECK(f.value(atom.center) == Catch::Approx(2.0 * std::exp(-1.0)));
    Eigen::VectorXd far(2);
    far << 1.5, 0.1;
    CHECK(f.value(far) == 0.0);
    far << 1.5, 0.0;  // exactly on the boundary
    CHECK(f.value(far) == 0.0);
}

TEST_CASE("bump first derivative matches the closed form") {
    // One-dimensional bump psi(x^2): d/dx = psi'(x^2) * 2x with
    // psi'(s) = -w^2 e^{-w}, w = 1/(1-s).
    BumpAtom atom;
    atom.center = Eigen::VectorXd::Zero(1);
    atom.radius = 1.0;
    atom.amplitude = 1.0;
    auto f = SmoothField::bump_sum(1, {atom});
    Eigen::VectorXd x(1);
    x << 0.5;
    double s = 0.25, w = 1.0 / (1.0 - s);
    double expected = -w * w * std::exp(-w) * 2.0 * 0.5;
    CHECK(f.partial({1}, x) == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("bump mixed partials agree with finite differences") {
    BumpAtom atom;
    atom.center = Eigen::VectorXd::Zero(2);
    atom.center << 0.3, -0.2;
    atom.radius = 1.2;
    atom.amplitude = -1.7;
    auto f = SmoothField::bump_sum(2, {atom});

    std::vector<Eigen::VectorXd> points;
    Eigen::VectorXd p(2);
    p << 0.5, 0.1;
    points.push_back(p);
    p << -0.3, -0.6;
    points.push_back(p);
    p << 0.9, -0.2;  // close to the support ring, derivatives peak here
    points.push_back(p);

    for (const auto& x : points)
        for (const Mono& alpha : monos_up_to(2, 3)) {
            if (mono_degree(alpha) == 0) continue;
            double exact = f.partial(alpha, x);
            double approx = fd_partial(f, alpha, x);
            CHECK(exact == Catch::Approx(approx).margin(1e-3).epsilon(1e-3));
        }
}

TEST_CASE("all derivatives vanish outside the bump support") {
    BumpAtom atom;
    atom.center = Eigen::VectorXd::Zero(2);
    atom.radius = 0.8;
    atom.amplitude = 3.0;
    auto f = SmoothField::bump_sum(2, {atom});
    Eigen::VectorXd x(2);
    x << 0.9, 0.0;
    for (const Mono& alpha : monos_up_to(2, 4)) CHECK(f.partial(alpha, x) == 0.0);
}

TEST_CASE("sum field adds representations") {
    auto f = fixture_lambda();
    BumpAtom atom;
    atom.center = Eigen::VectorXd::Zero(2);
    atom.center << -1.0, 1.0;
    atom.radius = 0.5;
    atom.amplitude = 0.25;
    auto sum = f + SmoothField::bump_sum(2, {atom});
    Eigen::VectorXd x(2);
    x << -1.0, 1.0;
    CHECK(sum.value(x) == Catch::Approx(f.value(x) + 0.25 * std::exp(-1.0)));
    // jet of the sum = sum of jets
    auto j1 = f.jet_at(x, 2);
    auto j2 = SmoothField::bump_sum(2, {atom}).jet_at(x, 2);
    auto js = sum.jet_at(x, 2);
    for (const Mono& alpha : monos_up_to(2, 2))
        CHECK(js.partial(alpha) == Catch::Approx(j1.partial(alpha) + j2.partial(alpha)).margin(1e-12));
}

TEST_CASE("order cap is enforced") {
    BumpAtom atom;
    atom.center = Eigen::VectorXd::Zero(1);
    atom.radius = 1.0;
    atom.amplitude = 1.0;
    auto f = SmoothField::bump_sum(1, {atom});
    Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
    CHECK_THROWS_AS(f.taylor(x, 60), std::invalid_argument);
    CHECK_NOTHROW(f.taylor(x, 12));
}
