#pragma once

// The bilinear plant, pair-observability tests, singular constant-input
// detection, and the Kalman observability decomposition.

#include "obsv/config.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

namespace obsv {

// Plant of dx/dt = (A + uB) x + b u, y = C x.
struct BilinearSystem {
    Eigen::MatrixXd A;
    Eigen::MatrixXd B;
    Eigen::MatrixXd C;
    Eigen::VectorXd b;

    int n() const { return static_cast<int>(A.rows()); }
    int output_dim() const { return static_cast<int>(C.rows()); }

    Eigen::MatrixXd A_u(double u) const { return A + u * B; }

    void validate() const {
        const int nn = n();
        if (nn <= 0 || A.cols() != nn || B.rows() != nn || B.cols() != nn || C.cols() != nn || b.size() != nn ||
            C.rows() < 1)
            throw std::invalid_argument("BilinearSystem: inconsistent dimensions");
        if (!A.allFinite() || !B.allFinite() || !C.allFinite() || !b.allFinite())
            throw std::invalid_argument("BilinearSystem: non-finite entries");
    }
};

struct ObservabilityMatrix {
    Eigen::MatrixXd rows;  // stacked (C; CA; ...; CA^{n-1})
    int rank = 0;
    double smallest_singular_value = 0.0;
};

inline ObservabilityMatrix observability_matrix(const Eigen::MatrixXd& c, const Eigen::MatrixXd& a,
                                                const Config& cfg = default_config()) {
    const int n = static_cast<int>(a.rows());
    const int m = static_cast<int>(c.rows());
    if (a.cols() != n || c.cols() != n || n < 1 || m < 1)
        throw std::invalid_argument("observability_matrix: dimension mismatch");
    ObservabilityMatrix out;
    out.rows.resize(static_cast<Eigen::Index>(m) * n, n);
    out.rows.topRows(m) = c;
    for (int i = 1; i < n; ++i) out.rows.middleRows(static_cast<Eigen::Index>(i) * m, m) = out.rows.middleRows(static_cast<Eigen::Index>(i - 1) * m, m) * a;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(out.rows);
    const auto& sv = svd.singularValues();
    out.smallest_singular_value = sv(sv.size() - 1);
    double thresh = std::max<Eigen::Index>(out.rows.rows(), out.rows.cols()) * sv(0) * cfg.rank_svd_rtol;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > thresh) ++out.rank;
    return out;
}

inline bool is_observable_pair(const Eigen::MatrixXd& c, const Eigen::MatrixXd& a,
                               const Config& cfg = default_config()) {
    return observability_matrix(c, a, cfg).rank == a.rows();
}

struct SingularInput {
    double u = 0.0;
    double certificate = 0.0;  // smallest singular value of O(C, A + uB)
};

struct SingularScanReport {
    std::vector<SingularInput> inputs;
    // det O(C, A+uB) vanishes identically: unobservable for every constant input.
    bool unobservable_for_every_input = false;
    std::vector<double> det_coefficients;  // interpolated polynomial, ascending powers
};

enum class ScanMethod { symbolic_determinant, grid };

struct ScanGridSpec {
    double lo = -10.0;
    double hi = 10.0;
    int count = 2001;
    double sigma_threshold = 1e-6;
};

namespace detail {

// Real roots of a polynomial (ascending coefficients) via the companion
// matrix; imaginary parts below 1e-8 are accepted as real.
inline std::vector<double> real_roots(std::vector<double> coeff) {
    double scale = 0.0;
    for (double c : coeff) scale = std::max(scale, std::abs(c));
    if (scale == 0.0) return {};
    while (coeff.size() > 1 && std::abs(coeff.back()) <= 1e-12 * scale) coeff.pop_back();
    const int deg = static_cast<int>(coeff.size()) - 1;
    if (deg < 1) return {};
    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(deg, deg);
    for (int i = 0; i < deg; ++i) {
        if (i + 1 < deg) comp(i + 1, i) = 1.0;
        comp(i, deg - 1) = -coeff[static_cast<size_t>(i)] / coeff.back();
    }
    Eigen::EigenSolver<Eigen::MatrixXd> es(comp);
    std::vector<double> roots;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
        if (std::abs(es.eigenvalues()(i).imag()) < 1e-8) roots.push_back(es.eigenvalues()(i).real());
    std::sort(roots.begin(), roots.end());
    return roots;
}

inline double poly_eval(const std::vector<double>& coeff, double x) {
    double acc = 0.0;
    for (size_t i = coeff.size(); i-- > 0;) acc = acc * x + coeff[i];
    return acc;
}

}  // namespace detail

// Finds constant inputs u* that make (C, A + u*B) unobservable.
//
// The symbolic method (single output only) interpolates det O(C, A + uB) as
// a degree <= n(n-1)/2 polynomial from exact determinant samples and takes
// its real roots, each Newton-polished and certified by the smallest
// singular value of the observability matrix.
inline SingularScanReport singular_input_scan(const BilinearSystem& sys, ScanMethod method,
                                              const ScanGridSpec& grid = {}, const Config& cfg = default_config()) {
    sys.validate();
    SingularScanReport out;
    const int n = sys.n();
    auto sigma_at = [&](double u) { return observability_matrix(sys.C, sys.A_u(u), cfg).smallest_singular_value; };

    if (method == ScanMethod::symbolic_determinant) {
        if (sys.output_dim() != 1)
            throw std::invalid_argument("singular_input_scan: symbolic method needs a single output");
        const int deg_bound = n * (n - 1) / 2;
        const int samples = deg_bound + 1;
        Eigen::MatrixXd vand(samples, samples);
        Eigen::VectorXd dets(samples);
        double det_scale = 0.0;
        for (int j = 0; j < samples; ++j) {
            double u = static_cast<double>(j) - static_cast<double>(deg_bound) / 2.0;
            double pw = 1.0;
            for (int c = 0; c < samples; ++c) {
                vand(j, c) = pw;
                pw *= u;
            }
            dets(j) = observability_matrix(sys.C, sys.A_u(u), cfg).rows.determinant();
            det_scale = std::max(det_scale, std::abs(dets(j)));
        }
        Eigen::VectorXd coeff = vand.fullPivLu().solve(dets);
        out.det_coefficients.assign(coeff.data(), coeff.data() + coeff.size());

        double entry_scale = std::max({1.0, sys.A.cwiseAbs().maxCoeff(), sys.B.cwiseAbs().maxCoeff(),
                                       sys.C.cwiseAbs().maxCoeff()});
        if (det_scale <= 1e-12 * std::pow(entry_scale + deg_bound, n)) {
            out.unobservable_for_every_input = true;
            return out;
        }

        std::vector<double> dcoeff;
        for (size_t i = 1; i < out.det_coefficients.size(); ++i)
            dcoeff.push_back(out.det_coefficients[i] * static_cast<double>(i));
        for (double root : detail::real_roots(out.det_coefficients)) {
            double u = root;
            for (int it = 0; it < 3; ++it) {
                double dp = detail::poly_eval(dcoeff, u);
                if (std::abs(dp) < 1e-14) break;
                double step = detail::poly_eval(out.det_coefficients, u) / dp;
                u -= step;
                if (std::abs(step) < 1e-15 * (1.0 + std::abs(u))) break;
            }
            bool duplicate = false;
            for (const auto& s : out.inputs)
                if (std::abs(s.u - u) < 1e-8 * (1.0 + std::abs(u))) duplicate = true;
            if (!duplicate) out.inputs.push_back({u, sigma_at(u)});
        }
        std::sort(out.inputs.begin(), out.inputs.end(), [](const auto& a, const auto& b) { return a.u < b.u; });
        return out;
    }

    // Grid method: locate local minima of the smallest singular value below
    // the threshold and shrink the bracketing interval around each.
    std::vector<double> sig(static_cast<size_t>(grid.count));
    std::vector<double> us(static_cast<size_t>(grid.count));
    for (int i = 0; i < grid.count; ++i) {
        us[static_cast<size_t>(i)] = grid.lo + (grid.hi - grid.lo) * i / (grid.count - 1);
        sig[static_cast<size_t>(i)] = sigma_at(us[static_cast<size_t>(i)]);
    }
    for (int i = 1; i + 1 < grid.count; ++i) {
        if (sig[static_cast<size_t>(i)] >= grid.sigma_threshold) continue;
        if (!(sig[static_cast<size_t>(i)] <= sig[static_cast<size_t>(i - 1)] &&
              sig[static_cast<size_t>(i)] <= sig[static_cast<size_t>(i + 1)]))
            continue;
        double lo = us[static_cast<size_t>(i - 1)], hi = us[static_cast<size_t>(i + 1)];
        for (int it = 0; it < 80; ++it) {
            double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
            if (sigma_at(m1) < sigma_at(m2))
                hi = m2;
            else
                lo = m1;
        }
        double u = 0.5 * (lo + hi);
        bool duplicate = false;
        for (const auto& s : out.inputs)
            if (std::abs(s.u - u) < 1e-7 * (1.0 + std::abs(u))) duplicate = true;
        if (!duplicate) out.inputs.push_back({u, sigma_at(u)});
    }
    return out;
}

struct DecompositionResult {
    Eigen::MatrixXd T;  // orthogonal; first k rows span the row space of O(C, A0)
    int k = 0;
    Eigen::MatrixXd A11, A21, A22, C1;
    double residual = 0.0;        // max |entry| over blocks that must vanish
    bool observable_block = true;  // (C1, A11) passes the rank test
};

// Kalman observability decomposition of a constant pair (C, A0).
inline DecompositionResult kalman_decomposition(const Eigen::MatrixXd& c, const Eigen::MatrixXd& a0,
                                                const Config& cfg = default_config()) {
    if (c.cwiseAbs().maxCoeff() == 0.0)
        throw std::invalid_argument("kalman_decomposition: C must be nonzero");
    auto obs = observability_matrix(c, a0, cfg);
    const int n = static_cast<int>(a0.rows());
    DecompositionResult out;
    out.k = obs.rank;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(obs.rows, Eigen::ComputeFullV);
    out.T = svd.matrixV().transpose();

    Eigen::MatrixXd abar = out.T * a0 * out.T.transpose();
    Eigen::MatrixXd cbar = c * out.T.transpose();
    const int k = out.k, r = n - k;
    out.A11 = abar.topLeftCorner(k, k);
    out.A21 = abar.bottomLeftCorner(r, k);
    out.A22 = abar.bottomRightCorner(r, r);
    out.C1 = cbar.leftCols(k);
    out.residual = 0.0;
    if (r > 0) {
        out.residual = std::max(out.residual, abar.topRightCorner(k, r).cwiseAbs().maxCoeff());
        out.residual = std::max(out.residual, cbar.rightCols(r).cwiseAbs().maxCoeff());
    }
    out.observable_block = is_observable_pair(out.C1, out.A11, cfg);
    return out;
}

}  // namespace obsv
