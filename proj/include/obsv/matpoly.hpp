#pragma once

// Calculus of matrix-valued polynomials in the scalar jet indeterminates
// X_0, ..., X_{k-1}. The indeterminates commute with everything (they stand
// for scalars u^(i)); the coefficient matrices do not, so each term stores a
// single already-collapsed matrix product next to its monomial.

#include "obsv/config.hpp"
#include "obsv/dense_matrix.hpp"
#include "obsv/multiindex.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace obsv {

template <class Scalar>
class MatPoly {
  public:
    using Mat = DenseMat<Scalar>;
    using TermMap = std::map<Mono, Mat, GradedLex>;

    MatPoly(int dim, int nvars) : dim_(dim), nvars_(nvars) {
        if (dim <= 0 || nvars < 0) throw std::invalid_argument("MatPoly: bad dimensions");
    }

    static MatPoly constant(const Mat& m, int nvars = 0) {
        MatPoly p(m.rows(), nvars);
        if (m.rows() != m.cols()) throw std::invalid_argument("MatPoly: coefficients must be square");
        p.add_term(Mono(static_cast<size_t>(nvars), 0), m);
        return p;
    }

    static MatPoly identity(int dim) { return constant(Mat::identity(dim)); }

    int dim() const { return dim_; }
    int nvars() const { return nvars_; }
    const TermMap& terms() const { return terms_; }
    bool is_zero() const { return terms_.empty(); }

    // Smallest k with P in End[X_0..X_{k-1}], i.e. highest used index + 1.
    int min_nvars() const {
        int k = 0;
        for (const auto& [mono, mat] : terms_)
            for (size_t i = 0; i < mono.size(); ++i)
                if (mono[i] > 0) k = std::max(k, static_cast<int>(i) + 1);
        return k;
    }

    // Re-keys every term to exactly `nv` variables; nv must cover min_nvars().
    MatPoly with_nvars(int nv) const {
        if (nv < min_nvars()) throw std::invalid_argument("MatPoly: cannot shrink below used variables");
        MatPoly out(dim_, nv);
        for (const auto& [mono, mat] : terms_) {
            Mono m(static_cast<size_t>(nv), 0);
            for (size_t i = 0; i < mono.size() && i < m.size(); ++i) m[i] = mono[i];
            out.add_term(std::move(m), mat);
        }
        return out;
    }

    MatPoly trimmed() const { return with_nvars(min_nvars()); }

    void add_term(Mono mono, const Mat& mat) {
        if (mat.rows() != dim_ || mat.cols() != dim_) throw std::invalid_argument("MatPoly: coefficient shape");
        mono.resize(static_cast<size_t>(nvars_), 0);
        auto it = terms_.find(mono);
        if (it == terms_.end()) {
            if (!mat.is_zero()) terms_.emplace(std::move(mono), mat);
        } else {
            it->second += mat;
            if (it->second.is_zero()) terms_.erase(it);
        }
    }

    MatPoly& operator+=(const MatPoly& o) {
        if (o.dim_ != dim_) throw std::invalid_argument("MatPoly: dim mismatch");
        if (o.nvars_ > nvars_) *this = with_nvars(o.nvars_);
        for (const auto& [mono, mat] : o.terms_) add_term(mono, mat);
        return *this;
    }
    MatPoly& operator-=(const MatPoly& o) { return *this += o * Scalar(-1); }
    friend MatPoly operator+(MatPoly a, const MatPoly& b) { return a += b; }
    friend MatPoly operator-(MatPoly a, const MatPoly& b) { return a -= b; }
    friend MatPoly operator*(MatPoly p, const Scalar& s) {
        if (scalar_is_zero(s)) return MatPoly(p.dim_, p.nvars_);
        for (auto& [mono, mat] : p.terms_) mat *= s;
        return p;
    }

    friend bool operator==(const MatPoly& a, const MatPoly& b) {
        if (a.dim_ != b.dim_) return false;
        return a.trimmed().terms_ == b.trimmed().terms_;
    }

    // P * M, matrix on the right of every coefficient.
    MatPoly right_mul(const Mat& m) const {
        MatPoly out(dim_, nvars_);
        for (const auto& [mono, mat] : terms_) out.add_term(mono, mat * m);
        return out;
    }
    MatPoly left_mul(const Mat& m) const {
        MatPoly out(dim_, nvars_);
        for (const auto& [mono, mat] : terms_) out.add_term(mono, m * mat);
        return out;
    }

    // P * X_i (scalar indeterminate; commutes with the coefficients).
    MatPoly mul_var(int i) const {
        int nv = std::max(nvars_, i + 1);
        MatPoly out(dim_, nv);
        for (const auto& [mono, mat] : terms_) {
            Mono m = mono;
            m.resize(static_cast<size_t>(nv), 0);
            m[static_cast<size_t>(i)] += 1;
            out.add_term(std::move(m), mat);
        }
        return out;
    }

    // Formal partial derivative with respect to X_i.
    MatPoly partial(int i) const {
        MatPoly out(dim_, nvars_);
        if (i < 0 || i >= nvars_) return out;
        for (const auto& [mono, mat] : terms_) {
            int e = mono[static_cast<size_t>(i)];
            if (e == 0) continue;
            Mono m = mono;
            m[static_cast<size_t>(i)] -= 1;
            out.add_term(std::move(m), mat * Scalar(e));
        }
        return out;
    }

    int total_degree() const {
        int d = 0;
        for (const auto& [mono, mat] : terms_) d = std::max(d, std::accumulate(mono.begin(), mono.end(), 0));
        return d;
    }

    Mat eval(const std::vector<Scalar>& v) const {
        if (static_cast<int>(v.size()) < min_nvars())
            throw std::invalid_argument("MatPoly::eval: evaluation vector too short");
        Mat acc(dim_, dim_);
        for (const auto& [mono, mat] : terms_) {
            Scalar c(1);
            for (size_t i = 0; i < mono.size(); ++i)
                for (int e = 0; e < mono[i]; ++e) c *= v[i];
            acc += mat * c;
        }
        return acc;
    }

    // Deterministic debug form, graded-lex term order.
    std::string to_string() const {
        std::ostringstream os;
        if (terms_.empty()) {
            os << "0";
            return os.str();
        }
        bool first = true;
        for (const auto& [mono, mat] : terms_) {
            if (!first) os << " + ";
            first = false;
            bool unit = true;
            for (size_t i = 0; i < mono.size(); ++i) {
                if (mono[i] == 0) continue;
                unit = false;
                os << "X" << i;
                if (mono[i] > 1) os << "^" << mono[i];
                os << " ";
            }
            if (unit) os << "1 ";
            os << "[";
            for (int r = 0; r < mat.rows(); ++r) {
                if (r) os << "; ";
                for (int c = 0; c < mat.cols(); ++c) {
                    if (c) os << ", ";
                    os << mat(r, c);
                }
            }
            os << "]";
        }
        return os.str();
    }

    friend std::ostream& operator<<(std::ostream& os, const MatPoly& p) { return os << p.to_string(); }

  private:
    int dim_;
    int nvars_;
    TermMap terms_;
};

// The operator taking P(X_0..X_{k-1}) to
//   P(X_0..X_{k-1}) (A + X_0 B) + sum_i dP/dX_i * X_{i+1},
// with k the minimal variable count of P. The result uses k+1 variables.
template <class Scalar>
MatPoly<Scalar> psi(const MatPoly<Scalar>& p, const DenseMat<Scalar>& a, const DenseMat<Scalar>& b) {
    MatPoly<Scalar> q = p.trimmed();
    const int k = q.nvars();
    MatPoly<Scalar> out = q.right_mul(a) + q.mul_var(0).right_mul(b);
    for (int i = 0; i < k; ++i) out += q.partial(i).mul_var(i + 1);
    return out.with_nvars(k + 1);
}

// [P_0, ..., P_kmax] with P_0 = identity, P_{j+1} = psi(P_j).
template <class Scalar>
std::vector<MatPoly<Scalar>> p_sequence(const DenseMat<Scalar>& a, const DenseMat<Scalar>& b, int kmax,
                                        int kmax_limit = default_config().kmax_limit) {
    if (kmax < 0) throw std::invalid_argument("p_sequence: kmax must be >= 0");
    if (kmax > kmax_limit) throw std::invalid_argument("p_sequence: kmax exceeds configured limit");
    if (a.rows() != a.cols() || b.rows() != b.cols() || a.rows() != b.rows())
        throw std::invalid_argument("p_sequence: A and B must be square of equal size");
    std::vector<MatPoly<Scalar>> ps;
    ps.reserve(static_cast<size_t>(kmax) + 1);
    ps.push_back(MatPoly<Scalar>::identity(a.rows()));
    // re-key each P_{k+1} to exactly k+1 variables: degenerate systems (for
    // instance B = 0) produce polynomials that use fewer indeterminates, and
    // the Q_i^k index bookkeeping counts from the sequence position
    for (int k = 0; k < kmax; ++k) ps.push_back(psi(ps.back(), a, b).with_nvars(k + 1));
    return ps;
}

// Q_i^k = dP_k/dX_{k-i}, where k is the sequence index of P_k (== nvars).
template <class Scalar>
MatPoly<Scalar> q_partial(const MatPoly<Scalar>& p_k, int i) {
    const int k = p_k.nvars();
    if (i < 1 || i > k) throw std::invalid_argument("q_partial: index must satisfy 1 <= i <= k");
    return p_k.partial(k - i);
}

template <class Scalar>
struct RDecomposition {
    std::vector<MatPoly<Scalar>> r;  // [R_i^0, ..., R_i^{i-1}]
    double reconstruction_residual = 0.0;
    double closed_form_residual = 0.0;  // (i-1)! R_i^{i-1} vs B P_{i-1}
};

// Solves Q_i^{i+k} = sum_j k^j R_i^j over nodes k = 0..i-1 (a Vandermonde
// system applied coefficient-matrix-wise), and checks the closed form for the
// top coefficient. A residual above tolerance means the calculus itself is
// broken, hence identity_violation.
template <class Scalar>
RDecomposition<Scalar> r_decomposition(const DenseMat<Scalar>& a, const DenseMat<Scalar>& b, int i,
                                       const Config& cfg = default_config()) {
    if (i < 1) throw std::invalid_argument("r_decomposition: i must be >= 1");
    auto ps = p_sequence(a, b, 2 * i - 1, std::max(cfg.kmax_limit, 2 * i - 1));
    const int dim = a.rows();

    std::vector<MatPoly<Scalar>> q;
    for (int k = 0; k < i; ++k) q.push_back(q_partial(ps[static_cast<size_t>(i + k)], i).trimmed());

    // Inverse Vandermonde on nodes 0..i-1, exact over the scalar field.
    DenseMat<Scalar> vmat(i, i);
    for (int r = 0; r < i; ++r) {
        Scalar node(r), pw(1);
        for (int c = 0; c < i; ++c) {
            vmat(r, c) = pw;
            pw *= node;
        }
    }
    std::vector<DenseMat<Scalar>> inv_cols;  // column j of V^-1
    for (int j = 0; j < i; ++j) {
        std::vector<Scalar> e(static_cast<size_t>(i), Scalar(0));
        e[static_cast<size_t>(j)] = Scalar(1);
        auto col = solve_square(vmat, e);
        DenseMat<Scalar> cm(i, 1);
        for (int r = 0; r < i; ++r) cm(r, 0) = col[static_cast<size_t>(r)];
        inv_cols.push_back(cm);
    }

    RDecomposition<Scalar> out;
    for (int j = 0; j < i; ++j) {
        MatPoly<Scalar> rj(dim, 0);
        for (int k = 0; k < i; ++k) rj += q[static_cast<size_t>(k)] * inv_cols[static_cast<size_t>(k)](j, 0);
        out.r.push_back(rj.trimmed());
    }

    for (int k = 0; k < i; ++k) {
        MatPoly<Scalar> rec(dim, 0);
        Scalar node(k), pw(1);
        for (int j = 0; j < i; ++j) {
            rec += out.r[static_cast<size_t>(j)] * pw;
            pw *= node;
        }
        MatPoly<Scalar> diff = rec - q[static_cast<size_t>(k)];
        for (const auto& [mono, mat] : diff.terms())
            out.reconstruction_residual = std::max(out.reconstruction_residual, mat.max_abs());
    }

    Scalar factorial(1);
    for (int j = 2; j < i; ++j) factorial *= Scalar(j);
    MatPoly<Scalar> closed = ps[static_cast<size_t>(i - 1)].left_mul(b);
    MatPoly<Scalar> diff = out.r.back() * factorial - closed;
    for (const auto& [mono, mat] : diff.terms())
        out.closed_form_residual = std::max(out.closed_form_residual, mat.max_abs());

    double scale = 1.0;
    for (const auto& [mono, mat] : closed.terms()) scale = std::max(scale, mat.max_abs());
    if (out.reconstruction_residual > cfg.identity_tol * scale || out.closed_form_residual > cfg.identity_tol * scale)
        throw identity_violation("r_decomposition: Vandermonde reconstruction residual above tolerance");
    return out;
}

template <class Scalar>
DenseMat<Scalar> evaluate(const MatPoly<Scalar>& p, const std::vector<Scalar>& v) {
    return p.eval(v);
}

// F_k^m(u, w0) = C B^m P_k(u^(0..k-1)) w0 in closed form; k = 0 degenerates
// to C B^m w0. C may have any output dimension m_out >= 1.
inline Eigen::VectorXd f_symbolic(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const Eigen::MatrixXd& c,
                                  int m, int k, const std::vector<double>& v, const Eigen::VectorXd& omega0,
                                  const Config& cfg = default_config()) {
    if (k < 0 || m < 0) throw std::invalid_argument("f_symbolic: negative order");
    Eigen::MatrixXd cbm = c;
    for (int j = 0; j < m; ++j) cbm = cbm * b;
    if (k == 0) return cbm * omega0;
    if (static_cast<int>(v.size()) < k) throw std::invalid_argument("f_symbolic: jet vector too short");
    auto ps = p_sequence(from_eigen(a), from_eigen(b), k, std::max(cfg.kmax_limit, k));
    Eigen::MatrixXd pk = to_eigen(ps.back().eval(std::vector<double>(v.begin(), v.begin() + k)));
    return cbm * pk * omega0;
}

struct RankCertificate {
    int i0 = 0;            // first index whose Q-sequence is not identically zero on (v, w0)
    int k0 = 0;            // first order where the whole staircase diagonal is nonzero
    Eigen::MatrixXd jacobian;  // N x (k0 + N), lower-staircase pattern
    int rank = 0;
    std::vector<double> diagonal;  // a_r = C B^m Q_{i0}^{k0+r}(v) w0
};

// Certificate that the map v -> (C B^m P_{k0}(v) w0, ..., C B^m P_{k0+N-1}(v) w0)
// has full rank N: exhibits the staircase Jacobian and its nonzero diagonal.
// Requires C B^{m+1} P_{i-1}(v) w0 != 0 for some i >= 1 (checked up to the
// search budget); scalar output only (C is 1 x n).
inline RankCertificate rank_certificate(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const Eigen::MatrixXd& c,
                                        int m, const std::vector<double>& v, const Eigen::VectorXd& omega0, int n_rows,
                                        int k0_budget = 8, const Config& cfg = default_config()) {
    if (c.rows() != 1) throw std::invalid_argument("rank_certificate: scalar output map required");
    if (n_rows < 1) throw std::invalid_argument("rank_certificate: N must be positive");
    const double tol = 1e-12;
    const int limit = std::max(cfg.kmax_limit, k0_budget + n_rows - 1);
    MatD ad = from_eigen(a), bd = from_eigen(b);
    auto ps = p_sequence(ad, bd, std::min(limit, k0_budget + n_rows - 1));

    auto pad = [&](int need) { return std::vector<double>(v.begin(), v.begin() + std::min<size_t>(v.size(), static_cast<size_t>(need))); };
    auto vec_for = [&](const MatPoly<double>& p) {
        std::vector<double> vv = pad(p.min_nvars());
        if (static_cast<int>(vv.size()) < p.min_nvars())
            throw std::invalid_argument("rank_certificate: jet vector too short");
        return vv;
    };
    Eigen::RowVectorXd cbm = c.row(0);
    for (int j = 0; j < m; ++j) cbm = cbm * b;
    Eigen::RowVectorXd cbm1 = cbm * b;
    auto contract = [&](const Eigen::RowVectorXd& row, const MatPoly<double>& p) {
        return (row * to_eigen(p.eval(vec_for(p)))).dot(omega0);
    };

    bool precondition = false;
    for (int i = 1; i <= k0_budget && i <= static_cast<int>(ps.size()); ++i) {
        if (std::abs(contract(cbm1, ps[static_cast<size_t>(i - 1)])) > tol) {
            precondition = true;
            break;
        }
    }
    if (!precondition)
        throw std::invalid_argument("rank_certificate: hypothesis not met (C B^{m+1} P_{i-1}(v) w0 == 0 for all tested i)");

    RankCertificate out;
    for (int i = 1; i <= k0_budget; ++i) {
        auto rd = r_decomposition(ad, bd, i, cfg);
        bool nonzero = false;
        for (const auto& rj : rd.r)
            if (std::abs(contract(cbm, rj)) > tol) nonzero = true;
        if (nonzero) {
            out.i0 = i;
            break;
        }
    }
    if (out.i0 == 0) throw std::invalid_argument("rank_certificate: no nonzero Q-sequence within search budget");

    auto staircase_entry = [&](int k) { return contract(cbm, q_partial(ps.at(static_cast<size_t>(k)), out.i0)); };
    out.k0 = -1;
    for (int k0 = out.i0; k0 + n_rows - 1 <= k0_budget + n_rows - 1 && k0 + n_rows - 1 < static_cast<int>(ps.size()); ++k0) {
        bool all_nonzero = true;
        for (int r = 0; r < n_rows; ++r)
            if (std::abs(staircase_entry(k0 + r)) <= tol) all_nonzero = false;
        if (all_nonzero) {
            out.k0 = k0;
            break;
        }
    }
    if (out.k0 < 0) throw std::invalid_argument("rank_certificate: no valid k0 within search budget");

    const int ncols = out.k0 + n_rows;
    out.jacobian = Eigen::MatrixXd::Zero(n_rows, ncols);
    for (int r = 0; r < n_rows; ++r) {
        const auto& pk = ps.at(static_cast<size_t>(out.k0 + r));
        for (int l = 0; l < std::min(ncols, out.k0 + r); ++l) {
            MatPoly<double> d = pk.partial(l);
            if (d.is_zero()) continue;
            out.jacobian(r, l) = contract(cbm, d);
        }
        out.diagonal.push_back(staircase_entry(out.k0 + r));
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(out.jacobian);
    double thresh = std::max(n_rows, ncols) * svd.singularValues()(0) * cfg.rank_svd_rtol;
    out.rank = 0;
    for (int s = 0; s < svd.singularValues().size(); ++s)
        if (svd.singularValues()(s) > thresh) ++out.rank;
    return out;
}

}  // namespace obsv
