#pragma once

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_int.hpp>

#include <cstdlib>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace obsv {

// Exact scalar for the rational polynomial backend. Kept out of Eigen types:
// the polynomial calculus only needs ring operations, which DenseMat provides.
using Rational = boost::multiprecision::cpp_rational;

inline double to_double(const Rational& r) { return r.convert_to<double>(); }
inline double to_double(double x) { return x; }

inline double abs_as_double(const Rational& r) { return std::abs(r.convert_to<double>()); }
inline double abs_as_double(double x) { return std::abs(x); }

inline bool scalar_is_zero(const Rational& r) { return r.is_zero(); }
inline bool scalar_is_zero(double x) { return x == 0.0; }

// Minimal dense row-major matrix over an arbitrary field scalar. Used as the
// coefficient type of MatPoly for both the exact and the float backend.
template <class Scalar>
class DenseMat {
  public:
    DenseMat() = default;
    DenseMat(int rows, int cols) : rows_(rows), cols_(cols), a_(static_cast<size_t>(rows * cols), Scalar(0)) {
        if (rows < 0 || cols < 0) throw std::invalid_argument("DenseMat: negative dimension");
    }
    DenseMat(int rows, int cols, std::initializer_list<Scalar> entries) : DenseMat(rows, cols) {
        if (static_cast<int>(entries.size()) != rows * cols)
            throw std::invalid_argument("DenseMat: initializer size mismatch");
        size_t i = 0;
        for (const Scalar& s : entries) a_[i++] = s;
    }

    static DenseMat zero(int rows, int cols) { return DenseMat(rows, cols); }
    static DenseMat identity(int n) {
        DenseMat m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = Scalar(1);
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }

    Scalar& operator()(int i, int j) { return a_[static_cast<size_t>(i * cols_ + j)]; }
    const Scalar& operator()(int i, int j) const { return a_[static_cast<size_t>(i * cols_ + j)]; }

    DenseMat& operator+=(const DenseMat& o) {
        check_same_shape(o);
        for (size_t i = 0; i < a_.size(); ++i) a_[i] += o.a_[i];
        return *this;
    }
    DenseMat& operator-=(const DenseMat& o) {
        check_same_shape(o);
        for (size_t i = 0; i < a_.size(); ++i) a_[i] -= o.a_[i];
        return *this;
    }
    DenseMat& operator*=(const Scalar& s) {
        for (auto& v : a_) v *= s;
        return *this;
    }

    friend DenseMat operator+(DenseMat a, const DenseMat& b) { return a += b; }
    friend DenseMat operator-(DenseMat a, const DenseMat& b) { return a -= b; }
    friend DenseMat operator*(DenseMat a, const Scalar& s) { return a *= s; }
    friend DenseMat operator*(const Scalar& s, DenseMat a) { return a *= s; }

    friend DenseMat operator*(const DenseMat& a, const DenseMat& b) {
        if (a.cols_ != b.rows_) throw std::invalid_argument("DenseMat: product dimension mismatch");
        DenseMat c(a.rows_, b.cols_);
        for (int i = 0; i < a.rows_; ++i)
            for (int k = 0; k < a.cols_; ++k) {
                const Scalar& aik = a(i, k);
                if (scalar_is_zero(aik)) continue;
                for (int j = 0; j < b.cols_; ++j) c(i, j) += aik * b(k, j);
            }
        return c;
    }

    friend bool operator==(const DenseMat& a, const DenseMat& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.a_ == b.a_;
    }

    bool is_zero() const {
        for (const auto& v : a_)
            if (!scalar_is_zero(v)) return false;
        return true;
    }

    double max_abs() const {
        double m = 0.0;
        for (const auto& v : a_) m = std::max(m, abs_as_double(v));
        return m;
    }

  private:
    void check_same_shape(const DenseMat& o) const {
        if (rows_ != o.rows_ || cols_ != o.cols_) throw std::invalid_argument("DenseMat: shape mismatch");
    }

    int rows_ = 0;
    int cols_ = 0;
    std::vector<Scalar> a_;
};

using MatQ = DenseMat<Rational>;
using MatD = DenseMat<double>;

inline Eigen::MatrixXd to_eigen(const MatD& m) {
    Eigen::MatrixXd e(m.rows(), m.cols());
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
    return e;
}

inline MatD from_eigen(const Eigen::Ref<const Eigen::MatrixXd>& e) {
    MatD m(static_cast<int>(e.rows()), static_cast<int>(e.cols()));
    for (int i = 0; i < e.rows(); ++i)
        for (int j = 0; j < e.cols(); ++j) m(i, j) = e(i, j);
    return m;
}

inline MatQ rationalize(const Eigen::Ref<const Eigen::MatrixXd>& e, long denominator_limit = 1 << 20) {
    MatQ m(static_cast<int>(e.rows()), static_cast<int>(e.cols()));
    for (int i = 0; i < e.rows(); ++i)
        for (int j = 0; j < e.cols(); ++j) {
            // exact binary-fraction embedding, safe for doubles of moderate size
            double scaled = e(i, j) * static_cast<double>(denominator_limit);
            if (scaled != std::floor(scaled))
                throw std::invalid_argument("rationalize: entry is not a dyadic rational at this scale");
            m(i, j) = Rational(static_cast<long long>(scaled), denominator_limit);
        }
    return m;
}

// Solves the square system V x = rhs over a field scalar by Gaussian
// elimination with partial pivoting (pivot by double magnitude, which is
// exactvalue-safe: any nonzero rational pivot is valid).
template <class Scalar>
std::vector<Scalar> solve_square(DenseMat<Scalar> v, std::vector<Scalar> rhs) {
    const int n = v.rows();
    if (v.cols() != n || static_cast<int>(rhs.size()) != n)
        throw std::invalid_argument("solve_square: dimension mismatch");
    for (int col = 0; col < n; ++col) {
        int piv = -1;
        double best = 0.0;
        for (int r = col; r < n; ++r) {
            double mag = abs_as_double(v(r, col));
            if (mag > best) {
                best = mag;
                piv = r;
            }
        }
        if (piv < 0) throw std::invalid_argument("solve_square: singular matrix");
        if (piv != col) {
            for (int j = 0; j < n; ++j) std::swap(v(piv, j), v(col, j));
            std::swap(rhs[piv], rhs[col]);
        }
        for (int r = 0; r < n; ++r) {
            if (r == col || scalar_is_zero(v(r, col))) continue;
            Scalar f = v(r, col) / v(col, col);
            for (int j = col; j < n; ++j) v(r, j) -= f * v(col, j);
            rhs[r] -= f * rhs[col];
        }
    }
    std::vector<Scalar> x(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) x[static_cast<size_t>(i)] = rhs[static_cast<size_t>(i)] / v(i, i);
    return x;
}

}  // namespace obsv
