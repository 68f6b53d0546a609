#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

namespace obsv {

// Axis-aligned box or spherical annulus; the compact sets K1, K2 and
// perturbation domains are described with these.
struct Box {
    Eigen::VectorXd lo;
    Eigen::VectorXd hi;

    int dim() const { return static_cast<int>(lo.size()); }
    bool contains(const Eigen::VectorXd& x) const {
        return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
    }
};

struct Annulus {
    Eigen::VectorXd center;
    double inner = 0.0;
    double outer = 1.0;

    int dim() const { return static_cast<int>(center.size()); }
    bool contains(const Eigen::VectorXd& x) const {
        double r = (x - center).norm();
        return r >= inner && r <= outer;
    }
};

class Region {
  public:
    Region() = default;
    explicit Region(Box b) : box_(std::move(b)), is_box_(true) { validate(); }
    explicit Region(Annulus a) : annulus_(std::move(a)), is_box_(false) { validate(); }

    bool is_box() const { return is_box_; }
    const Box& box() const { return box_; }
    const Annulus& annulus() const { return annulus_; }

    int dim() const { return is_box_ ? box_.dim() : annulus_.dim(); }

    bool contains(const Eigen::VectorXd& x) const { return is_box_ ? box_.contains(x) : annulus_.contains(x); }

    Box bounding_box() const {
        if (is_box_) return box_;
        Box b;
        b.lo = annulus_.center.array() - annulus_.outer;
        b.hi = annulus_.center.array() + annulus_.outer;
        return b;
    }

    // Deterministic lattice covering the region (points outside are dropped
    // for annuli). count_per_dim >= 1; a single count collapses to midpoints.
    std::vector<Eigen::VectorXd> grid(int count_per_dim) const {
        if (count_per_dim < 1) throw std::invalid_argument("Region::grid: count must be >= 1");
        Box bb = bounding_box();
        const int n = bb.dim();
        std::vector<Eigen::VectorXd> pts;
        std::vector<int> idx(static_cast<size_t>(n), 0);
        while (true) {
            Eigen::VectorXd x(n);
            for (int i = 0; i < n; ++i) {
                double t = count_per_dim == 1 ? 0.5 : static_cast<double>(idx[static_cast<size_t>(i)]) / (count_per_dim - 1);
                x(i) = bb.lo(i) + t * (bb.hi(i) - bb.lo(i));
            }
            if (contains(x)) pts.push_back(std::move(x));
            int p = 0;
            while (p < n) {
                if (++idx[static_cast<size_t>(p)] < count_per_dim) break;
                idx[static_cast<size_t>(p)] = 0;
                ++p;
            }
            if (p == n) break;
        }
        return pts;
    }

  private:
    void validate() const {
        if (is_box_) {
            if (box_.lo.size() != box_.hi.size() || box_.lo.size() == 0 || (box_.hi.array() < box_.lo.array()).any())
                throw std::invalid_argument("Region: malformed box");
        } else {
            if (annulus_.center.size() == 0 || annulus_.inner < 0 || annulus_.outer <= annulus_.inner)
                throw std::invalid_argument("Region: malformed annulus");
        }
    }

    Box box_;
    Annulus annulus_;
    bool is_box_ = true;
};

}  // namespace obsv
