#pragma once

#include <Eigen/Dense>

#include <stdexcept>

namespace obsv {

// State of the coupled observer/error/internal/distinguishability system:
// xhat (estimate), eps = xhat - x, xi (SPD observer state), omega.
struct CoupledState {
    Eigen::VectorXd xhat;
    Eigen::VectorXd eps;
    Eigen::MatrixXd xi;
    Eigen::VectorXd omega;

    void validate(int n) const {
        if (xhat.size() != n || eps.size() != n || omega.size() != n || xi.rows() != n || xi.cols() != n)
            throw std::invalid_argument("CoupledState: dimension mismatch");
        if (!xhat.allFinite() || !eps.allFinite() || !xi.allFinite() || !omega.allFinite())
            throw std::invalid_argument("CoupledState: non-finite entries");
    }
};

}  // namespace obsv
