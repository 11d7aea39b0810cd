#pragma once

#include "proclip/proclip.hpp"

#include <functional>

namespace proclip::testing {

inline EmbeddingBatch random_batch(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
    return EmbeddingBatch(gaussian_matrix(rows, cols, rng, scale));
}

// Random orthogonal matrix via QR of a Gaussian matrix.
inline Matrix random_rotation(Eigen::Index d, Rng& rng) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd(gaussian_matrix(d, d, rng)));
    return Matrix(qr.householderQ());
}

// Central differences of f with respect to every entry of x.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, Matrix x, double h = 1e-6) {
    Matrix g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const double keep = x(i, j);
            x(i, j) = keep + h;
            const double up = f(x);
            x(i, j) = keep - h;
            const double down = f(x);
            x(i, j) = keep;
            g(i, j) = (up - down) / (2 * h);
        }
    return g;
}

inline double max_rel_error(const Matrix& a, const Matrix& b) {
    return ((a - b).array().abs() / (a.array().abs() + b.array().abs()).max(1e-8)).maxCoeff();
}

}  // namespace proclip::testing
