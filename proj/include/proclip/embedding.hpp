#pragma once

#include "proclip/core.hpp"

#include <cmath>
#include <utility>
#include <vector>

namespace proclip {

// Smoothing constant under the square root of every Euclidean norm.
inline constexpr double kNormEps = 1e-12;

/// Dense B x D batch of embeddings, one row per sample. Entries are always finite.
/// A zero-row batch is representable so that empty embedding files round-trip.
class EmbeddingBatch {
public:
    EmbeddingBatch() = default;

    explicit EmbeddingBatch(Matrix data) : data_(std::move(data)) {
        if (!data_.allFinite()) throw ConfigError("EmbeddingBatch: non-finite entry");
    }

    EmbeddingBatch(Eigen::Index rows, Eigen::Index cols) : data_(Matrix::Zero(rows, cols)) {}

    [[nodiscard]] Eigen::Index rows() const noexcept { return data_.rows(); }
    [[nodiscard]] Eigen::Index cols() const noexcept { return data_.cols(); }
    [[nodiscard]] const Matrix& matrix() const noexcept { return data_; }
    [[nodiscard]] auto row(Eigen::Index i) const { return data_.row(i); }
    [[nodiscard]] double operator()(Eigen::Index i, Eigen::Index j) const { return data_(i, j); }

    friend bool operator==(const EmbeddingBatch& a, const EmbeddingBatch& b) {
        return a.rows() == b.rows() && a.cols() == b.cols() && a.data_ == b.data_;
    }

private:
    Matrix data_;
};

/// Symmetric B x B matrix of pairwise distances with a zero diagonal.
class DistanceMatrix {
public:
    explicit DistanceMatrix(Matrix entries) : entries_(std::move(entries)) {}

    [[nodiscard]] Eigen::Index size() const noexcept { return entries_.rows(); }
    [[nodiscard]] double operator()(Eigen::Index i, Eigen::Index j) const { return entries_(i, j); }
    [[nodiscard]] const Matrix& matrix() const noexcept { return entries_; }

private:
    Matrix entries_;
};

struct NormalizedBatch {
    EmbeddingBatch batch;
    // true where the input row norm was below eps and the row was passed through unchanged
    std::vector<bool> degenerate;
};

// ε-smoothed Euclidean norm: sqrt(|x|^2 + eps) - sqrt(eps). Exactly zero at x = 0.
[[nodiscard]] inline double smooth_norm(double squared_norm, double eps = kNormEps) {
    return std::sqrt(squared_norm + eps) - std::sqrt(eps);
}

[[nodiscard]] inline NormalizedBatch l2_normalize(const EmbeddingBatch& batch,
                                                  double eps = kNormEps) {
    Matrix out = batch.matrix();
    std::vector<bool> degenerate(static_cast<std::size_t>(batch.rows()), false);
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double norm = out.row(i).norm();
        if (norm < eps) {
            degenerate[static_cast<std::size_t>(i)] = true;
            continue;
        }
        out.row(i) /= norm;
    }
    return {EmbeddingBatch(std::move(out)), std::move(degenerate)};
}

/// Gradient of l2_normalize: given x and dL/dy with y = x/|x|, returns dL/dx.
/// Degenerate rows pass their upstream gradient through unchanged.
[[nodiscard]] inline Matrix l2_normalize_backward(const Matrix& input, const Matrix& upstream,
                                                  double eps = kNormEps) {
    Matrix grad = upstream;
    for (Eigen::Index i = 0; i < input.rows(); ++i) {
        const double norm = input.row(i).norm();
        if (norm < eps) continue;
        const auto y = input.row(i) / norm;
        const double proj = y.dot(upstream.row(i));
        grad.row(i) = (upstream.row(i) - proj * y) / norm;
    }
    return grad;
}

[[nodiscard]] inline DistanceMatrix pairwise_euclidean(const EmbeddingBatch& batch,
                                                       double eps = kNormEps) {
    const auto n = batch.rows();
    Matrix d = Matrix::Zero(n, n);
    const Matrix& x = batch.matrix();
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = smooth_norm((x.row(i) - x.row(j)).squaredNorm(), eps);
            d(i, j) = v;
            d(j, i) = v;
        }
    }
    return DistanceMatrix(std::move(d));
}

// out(i, j) = <a_i, b_j>
[[nodiscard]] inline Matrix similarity_matrix(const EmbeddingBatch& a, const EmbeddingBatch& b) {
    require(a.cols() == b.cols(), "similarity_matrix: embedding dimension mismatch");
    require(a.rows() == b.rows(), "similarity_matrix: batch size mismatch");
    return a.matrix() * b.matrix().transpose();
}

}  // namespace proclip
