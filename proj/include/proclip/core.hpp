#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace proclip {

// Row-major so that `data()` is directly the on-disk layout of PEMB/PCLP files.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

// Invalid shapes, hyperparameters or toggle combinations.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// API misuse, e.g. backward() without a preceding forward().
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Non-finite loss or gradient during training.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, std::int64_t step = -1)
        : std::runtime_error(what), step_(step) {}
    [[nodiscard]] std::int64_t step() const noexcept { return step_; }

private:
    std::int64_t step_;
};

// Malformed binary file; carries the byte offset at which parsing failed.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    [[nodiscard]] std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

inline void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

[[nodiscard]] inline bool all_finite(const Matrix& m) noexcept { return m.allFinite(); }

// Standard-normal matrix drawn in row-major order.
[[nodiscard]] inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng,
                                            double stddev = 1.0) {
    if (stddev == 0.0) return Matrix::Zero(rows, cols);
    std::normal_distribution<double> normal(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
    return m;
}

// Derives an independent stream from a base seed and a salt (splitmix64 finalizer).
[[nodiscard]] inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace proclip
