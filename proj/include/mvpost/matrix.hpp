#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvpost::num {

/// Dense row-major matrix of doubles. Small sizes only (the library never
/// factorizes anything larger than a joint sample's covariance).
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), entries_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool square() const { return rows_ == cols_; }

    double& operator()(std::size_t r, std::size_t c) { return entries_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return entries_[r * cols_ + c]; }

    std::vector<double>& entries() { return entries_; }
    const std::vector<double>& entries() const { return entries_; }

    bool is_symmetric(double tol = 0.0) const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> entries_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

/// Thrown when a Cholesky factorization hits a non-positive pivot.
class DecompositionError : public std::runtime_error {
public:
    DecompositionError(std::size_t pivot, const std::string& what)
        : std::runtime_error(what), pivot_(pivot) {}
    std::size_t pivot() const { return pivot_; }

private:
    std::size_t pivot_;
};

/// Lower-triangular L with L * L^T = m. Requires m symmetric; throws
/// DecompositionError naming the failing pivot when m is not positive definite.
Matrix cholesky_factor(const Matrix& m);

struct EigenSym {
    std::vector<double> values;  // ascending
    Matrix vectors;              // column j pairs with values[j]
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
EigenSym jacobi_eigensym(const Matrix& m);

double min_eigenvalue_sym(const Matrix& m);

/// Clips eigenvalues below 1e-8 and renormalizes the diagonal to 1 so the
/// result is a valid correlation matrix. A matrix that already has smallest
/// eigenvalue >= 1e-8 is returned unchanged.
Matrix nearest_correlation_repair(const Matrix& m);

}  // namespace mvpost::num
