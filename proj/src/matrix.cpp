#include "mvpost/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mvpost::num {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
    : rows_(rows), cols_(cols), entries_(std::move(entries)) {
    if (entries_.size() != rows_ * cols_)
        throw std::invalid_argument("Matrix: entry count does not equal rows*cols");
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool Matrix::is_symmetric(double tol) const {
    if (!square()) return false;
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = i + 1; j < cols_; ++j)
            if (std::abs((*this)(i, j) - (*this)(j, i)) > tol) return false;
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
    Matrix out(a.rows(), b.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
        }
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
    return out;
}

Matrix cholesky_factor(const Matrix& m) {
    if (!m.square()) throw std::invalid_argument("cholesky_factor: matrix not square");
    if (!m.is_symmetric(0.0)) throw std::invalid_argument("cholesky_factor: matrix not symmetric");
    const std::size_t n = m.rows();
    Matrix l(n, n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double diag = m(j, j);
        for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
        if (!(diag > 0.0))
            throw DecompositionError(j, "cholesky_factor: non-positive pivot at index " +
                                            std::to_string(j));
        const double ljj = std::sqrt(diag);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = m(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / ljj;
        }
    }
    return l;
}

EigenSym jacobi_eigensym(const Matrix& m) {
    if (!m.square()) throw std::invalid_argument("jacobi_eigensym: matrix not square");
    if (!m.is_symmetric(0.0)) throw std::invalid_argument("jacobi_eigensym: matrix not symmetric");
    const std::size_t n = m.rows();
    Matrix a = m;
    Matrix v = Matrix::identity(n);

    auto offdiag = [&]() {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
        return s;
    };

    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(a(i, i)));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) scale = std::max(scale, std::abs(a(i, j)));
    const double stop = std::max(1e-300, 1e-28 * scale * scale * double(n * n));

    for (int sweep = 0; sweep < 100 && offdiag() > stop; ++sweep) {
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    EigenSym out;
    out.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.values[i] = a(i, i);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return out.values[i] < out.values[j]; });
    EigenSym sorted;
    sorted.values.resize(n);
    sorted.vectors = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        sorted.values[j] = out.values[order[j]];
        for (std::size_t i = 0; i < n; ++i) sorted.vectors(i, j) = v(i, order[j]);
    }
    return sorted;
}

double min_eigenvalue_sym(const Matrix& m) {
    return jacobi_eigensym(m).values.front();
}

Matrix nearest_correlation_repair(const Matrix& m) {
    if (!m.square()) throw std::invalid_argument("nearest_correlation_repair: matrix not square");
    if (!m.is_symmetric(0.0))
        throw std::invalid_argument("nearest_correlation_repair: matrix not symmetric");
    const std::size_t n = m.rows();
    for (std::size_t i = 0; i < n; ++i)
        if (m(i, i) != 1.0)
            throw std::invalid_argument("nearest_correlation_repair: diagonal not unit");

    constexpr double kFloor = 1e-8;
    EigenSym eig = jacobi_eigensym(m);
    if (eig.values.front() >= kFloor) return m;

    // Renormalizing the diagonal shrinks eigenvalues, so clip progressively
    // higher until the floor survives the renormalization.
    for (double clip = 2.0 * kFloor; clip < 1.0; clip *= 10.0) {
        Matrix repaired(n, n, 0.0);
        for (std::size_t k = 0; k < n; ++k) {
            const double lam = std::max(eig.values[k], clip);
            for (std::size_t i = 0; i < n; ++i) {
                const double vik = eig.vectors(i, k);
                if (vik == 0.0) continue;
                for (std::size_t j = 0; j < n; ++j)
                    repaired(i, j) += lam * vik * eig.vectors(j, k);
            }
        }
        std::vector<double> d(n);
        for (std::size_t i = 0; i < n; ++i) d[i] = std::sqrt(repaired(i, i));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) repaired(i, j) /= d[i] * d[j];
        // Force exact symmetry and an exact unit diagonal.
        for (std::size_t i = 0; i < n; ++i) {
            repaired(i, i) = 1.0;
            for (std::size_t j = i + 1; j < n; ++j) {
                const double avg = 0.5 * (repaired(i, j) + repaired(j, i));
                repaired(i, j) = avg;
                repaired(j, i) = avg;
            }
        }
        if (jacobi_eigensym(repaired).values.front() >= kFloor) return repaired;
    }
    throw std::runtime_error("nearest_correlation_repair: could not reach the eigenvalue floor");
}

}  // namespace mvpost::num
