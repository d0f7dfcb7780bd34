#pragma once

#include <cstddef>
#include <vector>

namespace sensiq {

// Dense row-major matrix of 64-bit floats. The single numeric carrier for
// weights, activations, gradients and Hessian surrogates. All operations on
// it use a fixed summation order, so identical inputs give bit-identical
// results on every run.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    bool all_finite() const;

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// c[i][j] = sum_k a[i][k] * b[k][j], accumulated in k order. ShapeError on
// inner-dimension mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

// Lower-triangular L with L*L^T = h (+ jitter*I if plain factorization
// fails; the jitter escalates x10 from the supplied value, three jittered
// attempts). Requires h square and symmetric within 1e-9 relative tolerance.
// Throws NumericalError naming the final jitter if all attempts fail.
Matrix cholesky_lower(const Matrix& h, double jitter);

// Solves h * x = b for SPD h via cholesky_lower (no jitter); b may have
// multiple right-hand-side columns.
Matrix solve_spd(const Matrix& h, const Matrix& b);

// Squared Euclidean norm of each row.
std::vector<double> row_norms_sq(const Matrix& m);

double frobenius_sq(const Matrix& m);

}  // namespace sensiq
