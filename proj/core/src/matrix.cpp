#include "sensiq/matrix.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "sensiq/errors.hpp"
#include "sensiq/numfmt.hpp"

namespace sensiq {

namespace {

double max_abs(const Matrix& m) {
    double v = 0.0;
    for (double x : m.data()) {
        v = std::max(v, std::fabs(x));
    }
    return v;
}

// Left-looking Cholesky; false when a pivot is non-positive or non-finite.
bool try_factor(const Matrix& a, Matrix& l) {
    const std::size_t n = a.rows();
    l = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = a.at(j, j);
        for (std::size_t k = 0; k < j; ++k) {
            d -= l.at(j, k) * l.at(j, k);
        }
        if (!(d > 0.0) || !std::isfinite(d)) {
            return false;
        }
        const double pivot = std::sqrt(d);
        l.at(j, j) = pivot;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a.at(i, j);
            for (std::size_t k = 0; k < j; ++k) {
                s -= l.at(i, k) * l.at(j, k);
            }
            l.at(i, j) = s / pivot;
        }
    }
    return true;
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                         " does not equal " + std::to_string(rows_) + "x" +
                         std::to_string(cols_));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m.at(i, i) = 1.0;
    }
    return m;
}

bool Matrix::all_finite() const {
    for (double x : data_) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " times " +
                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                acc += a.at(i, k) * b.at(k, j);
            }
            c.at(i, j) = acc;
        }
    }
    return c;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            t.at(j, i) = m.at(i, j);
        }
    }
    return t;
}

Matrix cholesky_lower(const Matrix& h, double jitter) {
    if (h.rows() != h.cols()) {
        throw ShapeError("cholesky: matrix is " + std::to_string(h.rows()) + "x" +
                         std::to_string(h.cols()) + ", expected square");
    }
    const double scale = max_abs(h);
    const double tol = 1e-9 * scale;
    for (std::size_t i = 0; i < h.rows(); ++i) {
        for (std::size_t j = i + 1; j < h.cols(); ++j) {
            if (std::fabs(h.at(i, j) - h.at(j, i)) > tol) {
                throw ShapeError("cholesky: matrix not symmetric at (" +
                                 std::to_string(i) + "," + std::to_string(j) + ")");
            }
        }
    }

    Matrix l;
    if (try_factor(h, l)) {
        return l;
    }

    double current = jitter;
    for (int attempt = 0; attempt < 3 && current > 0.0; ++attempt) {
        Matrix damped = h;
        for (std::size_t i = 0; i < h.rows(); ++i) {
            damped.at(i, i) += current;
        }
        if (try_factor(damped, l)) {
            return l;
        }
        current *= 10.0;
    }

    const double final_jitter = current > 0.0 ? current / 10.0 : jitter;
    throw NumericalError("cholesky: matrix not positive definite after jitter " +
                         format_double(final_jitter));
}

Matrix solve_spd(const Matrix& h, const Matrix& b) {
    if (h.rows() != b.rows()) {
        throw ShapeError("solve_spd: rhs has " + std::to_string(b.rows()) +
                         " rows, expected " + std::to_string(h.rows()));
    }
    const Matrix l = cholesky_lower(h, 0.0);
    const std::size_t n = h.rows();
    Matrix x(n, b.cols());
    std::vector<double> y(n);
    for (std::size_t c = 0; c < b.cols(); ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = b.at(i, c);
            for (std::size_t k = 0; k < i; ++k) {
                s -= l.at(i, k) * y[k];
            }
            y[i] = s / l.at(i, i);
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double s = y[ii];
            for (std::size_t k = ii + 1; k < n; ++k) {
                s -= l.at(k, ii) * x.at(k, c);
            }
            x.at(ii, c) = s / l.at(ii, ii);
        }
    }
    return x;
}

std::vector<double> row_norms_sq(const Matrix& m) {
    std::vector<double> out(m.rows(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            acc += m.at(i, j) * m.at(i, j);
        }
        out[i] = acc;
    }
    return out;
}

double frobenius_sq(const Matrix& m) {
    double acc = 0.0;
    for (double x : m.data()) {
        acc += x * x;
    }
    return acc;
}

}  // namespace sensiq
