#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace rclarc {

using Vector = std::vector<double>;

// Dense row-major matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Matrix identity(std::size_t n);
    // Builds a matrix whose columns are the given vectors (all of equal length).
    static Matrix from_columns(std::span<const Vector> columns);
    static Matrix from_rows(std::span<const Vector> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return values_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }
    Vector column(std::size_t c) const;

    const std::vector<double>& values() const noexcept { return values_; }
    std::vector<double>& values() noexcept { return values_; }

    Matrix transposed() const;
    double max_abs() const;
    double trace() const;

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

// Throws NonFiniteValue if any entry is NaN or infinite.
void require_finite(std::span<const double> values, const char* what);
void require_same_dim(std::size_t a, std::size_t b, const char* what);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
Vector add(std::span<const double> a, std::span<const double> b);
Vector subtract(std::span<const double> a, std::span<const double> b);
Vector scaled(std::span<const double> a, double factor);
// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
Vector normalized(std::span<const double> a);
Vector mean_of(std::span<const Vector> vectors);

Vector matvec(const Matrix& m, std::span<const double> x);
// m^T x
Vector matvec_transposed(const Matrix& m, std::span<const double> x);
Matrix matmul(const Matrix& a, const Matrix& b);
// a^T a
Matrix gram(const Matrix& a);

// <u, v> / (|u| |v|), clamped to [-1, 1]. Throws ZeroVector for a zero input.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

struct SpdSolution {
    Vector x;
    bool regularized = false;
};

// Cholesky factorization of a symmetric positive (semi-)definite matrix. When
// the matrix is singular or too ill-conditioned for a stable factorization, the
// ridge lambda = 1e-10 * trace / k is added to the diagonal and the factor is
// flagged as regularized.
class SpdFactor {
public:
    explicit SpdFactor(const Matrix& g);

    std::size_t dim() const noexcept { return n_; }
    bool regularized() const noexcept { return regularized_; }
    double ridge() const noexcept { return ridge_; }
    Vector solve(std::span<const double> b) const;

private:
    bool try_factor(const Matrix& g, double ridge);

    std::size_t n_ = 0;
    Matrix lower_;
    Matrix system_;  // the (possibly ridged) matrix that was factored
    bool regularized_ = false;
    double ridge_ = 0.0;
};

// Solves G c = b for symmetric positive (semi-)definite G.
// Throws NotSymmetric if max|G - G^T| > 1e-8 * max|G|.
SpdSolution solve_spd(const Matrix& g, std::span<const double> b);

// Orthogonal projector onto the column span of V: x -> V (V^T V)^{-1} V^T x.
class SpanProjector {
public:
    explicit SpanProjector(Matrix basis);

    std::size_t dim() const noexcept { return basis_.rows(); }
    std::size_t rank() const noexcept { return basis_.cols(); }
    bool regularized() const noexcept { return factor_.regularized(); }
    const Matrix& basis() const noexcept { return basis_; }

    Vector apply(std::span<const double> x) const;
    // The m x m matrix V (V^T V)^{-1} V^T.
    Matrix as_matrix() const;

private:
    Matrix basis_;
    SpdFactor factor_;
};

Vector project_onto_span(const Matrix& basis, std::span<const double> x);

}  // namespace rclarc
