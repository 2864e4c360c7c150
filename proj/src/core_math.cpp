#include "rclarc/core_math.hpp"
#include "rclarc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rclarc {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
        throw Error(ErrorCode::DimensionMismatch,
                    "matrix of " + std::to_string(rows_) + "x" + std::to_string(cols_) + " given " +
                        std::to_string(values_.size()) + " values");
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_columns(std::span<const Vector> columns) {
    if (columns.empty()) return {};
    const std::size_t rows = columns.front().size();
    Matrix m(rows, columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) {
        require_same_dim(columns[c].size(), rows, "matrix column");
        for (std::size_t r = 0; r < rows; ++r) m(r, c) = columns[c][r];
    }
    return m;
}

Matrix Matrix::from_rows(std::span<const Vector> rows) {
    if (rows.empty()) return {};
    const std::size_t cols = rows.front().size();
    Matrix m(rows.size(), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        require_same_dim(rows[r].size(), cols, "matrix row");
        std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
}

Vector Matrix::column(std::size_t c) const {
    Vector out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

double Matrix::max_abs() const {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
}

double Matrix::trace() const {
    double t = 0.0;
    for (std::size_t i = 0; i < std::min(rows_, cols_); ++i) t += (*this)(i, i);
    return t;
}

void require_finite(std::span<const double> values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, std::string(what) + " contains NaN/Inf");
    }
}

void require_same_dim(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw Error(ErrorCode::DimensionMismatch,
                    std::string(what) + ": " + std::to_string(a) + " vs " + std::to_string(b));
    }
}

double dot(std::span<const double> a, std::span<const double> b) {
    require_same_dim(a.size(), b.size(), "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) {
    // Scaled accumulation keeps tiny and huge entries from under/overflowing.
    double scale = 0.0;
    for (double v : a) scale = std::max(scale, std::abs(v));
    if (scale == 0.0) return 0.0;
    double s = 0.0;
    for (double v : a) {
        const double t = v / scale;
        s += t * t;
    }
    return scale * std::sqrt(s);
}

Vector add(std::span<const double> a, std::span<const double> b) {
    require_same_dim(a.size(), b.size(), "add");
    Vector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

Vector subtract(std::span<const double> a, std::span<const double> b) {
    require_same_dim(a.size(), b.size(), "subtract");
    Vector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

Vector scaled(std::span<const double> a, double factor) {
    Vector out(a.begin(), a.end());
    for (double& v : out) v *= factor;
    return out;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    require_same_dim(x.size(), y.size(), "axpy");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Vector normalized(std::span<const double> a) {
    const double n = norm(a);
    if (n == 0.0) throw Error(ErrorCode::ZeroVector, "cannot normalize a zero vector");
    return scaled(a, 1.0 / n);
}

Vector mean_of(std::span<const Vector> vectors) {
    if (vectors.empty()) throw Error(ErrorCode::InvalidArgument, "mean of an empty set");
    Vector m(vectors.front().size(), 0.0);
    for (const auto& v : vectors) {
        require_same_dim(v.size(), m.size(), "mean_of");
        for (std::size_t i = 0; i < m.size(); ++i) m[i] += v[i];
    }
    const double inv = 1.0 / static_cast<double>(vectors.size());
    for (double& v : m) v *= inv;
    return m;
}

Vector matvec(const Matrix& m, std::span<const double> x) {
    require_same_dim(m.cols(), x.size(), "matvec");
    Vector out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        double s = 0.0;
        for (std::size_t c = 0; c < row.size(); ++c) s += row[c] * x[c];
        out[r] = s;
    }
    return out;
}

Vector matvec_transposed(const Matrix& m, std::span<const double> x) {
    require_same_dim(m.rows(), x.size(), "matvec_transposed");
    Vector out(m.cols(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c] * x[r];
    }
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    require_same_dim(a.cols(), b.rows(), "matmul");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
        }
    return out;
}

Matrix gram(const Matrix& a) {
    Matrix g(a.cols(), a.cols());
    for (std::size_t i = 0; i < a.cols(); ++i)
        for (std::size_t j = i; j < a.cols(); ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < a.rows(); ++r) s += a(r, i) * a(r, j);
            g(i, j) = s;
            g(j, i) = s;
        }
    return g;
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    require_same_dim(u.size(), v.size(), "cosine_similarity");
    const double nu = norm(u);
    const double nv = norm(v);
    if (nu == 0.0 || nv == 0.0) throw Error(ErrorCode::ZeroVector, "cosine similarity of a zero vector");
    const double c = dot(u, v) / (nu * nv);
    return std::clamp(c, -1.0, 1.0);
}

namespace {

// Pivots below this fraction of the largest diagonal entry mark the matrix as
// numerically singular.
constexpr double kPivotTolerance = 1e-13;

void check_symmetric(const Matrix& g) {
    if (g.rows() != g.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "SPD solve requires a square matrix");
    }
    require_finite(g.values(), "SPD system matrix");
    const double scale = g.max_abs();
    double asym = 0.0;
    for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = i + 1; j < g.cols(); ++j) asym = std::max(asym, std::abs(g(i, j) - g(j, i)));
    if (asym > 1e-8 * scale) {
        throw Error(ErrorCode::NotSymmetric, "max|G - G^T| = " + std::to_string(asym));
    }
}

}  // namespace

SpdFactor::SpdFactor(const Matrix& g) : n_(g.rows()) {
    check_symmetric(g);
    if (try_factor(g, 0.0)) return;
    const double ridge = n_ == 0 ? 0.0 : 1e-10 * g.trace() / static_cast<double>(n_);
    if (!(ridge > 0.0) || !try_factor(g, ridge)) {
        throw Error(ErrorCode::SingularSystem, "matrix is not positive semi-definite or is zero");
    }
    regularized_ = true;
    ridge_ = ridge;
}

bool SpdFactor::try_factor(const Matrix& g, double ridge) {
    system_ = g;
    for (std::size_t i = 0; i < n_; ++i) system_(i, i) += ridge;
    lower_ = Matrix(n_, n_);
    double max_diag = 0.0;
    for (std::size_t i = 0; i < n_; ++i) max_diag = std::max(max_diag, std::abs(system_(i, i)));
    const double floor = ridge > 0.0 ? 0.0 : kPivotTolerance * max_diag;
    for (std::size_t j = 0; j < n_; ++j) {
        double d = system_(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= lower_(j, k) * lower_(j, k);
        if (!(d > floor)) return false;
        const double ljj = std::sqrt(d);
        lower_(j, j) = ljj;
        for (std::size_t i = j + 1; i < n_; ++i) {
            double s = system_(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= lower_(i, k) * lower_(j, k);
            lower_(i, j) = s / ljj;
        }
    }
    return true;
}

Vector SpdFactor::solve(std::span<const double> b) const {
    require_same_dim(b.size(), n_, "SPD right-hand side");
    auto substitute = [this](std::span<const double> rhs) {
        Vector y(rhs.begin(), rhs.end());
        for (std::size_t i = 0; i < n_; ++i) {
            for (std::size_t k = 0; k < i; ++k) y[i] -= lower_(i, k) * y[k];
            y[i] /= lower_(i, i);
        }
        for (std::size_t i = n_; i-- > 0;) {
            for (std::size_t k = i + 1; k < n_; ++k) y[i] -= lower_(k, i) * y[k];
            y[i] /= lower_(i, i);
        }
        return y;
    };
    Vector x = substitute(b);
    // One step of iterative refinement against the factored system.
    Vector residual = subtract(b, matvec(system_, x));
    const Vector correction = substitute(residual);
    for (std::size_t i = 0; i < n_; ++i) x[i] += correction[i];
    return x;
}

SpdSolution solve_spd(const Matrix& g, std::span<const double> b) {
    require_finite(b, "SPD right-hand side");
    const SpdFactor factor(g);
    return {factor.solve(b), factor.regularized()};
}

SpanProjector::SpanProjector(Matrix basis) : basis_(std::move(basis)), factor_(gram(basis_)) {
    if (basis_.cols() == 0) throw Error(ErrorCode::InvalidArgument, "projection basis has no columns");
    require_finite(basis_.values(), "projection basis");
}

Vector SpanProjector::apply(std::span<const double> x) const {
    require_same_dim(x.size(), basis_.rows(), "project_onto_span");
    const Vector coeffs = factor_.solve(matvec_transposed(basis_, x));
    return matvec(basis_, coeffs);
}

Matrix SpanProjector::as_matrix() const {
    const std::size_t m = basis_.rows();
    Matrix p(m, m);
    Vector e(m, 0.0);
    for (std::size_t c = 0; c < m; ++c) {
        e[c] = 1.0;
        const Vector col = apply(e);
        for (std::size_t r = 0; r < m; ++r) p(r, c) = col[r];
        e[c] = 0.0;
    }
    return p;
}

Vector project_onto_span(const Matrix& basis, std::span<const double> x) {
    require_finite(x, "projected vector");
    return SpanProjector(basis).apply(x);
}

}  // namespace rclarc
