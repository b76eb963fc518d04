#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpvoc {

// Dense row-major matrix of doubles. Used for spectrogram grids and filterbanks.
struct Matrix {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int64_t r, int64_t c, double fill = 0.0)
        : rows(r), cols(c), a(static_cast<std::size_t>(r * c), fill) {
        if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative dimension");
    }

    double& operator()(int64_t r, int64_t c) {
        return a[static_cast<std::size_t>(r * cols + c)];
    }
    double operator()(int64_t r, int64_t c) const {
        return a[static_cast<std::size_t>(r * cols + c)];
    }
    int64_t numel() const { return rows * cols; }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    static Matrix identity(int64_t n) {
        Matrix m(n, n);
        for (int64_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

inline Matrix slice_cols(const Matrix& m, int64_t start, int64_t len) {
    if (start < 0 || len < 1 || start + len > m.cols)
        throw std::invalid_argument("slice_cols: range out of bounds");
    Matrix out(m.rows, len);
    for (int64_t r = 0; r < m.rows; ++r)
        for (int64_t c = 0; c < len; ++c) out(r, c) = m(r, start + c);
    return out;
}

inline Matrix transpose(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (int64_t r = 0; r < m.rows; ++r)
        for (int64_t c = 0; c < m.cols; ++c) t(c, r) = m(r, c);
    return t;
}

inline Matrix matmul(const Matrix& x, const Matrix& y) {
    if (x.cols != y.rows)
        throw std::invalid_argument("matmul: inner dimensions differ (" +
                                    std::to_string(x.cols) + " vs " + std::to_string(y.rows) + ")");
    Matrix out(x.rows, y.cols);
    for (int64_t i = 0; i < x.rows; ++i) {
        for (int64_t k = 0; k < x.cols; ++k) {
            const double v = x(i, k);
            if (v == 0.0) continue;
            const double* yr = &y.a[static_cast<std::size_t>(k * y.cols)];
            double* or_ = &out.a[static_cast<std::size_t>(i * out.cols)];
            for (int64_t j = 0; j < y.cols; ++j) or_[j] += v * yr[j];
        }
    }
    return out;
}

// Plain-text matrix file: "rows cols" header line, then one row per line.
inline void save_matrix_text(const std::string& path, const Matrix& m) {
    std::ofstream fs(path);
    if (!fs) throw std::runtime_error("save_matrix_text: cannot open " + path);
    fs << m.rows << ' ' << m.cols << '\n';
    char buf[40];
    for (int64_t r = 0; r < m.rows; ++r) {
        for (int64_t c = 0; c < m.cols; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
            fs << (c ? " " : "") << buf;
        }
        fs << '\n';
    }
    if (!fs) throw std::runtime_error("save_matrix_text: write failed for " + path);
}

inline Matrix load_matrix_text(const std::string& path) {
    std::ifstream fs(path);
    if (!fs) throw std::runtime_error("load_matrix_text: cannot open " + path);
    int64_t rows = 0, cols = 0;
    if (!(fs >> rows >> cols) || rows < 1 || cols < 1)
        throw std::runtime_error("load_matrix_text: malformed header in " + path);
    Matrix m(rows, cols);
    for (double& v : m.a)
        if (!(fs >> v)) throw std::runtime_error("load_matrix_text: truncated matrix in " + path);
    return m;
}

struct Svd {
    Matrix u;                    // m x r (thin)
    std::vector<double> sigma;   // r, descending
    Matrix v;                    // n x r, A = U diag(sigma) V^T
};

namespace detail {

// One-sided Jacobi on a tall matrix (rows >= cols).
inline Svd jacobi_svd_tall(Matrix b) {
    const int64_t m = b.rows, n = b.cols;
    Matrix v = Matrix::identity(n);
    const double tol = 1e-14;
    for (int sweep = 0; sweep < 60; ++sweep) {
        bool rotated = false;
        for (int64_t p = 0; p < n - 1; ++p) {
            for (int64_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (int64_t i = 0; i < m; ++i) {
                    alpha += b(i, p) * b(i, p);
                    beta += b(i, q) * b(i, q);
                    gamma += b(i, p) * b(i, q);
                }
                if (std::abs(gamma) <= tol * std::sqrt(alpha * beta) || gamma == 0.0) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int64_t i = 0; i < m; ++i) {
                    const double bp = b(i, p), bq = b(i, q);
                    b(i, p) = c * bp - s * bq;
                    b(i, q) = s * bp + c * bq;
                }
                for (int64_t i = 0; i < n; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }
    Svd out;
    out.sigma.assign(static_cast<std::size_t>(n), 0.0);
    out.u = Matrix(m, n);
    out.v = Matrix(n, n);
    std::vector<int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> norms(static_cast<std::size_t>(n), 0.0);
    for (int64_t j = 0; j < n; ++j) {
        double s2 = 0.0;
        for (int64_t i = 0; i < m; ++i) s2 += b(i, j) * b(i, j);
        norms[static_cast<std::size_t>(j)] = std::sqrt(s2);
    }
    std::stable_sort(order.begin(), order.end(), [&](int64_t x, int64_t y) {
        return norms[static_cast<std::size_t>(x)] > norms[static_cast<std::size_t>(y)];
    });
    for (int64_t j = 0; j < n; ++j) {
        const int64_t src = order[static_cast<std::size_t>(j)];
        const double s = norms[static_cast<std::size_t>(src)];
        out.sigma[static_cast<std::size_t>(j)] = s;
        if (s > 0.0)
            for (int64_t i = 0; i < m; ++i) out.u(i, j) = b(i, src) / s;
        for (int64_t i = 0; i < n; ++i) out.v(i, j) = v(i, src);
    }
    return out;
}

}  // namespace detail

inline Svd svd(const Matrix& a) {
    if (a.rows == 0 || a.cols == 0) throw std::invalid_argument("svd: empty matrix");
    if (a.rows >= a.cols) return detail::jacobi_svd_tall(a);
    Svd t = detail::jacobi_svd_tall(transpose(a));
    Svd out;
    out.u = std::move(t.v);
    out.v = std::move(t.u);
    out.sigma = std::move(t.sigma);
    return out;
}

// Moore-Penrose pseudo-inverse via SVD; singular values below rtol * sigma_max
// are treated as zero. Reports the numerical rank through rank_out when given.
inline Matrix pseudo_inverse(const Matrix& a, double rtol = 1e-10, int64_t* rank_out = nullptr) {
    Svd d = svd(a);
    const double smax = d.sigma.empty() ? 0.0 : d.sigma[0];
    const double cut = rtol * smax;
    int64_t rank = 0;
    Matrix vs(d.v.rows, d.v.cols);
    for (int64_t j = 0; j < d.v.cols; ++j) {
        const double s = d.sigma[static_cast<std::size_t>(j)];
        if (s > cut && s > 0.0) {
            ++rank;
            for (int64_t i = 0; i < d.v.rows; ++i) vs(i, j) = d.v(i, j) / s;
        }
    }
    if (rank_out) *rank_out = rank;
    return matmul(vs, transpose(d.u));
}

}  // namespace mpvoc
