#include "latlab/mat.hpp"

#include <cmath>
#include <string>

namespace latlab {

Mat::Mat(std::size_t r, std::size_t c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != rows * cols)
        throw std::invalid_argument("Mat: data length " + std::to_string(data.size()) +
                                    " != rows*cols " + std::to_string(rows * cols));
}

Mat Mat::identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

Mat transpose(const Mat& a) {
    Mat t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

void gemm_acc(const Mat& a, const Mat& b, Mat& c) {
    const std::size_t m = a.rows, k = a.cols, n = b.cols;
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data.data() + i * k;
        double* crow = c.data.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b.data.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_abt_acc(const Mat& a, const Mat& b, Mat& c) {
    // c(i,j) += dot(a.row(i), b.row(j)); b is (n,k)
    const std::size_t m = a.rows, k = a.cols, n = b.rows;
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data.data() + i * k;
        double* crow = c.data.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b.data.data() + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] += s;
        }
    }
}

void gemm_atb_acc(const Mat& a, const Mat& b, Mat& c) {
    // a is (m,k), c is (k,n): c(p,j) += a(i,p) * b(i,j)
    const std::size_t m = a.rows, k = a.cols, n = b.cols;
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data.data() + i * k;
        const double* brow = b.data.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* crow = c.data.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
    Mat c(a.rows, b.cols);
    gemm_acc(a, b, c);
    return c;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

std::vector<double> col_mean(const Mat& x) {
    std::vector<double> m(x.cols, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j) m[j] += x.at(i, j);
    if (x.rows > 0)
        for (double& v : m) v /= static_cast<double>(x.rows);
    return m;
}

Mat covariance(const Mat& x) {
    const auto mu = col_mean(x);
    Mat c(x.cols, x.cols);
    std::vector<double> centered(x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t j = 0; j < x.cols; ++j) centered[j] = x.at(i, j) - mu[j];
        for (std::size_t p = 0; p < x.cols; ++p) {
            const double cp = centered[p];
            double* crow = c.data.data() + p * x.cols;
            for (std::size_t q = 0; q < x.cols; ++q) crow[q] += cp * centered[q];
        }
    }
    const double inv = x.rows > 0 ? 1.0 / static_cast<double>(x.rows) : 0.0;
    for (double& v : c.data) v *= inv;
    return c;
}

bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

void require_finite(std::span<const double> v, const char* what) {
    if (!all_finite(v)) throw std::runtime_error(std::string("non-finite values in ") + what);
}

double frob_norm(const Mat& a) { return norm2(a.data); }

double max_abs_diff(const Mat& a, const Mat& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

} // namespace latlab
