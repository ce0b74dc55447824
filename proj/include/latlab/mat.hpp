#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace latlab {

// Dense row-major matrix of doubles. The only matrix type in the project;
// everything numeric flows through it.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    Mat(std::size_t r, std::size_t c, std::vector<double> d);

    static Mat identity(std::size_t n);

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

Mat transpose(const Mat& a);
Mat matmul(const Mat& a, const Mat& b);

// C += A * B variants used throughout; shapes checked by the callers.
void gemm_acc(const Mat& a, const Mat& b, Mat& c);        // (m,k)x(k,n)
void gemm_abt_acc(const Mat& a, const Mat& b, Mat& c);    // A * B^T
void gemm_atb_acc(const Mat& a, const Mat& b, Mat& c);    // A^T * B

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

// Mean of each column (population conventions are used project-wide).
std::vector<double> col_mean(const Mat& x);
// Population covariance (1/N) of rows.
Mat covariance(const Mat& x);

bool all_finite(std::span<const double> v);
void require_finite(std::span<const double> v, const char* what);

double frob_norm(const Mat& a);
double max_abs_diff(const Mat& a, const Mat& b);

} // namespace latlab
