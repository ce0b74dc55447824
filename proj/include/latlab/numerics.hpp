#pragma once

#include <functional>
#include <span>
#include <vector>

#include "latlab/mat.hpp"
#include "latlab/rng.hpp"

namespace latlab {

// log(sum(exp(v))) with max-shift; never overflows for |v_i| <= 1e300.
double logsumexp(std::span<const double> v);

// Softmax with max-shift; output is strictly positive and sums to 1.
std::vector<double> softmax(std::span<const double> v);

struct EigResult {
    std::vector<double> eigvals; // descending
    Mat eigvecs;                 // columns are eigenvectors, A*V = V*diag
};

// Symmetric eigendecomposition by cyclic Jacobi rotations. Inputs are small
// (d <= ~512) everywhere in this project, so simplicity wins over speed.
// Throws if A is not square or departs from symmetry by more than tol.
EigResult sym_eig(const Mat& a, double tol = 1e-9);

// n x d matrix of standard normal draws from the given stream.
Mat gaussian_draw(RngStream& rng, std::size_t n, std::size_t d);

// Central-difference gradient oracle. Throws (naming the offending index)
// if f evaluates to a non-finite value.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double h);

} // namespace latlab
