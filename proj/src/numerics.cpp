#include "latlab/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace latlab {

double logsumexp(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("logsumexp: empty vector");
    const double m = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("softmax: empty vector");
    const double m = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - m);
        s += out[i];
    }
    for (double& x : out) x /= s;
    return out;
}

EigResult sym_eig(const Mat& a, double tol) {
    if (a.rows != a.cols) throw std::invalid_argument("sym_eig: matrix not square");
    const std::size_t n = a.rows;
    double scale = 0.0;
    for (double x : a.data) scale = std::max(scale, std::abs(x));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(a.at(i, j) - a.at(j, i)) > tol * std::max(1.0, scale))
                throw std::invalid_argument("sym_eig: matrix not symmetric within tol");

    // Work on the symmetrized copy so the rotations see an exactly symmetric matrix.
    Mat w(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) w.at(i, j) = 0.5 * (a.at(i, j) + a.at(j, i));
    Mat v = Mat::identity(n);

    auto offdiag = [&]() {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += w.at(i, j) * w.at(i, j);
        return std::sqrt(2.0 * s);
    };

    const double target = 1e-14 * std::max(1.0, frob_norm(w));
    for (int sweep = 0; sweep < 100 && offdiag() > target; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = w.at(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                const double app = w.at(p, p), aqq = w.at(q, q);
                const double theta = 0.5 * (aqq - app) / apq;
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double wip = w.at(i, p), wiq = w.at(i, q);
                    w.at(i, p) = c * wip - s * wiq;
                    w.at(i, q) = s * wip + c * wiq;
                }
                for (std::size_t j = 0; j < n; ++j) {
                    const double wpj = w.at(p, j), wqj = w.at(q, j);
                    w.at(p, j) = c * wpj - s * wqj;
                    w.at(q, j) = s * wpj + c * wqj;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = v.at(i, p), viq = v.at(i, q);
                    v.at(i, p) = c * vip - s * viq;
                    v.at(i, q) = s * vip + c * viq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return w.at(i, i) > w.at(j, j); });

    EigResult res;
    res.eigvals.resize(n);
    res.eigvecs = Mat(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        res.eigvals[k] = w.at(order[k], order[k]);
        for (std::size_t i = 0; i < n; ++i) res.eigvecs.at(i, k) = v.at(i, order[k]);
    }
    return res;
}

Mat gaussian_draw(RngStream& rng, std::size_t n, std::size_t d) {
    if (n < 1 || d < 1) throw std::invalid_argument("gaussian_draw: n and d must be >= 1");
    Mat m(n, d);
    for (double& x : m.data) x = rng.normal();
    return m;
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double h) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: h must be > 0");
    std::vector<double> xs(x.begin(), x.end());
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double orig = xs[i];
        xs[i] = orig + h;
        const double fp = f(xs);
        xs[i] = orig - h;
        const double fm = f(xs);
        xs[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_diff_grad: non-finite f at index " + std::to_string(i));
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

} // namespace latlab
