#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "latlab/autodiff.hpp"
#include "latlab/numerics.hpp"
#include "latlab/rng.hpp"

using namespace latlab;

namespace {

std::vector<double> rand_vec(RngStream& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

} // namespace

TEST_CASE("backward accumulates into leaf grads; interior grads stay fresh") {
    auto w = ad::param({2, 2}, {1.0, 2.0, 3.0, 4.0});
    auto x = ad::constant({2, 2}, {0.5, -1.0, 2.0, 0.25});
    auto loss = ad::mean_all(ad::mul(w, x));
    ad::backward(loss);
    const std::vector<double> once = w.grad();
    ad::backward(loss);
    for (std::size_t i = 0; i < once.size(); ++i)
        CHECK(w.grad()[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-15));
}

TEST_CASE("parameters outside the graph keep a zero gradient") {
    auto used = ad::param({2}, {1.0, 2.0});
    auto unused = ad::param({3}, {5.0, 6.0, 7.0});
    auto loss = ad::mean_all(used);
    ad::backward(loss);
    for (double g : unused.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward requires a scalar") {
    auto x = ad::param({2}, {1.0, 2.0});
    CHECK_THROWS_AS(ad::backward(x), std::invalid_argument);
}

TEST_CASE("shape errors name the op and shapes") {
    RngStream rng(1, 1);
    auto a = ad::param({2, 3}, rand_vec(rng, 6));
    auto b = ad::param({4, 2}, std::vector<double>(8, 0.0));
    CHECK_THROWS_WITH_AS(ad::matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(ad::add(a, b), doctest::Contains("(2,3)"), std::invalid_argument);
}

TEST_CASE("layernorm of a constant vector is zero pre-affine") {
    auto x = ad::constant({1, 1, 4}, {3.0, 3.0, 3.0, 3.0});
    auto g = ad::constant({4}, {1.0, 1.0, 1.0, 1.0});
    auto b = ad::constant({4}, {0.0, 0.0, 0.0, 0.0});
    auto y = ad::layernorm(x, g, b);
    for (double v : y.value()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("softmax rows sum to one") {
    RngStream rng(2, 2);
    auto x = ad::constant({3, 2, 5}, rand_vec(rng, 30, 2.0));
    auto y = ad::softmax_lastdim(x);
    for (std::size_t r = 0; r < 6; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < 5; ++j) s += y.value()[r * 5 + j];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("simple analytic gradient: sum(W x) pattern") {
    // loss = mean(matmul(x, W)); d loss / d W = column-broadcast of x means.
    auto x = ad::constant({4, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
    auto w = ad::param({3, 2}, std::vector<double>(6, 0.5));
    auto loss = ad::mean_all(ad::matmul(x, w));
    ad::backward(loss);
    // d/dW[p,q] = (1/8) sum_r x[r,p]
    for (std::size_t p = 0; p < 3; ++p) {
        double colsum = 0.0;
        for (std::size_t r = 0; r < 4; ++r) colsum += x.value()[r * 3 + p];
        for (std::size_t q = 0; q < 2; ++q)
            CHECK(w.grad()[p * 2 + q] == doctest::Approx(colsum / 8.0).epsilon(1e-12));
    }
}

TEST_CASE("rope2d: identity at the origin, norm preservation, relative property") {
    RngStream rng(5, 5);
    const std::size_t t = 4, hd = 8;
    auto x = ad::constant({1, t, hd}, rand_vec(rng, t * hd));

    std::vector<ad::RopePos> zero_pos(t, {true, 0.0, 0.0});
    auto y0 = ad::rope2d(x, zero_pos);
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(y0.value()[i] == doctest::Approx(x.value()[i]).epsilon(1e-15));

    std::vector<ad::RopePos> pos(t);
    for (std::size_t i = 0; i < t; ++i)
        pos[i] = {true, 1.3 * static_cast<double>(i), -0.4 * static_cast<double>(i * i)};
    auto y = ad::rope2d(x, pos);
    for (std::size_t i = 0; i < t; ++i) {
        double n_in = 0.0, n_out = 0.0;
        for (std::size_t j = 0; j < hd; ++j) {
            n_in += x.value()[i * hd + j] * x.value()[i * hd + j];
            n_out += y.value()[i * hd + j] * y.value()[i * hd + j];
        }
        CHECK(std::abs(std::sqrt(n_out) - std::sqrt(n_in)) <= 1e-10);
    }

    // <R(p1) q, R(p2) k> depends only on p1 - p2.
    auto q = ad::constant({1, 1, hd}, rand_vec(rng, hd));
    auto k = ad::constant({1, 1, hd}, rand_vec(rng, hd));
    auto ip = [&](double r1, double c1, double r2, double c2) {
        auto rq = ad::rope2d(q, {{true, r1, c1}});
        auto rk = ad::rope2d(k, {{true, r2, c2}});
        double s = 0.0;
        for (std::size_t j = 0; j < hd; ++j) s += rq.value()[j] * rk.value()[j];
        return s;
    };
    const double base = ip(1.0, 2.0, 4.0, 3.0);
    const double shifted = ip(1.0 + 3.0, 2.0 + 5.0, 4.0 + 3.0, 3.0 + 5.0);
    CHECK(std::abs(base - shifted) <= 1e-10);

    auto bad = ad::constant({1, 1, 6}, rand_vec(rng, 6));
    CHECK_THROWS_AS(ad::rope2d(bad, {{true, 0.0, 0.0}}), std::invalid_argument);
}

TEST_CASE("detach stops gradients") {
    auto w = ad::param({2}, {1.0, 2.0});
    auto frozen = ad::scale(w, 3.0).detach();
    auto v = ad::param({2}, {0.5, 0.5});
    auto loss = ad::mean_all(ad::mul(frozen, v));
    ad::backward(loss);
    for (double g : w.grad()) CHECK(g == 0.0);
    CHECK(v.grad()[0] != 0.0);
}

TEST_CASE("select and replace tokens round data correctly") {
    auto x = ad::param({1, 4, 2}, {0, 1, 10, 11, 20, 21, 30, 31});
    auto sel = ad::select_tokens(x, {2, 0});
    CHECK(sel.value() == std::vector<double>{20, 21, 0, 1});

    auto m = ad::param({2}, {-1.0, -2.0});
    auto rep = ad::replace_tokens(x, m, {1, 3});
    CHECK(rep.value() == std::vector<double>{0, 1, -1, -2, 20, 21, -1, -2});

    auto loss = ad::mean_all(rep);
    ad::backward(loss);
    // Replaced positions contribute to m, untouched positions to x.
    CHECK(m.grad()[0] == doctest::Approx(2.0 / 8.0));
    CHECK(x.grad()[2] == 0.0); // token 1 was replaced
    CHECK(x.grad()[0] == doctest::Approx(1.0 / 8.0));
}
