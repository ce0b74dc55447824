#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "latlab/latent.hpp"
#include "latlab/numerics.hpp"

using namespace latlab;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("flatten layout and round trip") {
    LatentDataset ds;
    ds.n = 1;
    ds.tokens_per_sample = 2;
    ds.channels = 3;
    ds.data = {1, 2, 3, 4, 5, 6};
    const Mat x = flatten(ds);
    CHECK(x.rows == 1);
    CHECK(x.cols == 6);
    CHECK(x.data == std::vector<double>{1, 2, 3, 4, 5, 6});

    const LatentDataset back = unflatten(x, 2, 3);
    CHECK(back.data == ds.data);
    CHECK(back.tokens_per_sample == 2);
    CHECK(back.channels == 3);

    LatentDataset empty;
    empty.tokens_per_sample = 2;
    empty.channels = 3;
    const Mat e = flatten(empty);
    CHECK(e.rows == 0);
    CHECK(e.cols == 6);
}

TEST_CASE("latb1 round trip, labels, trailing byte rejection") {
    LatentDataset ds;
    ds.n = 3;
    ds.tokens_per_sample = 2;
    ds.channels = 2;
    RngStream rng(1, 1);
    ds.data.resize(12);
    for (double& v : ds.data) v = rng.normal();
    ds.labels = std::vector<std::uint32_t>{7, 0, 3};

    const std::string path = temp_path("latlab_test.latb1");
    write_latb1(path, ds);
    const LatentDataset back = read_latb1(path);
    CHECK(back.n == 3);
    CHECK(back.tokens_per_sample == 2);
    CHECK(back.channels == 2);
    CHECK(back.data == ds.data);
    REQUIRE(back.labels.has_value());
    CHECK(*back.labels == *ds.labels);

    {
        std::ofstream f(path, std::ios::binary | std::ios::app);
        f.put('\0');
    }
    CHECK_THROWS_WITH_AS(read_latb1(path), doctest::Contains("trailing bytes"),
                         std::runtime_error);

    const std::string bad = temp_path("latlab_bad.latb1");
    {
        std::ofstream f(bad, std::ios::binary | std::ios::trunc);
        f << "NOPE1" << std::string(13, '\0');
    }
    CHECK_THROWS_WITH_AS(read_latb1(bad), doctest::Contains("bad magic"), std::runtime_error);
    std::filesystem::remove(path);
    std::filesystem::remove(bad);
}

TEST_CASE("pca_fit picks the right dimension") {
    // Rank-1 line embedded in 3-d.
    RngStream rng(4, 2);
    Mat line(500, 3);
    for (std::size_t r = 0; r < line.rows; ++r) {
        const double t = rng.normal();
        line.at(r, 0) = 2.0 * t;
        line.at(r, 1) = -t;
        line.at(r, 2) = 0.5 * t;
    }
    CHECK(pca_fit(line, 0.9).output_dim == 1);

    // Isotropic 4-d Gaussian: every component explains ~25%.
    Mat iso = gaussian_draw(rng, 10000, 4);
    const PcaTransform t_iso = pca_fit(iso, 0.9);
    CHECK(t_iso.output_dim == 4);

    // threshold 1.0 returns the covariance rank.
    Mat rank2(300, 3);
    for (std::size_t r = 0; r < rank2.rows; ++r) {
        const double a = rng.normal(), b = rng.normal();
        rank2.at(r, 0) = a;
        rank2.at(r, 1) = b;
        rank2.at(r, 2) = a + b;
    }
    CHECK(pca_fit(rank2, 1.0).output_dim == 2);

    Mat constant(10, 2);
    CHECK_THROWS_WITH_AS(pca_fit(constant, 0.9), doctest::Contains("constant data"),
                         std::invalid_argument);
}

TEST_CASE("pca_apply projects as the eigen decomposition promises") {
    RngStream rng(9, 5);
    Mat x(2000, 5);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const double a = 3.0 * rng.normal(), b = 1.5 * rng.normal();
        x.at(r, 0) = a + 0.2 * rng.normal();
        x.at(r, 1) = b + 0.2 * rng.normal();
        x.at(r, 2) = 0.4 * a - b + 0.2 * rng.normal();
        x.at(r, 3) = 0.1 * rng.normal();
        x.at(r, 4) = a + b + 0.2 * rng.normal();
    }
    const PcaTransform t = pca_fit(x, 0.999);
    // The fitted mean row projects to zero.
    Mat mean_row(1, 5);
    const auto mu = col_mean(x);
    std::copy(mu.begin(), mu.end(), mean_row.data.begin());
    const Mat z = pca_apply(t, mean_row);
    for (double v : z.data) CHECK(std::abs(v) < 1e-10);

    // Projected covariance is diag(eigenvalues).
    const Mat proj = pca_apply(t, x);
    const Mat pc = covariance(proj);
    const auto eig = sym_eig(covariance(x));
    for (std::size_t i = 0; i < t.output_dim; ++i)
        for (std::size_t j = 0; j < t.output_dim; ++j) {
            const double want = i == j ? eig.eigvals[i] : 0.0;
            CHECK(std::abs(pc.at(i, j) - want) < 1e-8);
        }

    // Orthonormal rows.
    for (std::size_t i = 0; i < t.output_dim; ++i)
        for (std::size_t j = 0; j < t.output_dim; ++j) {
            const double d = dot(t.components.row(i), t.components.row(j));
            CHECK(std::abs(d - (i == j ? 1.0 : 0.0)) < 1e-10);
        }
}

TEST_CASE("pca preserves inner products within the retained subspace") {
    RngStream rng(10, 6);
    Mat x(40, 4);
    for (double& v : x.data) v = rng.normal();
    const PcaTransform t = pca_fit(x, 1.0);
    const Mat proj = pca_apply(t, x);

    // Centered data and the rank-m projector P = C^T C.
    const auto mu = col_mean(x);
    Mat xc = x;
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t j = 0; j < x.cols; ++j) xc.at(r, j) -= mu[j];
    const Mat p = matmul(transpose(t.components), t.components);
    const Mat xp = matmul(xc, p);
    const Mat lhs = matmul(proj, transpose(proj));
    const Mat rhs = matmul(xp, transpose(xc));
    CHECK(max_abs_diff(lhs, rhs) < 1e-8);
}

TEST_CASE("standardize conventions") {
    Mat x(2, 1);
    x.at(1, 0) = 2.0;
    const auto [z, stats] = standardize_fit_apply(x);
    CHECK(z.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-14)); // population std
    CHECK(z.at(1, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK_FALSE(stats.floored[0]);

    RngStream rng(3, 3);
    Mat big = gaussian_draw(rng, 5000, 3);
    const auto [z1, s1] = standardize_fit_apply(big);
    const auto [z2, s2] = standardize_fit_apply(z1);
    for (double m : s2.mean) CHECK(std::abs(m) < 1e-10);
    for (double sd : s2.std_dev) CHECK(std::abs(sd - 1.0) < 1e-8);

    Mat with_const(20, 2);
    for (std::size_t r = 0; r < 20; ++r) {
        with_const.at(r, 0) = 4.2;
        with_const.at(r, 1) = static_cast<double>(r);
    }
    const auto [zc, sc] = standardize_fit_apply(with_const);
    CHECK(sc.floored[0]);
    CHECK_FALSE(sc.floored[1]);
    for (std::size_t r = 0; r < 20; ++r) CHECK(zc.at(r, 0) == 0.0);
}

TEST_CASE("standardize enforces per-column moments") {
    RngStream rng(6, 1);
    Mat x(400, 4);
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t j = 0; j < 4; ++j)
            x.at(r, j) = (3.0 + static_cast<double>(j)) * rng.normal() + 10.0 * static_cast<double>(j);
    const auto [z, stats] = standardize_fit_apply(x);
    (void)stats;
    const auto mu = col_mean(z);
    const Mat cov = covariance(z);
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(std::abs(mu[j]) <= 1e-10);
        CHECK(std::abs(cov.at(j, j) - 1.0) <= 1e-8);
    }
}

TEST_CASE("linear probe separable, chance level, errors") {
    RngStream rng(15, 2);
    const std::size_t n = 400;
    Mat lat(n, 3);
    std::vector<std::uint32_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = i % 2;
        const double sign = labels[i] == 0 ? -1.0 : 1.0;
        lat.at(i, 0) = sign * 5.0 + 0.1 * rng.normal();
        lat.at(i, 1) = 0.3 * rng.normal();
        lat.at(i, 2) = sign * 3.0 + 0.1 * rng.normal();
    }
    ProbeConfig cfg;
    cfg.seed = 5;
    CHECK(linear_probe(lat, labels, cfg).accuracy == doctest::Approx(1.0));

    const std::size_t n2 = 2000;
    Mat lat2(n2, 4);
    std::vector<std::uint32_t> labels2(n2);
    RngStream lrng(20, 20);
    for (std::size_t i = 0; i < n2; ++i) {
        labels2[i] = static_cast<std::uint32_t>(lrng.below(4)); // labels independent of features
        for (std::size_t j = 0; j < 4; ++j) lat2.at(i, j) = rng.normal();
    }
    const double acc = linear_probe(lat2, labels2, cfg).accuracy;
    CHECK(std::abs(acc - 0.25) <= 0.1);

    std::vector<std::uint32_t> one_class(n, 0);
    CHECK_THROWS_AS(linear_probe(lat, one_class, cfg), std::invalid_argument);
}

TEST_CASE("preprocessing chain is bit-reproducible") {
    RngStream rng(77, 7);
    LatentDataset ds;
    ds.n = 300;
    ds.tokens_per_sample = 4;
    ds.channels = 3;
    ds.data.resize(ds.n * 12);
    for (double& v : ds.data) v = rng.normal();

    auto run = [&] {
        const Mat flat = flatten(ds);
        const PcaTransform t = pca_fit(flat, 0.9);
        const Mat proj = pca_apply(t, flat);
        return standardize_fit_apply(proj).first;
    };
    const Mat a = run();
    const Mat b = run();
    CHECK(a.data == b.data);
}
