#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "latlab/gmm.hpp"
#include "latlab/numerics.hpp"

using namespace latlab;

namespace {

GmmModel identity_model(const Mat& means) {
    GmmModel m;
    m.k = means.rows;
    m.d = means.cols;
    m.cov_kind = CovKind::identity;
    m.weights.assign(m.k, 1.0 / static_cast<double>(m.k));
    m.means = means;
    return m;
}

// Direct mixture density in extended precision, no log-space tricks.
long double brute_force_density(const GmmModel& m, std::span<const double> x) {
    long double total = 0.0L;
    for (std::size_t i = 0; i < m.k; ++i) {
        long double quad = 0.0L, logdet = 0.0L;
        if (m.cov_kind == CovKind::identity) {
            for (std::size_t j = 0; j < m.d; ++j) {
                const long double z = x[j] - m.means.at(i, j);
                quad += z * z;
            }
        } else if (m.cov_kind == CovKind::diagonal) {
            for (std::size_t j = 0; j < m.d; ++j) {
                const long double z = x[j] - m.means.at(i, j);
                quad += z * z / m.diag_vars.at(i, j);
                logdet += std::log(static_cast<long double>(m.diag_vars.at(i, j)));
            }
        }
        const long double log2pi = std::log(2.0L * std::numbers::pi_v<long double>);
        total += m.weights[i] *
                 std::exp(-0.5L * (static_cast<long double>(m.d) * log2pi + logdet + quad));
    }
    return total;
}

} // namespace

TEST_CASE("gmm_nll standard normal at the mode") {
    Mat mean(1, 2);
    const GmmModel m = identity_model(mean);
    Mat x(1, 2);
    CHECK(gmm_nll(m, x) == doctest::Approx(std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
}

TEST_CASE("duplicate component leaves the mixture density unchanged") {
    RngStream rng(2, 2);
    Mat means(2, 3);
    for (double& v : means.data) v = rng.normal();
    GmmModel m = identity_model(means);
    m.weights = {0.7, 0.3};

    GmmModel split = m;
    split.k = 3;
    split.weights = {0.35, 0.3, 0.35};
    split.means = Mat(3, 3);
    for (std::size_t j = 0; j < 3; ++j) {
        split.means.at(0, j) = m.means.at(0, j);
        split.means.at(1, j) = m.means.at(1, j);
        split.means.at(2, j) = m.means.at(0, j);
    }
    Mat data = gaussian_draw(rng, 50, 3);
    CHECK(gmm_nll(m, data) == doctest::Approx(gmm_nll(split, data)).epsilon(1e-10));
}

TEST_CASE("gmm_nll agrees with extended-precision brute force") {
    RngStream rng(31, 4);
    GmmModel m;
    m.k = 3;
    m.d = 4;
    m.cov_kind = CovKind::diagonal;
    m.weights = {0.5, 0.2, 0.3};
    m.means = Mat(3, 4);
    m.diag_vars = Mat(3, 4);
    for (double& v : m.means.data) v = rng.normal();
    for (double& v : m.diag_vars.data) v = 0.3 + rng.uniform();
    m.validate();

    Mat data = gaussian_draw(rng, 40, 4);
    long double acc = 0.0L;
    for (std::size_t r = 0; r < data.rows; ++r)
        acc += -std::log(brute_force_density(m, data.row(r)));
    const double expect = static_cast<double>(acc / data.rows);
    CHECK(gmm_nll(m, data) == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("nll is invariant under component permutation") {
    RngStream rng(8, 8);
    GmmModel m;
    m.k = 3;
    m.d = 2;
    m.cov_kind = CovKind::diagonal;
    m.weights = {0.2, 0.5, 0.3};
    m.means = Mat(3, 2);
    m.diag_vars = Mat(3, 2);
    for (double& v : m.means.data) v = rng.normal() * 2.0;
    for (double& v : m.diag_vars.data) v = 0.5 + rng.uniform();

    GmmModel perm = m;
    const std::size_t order[3] = {2, 0, 1};
    for (std::size_t i = 0; i < 3; ++i) {
        perm.weights[i] = m.weights[order[i]];
        for (std::size_t j = 0; j < 2; ++j) {
            perm.means.at(i, j) = m.means.at(order[i], j);
            perm.diag_vars.at(i, j) = m.diag_vars.at(order[i], j);
        }
    }
    Mat data = gaussian_draw(rng, 64, 2);
    CHECK(gmm_nll(m, data) == doctest::Approx(gmm_nll(perm, data)).epsilon(1e-12));
}

TEST_CASE("K=1 EM is the closed-form Gaussian MLE") {
    RngStream rng(77, 1);
    Mat data = gaussian_draw(rng, 200, 3);
    for (std::size_t r = 0; r < data.rows; ++r) data.at(r, 1) += 2.5;

    EmConfig cfg;
    cfg.k = 1;
    cfg.cov_kind = CovKind::full;
    cfg.n_init = 1;
    const auto fit = gmm_fit_em(data, cfg);

    const auto mean = col_mean(data);
    const Mat cov = covariance(data);
    for (std::size_t j = 0; j < 3; ++j)
        CHECK(fit.model.means.at(0, j) == doctest::Approx(mean[j]).epsilon(1e-9));
    for (std::size_t i = 0; i < 9; ++i)
        CHECK(fit.model.full_covs[0].data[i] == doctest::Approx(cov.data[i]).epsilon(1e-9));
}

TEST_CASE("EM recovers a well-separated 1-d bimodal mixture") {
    RngStream rng(5, 55);
    Mat data(1000, 1);
    for (std::size_t i = 0; i < 500; ++i) data.at(i, 0) = -5.0 + rng.normal();
    for (std::size_t i = 500; i < 1000; ++i) data.at(i, 0) = 5.0 + rng.normal();

    EmConfig cfg;
    cfg.k = 2;
    cfg.cov_kind = CovKind::full;
    cfg.seed = 3;
    const auto fit = gmm_fit_em(data, cfg);
    std::vector<double> mus{fit.model.means.at(0, 0), fit.model.means.at(1, 0)};
    std::sort(mus.begin(), mus.end());
    CHECK(std::abs(mus[0] + 5.0) < 0.2);
    CHECK(std::abs(mus[1] - 5.0) < 0.2);

    // Monotone NLL trace up to the stated slack.
    for (std::size_t i = 1; i < fit.nll_trace.size(); ++i)
        CHECK(fit.nll_trace[i] <= fit.nll_trace[i - 1] + 1e-9);
}

TEST_CASE("refit of samples from a fitted model reaches a similar NLL") {
    RngStream rng(17, 3);
    Mat means(2, 2);
    means.at(0, 0) = -3.0;
    means.at(1, 0) = 3.0;
    means.at(1, 1) = 1.5;
    const GmmModel gen = identity_model(means);
    RngStream srng(17, 4);
    const auto sample = gmm_sample(gen, 2000, srng);

    EmConfig cfg;
    cfg.k = 2;
    cfg.cov_kind = CovKind::full;
    cfg.seed = 9;
    const auto fit = gmm_fit_em(sample.points, cfg);
    const double gen_nll = gmm_nll(gen, sample.points);
    CHECK(fit.nll_trace.back() <= gen_nll + 0.02 * std::abs(gen_nll));
    CHECK(std::abs(fit.nll_trace.back() - gen_nll) <= 0.02 * std::abs(gen_nll));
}

TEST_CASE("gmm_fit_em rejects K larger than the sample count") {
    EmConfig cfg;
    cfg.k = 10;
    CHECK_THROWS_AS(gmm_fit_em(Mat(4, 2), cfg), std::invalid_argument);
}

TEST_CASE("point-mass data is floored and flagged") {
    Mat data(50, 2);
    for (std::size_t r = 0; r < data.rows; ++r) {
        data.at(r, 0) = 1.0;
        data.at(r, 1) = -2.0;
    }
    EmConfig cfg;
    cfg.k = 1;
    cfg.cov_kind = CovKind::diagonal;
    const auto fit = gmm_fit_em(data, cfg);
    CHECK(fit.collapsed);
    CHECK(std::isfinite(fit.nll_trace.back()));
}

TEST_CASE("gmm_sample moments, degenerate weights, determinism") {
    Mat mean0(1, 2);
    const GmmModel m = identity_model(mean0);
    RngStream rng(12, 0);
    const auto s = gmm_sample(m, 50000, rng);
    const Mat cov = covariance(s.points);
    double frob = 0.0;
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            const double z = cov.at(i, j) - (i == j ? 1.0 : 0.0);
            frob += z * z;
        }
    CHECK(std::sqrt(frob) < 0.05);

    GmmModel degenerate = identity_model(Mat(2, 2));
    degenerate.weights = {1.0, 0.0};
    RngStream rng2(1, 1);
    const auto s2 = gmm_sample(degenerate, 200, rng2);
    for (std::size_t lab : s2.labels) CHECK(lab == 0);

    RngStream ra(9, 9), rb(9, 9);
    const auto sa = gmm_sample(m, 100, ra);
    const auto sb = gmm_sample(m, 100, rb);
    CHECK(sa.points.data == sb.points.data);
    CHECK(sa.labels == sb.labels);
}

TEST_CASE("component frequencies track the weights") {
    Mat means(3, 1);
    means.at(0, 0) = -6.0;
    means.at(2, 0) = 6.0;
    GmmModel m = identity_model(means);
    m.weights = {0.6, 0.3, 0.1};
    RngStream rng(21, 2);
    const std::size_t n = 20000;
    const auto s = gmm_sample(m, n, rng);
    std::vector<double> freq(3, 0.0);
    for (std::size_t lab : s.labels) freq[lab] += 1.0 / static_cast<double>(n);
    const double tol = 3.0 / std::sqrt(static_cast<double>(n));
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(freq[i] - m.weights[i]) <= tol);
}

TEST_CASE("nll_sweep orders K by fit quality on 4-mode data") {
    Mat means(4, 2);
    means.at(0, 0) = -6.0;
    means.at(1, 0) = 6.0;
    means.at(2, 1) = -6.0;
    means.at(3, 1) = 6.0;
    const GmmModel gen = identity_model(means);
    RngStream rng(13, 13);
    const auto sample = gmm_sample(gen, 2400, rng);

    EmConfig cfg;
    cfg.cov_kind = CovKind::full;
    cfg.seed = 4;
    const auto rows = nll_sweep(sample.points, {8, 1, 4, 2}, cfg);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].k == 1);
    CHECK(rows[3].k == 8); // ascending output order
    const double nll1 = rows[0].nll, nll2 = rows[1].nll, nll4 = rows[2].nll, nll8 = rows[3].nll;
    CHECK(nll4 < nll2);
    CHECK(nll2 < nll1);
    CHECK(nll8 <= nll4 + 0.05);
}

TEST_CASE("K=1 sweep matches the Gaussian entropy") {
    RngStream rng(3, 33);
    const std::size_t d = 3;
    Mat data = gaussian_draw(rng, 4000, d);
    EmConfig cfg;
    cfg.cov_kind = CovKind::full;
    const auto rows = nll_sweep(data, {1}, cfg);
    const double entropy = 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi * std::numbers::e);
    CHECK(std::abs(rows[0].nll - entropy) <= 0.03 * entropy);
}

TEST_CASE("max_mean_norm") {
    CHECK(max_mean_norm(identity_model(Mat(3, 4))) == 0.0);
    Mat means(2, 2);
    means.at(0, 0) = 3.0;
    means.at(0, 1) = 4.0;
    means.at(1, 1) = 1.0;
    CHECK(max_mean_norm(identity_model(means)) == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("max mean norm is flat across large K on standardized latents") {
    // Stand-in for tokenizer latents: a 10-mode mixture in 8 dims, then the
    // usual per-column standardization.
    RngStream rng(41, 6);
    const std::size_t n = 4000, d = 8;
    Mat centers(10, d);
    for (double& v : centers.data) v = 2.0 * rng.normal();
    GmmModel gen;
    gen.k = 10;
    gen.d = d;
    gen.cov_kind = CovKind::identity;
    gen.weights.assign(10, 0.1);
    gen.means = centers;
    RngStream srng(41, 7);
    Mat data = gmm_sample(gen, n, srng).points;
    const auto mu = col_mean(data);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) data.at(r, j) -= mu[j];
    std::vector<double> sd(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) sd[j] += data.at(r, j) * data.at(r, j);
    for (std::size_t j = 0; j < d; ++j) sd[j] = std::sqrt(sd[j] / static_cast<double>(n));
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) data.at(r, j) /= sd[j];

    std::vector<double> bs;
    for (std::size_t k : {50u, 100u, 200u}) {
        EmConfig cfg;
        cfg.k = k;
        cfg.cov_kind = CovKind::diagonal;
        cfg.max_iter = 40;
        cfg.n_init = 1;
        cfg.seed = 7;
        bs.push_back(max_mean_norm(gmm_fit_em(data, cfg).model));
    }
    const double lo = *std::min_element(bs.begin(), bs.end());
    const double hi = *std::max_element(bs.begin(), bs.end());
    CHECK((hi - lo) / hi < 0.25);
}

TEST_CASE("check_separation thresholds") {
    Mat far(2, 2);
    far.at(1, 0) = 10.0;
    const auto ok = check_separation(far, 1.0);
    CHECK(ok.ok);
    CHECK(ok.min_pairwise_gap == doctest::Approx(10.0));
    CHECK(ok.threshold == doctest::Approx(std::sqrt(std::log(2.0))).epsilon(1e-15));

    Mat same(2, 3);
    const auto bad = check_separation(same, 1.0);
    CHECK_FALSE(bad.ok);
    CHECK(bad.min_pairwise_gap == 0.0);

    // Scaled simplex in 8-d: vertices s*e_i have pairwise distance s*sqrt(2).
    const double s = 6.0;
    Mat simplex(8, 8);
    for (std::size_t i = 0; i < 8; ++i) simplex.at(i, i) = s;
    const auto res = check_separation(simplex, 2.0);
    CHECK(res.min_pairwise_gap == doctest::Approx(s * std::sqrt(2.0)).epsilon(1e-12));
    CHECK(res.threshold == doctest::Approx(2.0 * std::sqrt(std::log(8.0))).epsilon(1e-15));
    CHECK(res.ok == (res.min_pairwise_gap >= res.threshold));

    CHECK_THROWS_AS(check_separation(Mat(1, 3), 1.0), std::invalid_argument);
}

TEST_CASE("gmm json round trip is exact") {
    RngStream rng(19, 1);
    GmmModel m;
    m.k = 2;
    m.d = 3;
    m.cov_kind = CovKind::full;
    m.weights = {0.25, 0.75};
    m.means = Mat(2, 3);
    for (double& v : m.means.data) v = rng.normal() * std::numbers::pi;
    m.full_covs.assign(2, Mat(3, 3));
    for (auto& c : m.full_covs) {
        Mat a = gaussian_draw(rng, 3, 3);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                double s = i == j ? 2.0 : 0.0;
                for (std::size_t p = 0; p < 3; ++p) s += a.at(i, p) * a.at(j, p) * 0.2;
                c.at(i, j) = s;
            }
    }
    m.validate();
    const GmmModel back = GmmModel::from_json(m.to_json());
    CHECK(back.weights == m.weights);
    CHECK(back.means.data == m.means.data);
    CHECK(back.full_covs[0].data == m.full_covs[0].data);
    CHECK(back.full_covs[1].data == m.full_covs[1].data);
}
