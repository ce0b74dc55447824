#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latlab/mat.hpp"
#include "latlab/rng.hpp"

namespace latlab {

enum class CovKind { identity, diagonal, full };

const char* cov_kind_name(CovKind k);
CovKind cov_kind_from_name(const std::string& name);

// Gaussian mixture. The identity kind carries no covariance data and is the
// distribution the diffusion theory runs on; diagonal/full serve empirical
// fits of latent data.
struct GmmModel {
    std::size_t k = 0;
    std::size_t d = 0;
    std::vector<double> weights;    // k, nonnegative, sums to 1
    Mat means;                      // k x d
    CovKind cov_kind = CovKind::identity;
    Mat diag_vars;                  // k x d when diagonal, else empty
    std::vector<Mat> full_covs;     // k of d x d when full, else empty

    // Throws when an invariant is broken (weights, positive variances,
    // SPD full covariances).
    void validate() const;

    // log p(x) for a single point.
    double log_density(std::span<const double> x) const;

    std::string to_json() const;
    static GmmModel from_json(const std::string& text);
};

enum class EmInit { kmeanspp, random_points };

struct EmConfig {
    std::size_t k = 1;
    CovKind cov_kind = CovKind::full;
    std::size_t max_iter = 200;
    double tol = 1e-6;           // relative NLL change
    std::size_t n_init = 3;
    EmInit init_kind = EmInit::kmeanspp;
    double var_floor = 1e-6;
    std::uint64_t seed = 0;
};

struct EmFitResult {
    GmmModel model;
    std::vector<double> nll_trace; // mean NLL per accepted iteration
    bool collapsed = false;        // a variance hit the floor at some point
};

EmFitResult gmm_fit_em(const Mat& data, const EmConfig& cfg);

// Mean negative log-likelihood per sample.
double gmm_nll(const GmmModel& model, const Mat& data);

struct GmmSample {
    Mat points;
    std::vector<std::size_t> labels; // chosen component per row
};

GmmSample gmm_sample(const GmmModel& model, std::size_t n, RngStream& rng);

struct NllSweepRow {
    std::size_t k;
    double nll;
    bool collapsed;
};

std::vector<NllSweepRow> nll_sweep(const Mat& data, const std::vector<std::size_t>& k_list,
                                   const EmConfig& base_cfg);

double max_mean_norm(const GmmModel& model);

struct SeparationCheck {
    bool ok;
    double min_pairwise_gap;
    double threshold; // C * sqrt(log(min(K, d)))
};

SeparationCheck check_separation(const Mat& means, double c);

} // namespace latlab
