#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "latlab/gmm.hpp"
#include "latlab/mat.hpp"
#include "latlab/rng.hpp"

namespace latlab {

// Equally weighted identity-covariance mixture: the data distribution the
// diffusion theory runs on. Under the OU forward process its time-t marginal
// is the same mixture with means scaled by exp(-t).
struct TheoryGmm {
    Mat means; // K x d

    std::size_t k() const { return means.rows; }
    std::size_t d() const { return means.cols; }

    GmmModel to_gmm(double t = 0.0) const; // mixture of the time-t marginal
    static TheoryGmm from_gmm(const GmmModel& m); // requires identity cov, equal weights
};

// GMM-parameterized score network: same functional form as the exact score
// with trainable component means.
struct ScoreNet {
    std::size_t k = 0;
    std::size_t d = 0;
    Mat means; // k x d

    std::string to_json() const;
    static ScoreNet from_json(const std::string& text);
};

struct ForwardMarginal {
    double scale;  // exp(-t)
    double sigma2; // 1 - exp(-2t)
};

ForwardMarginal forward_marginal(double t);

// Score of the time-t marginal of the mixture with the given means:
//   sum_i w_i(x) * mu_i * exp(-t) - x,  w = softmax(-|x - mu_i e^{-t}|^2 / 2).
std::vector<double> exact_score(const TheoryGmm& gmm, std::span<const double> x, double t);
std::vector<double> scorenet_eval(const ScoreNet& net, std::span<const double> x, double t);

// Gradient of (1/2)|s(x,t) - target|^2 w.r.t. the K x d means, where
// residual = s(x,t) - target. Analytic chain rule through the softmax.
Mat scorenet_grad(const ScoreNet& net, std::span<const double> x, double t,
                  std::span<const double> residual);

struct DsmResult {
    double loss;
    Mat grads; // k x d
};

// Denoising score-matching loss at noise scale t: draw zeta, noise the batch,
// regress the score onto -zeta/sigma_t. zero_noise is a test hook.
DsmResult dsm_loss(const ScoreNet& net, const Mat& x0_batch, double t, RngStream& rng,
                   bool zero_noise = false);

// Mean squared deviation from the exact score over the batch (the literal
// objective, available only when the true means are known).
double oracle_loss(const ScoreNet& net, const TheoryGmm& truth, const Mat& xt_batch, double t);

enum class TSampling { fixed, uniform_range };
enum class LossKind { denoising, oracle };
enum class ScoreInit { warm, perturbed, random };

struct TrainConfig {
    std::size_t n_samples = 4096;
    std::size_t iters = 100;
    double lr = 0.5;
    std::size_t batch = 4096;
    TSampling t_sampling = TSampling::fixed;
    double t_fixed = 0.05; // Theta(eps) regime; uniform mode draws from [t_lo, t_hi]
    double t_lo = 0.05;
    double t_hi = 1.0;
    LossKind loss_kind = LossKind::denoising;
    ScoreInit init_kind = ScoreInit::warm;
    double warm_radius_const = 0.5; // C' of the warm-start assumption
    std::size_t k = 1;
    std::uint64_t seed = 0;
};

// ceil(c * log(log(d) / eps)) iteration heuristic.
std::size_t default_train_iters(double eps, std::size_t d, double c = 10.0);

struct TrainTracePoint {
    double loss;
    double matched_error; // max matched distance to truth; NaN when no truth
};

struct TrainResult {
    ScoreNet net;
    std::vector<TrainTracePoint> trace;
};

TrainResult train_scorenet(const Mat& data, const std::optional<TheoryGmm>& truth,
                           const TrainConfig& cfg, RngStream& rng);

enum class ScheduleKind { uniform, exp_decay };

struct ScheduleTable {
    std::vector<double> grid;   // T = t_0 > t_1 > ... > t_N = delta
    std::vector<double> steps;  // h_k = t_{k-1} - t_k, k = 1..N
    std::vector<double> sigma2; // 1 - exp(-2 t) at each grid point
    double pi_value = 0.0;      // sum h_k^2 / sigma2(t_{k-1})^2
    double c_const = 1.0;
    std::size_t d = 1;
    std::vector<bool> step_constraint_violated; // h_k/sigma2(t_{k-1}) > 1/(C d)
    bool warn_t_small = false;   // T < 2
    bool warn_delta_large = false; // delta > 1/2
};

ScheduleTable make_schedule(ScheduleKind kind, std::size_t n_steps, double t_max, double delta,
                            double c_const, std::size_t d);

using ScoreFn = std::function<void(std::span<const double> x, double t, std::span<double> out)>;

ScoreFn make_exact_score_fn(TheoryGmm gmm);
ScoreFn make_scorenet_fn(ScoreNet net);

struct SamplerOpts {
    bool zero_noise = false; // test hook
};

// x <- x + h (x + 2 s(x, t_{k-1})) + sqrt(2h) zeta
Mat sample_euler_maruyama(const ScoreFn& score, const ScheduleTable& sched, std::size_t n,
                          RngStream& rng, const SamplerOpts& opts = {});
// x <- e^h x + 2 (e^h - 1) s(x, t_{k-1}) + sqrt(e^{2h} - 1) zeta
Mat sample_exp_integrator(const ScoreFn& score, const ScheduleTable& sched, std::size_t n,
                          RngStream& rng, const SamplerOpts& opts = {});

// |mu_A - mu_B|^2 + Tr(S_A + S_B - 2 (S_A S_B)^{1/2}) on moment fits of the
// two sample sets; matrix square root via the symmetric eigen solver.
double frechet_distance(const Mat& a, const Mat& b);

// k-nearest-neighbor divergence estimate of KL(P || Q); can be negative at
// finite sample sizes.
double knn_kl(const Mat& p, const Mat& q, std::size_t k = 5);

struct MatchResult {
    std::vector<std::size_t> assignment; // net component i -> truth component
    double max_err = 0.0;
    double min_err = 0.0;
};

// Optimal one-to-one matching (Hungarian) between net and truth means by
// Euclidean distance; max_err is the acceptance-facing recovery error.
MatchResult matched_mean_error(const ScoreNet& net, const TheoryGmm& truth);

struct ComplexitySweepConfig {
    std::vector<std::size_t> k_list;
    std::size_t d = 8;
    double eps = 0.25;
    std::vector<std::size_t> n_grid; // ascending
    std::size_t trials = 5;
    double b_cap = 6.0; // max mean norm when generating the truth
    std::uint64_t seed = 0;
    double sep_const = 4.0; // separation constant used for mean generation
    std::size_t iters = 150;
    double lr = 0.5;
};

struct ComplexityCell {
    std::size_t k;
    std::size_t n;
    double median_err;
    std::vector<double> trial_errs;
};

struct ComplexityRow {
    std::size_t k;
    std::size_t n_required; // 0 when no grid n sufficed ("exceeded")
    bool exceeded;
};

struct ComplexitySweepResult {
    std::vector<ComplexityRow> rows;
    std::vector<ComplexityCell> cells;
};

ComplexitySweepResult complexity_sweep(const ComplexitySweepConfig& cfg, RngStream& rng);

// Truth means for the sweep: uniform in the B_cap ball, kept only when the
// pairwise separation assumption holds at sep_const.
Mat generate_separated_means(std::size_t k, std::size_t d, double b_cap, double sep_const,
                             RngStream& rng);

} // namespace latlab
