#include "latlab/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "latlab/numerics.hpp"

namespace latlab {

namespace {

void require_dim(std::size_t got, std::size_t want, const char* what) {
    if (got != want)
        throw std::invalid_argument(std::string(what) + ": dimension mismatch (" +
                                    std::to_string(got) + " vs " + std::to_string(want) + ")");
}

// Shared kernel: score of the scaled mixture, plus the softmax weights.
void score_kernel(const Mat& means, std::span<const double> x, double t,
                  std::span<double> out, std::vector<double>& w_buf) {
    const std::size_t k = means.rows, d = means.cols;
    const double scale = std::exp(-t);
    w_buf.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
        double q = 0.0;
        const double* mu = means.data.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            const double z = x[j] - scale * mu[j];
            q += z * z;
        }
        w_buf[i] = -0.5 * q;
    }
    const double m = *std::max_element(w_buf.begin(), w_buf.end());
    double s = 0.0;
    for (double& v : w_buf) {
        v = std::exp(v - m);
        s += v;
    }
    for (double& v : w_buf) v /= s;
    for (std::size_t j = 0; j < d; ++j) out[j] = -x[j];
    for (std::size_t i = 0; i < k; ++i) {
        const double wi = w_buf[i] * scale;
        const double* mu = means.data.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) out[j] += wi * mu[j];
    }
}

} // namespace

GmmModel TheoryGmm::to_gmm(double t) const {
    if (t < 0.0) throw std::invalid_argument("TheoryGmm::to_gmm: t must be >= 0");
    GmmModel m;
    m.k = k();
    m.d = d();
    m.cov_kind = CovKind::identity;
    m.weights.assign(m.k, 1.0 / static_cast<double>(m.k));
    m.means = means;
    const double scale = std::exp(-t);
    for (double& v : m.means.data) v *= scale;
    return m;
}

TheoryGmm TheoryGmm::from_gmm(const GmmModel& m) {
    if (m.cov_kind != CovKind::identity)
        throw std::invalid_argument("TheoryGmm: covariance must be identity");
    for (double w : m.weights)
        if (std::abs(w - 1.0 / static_cast<double>(m.k)) > 1e-12)
            throw std::invalid_argument("TheoryGmm: weights must be uniform");
    return {m.means};
}

std::string ScoreNet::to_json() const {
    nlohmann::json j;
    j["k"] = k;
    j["d"] = d;
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < k; ++i)
        rows.push_back(std::vector<double>(means.row(i).begin(), means.row(i).end()));
    j["means"] = rows;
    return j.dump();
}

ScoreNet ScoreNet::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    ScoreNet net;
    net.k = j.at("k").get<std::size_t>();
    net.d = j.at("d").get<std::size_t>();
    net.means = Mat(net.k, net.d);
    for (std::size_t i = 0; i < net.k; ++i) {
        const auto row = j.at("means").at(i).get<std::vector<double>>();
        std::copy(row.begin(), row.end(), net.means.row(i).begin());
    }
    return net;
}

ForwardMarginal forward_marginal(double t) {
    if (t < 0.0) throw std::invalid_argument("forward_marginal: t must be >= 0");
    return {std::exp(-t), 1.0 - std::exp(-2.0 * t)};
}

std::vector<double> exact_score(const TheoryGmm& gmm, std::span<const double> x, double t) {
    if (t < 0.0) throw std::invalid_argument("exact_score: t must be >= 0");
    require_dim(x.size(), gmm.d(), "exact_score");
    std::vector<double> out(gmm.d()), w;
    score_kernel(gmm.means, x, t, out, w);
    return out;
}

std::vector<double> scorenet_eval(const ScoreNet& net, std::span<const double> x, double t) {
    require_dim(x.size(), net.d, "scorenet_eval");
    std::vector<double> out(net.d), w;
    score_kernel(net.means, x, t, out, w);
    return out;
}

Mat scorenet_grad(const ScoreNet& net, std::span<const double> x, double t,
                  std::span<const double> residual) {
    require_dim(x.size(), net.d, "scorenet_grad");
    require_dim(residual.size(), net.d, "scorenet_grad residual");
    const std::size_t k = net.k, d = net.d;
    const double scale = std::exp(-t);
    std::vector<double> s(d), w;
    score_kernel(net.means, x, t, s, w);

    // g_i = residual . nu_i with nu_i = mu_i e^{-t}; gbar = sum w_i g_i.
    std::vector<double> g(k);
    double gbar = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        double v = 0.0;
        const double* mu = net.means.data.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) v += residual[j] * scale * mu[j];
        g[i] = v;
        gbar += w[i] * v;
    }
    // dL/dmu_i = e^{-t} w_i [ residual + (g_i - gbar)(x - nu_i) ]
    Mat grad(k, d);
    for (std::size_t i = 0; i < k; ++i) {
        const double* mu = net.means.data.data() + i * d;
        double* gi = grad.data.data() + i * d;
        const double coupling = g[i] - gbar;
        for (std::size_t j = 0; j < d; ++j)
            gi[j] = scale * w[i] * (residual[j] + coupling * (x[j] - scale * mu[j]));
    }
    return grad;
}

DsmResult dsm_loss(const ScoreNet& net, const Mat& x0_batch, double t, RngStream& rng,
                   bool zero_noise) {
    if (t <= 0.0)
        throw std::invalid_argument("dsm_loss: denoising target undefined at t=0, use oracle_loss");
    if (x0_batch.rows == 0) throw std::invalid_argument("dsm_loss: empty batch");
    require_dim(x0_batch.cols, net.d, "dsm_loss");
    const auto fm = forward_marginal(t);
    const double sigma = std::sqrt(fm.sigma2);
    const std::size_t n = x0_batch.rows, d = net.d;

    DsmResult res{0.0, Mat(net.k, d)};
    std::vector<double> xt(d), zeta(d), s(d), resid(d), w;
    for (std::size_t r = 0; r < n; ++r) {
        const auto x0 = x0_batch.row(r);
        for (std::size_t j = 0; j < d; ++j) {
            zeta[j] = zero_noise ? 0.0 : rng.normal();
            xt[j] = fm.scale * x0[j] + sigma * zeta[j];
        }
        score_kernel(net.means, xt, t, s, w);
        double l = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            resid[j] = s[j] + zeta[j] / sigma; // s - (-zeta/sigma)
            l += resid[j] * resid[j];
        }
        res.loss += 0.5 * l;
        const Mat g = scorenet_grad(net, xt, t, resid);
        for (std::size_t i = 0; i < g.data.size(); ++i) res.grads.data[i] += g.data[i];
    }
    const double inv = 1.0 / static_cast<double>(n);
    res.loss *= inv;
    for (double& v : res.grads.data) v *= inv;
    return res;
}

double oracle_loss(const ScoreNet& net, const TheoryGmm& truth, const Mat& xt_batch, double t) {
    if (t < 0.0) throw std::invalid_argument("oracle_loss: t must be >= 0");
    require_dim(xt_batch.cols, net.d, "oracle_loss");
    require_dim(truth.d(), net.d, "oracle_loss truth");
    const std::size_t d = net.d;
    std::vector<double> s_net(d), s_true(d), w;
    double total = 0.0;
    for (std::size_t r = 0; r < xt_batch.rows; ++r) {
        const auto x = xt_batch.row(r);
        score_kernel(net.means, x, t, s_net, w);
        score_kernel(truth.means, x, t, s_true, w);
        double l = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double z = s_net[j] - s_true[j];
            l += z * z;
        }
        total += l;
    }
    return total / static_cast<double>(xt_batch.rows);
}

std::size_t default_train_iters(double eps, std::size_t d, double c) {
    const double inner = std::log(std::max(2.0, static_cast<double>(d))) / eps;
    return static_cast<std::size_t>(std::ceil(c * std::log(std::max(2.0, inner))));
}

TrainResult train_scorenet(const Mat& data, const std::optional<TheoryGmm>& truth,
                           const TrainConfig& cfg, RngStream& rng) {
    if (cfg.lr < 0.0 || cfg.batch < 1 || cfg.n_samples < cfg.batch)
        throw std::invalid_argument("train_scorenet: bad TrainConfig");
    const std::size_t n = std::min(cfg.n_samples, data.rows);
    if (n == 0) throw std::invalid_argument("train_scorenet: empty data");
    const std::size_t d = data.cols, k = cfg.k;

    ScoreNet net{k, d, Mat(k, d)};
    switch (cfg.init_kind) {
        case ScoreInit::warm: {
            if (!truth) throw std::invalid_argument("train_scorenet: warm init requires truth means");
            if (truth->k() != k || truth->d() != d)
                throw std::invalid_argument("train_scorenet: truth shape mismatch");
            const double radius =
                cfg.warm_radius_const *
                std::sqrt(std::log(static_cast<double>(std::min(k, d))));
            std::vector<double> u(d);
            for (std::size_t i = 0; i < k; ++i) {
                double nrm = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    u[j] = rng.normal();
                    nrm += u[j] * u[j];
                }
                nrm = std::sqrt(std::max(nrm, 1e-300));
                for (std::size_t j = 0; j < d; ++j)
                    net.means.at(i, j) = truth->means.at(i, j) + radius * u[j] / nrm;
            }
            break;
        }
        case ScoreInit::perturbed: {
            // Random data rows with a small jitter.
            for (std::size_t i = 0; i < k; ++i) {
                const std::size_t r = rng.below(n);
                for (std::size_t j = 0; j < d; ++j)
                    net.means.at(i, j) = data.at(r, j) + 0.1 * rng.normal();
            }
            break;
        }
        case ScoreInit::random:
            for (double& v : net.means.data) v = rng.normal();
            break;
    }

    TrainResult out;
    out.net = std::move(net);
    out.trace.reserve(cfg.iters);
    std::vector<std::size_t> batch_idx(cfg.batch);
    Mat batch(std::min(cfg.batch, n), d);

    for (std::size_t it = 0; it < cfg.iters; ++it) {
        const double t = cfg.t_sampling == TSampling::fixed
                             ? cfg.t_fixed
                             : cfg.t_lo + (cfg.t_hi - cfg.t_lo) * rng.uniform();
        if (batch.rows >= n) {
            for (std::size_t r = 0; r < n; ++r)
                std::copy(data.row(r).begin(), data.row(r).begin() + d, batch.row(r).begin());
        } else {
            for (std::size_t r = 0; r < batch.rows; ++r) {
                const std::size_t pick = rng.below(n);
                std::copy(data.row(pick).begin(), data.row(pick).begin() + d, batch.row(r).begin());
            }
        }

        double loss;
        Mat grads;
        if (cfg.loss_kind == LossKind::denoising) {
            auto res = dsm_loss(out.net, batch, t, rng);
            loss = res.loss;
            grads = std::move(res.grads);
        } else {
            if (!truth) throw std::invalid_argument("train_scorenet: oracle loss requires truth");
            // Noise the batch to x_t, then regress against the exact score.
            const auto fm = forward_marginal(t);
            const double sigma = std::sqrt(fm.sigma2);
            Mat xt(batch.rows, d);
            for (std::size_t r = 0; r < batch.rows; ++r)
                for (std::size_t j = 0; j < d; ++j)
                    xt.at(r, j) = fm.scale * batch.at(r, j) + sigma * rng.normal();
            loss = oracle_loss(out.net, *truth, xt, t);
            grads = Mat(out.net.k, d);
            std::vector<double> s_net(d), s_true(d), resid(d), w;
            for (std::size_t r = 0; r < xt.rows; ++r) {
                const auto x = xt.row(r);
                score_kernel(out.net.means, x, t, s_net, w);
                score_kernel(truth->means, x, t, s_true, w);
                for (std::size_t j = 0; j < d; ++j) resid[j] = s_net[j] - s_true[j];
                const Mat g = scorenet_grad(out.net, x, t, resid);
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    grads.data[i] += 2.0 * g.data[i] / static_cast<double>(xt.rows);
            }
        }

        for (std::size_t i = 0; i < grads.data.size(); ++i)
            out.net.means.data[i] -= cfg.lr * grads.data[i];

        TrainTracePoint pt{loss, std::numeric_limits<double>::quiet_NaN()};
        if (truth) pt.matched_error = matched_mean_error(out.net, *truth).max_err;
        out.trace.push_back(pt);
    }
    return out;
}

ScheduleTable make_schedule(ScheduleKind kind, std::size_t n_steps, double t_max, double delta,
                            double c_const, std::size_t d) {
    if (delta <= 0.0) throw std::invalid_argument("make_schedule: delta must be > 0");
    if (t_max <= delta) throw std::invalid_argument("make_schedule: T must exceed delta");
    if (n_steps < 1) throw std::invalid_argument("make_schedule: N must be >= 1");

    ScheduleTable s;
    s.c_const = c_const;
    s.d = d;
    s.warn_t_small = t_max < 2.0;
    s.warn_delta_large = delta > 0.5;
    s.grid.resize(n_steps + 1);
    s.grid[0] = t_max;
    s.grid[n_steps] = delta;
    if (kind == ScheduleKind::uniform) {
        const double h = (t_max - delta) / static_cast<double>(n_steps);
        for (std::size_t i = 1; i < n_steps; ++i) s.grid[i] = t_max - h * static_cast<double>(i);
    } else {
        // Geometric grid: steps shrink in proportion to t, hence to sigma2
        // near delta where sigma2 ~ 2t.
        const double ratio = delta / t_max;
        for (std::size_t i = 1; i < n_steps; ++i)
            s.grid[i] = t_max * std::pow(ratio, static_cast<double>(i) / static_cast<double>(n_steps));
    }

    s.sigma2.resize(n_steps + 1);
    for (std::size_t i = 0; i <= n_steps; ++i) s.sigma2[i] = 1.0 - std::exp(-2.0 * s.grid[i]);
    s.steps.resize(n_steps);
    s.step_constraint_violated.resize(n_steps);
    const double limit = 1.0 / (c_const * static_cast<double>(d));
    double pi = 0.0;
    for (std::size_t kstep = 0; kstep < n_steps; ++kstep) {
        const double h = s.grid[kstep] - s.grid[kstep + 1];
        if (h <= 0.0) throw std::runtime_error("make_schedule: grid not strictly decreasing");
        s.steps[kstep] = h;
        const double sg2 = s.sigma2[kstep];
        pi += h * h / (sg2 * sg2);
        s.step_constraint_violated[kstep] = h / sg2 > limit;
    }
    s.pi_value = pi;
    return s;
}

ScoreFn make_exact_score_fn(TheoryGmm gmm) {
    auto w = std::make_shared<std::vector<double>>();
    return [g = std::move(gmm), w](std::span<const double> x, double t, std::span<double> out) {
        score_kernel(g.means, x, t, out, *w);
    };
}

ScoreFn make_scorenet_fn(ScoreNet net) {
    auto w = std::make_shared<std::vector<double>>();
    return [n = std::move(net), w](std::span<const double> x, double t, std::span<double> out) {
        score_kernel(n.means, x, t, out, *w);
    };
}

namespace {

template <typename StepFn>
Mat run_sampler(const ScoreFn& score, const ScheduleTable& sched, std::size_t n, RngStream& rng,
                const SamplerOpts& opts, StepFn step, const char* name) {
    const std::size_t d = sched.d;
    Mat x(n, d);
    for (double& v : x.data) v = rng.normal(); // x_T ~ N(0, I)
    std::vector<double> s(d), zeta(d);
    for (std::size_t k = 0; k < sched.steps.size(); ++k) {
        const double h = sched.steps[k];
        const double t_prev = sched.grid[k];
        for (std::size_t r = 0; r < n; ++r) {
            auto row = x.row(r);
            score(row, t_prev, s);
            for (std::size_t j = 0; j < d; ++j) zeta[j] = opts.zero_noise ? 0.0 : rng.normal();
            step(row, s, zeta, h);
            if (!all_finite(row))
                throw std::runtime_error(std::string(name) + ": non-finite state at step " +
                                         std::to_string(k));
        }
    }
    return x;
}

} // namespace

Mat sample_euler_maruyama(const ScoreFn& score, const ScheduleTable& sched, std::size_t n,
                          RngStream& rng, const SamplerOpts& opts) {
    return run_sampler(
        score, sched, n, rng, opts,
        [](std::span<double> x, std::span<const double> s, std::span<const double> zeta, double h) {
            const double noise = std::sqrt(2.0 * h);
            for (std::size_t j = 0; j < x.size(); ++j)
                x[j] += h * (x[j] + 2.0 * s[j]) + noise * zeta[j];
        },
        "sample_euler_maruyama");
}

Mat sample_exp_integrator(const ScoreFn& score, const ScheduleTable& sched, std::size_t n,
                          RngStream& rng, const SamplerOpts& opts) {
    return run_sampler(
        score, sched, n, rng, opts,
        [](std::span<double> x, std::span<const double> s, std::span<const double> zeta, double h) {
            const double eh = std::exp(h);
            const double noise = std::sqrt(std::exp(2.0 * h) - 1.0);
            for (std::size_t j = 0; j < x.size(); ++j)
                x[j] = eh * x[j] + 2.0 * (eh - 1.0) * s[j] + noise * zeta[j];
        },
        "sample_exp_integrator");
}

double frechet_distance(const Mat& a, const Mat& b) {
    if (a.cols != b.cols) throw std::invalid_argument("frechet_distance: dimension mismatch");
    if (a.rows < 2 || b.rows < 2) throw std::invalid_argument("frechet_distance: needs >= 2 rows");
    const std::size_t d = a.cols;
    const auto mu_a = col_mean(a), mu_b = col_mean(b);
    double mean_term = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double z = mu_a[j] - mu_b[j];
        mean_term += z * z;
    }

    double tr_a = 0.0, tr_b = 0.0, tr_sqrt = 0.0;
    if (d <= 256) {
        const Mat ca = covariance(a), cb = covariance(b);
        for (std::size_t j = 0; j < d; ++j) {
            tr_a += ca.at(j, j);
            tr_b += cb.at(j, j);
        }
        // (Ca Cb)^{1/2} trace via S = sqrt(Ca), M = S Cb S.
        auto eig_a = sym_eig(ca, 1e-6);
        Mat s(d, d);
        for (std::size_t p = 0; p < d; ++p) {
            const double root = std::sqrt(std::max(eig_a.eigvals[p], 0.0));
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    s.at(i, j) += root * eig_a.eigvecs.at(i, p) * eig_a.eigvecs.at(j, p);
        }
        Mat m = matmul(matmul(s, cb), s);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i + 1; j < d; ++j) {
                const double v = 0.5 * (m.at(i, j) + m.at(j, i));
                m.at(i, j) = v;
                m.at(j, i) = v;
            }
        auto eig_m = sym_eig(m, 1e-6);
        for (double v : eig_m.eigvals) tr_sqrt += std::sqrt(std::max(v, 0.0));
    } else {
        // High-dimensional path: the nonzero spectrum of Ca*Cb equals that of
        // (A_c B_c^T)^T (A_c B_c^T) / (n m), which lives in sample space.
        const std::size_t n = a.rows, m = b.rows;
        Mat ac = a, bc = b;
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < d; ++j) ac.at(r, j) -= mu_a[j];
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < d; ++j) bc.at(r, j) -= mu_b[j];
        for (double v : ac.data) tr_a += v * v;
        for (double v : bc.data) tr_b += v * v;
        tr_a /= static_cast<double>(n);
        tr_b /= static_cast<double>(m);
        Mat g(n, m);
        gemm_abt_acc(ac, bc, g);
        Mat gram(m, m);
        gemm_atb_acc(g, g, gram);
        const double inv = 1.0 / (static_cast<double>(n) * static_cast<double>(m));
        for (double& v : gram.data) v *= inv;
        auto eig = sym_eig(gram, 1e-6);
        for (double v : eig.eigvals) tr_sqrt += std::sqrt(std::max(v, 0.0));
    }

    const double val = mean_term + tr_a + tr_b - 2.0 * tr_sqrt;
    return val < 0.0 ? 0.0 : val;
}

double knn_kl(const Mat& p, const Mat& q, std::size_t k) {
    if (p.cols != q.cols) throw std::invalid_argument("knn_kl: dimension mismatch");
    if (k < 1) throw std::invalid_argument("knn_kl: k must be >= 1");
    if (p.rows < k + 1 || q.rows < k + 1)
        throw std::invalid_argument("knn_kl: needs at least k+1 rows per set");
    const std::size_t n = p.rows, m = q.rows, d = p.cols;

    std::vector<double> dp(n), dq(m);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto xi = p.row(i);
        std::size_t cnt = 0;
        for (std::size_t r = 0; r < n; ++r) {
            if (r == i) continue;
            const auto xr = p.row(r);
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double z = xi[j] - xr[j];
                s += z * z;
            }
            dp[cnt++] = s;
        }
        std::nth_element(dp.begin(), dp.begin() + (k - 1), dp.begin() + cnt);
        const double rho2 = std::max(dp[k - 1], 1e-300);
        for (std::size_t r = 0; r < m; ++r) {
            const auto xr = q.row(r);
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double z = xi[j] - xr[j];
                s += z * z;
            }
            dq[r] = s;
        }
        std::nth_element(dq.begin(), dq.begin() + (k - 1), dq.end());
        const double nu2 = std::max(dq[k - 1], 1e-300);
        acc += 0.5 * std::log(nu2 / rho2); // log of the radius ratio
    }
    return static_cast<double>(d) / static_cast<double>(n) * acc +
           std::log(static_cast<double>(m) / static_cast<double>(n - 1));
}

namespace {

// Classic O(K^3) Hungarian with row/column potentials, minimizing total cost.
std::vector<std::size_t> hungarian(const Mat& cost) {
    const std::size_t n = cost.rows;
    std::vector<double> u(n + 1), v(n + 1);
    std::vector<std::size_t> p(n + 1), way(n + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, std::numeric_limits<double>::max());
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = std::numeric_limits<double>::max();
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> assign(n);
    for (std::size_t j = 1; j <= n; ++j)
        if (p[j] != 0) assign[p[j] - 1] = j - 1;
    return assign;
}

} // namespace

MatchResult matched_mean_error(const ScoreNet& net, const TheoryGmm& truth) {
    if (net.k != truth.k() || net.d != truth.d())
        throw std::invalid_argument("matched_mean_error: K or d mismatch");
    const std::size_t k = net.k, d = net.d;
    Mat cost(k, k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double z = net.means.at(i, c) - truth.means.at(j, c);
                s += z * z;
            }
            cost.at(i, j) = std::sqrt(s);
        }
    MatchResult res;
    res.assignment = hungarian(cost);
    res.max_err = 0.0;
    res.min_err = std::numeric_limits<double>::max();
    for (std::size_t i = 0; i < k; ++i) {
        const double e = cost.at(i, res.assignment[i]);
        res.max_err = std::max(res.max_err, e);
        res.min_err = std::min(res.min_err, e);
    }
    return res;
}

Mat generate_separated_means(std::size_t k, std::size_t d, double b_cap, double sep_const,
                             RngStream& rng) {
    const double sep =
        k >= 2 ? sep_const * std::sqrt(std::log(static_cast<double>(std::min(k, d)))) : 0.0;
    for (int restart = 0; restart < 64; ++restart) {
        Mat means(k, d);
        std::size_t placed = 0;
        std::vector<double> cand(d);
        for (int attempt = 0; attempt < 4000 && placed < k; ++attempt) {
            double nrm = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                cand[j] = rng.normal();
                nrm += cand[j] * cand[j];
            }
            nrm = std::sqrt(std::max(nrm, 1e-300));
            const double radius =
                b_cap * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
            for (std::size_t j = 0; j < d; ++j) cand[j] = cand[j] / nrm * radius;
            bool ok = true;
            for (std::size_t i = 0; i < placed && ok; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double z = cand[j] - means.at(i, j);
                    s += z * z;
                }
                ok = std::sqrt(s) >= sep;
            }
            if (ok) {
                std::copy(cand.begin(), cand.end(), means.row(placed).begin());
                ++placed;
            }
        }
        if (placed == k) return means;
    }
    throw std::runtime_error("generate_separated_means: could not satisfy the separation");
}

ComplexitySweepResult complexity_sweep(const ComplexitySweepConfig& cfg, RngStream& rng) {
    if (cfg.n_grid.empty() || !std::is_sorted(cfg.n_grid.begin(), cfg.n_grid.end()))
        throw std::invalid_argument("complexity_sweep: n_grid must be ascending and nonempty");
    if (cfg.eps <= 0.0) throw std::invalid_argument("complexity_sweep: eps must be > 0");
    std::vector<std::size_t> ks = cfg.k_list;
    std::sort(ks.begin(), ks.end());

    ComplexitySweepResult out;
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
        const std::size_t k = ks[ki];
        RngStream mean_rng = rng.substream(0x100 + ki);
        const TheoryGmm truth{generate_separated_means(k, cfg.d, cfg.b_cap, cfg.sep_const, mean_rng)};
        const GmmModel gen = truth.to_gmm();

        ComplexityRow row{k, 0, true};
        for (std::size_t ni = 0; ni < cfg.n_grid.size(); ++ni) {
            const std::size_t n = cfg.n_grid[ni];
            ComplexityCell cell{k, n, 0.0, {}};
            for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
                RngStream cell_rng =
                    rng.substream(((ki * 1000 + ni) * 1000 + trial) * 2 + 1);
                const auto sample = gmm_sample(gen, n, cell_rng);
                TrainConfig tc;
                tc.k = k;
                tc.n_samples = n;
                tc.batch = n;
                tc.iters = cfg.iters;
                tc.lr = cfg.lr;
                tc.t_fixed = std::max(0.05, cfg.eps);
                tc.init_kind = ScoreInit::warm;
                const auto trained = train_scorenet(sample.points, truth, tc, cell_rng);
                cell.trial_errs.push_back(matched_mean_error(trained.net, truth).max_err);
            }
            std::vector<double> sorted = cell.trial_errs;
            std::sort(sorted.begin(), sorted.end());
            cell.median_err = sorted[sorted.size() / 2];
            out.cells.push_back(cell);
            if (cell.median_err <= cfg.eps) {
                row.n_required = n;
                row.exceeded = false;
                break;
            }
        }
        out.rows.push_back(row);
    }
    return out;
}

} // namespace latlab
