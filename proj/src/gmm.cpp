#include "latlab/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "latlab/numerics.hpp"

namespace latlab {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836; // ln(2*pi)

// Lower-triangular Cholesky factor; returns false if the matrix is not SPD.
bool cholesky(const Mat& a, Mat& l) {
    const std::size_t n = a.rows;
    l = Mat(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a.at(i, j);
            for (std::size_t p = 0; p < j; ++p) s -= l.at(i, p) * l.at(j, p);
            if (i == j) {
                if (s <= 0.0 || !std::isfinite(s)) return false;
                l.at(i, i) = std::sqrt(s);
            } else {
                l.at(i, j) = s / l.at(j, j);
            }
        }
    }
    return true;
}

struct CompDensity {
    // Precomputed per-component pieces so the E-step stays cheap.
    double log_norm = 0.0; // -(d/2)ln(2pi) - (1/2)ln|cov|
    Mat chol;              // full kind only
};

std::vector<CompDensity> prepare_densities(const GmmModel& m) {
    std::vector<CompDensity> out(m.k);
    for (std::size_t i = 0; i < m.k; ++i) {
        double logdet = 0.0;
        if (m.cov_kind == CovKind::diagonal) {
            for (std::size_t j = 0; j < m.d; ++j) logdet += std::log(m.diag_vars.at(i, j));
        } else if (m.cov_kind == CovKind::full) {
            if (!cholesky(m.full_covs[i], out[i].chol))
                throw std::runtime_error("gmm: full covariance not positive definite");
            for (std::size_t j = 0; j < m.d; ++j) logdet += 2.0 * std::log(out[i].chol.at(j, j));
        }
        out[i].log_norm = -0.5 * (static_cast<double>(m.d) * kLog2Pi + logdet);
    }
    return out;
}

double comp_log_density(const GmmModel& m, const CompDensity& cd, std::size_t i,
                        std::span<const double> x) {
    double quad = 0.0;
    switch (m.cov_kind) {
        case CovKind::identity:
            for (std::size_t j = 0; j < m.d; ++j) {
                const double z = x[j] - m.means.at(i, j);
                quad += z * z;
            }
            break;
        case CovKind::diagonal:
            for (std::size_t j = 0; j < m.d; ++j) {
                const double z = x[j] - m.means.at(i, j);
                quad += z * z / m.diag_vars.at(i, j);
            }
            break;
        case CovKind::full: {
            // Forward-substitute y = L^{-1} (x - mu); quad = |y|^2.
            std::vector<double> y(m.d);
            for (std::size_t r = 0; r < m.d; ++r) {
                double s = x[r] - m.means.at(i, r);
                for (std::size_t c = 0; c < r; ++c) s -= cd.chol.at(r, c) * y[c];
                y[r] = s / cd.chol.at(r, r);
            }
            for (double v : y) quad += v * v;
            break;
        }
    }
    return cd.log_norm - 0.5 * quad;
}

double mean_nll(const GmmModel& m, const std::vector<CompDensity>& cds, const Mat& data) {
    std::vector<double> lw(m.k);
    for (std::size_t i = 0; i < m.k; ++i)
        lw[i] = m.weights[i] > 0.0 ? std::log(m.weights[i]) : -std::numeric_limits<double>::infinity();
    std::vector<double> terms(m.k);
    double total = 0.0;
    for (std::size_t n = 0; n < data.rows; ++n) {
        const auto x = data.row(n);
        for (std::size_t i = 0; i < m.k; ++i) terms[i] = lw[i] + comp_log_density(m, cds[i], i, x);
        total += logsumexp(terms);
    }
    return -total / static_cast<double>(data.rows);
}

std::vector<std::size_t> init_centers(const Mat& data, const EmConfig& cfg, RngStream& rng) {
    const std::size_t n = data.rows;
    std::vector<std::size_t> centers;
    centers.reserve(cfg.k);
    if (cfg.init_kind == EmInit::random_points) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = 0; i < cfg.k; ++i)
            std::swap(idx[i], idx[i + rng.below(n - i)]);
        centers.assign(idx.begin(), idx.begin() + static_cast<long>(cfg.k));
        return centers;
    }
    // Distance-weighted seeding (kmeans++ style).
    centers.push_back(rng.below(n));
    std::vector<double> d2(n, std::numeric_limits<double>::max());
    for (std::size_t c = 1; c < cfg.k; ++c) {
        double total = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            double s = 0.0;
            const auto x = data.row(r);
            const auto y = data.row(centers.back());
            for (std::size_t j = 0; j < data.cols; ++j) {
                const double z = x[j] - y[j];
                s += z * z;
            }
            d2[r] = std::min(d2[r], s);
            total += d2[r];
        }
        if (total <= 0.0) {
            centers.push_back(rng.below(n)); // all points coincide
            continue;
        }
        double target = rng.uniform() * total;
        std::size_t pick = n - 1;
        for (std::size_t r = 0; r < n; ++r) {
            target -= d2[r];
            if (target <= 0.0) {
                pick = r;
                break;
            }
        }
        centers.push_back(pick);
    }
    return centers;
}

EmFitResult run_em_once(const Mat& data, const EmConfig& cfg, RngStream rng) {
    const std::size_t n = data.rows, d = data.cols, k = cfg.k;
    GmmModel m;
    m.k = k;
    m.d = d;
    m.cov_kind = cfg.cov_kind;
    m.weights.assign(k, 1.0 / static_cast<double>(k));
    m.means = Mat(k, d);
    const auto centers = init_centers(data, cfg, rng);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < d; ++j) m.means.at(i, j) = data.at(centers[i], j);

    bool collapsed = false;
    auto floor_diag = [&](double v) {
        if (v < cfg.var_floor) {
            collapsed = true;
            return cfg.var_floor;
        }
        return v;
    };

    if (cfg.cov_kind == CovKind::diagonal || cfg.cov_kind == CovKind::full) {
        Mat cov = covariance(data);
        for (std::size_t j = 0; j < d; ++j) cov.at(j, j) = floor_diag(cov.at(j, j));
        if (cfg.cov_kind == CovKind::diagonal) {
            m.diag_vars = Mat(k, d);
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j < d; ++j) m.diag_vars.at(i, j) = cov.at(j, j);
        } else {
            Mat chol;
            while (!cholesky(cov, chol)) {
                collapsed = true;
                for (std::size_t j = 0; j < d; ++j) cov.at(j, j) += cfg.var_floor;
            }
            m.full_covs.assign(k, cov);
        }
    }

    std::vector<double> trace;
    Mat resp(n, k);
    std::vector<double> terms(k);
    double prev_nll = std::numeric_limits<double>::max();

    for (std::size_t iter = 0; iter < cfg.max_iter; ++iter) {
        // E-step; also yields the NLL under the current parameters.
        const auto cds = prepare_densities(m);
        std::vector<double> lw(k);
        for (std::size_t i = 0; i < k; ++i)
            lw[i] = m.weights[i] > 0.0 ? std::log(m.weights[i])
                                       : -std::numeric_limits<double>::infinity();
        double total = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const auto x = data.row(r);
            for (std::size_t i = 0; i < k; ++i) terms[i] = lw[i] + comp_log_density(m, cds[i], i, x);
            const double lse = logsumexp(terms);
            total += lse;
            for (std::size_t i = 0; i < k; ++i) resp.at(r, i) = std::exp(terms[i] - lse);
        }
        const double nll = -total / static_cast<double>(n);
        trace.push_back(nll);

        const bool converged = iter > 0 && std::abs(prev_nll - nll) <= cfg.tol * std::max(1.0, std::abs(nll));
        prev_nll = nll;
        if (converged) break;

        // M-step.
        for (std::size_t i = 0; i < k; ++i) {
            double nk = 0.0;
            for (std::size_t r = 0; r < n; ++r) nk += resp.at(r, i);
            if (nk < 1e-12) {
                m.weights[i] = 0.0; // dead component; params stay put
                continue;
            }
            m.weights[i] = nk / static_cast<double>(n);
            std::vector<double> mu(d, 0.0);
            for (std::size_t r = 0; r < n; ++r) {
                const double w = resp.at(r, i);
                const auto x = data.row(r);
                for (std::size_t j = 0; j < d; ++j) mu[j] += w * x[j];
            }
            for (std::size_t j = 0; j < d; ++j) m.means.at(i, j) = mu[j] / nk;

            if (cfg.cov_kind == CovKind::diagonal) {
                std::vector<double> var(d, 0.0);
                for (std::size_t r = 0; r < n; ++r) {
                    const double w = resp.at(r, i);
                    const auto x = data.row(r);
                    for (std::size_t j = 0; j < d; ++j) {
                        const double z = x[j] - m.means.at(i, j);
                        var[j] += w * z * z;
                    }
                }
                for (std::size_t j = 0; j < d; ++j) m.diag_vars.at(i, j) = floor_diag(var[j] / nk);
            } else if (cfg.cov_kind == CovKind::full) {
                Mat cov(d, d);
                std::vector<double> z(d);
                for (std::size_t r = 0; r < n; ++r) {
                    const double w = resp.at(r, i);
                    const auto x = data.row(r);
                    for (std::size_t j = 0; j < d; ++j) z[j] = x[j] - m.means.at(i, j);
                    for (std::size_t p = 0; p < d; ++p) {
                        const double wp = w * z[p];
                        for (std::size_t q = 0; q < d; ++q) cov.at(p, q) += wp * z[q];
                    }
                }
                for (double& v : cov.data) v /= nk;
                for (std::size_t j = 0; j < d; ++j) cov.at(j, j) = floor_diag(cov.at(j, j));
                Mat chol;
                while (!cholesky(cov, chol)) {
                    collapsed = true;
                    for (std::size_t j = 0; j < d; ++j) cov.at(j, j) += cfg.var_floor;
                }
                m.full_covs[i] = cov;
            }
        }
        // Dead components leave the remaining weights summing below one.
        double wsum = std::accumulate(m.weights.begin(), m.weights.end(), 0.0);
        for (double& w : m.weights) w /= wsum;
    }

    // Final NLL under the last accepted parameters.
    trace.push_back(mean_nll(m, prepare_densities(m), data));
    return {std::move(m), std::move(trace), collapsed};
}

} // namespace

const char* cov_kind_name(CovKind k) {
    switch (k) {
        case CovKind::identity: return "identity";
        case CovKind::diagonal: return "diagonal";
        case CovKind::full: return "full";
    }
    return "?";
}

CovKind cov_kind_from_name(const std::string& name) {
    if (name == "identity") return CovKind::identity;
    if (name == "diagonal") return CovKind::diagonal;
    if (name == "full") return CovKind::full;
    throw std::invalid_argument("unknown cov_kind: " + name);
}

void GmmModel::validate() const {
    if (weights.size() != k || means.rows != k || means.cols != d)
        throw std::invalid_argument("GmmModel: shape mismatch");
    double s = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw std::invalid_argument("GmmModel: negative weight");
        s += w;
    }
    if (std::abs(s - 1.0) > 1e-10) throw std::invalid_argument("GmmModel: weights do not sum to 1");
    if (cov_kind == CovKind::diagonal) {
        if (diag_vars.rows != k || diag_vars.cols != d)
            throw std::invalid_argument("GmmModel: diag_vars shape mismatch");
        for (double v : diag_vars.data)
            if (!(v > 0.0)) throw std::invalid_argument("GmmModel: nonpositive diagonal variance");
    } else if (cov_kind == CovKind::full) {
        if (full_covs.size() != k) throw std::invalid_argument("GmmModel: full_covs count mismatch");
        Mat l;
        for (const Mat& c : full_covs) {
            if (c.rows != d || c.cols != d)
                throw std::invalid_argument("GmmModel: covariance shape mismatch");
            if (!cholesky(c, l))
                throw std::invalid_argument("GmmModel: covariance not positive definite");
        }
    }
}

double GmmModel::log_density(std::span<const double> x) const {
    if (x.size() != d) throw std::invalid_argument("GmmModel::log_density: dimension mismatch");
    const auto cds = prepare_densities(*this);
    std::vector<double> terms(k);
    for (std::size_t i = 0; i < k; ++i) {
        const double lw = weights[i] > 0.0 ? std::log(weights[i])
                                           : -std::numeric_limits<double>::infinity();
        terms[i] = lw + comp_log_density(*this, cds[i], i, x);
    }
    return logsumexp(terms);
}

std::string GmmModel::to_json() const {
    nlohmann::json j;
    j["k"] = k;
    j["d"] = d;
    j["cov_kind"] = cov_kind_name(cov_kind);
    j["weights"] = weights;
    nlohmann::json means_j = nlohmann::json::array();
    for (std::size_t i = 0; i < k; ++i)
        means_j.push_back(std::vector<double>(means.row(i).begin(), means.row(i).end()));
    j["means"] = means_j;
    nlohmann::json covs = nlohmann::json::array();
    if (cov_kind == CovKind::diagonal) {
        for (std::size_t i = 0; i < k; ++i)
            covs.push_back(std::vector<double>(diag_vars.row(i).begin(), diag_vars.row(i).end()));
    } else if (cov_kind == CovKind::full) {
        for (const Mat& c : full_covs) {
            nlohmann::json rows = nlohmann::json::array();
            for (std::size_t r = 0; r < d; ++r)
                rows.push_back(std::vector<double>(c.row(r).begin(), c.row(r).end()));
            covs.push_back(rows);
        }
    }
    j["covs"] = covs;
    return j.dump();
}

GmmModel GmmModel::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    GmmModel m;
    m.k = j.at("k").get<std::size_t>();
    m.d = j.at("d").get<std::size_t>();
    m.cov_kind = cov_kind_from_name(j.at("cov_kind").get<std::string>());
    m.weights = j.at("weights").get<std::vector<double>>();
    m.means = Mat(m.k, m.d);
    for (std::size_t i = 0; i < m.k; ++i) {
        const auto row = j.at("means").at(i).get<std::vector<double>>();
        std::copy(row.begin(), row.end(), m.means.row(i).begin());
    }
    if (m.cov_kind == CovKind::diagonal) {
        m.diag_vars = Mat(m.k, m.d);
        for (std::size_t i = 0; i < m.k; ++i) {
            const auto row = j.at("covs").at(i).get<std::vector<double>>();
            std::copy(row.begin(), row.end(), m.diag_vars.row(i).begin());
        }
    } else if (m.cov_kind == CovKind::full) {
        for (std::size_t i = 0; i < m.k; ++i) {
            Mat c(m.d, m.d);
            for (std::size_t r = 0; r < m.d; ++r) {
                const auto row = j.at("covs").at(i).at(r).get<std::vector<double>>();
                std::copy(row.begin(), row.end(), c.row(r).begin());
            }
            m.full_covs.push_back(std::move(c));
        }
    }
    m.validate();
    return m;
}

EmFitResult gmm_fit_em(const Mat& data, const EmConfig& cfg) {
    if (data.rows < cfg.k)
        throw std::invalid_argument("gmm_fit_em: K exceeds the number of data rows");
    require_finite(data.data, "gmm_fit_em data");
    if (cfg.max_iter < 1 || cfg.tol <= 0.0 || cfg.var_floor <= 0.0 || cfg.n_init < 1)
        throw std::invalid_argument("gmm_fit_em: bad EmConfig");

    RngStream base(cfg.seed, 0x6d6d67ULL); // per-fit stream family
    EmFitResult best;
    double best_nll = std::numeric_limits<double>::max();
    for (std::size_t restart = 0; restart < cfg.n_init; ++restart) {
        auto res = run_em_once(data, cfg, base.substream(restart));
        const double final_nll = res.nll_trace.back();
        if (final_nll < best_nll) {
            best_nll = final_nll;
            best = std::move(res);
        }
    }
    return best;
}

double gmm_nll(const GmmModel& model, const Mat& data) {
    if (model.d != data.cols) throw std::invalid_argument("gmm_nll: dimension mismatch");
    if (data.rows == 0) throw std::invalid_argument("gmm_nll: empty data");
    return mean_nll(model, prepare_densities(model), data);
}

GmmSample gmm_sample(const GmmModel& model, std::size_t n, RngStream& rng) {
    if (n < 1) throw std::invalid_argument("gmm_sample: n must be >= 1");
    GmmSample out;
    out.points = Mat(n, model.d);
    out.labels.resize(n);
    std::vector<Mat> chols;
    if (model.cov_kind == CovKind::full) {
        Mat l;
        for (const Mat& c : model.full_covs) {
            if (!cholesky(c, l)) throw std::runtime_error("gmm_sample: covariance not SPD");
            chols.push_back(l);
        }
    }
    std::vector<double> z(model.d);
    for (std::size_t r = 0; r < n; ++r) {
        double u = rng.uniform();
        std::size_t comp = model.k - 1;
        for (std::size_t i = 0; i < model.k; ++i) {
            u -= model.weights[i];
            if (u < 0.0) {
                comp = i;
                break;
            }
        }
        out.labels[r] = comp;
        for (std::size_t j = 0; j < model.d; ++j) z[j] = rng.normal();
        auto row = out.points.row(r);
        switch (model.cov_kind) {
            case CovKind::identity:
                for (std::size_t j = 0; j < model.d; ++j) row[j] = model.means.at(comp, j) + z[j];
                break;
            case CovKind::diagonal:
                for (std::size_t j = 0; j < model.d; ++j)
                    row[j] = model.means.at(comp, j) + std::sqrt(model.diag_vars.at(comp, j)) * z[j];
                break;
            case CovKind::full:
                for (std::size_t j = 0; j < model.d; ++j) {
                    double s = model.means.at(comp, j);
                    for (std::size_t p = 0; p <= j; ++p) s += chols[comp].at(j, p) * z[p];
                    row[j] = s;
                }
                break;
        }
    }
    return out;
}

std::vector<NllSweepRow> nll_sweep(const Mat& data, const std::vector<std::size_t>& k_list,
                                   const EmConfig& base_cfg) {
    std::vector<std::size_t> ks = k_list;
    std::sort(ks.begin(), ks.end());
    std::vector<NllSweepRow> rows;
    for (std::size_t k : ks) {
        EmConfig cfg = base_cfg;
        cfg.k = k;
        const auto fit = gmm_fit_em(data, cfg);
        rows.push_back({k, fit.nll_trace.back(), fit.collapsed});
    }
    return rows;
}

double max_mean_norm(const GmmModel& model) {
    double best = 0.0;
    for (std::size_t i = 0; i < model.k; ++i) best = std::max(best, norm2(model.means.row(i)));
    return best;
}

SeparationCheck check_separation(const Mat& means, double c) {
    const std::size_t k = means.rows, d = means.cols;
    if (k < 2) throw std::invalid_argument("check_separation: needs K >= 2");
    double min_gap = std::numeric_limits<double>::max();
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i + 1; j < k; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < d; ++p) {
                const double z = means.at(i, p) - means.at(j, p);
                s += z * z;
            }
            min_gap = std::min(min_gap, std::sqrt(s));
        }
    }
    const double threshold = c * std::sqrt(std::log(static_cast<double>(std::min(k, d))));
    return {min_gap >= threshold, min_gap, threshold};
}

} // namespace latlab
