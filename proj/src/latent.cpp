#include "latlab/latent.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "latlab/numerics.hpp"

namespace latlab {

namespace {

void put_u32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace

void write_latb1(const std::string& path, const LatentDataset& ds) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("write_latb1: cannot open " + path);
    f.write("LATB1", 5);
    const unsigned char flags = ds.labels.has_value() ? 1 : 0;
    f.write(reinterpret_cast<const char*>(&flags), 1);
    put_u32(f, static_cast<std::uint32_t>(ds.n));
    put_u32(f, static_cast<std::uint32_t>(ds.tokens_per_sample));
    put_u32(f, static_cast<std::uint32_t>(ds.channels));
    f.write(reinterpret_cast<const char*>(ds.data.data()),
            static_cast<std::streamsize>(ds.data.size() * sizeof(double)));
    if (ds.labels) {
        for (std::uint32_t v : *ds.labels) put_u32(f, v);
    }
    if (!f) throw std::runtime_error("write_latb1: write failed for " + path);
}

LatentDataset read_latb1(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_latb1: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    auto fail = [&](const std::string& msg, std::size_t offset) {
        throw std::runtime_error("read_latb1: " + msg + " at byte offset " +
                                 std::to_string(offset) + " in " + path);
    };
    if (bytes.size() < 18) fail("truncated header", bytes.size());
    if (std::memcmp(bytes.data(), "LATB1", 5) != 0) fail("bad magic", 0);
    const unsigned char flags = bytes[5];
    if (flags & ~1u) fail("unknown flag bits", 5);
    LatentDataset ds;
    ds.n = get_u32(bytes.data() + 6);
    ds.tokens_per_sample = get_u32(bytes.data() + 10);
    ds.channels = get_u32(bytes.data() + 14);
    const std::size_t values = ds.n * ds.tokens_per_sample * ds.channels;
    std::size_t expect = 18 + values * sizeof(double);
    if (flags & 1) expect += ds.n * 4;
    if (bytes.size() < expect) fail("truncated payload", bytes.size());
    if (bytes.size() > expect) fail("trailing bytes", expect);
    ds.data.resize(values);
    std::memcpy(ds.data.data(), bytes.data() + 18, values * sizeof(double));
    if (flags & 1) {
        std::vector<std::uint32_t> labels(ds.n);
        const unsigned char* p = bytes.data() + 18 + values * sizeof(double);
        for (std::size_t i = 0; i < ds.n; ++i) labels[i] = get_u32(p + 4 * i);
        ds.labels = std::move(labels);
    }
    return ds;
}

Mat flatten(const LatentDataset& ds) {
    Mat x(ds.n, ds.tokens_per_sample * ds.channels);
    std::copy(ds.data.begin(), ds.data.end(), x.data.begin());
    return x;
}

LatentDataset unflatten(const Mat& x, std::size_t tokens_per_sample, std::size_t channels) {
    if (x.cols != tokens_per_sample * channels)
        throw std::invalid_argument("unflatten: column count != L*H");
    LatentDataset ds;
    ds.n = x.rows;
    ds.tokens_per_sample = tokens_per_sample;
    ds.channels = channels;
    ds.data = x.data;
    return ds;
}

PcaTransform pca_fit(const Mat& x, double var_threshold, std::size_t forced_dim) {
    if (x.rows < 2) throw std::invalid_argument("pca_fit: needs at least 2 rows");
    if (!(var_threshold > 0.0 && var_threshold <= 1.0))
        throw std::invalid_argument("pca_fit: var_threshold must be in (0,1]");
    PcaTransform t;
    t.input_dim = x.cols;
    t.mean = col_mean(x);
    const Mat cov = covariance(x);
    auto eig = sym_eig(cov, 1e-8);
    for (double& v : eig.eigvals) v = std::max(v, 0.0);
    const double total = std::accumulate(eig.eigvals.begin(), eig.eigvals.end(), 0.0);
    if (total <= 0.0) throw std::invalid_argument("pca_fit: constant data");

    std::size_t m = 0;
    double cum = 0.0;
    if (forced_dim > 0) {
        m = std::min(forced_dim, x.cols);
        for (std::size_t i = 0; i < m; ++i) cum += eig.eigvals[i];
    } else {
        while (m < x.cols && cum < var_threshold * total - 1e-15) {
            // threshold 1.0 keeps only directions with actual variance
            if (eig.eigvals[m] <= total * 1e-12) break;
            cum += eig.eigvals[m];
            ++m;
        }
        m = std::max<std::size_t>(m, 1);
    }
    t.output_dim = m;
    t.explained_variance_ratio = cum / total;
    t.components = Mat(m, x.cols);
    for (std::size_t r = 0; r < m; ++r) {
        // Deterministic sign: largest-magnitude entry of each component positive.
        std::size_t arg = 0;
        for (std::size_t i = 1; i < x.cols; ++i)
            if (std::abs(eig.eigvecs.at(i, r)) > std::abs(eig.eigvecs.at(arg, r))) arg = i;
        const double sign = eig.eigvecs.at(arg, r) >= 0.0 ? 1.0 : -1.0;
        for (std::size_t i = 0; i < x.cols; ++i) t.components.at(r, i) = sign * eig.eigvecs.at(i, r);
    }
    return t;
}

Mat pca_apply(const PcaTransform& t, const Mat& x) {
    if (x.cols != t.input_dim) throw std::invalid_argument("pca_apply: dimension mismatch");
    Mat out(x.rows, t.output_dim);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const auto row = x.row(r);
        for (std::size_t c = 0; c < t.output_dim; ++c) {
            const auto comp = t.components.row(c);
            double s = 0.0;
            for (std::size_t j = 0; j < t.input_dim; ++j) s += (row[j] - t.mean[j]) * comp[j];
            out.at(r, c) = s;
        }
    }
    return out;
}

std::pair<Mat, StandardizeStats> standardize_fit_apply(const Mat& x) {
    if (x.rows < 2) throw std::invalid_argument("standardize_fit_apply: needs at least 2 rows");
    StandardizeStats st;
    st.mean = col_mean(x);
    st.std_dev.assign(x.cols, 0.0);
    st.floored.assign(x.cols, false);
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t j = 0; j < x.cols; ++j) {
            const double z = x.at(r, j) - st.mean[j];
            st.std_dev[j] += z * z;
        }
    for (std::size_t j = 0; j < x.cols; ++j) {
        st.std_dev[j] = std::sqrt(st.std_dev[j] / static_cast<double>(x.rows));
        if (st.std_dev[j] < 1e-8) {
            st.std_dev[j] = 1e-8;
            st.floored[j] = true;
        }
    }
    Mat out(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t j = 0; j < x.cols; ++j)
            out.at(r, j) = st.floored[j] ? 0.0 : (x.at(r, j) - st.mean[j]) / st.std_dev[j];
    return {std::move(out), std::move(st)};
}

ProbeResult linear_probe(const Mat& latents, const std::vector<std::uint32_t>& labels,
                         const ProbeConfig& cfg) {
    if (labels.size() != latents.rows)
        throw std::invalid_argument("linear_probe: labels/rows mismatch");
    const std::set<std::uint32_t> classes(labels.begin(), labels.end());
    if (classes.size() < 2) throw std::invalid_argument("linear_probe: needs at least 2 classes");
    const std::size_t c = *classes.rbegin() + 1;
    const std::size_t n = latents.rows, f = latents.cols;

    RngStream rng(cfg.seed, 0x70726f6265ULL);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i + 1 < n; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    const std::size_t n_train = std::max<std::size_t>(1, (n * 9) / 10);
    const std::size_t n_eval = n - n_train;
    if (n_eval == 0) throw std::invalid_argument("linear_probe: too few samples for a 90/10 split");

    Mat w(c, f + 1); // last column is the bias
    std::vector<double> logits(c), probs(c), grad_w(c * (f + 1));

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t start = 0; start < n_train; start += cfg.batch) {
            const std::size_t stop = std::min(n_train, start + cfg.batch);
            std::fill(grad_w.begin(), grad_w.end(), 0.0);
            for (std::size_t b = start; b < stop; ++b) {
                const auto x = latents.row(idx[b]);
                const std::uint32_t y = labels[idx[b]];
                for (std::size_t ci = 0; ci < c; ++ci)
                    logits[ci] = dot(x, {w.row(ci).data(), f}) + w.at(ci, f);
                probs = softmax(logits);
                for (std::size_t ci = 0; ci < c; ++ci) {
                    const double e = probs[ci] - (ci == y ? 1.0 : 0.0);
                    double* g = grad_w.data() + ci * (f + 1);
                    for (std::size_t j = 0; j < f; ++j) g[j] += e * x[j];
                    g[f] += e;
                }
            }
            const double scale = cfg.lr / static_cast<double>(stop - start);
            for (std::size_t ci = 0; ci < c; ++ci) {
                double* wr = w.row(ci).data();
                const double* g = grad_w.data() + ci * (f + 1);
                for (std::size_t j = 0; j <= f; ++j)
                    wr[j] -= scale * g[j] + cfg.lr * cfg.l2 * wr[j];
            }
        }
    }

    std::size_t correct = 0;
    for (std::size_t b = n_train; b < n; ++b) {
        const auto x = latents.row(idx[b]);
        std::size_t arg = 0;
        double best = -1e300;
        for (std::size_t ci = 0; ci < c; ++ci) {
            const double v = dot(x, {w.row(ci).data(), f}) + w.at(ci, f);
            if (v > best) {
                best = v;
                arg = ci;
            }
        }
        if (arg == labels[idx[b]]) ++correct;
    }
    return {static_cast<double>(correct) / static_cast<double>(n_eval), std::move(w)};
}

} // namespace latlab
