#include "latlab/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <iomanip>

#include "latlab/autodiff.hpp"
#include "latlab/diffusion.hpp"
#include "latlab/mae.hpp"
#include "latlab/numerics.hpp"

namespace latlab {

namespace {

std::vector<double> rand_vec(RngStream& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

// Max abs deviation between analytic and finite-difference gradients,
// relative to max(1, |fd|_inf).
double grad_err(std::span<const double> analytic, std::span<const double> fd) {
    double diff = 0.0, ref = 1.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff = std::max(diff, std::abs(analytic[i] - fd[i]));
        ref = std::max(ref, std::abs(fd[i]));
    }
    return diff / ref;
}

struct Suite {
    std::ostream& out;
    bool all_ok = true;

    void report(const std::string& name, double err, double tol) {
        const bool ok = err <= tol;
        all_ok = all_ok && ok;
        out << (ok ? "PASS" : "FAIL") << "  " << name << "  max_rel_err=" << format_err(err)
            << " tol=" << format_err(tol) << "\n";
    }

    static std::string format_err(double e) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2e", e);
        return buf;
    }

    // Rebuilds the graph via `build`, checks every parameter's gradient.
    void check_graph(const std::string& name, std::vector<ad::Tensor> params,
                     const std::function<ad::Tensor()>& build, double tol = 1e-5,
                     double h = 1e-6) {
        ad::Tensor loss = build();
        for (auto& p : params) std::fill(p.grad().begin(), p.grad().end(), 0.0);
        ad::backward(loss);
        double worst = 0.0;
        for (auto& p : params) {
            std::vector<double> analytic = p.grad();
            std::vector<double> fd(p.numel());
            for (std::size_t i = 0; i < p.numel(); ++i) {
                const double orig = p.value()[i];
                p.value()[i] = orig + h;
                const double fp = build().value()[0];
                p.value()[i] = orig - h;
                const double fm = build().value()[0];
                p.value()[i] = orig;
                fd[i] = (fp - fm) / (2.0 * h);
            }
            worst = std::max(worst, grad_err(analytic, fd));
        }
        report(name, worst, tol);
    }
};

// Linear probe of the op's Jacobian: loss = mean(op_out * fixed_weights).
ad::Tensor probe(ad::Tensor op_out, const std::vector<double>& w) {
    return ad::mean_all(ad::mul(op_out, ad::constant(op_out.shape(), w)));
}

void check_primitives(Suite& s, RngStream& rng) {
    const std::size_t b = 2, t = 5, d = 8, heads = 2;
    auto x = ad::param({b, t, d}, rand_vec(rng, b * t * d));
    auto y = ad::param({b, t, d}, rand_vec(rng, b * t * d));
    auto bias = ad::param({d}, rand_vec(rng, d));
    const auto w_btd = rand_vec(rng, b * t * d);

    s.check_graph("add", {x, y}, [&] { return probe(ad::add(x, y), w_btd); });
    s.check_graph("add broadcast", {x, bias}, [&] { return probe(ad::add(x, bias), w_btd); });
    s.check_graph("mul", {x, y}, [&] { return probe(ad::mul(x, y), w_btd); });
    s.check_graph("scale", {x}, [&] { return probe(ad::scale(x, -1.7), w_btd); });
    s.check_graph("gelu", {x}, [&] { return probe(ad::gelu(x), w_btd); });
    s.check_graph("softmax_lastdim", {x}, [&] { return probe(ad::softmax_lastdim(x), w_btd); });

    auto gamma = ad::param({d}, rand_vec(rng, d, 0.5));
    auto beta = ad::param({d}, rand_vec(rng, d, 0.5));
    s.check_graph("layernorm", {x, gamma, beta},
                  [&] { return probe(ad::layernorm(x, gamma, beta), w_btd); });

    auto wmat = ad::param({d, 6}, rand_vec(rng, d * 6));
    const auto w_bt6 = rand_vec(rng, b * t * 6);
    s.check_graph("matmul", {x, wmat}, [&] { return probe(ad::matmul(x, wmat), w_bt6); });

    auto a3 = ad::param({3, 4, 2}, rand_vec(rng, 24));
    auto b3 = ad::param({3, 2, 5}, rand_vec(rng, 30));
    const auto w_345 = rand_vec(rng, 60);
    s.check_graph("bmm", {a3, b3}, [&] { return probe(ad::bmm(a3, b3), w_345); });
    const auto w_t = rand_vec(rng, 24);
    s.check_graph("transpose_last2", {a3}, [&] { return probe(ad::transpose_last2(a3), w_t); });

    s.check_graph("split_heads", {x}, [&] { return probe(ad::split_heads(x, heads), w_btd); });
    auto xh = ad::param({b * heads, t, d / heads}, rand_vec(rng, b * t * d));
    s.check_graph("merge_heads", {xh}, [&] { return probe(ad::merge_heads(xh, heads), w_btd); });

    std::vector<ad::RopePos> pos(t);
    for (std::size_t i = 0; i < t; ++i)
        pos[i] = i + 1 < t ? ad::RopePos{true, static_cast<double>(i), static_cast<double>(2 * i)}
                           : ad::RopePos{false, 0.0, 0.0};
    s.check_graph("rope2d", {xh}, [&] { return probe(ad::rope2d(xh, pos), w_btd); });

    auto y2 = ad::param({b, 3, d}, rand_vec(rng, b * 3 * d));
    const auto w_cat = rand_vec(rng, b * (t + 3) * d);
    s.check_graph("concat_tokens", {x, y2}, [&] { return probe(ad::concat_tokens(x, y2), w_cat); });
    const auto w_slice = rand_vec(rng, b * 2 * d);
    s.check_graph("slice_tokens", {x}, [&] { return probe(ad::slice_tokens(x, 1, 2), w_slice); });
    const std::vector<std::size_t> sel{0, 2, 4};
    const auto w_sel = rand_vec(rng, b * sel.size() * d);
    s.check_graph("select_tokens", {x}, [&] { return probe(ad::select_tokens(x, sel), w_sel); });

    auto repl = ad::param({d}, rand_vec(rng, d));
    s.check_graph("replace_tokens", {x, repl},
                  [&] { return probe(ad::replace_tokens(x, repl, {1, 3}), w_btd); });

    auto flat = ad::param({t, d}, rand_vec(rng, t * d));
    s.check_graph("tile_batch", {flat}, [&] { return probe(ad::tile_batch(flat, b), w_btd); });

    auto target = ad::constant({b, t, d}, rand_vec(rng, b * t * d));
    s.check_graph("mse", {x}, [&] { return ad::mse(x, target); });
    s.check_graph("mean_all", {x}, [&] { return ad::mean_all(x); });
}

void check_score_grads(Suite& s, RngStream& rng) {
    const std::size_t k = 3, d = 3;
    const double t = 0.3;
    ScoreNet net{k, d, Mat(k, d, rand_vec(rng, k * d))};
    const std::vector<double> x = rand_vec(rng, d);
    const std::vector<double> target = rand_vec(rng, d);

    auto loss_of_means = [&](std::span<const double> means) {
        ScoreNet n2{k, d, Mat(k, d, std::vector<double>(means.begin(), means.end()))};
        const auto sc = scorenet_eval(n2, x, t);
        double l = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double r = sc[j] - target[j];
            l += 0.5 * r * r;
        }
        return l;
    };
    const auto sc = scorenet_eval(net, x, t);
    std::vector<double> resid(d);
    for (std::size_t j = 0; j < d; ++j) resid[j] = sc[j] - target[j];
    const Mat analytic = scorenet_grad(net, x, t, resid);
    const auto fd = finite_diff_grad(loss_of_means, net.means.data, 1e-6);
    s.report("scorenet_grad", grad_err(analytic.data, fd), 1e-5);

    // DSM gradients; the rng state is replayed so the noise draws are fixed.
    const std::size_t batch_n = 6;
    const Mat x0(batch_n, d, rand_vec(rng, batch_n * d));
    const RngStream saved = rng.substream(7);
    auto dsm_of_means = [&](std::span<const double> means) {
        ScoreNet n2{k, d, Mat(k, d, std::vector<double>(means.begin(), means.end()))};
        RngStream r = saved;
        return dsm_loss(n2, x0, 0.4, r).loss;
    };
    RngStream r0 = saved;
    const DsmResult res = dsm_loss(net, x0, 0.4, r0);
    const auto fd_dsm = finite_diff_grad(dsm_of_means, net.means.data, 1e-6);
    s.report("dsm_loss grads", grad_err(res.grads.data, fd_dsm), 1e-5);
}

void check_mae_end_to_end(Suite& s) {
    MaeConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.embed_dim = 8;
    cfg.latent_tokens = 2;
    cfg.latent_dim = 4;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.aux_dec_layers = 1;
    cfg.heads = 2;
    cfg.aux_targets = {AuxTarget::hog, AuxTarget::pixel};
    cfg.seed = 11;
    MaeModel model = mae_init(cfg);

    RngStream rng(21, 5);
    Mat images(2, cfg.image_size * cfg.image_size * 3);
    for (double& v : images.data) v = rng.uniform();
    MaskSpec mask = MaskSpec::none(cfg.num_patches());
    mask.masked = {1, 2};
    mask.indicator[1] = mask.indicator[2] = 1;
    mask.ratio = 0.5;

    auto build = [&] { return mae_loss(model, images, mask).total; };
    ad::Tensor loss = build();
    for (auto& [name, p] : model.params) {
        (void)name;
        std::fill(p.grad().begin(), p.grad().end(), 0.0);
    }
    ad::backward(loss);

    double worst = 0.0;
    const double h = 1e-5;
    for (auto& [name, p] : model.params) {
        (void)name;
        std::vector<double> analytic = p.grad();
        std::vector<double> fd(p.numel());
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double orig = p.value()[i];
            p.value()[i] = orig + h;
            const double fp = build().value()[0];
            p.value()[i] = orig - h;
            const double fm = build().value()[0];
            p.value()[i] = orig;
            fd[i] = (fp - fm) / (2.0 * h);
        }
        worst = std::max(worst, grad_err(analytic, fd));
    }
    s.report("mae_loss end-to-end", worst, 1e-3);
}

} // namespace

bool run_gradcheck(std::ostream& out) {
    Suite s{out};
    RngStream rng(123, 0x67636bULL);
    check_primitives(s, rng);
    check_score_grads(s, rng);
    check_mae_end_to_end(s);
    out << (s.all_ok ? "gradcheck: all checks passed\n" : "gradcheck: FAILURES above\n");
    return s.all_ok;
}

} // namespace latlab
