#include "latlab/mae.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "latlab/diffusion.hpp"
#include "latlab/hog.hpp"

namespace latlab {

namespace {

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

bool starts_with(const std::string& s, const std::string& prefix) {
    return s.rfind(prefix, 0) == 0;
}

// ---- parameter construction -------------------------------------------------

enum class InitKind { weight, bias, ln_gain, token };

void declare(std::map<std::string, ad::Tensor>& params, RngStream& master,
             const std::string& name, std::vector<std::size_t> shape, InitKind kind) {
    RngStream rng = master.substream(fnv1a64(name));
    std::size_t numel = 1;
    for (std::size_t s : shape) numel *= s;
    std::vector<double> data(numel, 0.0);
    switch (kind) {
        case InitKind::bias: break;
        case InitKind::ln_gain: std::fill(data.begin(), data.end(), 1.0); break;
        case InitKind::weight: {
            const double std_dev = std::sqrt(2.0 / static_cast<double>(shape[0] + shape[1]));
            for (double& v : data) v = std_dev * rng.normal();
            break;
        }
        case InitKind::token:
            for (double& v : data) v = 0.02 * rng.normal();
            break;
    }
    params.emplace(name, ad::param(std::move(shape), std::move(data)));
}

void declare_block(std::map<std::string, ad::Tensor>& params, RngStream& master,
                   const std::string& prefix, std::size_t d) {
    declare(params, master, prefix + ".ln1.g", {d}, InitKind::ln_gain);
    declare(params, master, prefix + ".ln1.b", {d}, InitKind::bias);
    for (const char* w : {"wq", "wk", "wv", "wo"})
        declare(params, master, prefix + ".attn." + w, {d, d}, InitKind::weight);
    for (const char* b : {"bq", "bk", "bv", "bo"})
        declare(params, master, prefix + ".attn." + b, {d}, InitKind::bias);
    declare(params, master, prefix + ".ln2.g", {d}, InitKind::ln_gain);
    declare(params, master, prefix + ".ln2.b", {d}, InitKind::bias);
    declare(params, master, prefix + ".mlp.w1", {d, 4 * d}, InitKind::weight);
    declare(params, master, prefix + ".mlp.b1", {4 * d}, InitKind::bias);
    declare(params, master, prefix + ".mlp.w2", {4 * d, d}, InitKind::weight);
    declare(params, master, prefix + ".mlp.b2", {d}, InitKind::bias);
}

// ---- data plumbing ----------------------------------------------------------

std::vector<double> patchify(const Mat& images, const MaeConfig& cfg) {
    const std::size_t b = images.rows, s = cfg.image_size, p = cfg.patch_size;
    const std::size_t pps = cfg.patches_per_side(), n = cfg.num_patches(), pd = cfg.patch_dim();
    std::vector<double> out(b * n * pd);
    for (std::size_t bi = 0; bi < b; ++bi) {
        const auto img = images.row(bi);
        for (std::size_t pr = 0; pr < pps; ++pr)
            for (std::size_t pc = 0; pc < pps; ++pc) {
                double* dst = out.data() + (bi * n + pr * pps + pc) * pd;
                for (std::size_t py = 0; py < p; ++py)
                    for (std::size_t px = 0; px < p; ++px)
                        for (std::size_t c = 0; c < 3; ++c)
                            dst[(py * p + px) * 3 + c] =
                                img[((pr * p + py) * s + (pc * p + px)) * 3 + c];
            }
    }
    return out;
}

void unpatchify_into(std::span<const double> patches, const MaeConfig& cfg, std::span<double> img) {
    const std::size_t s = cfg.image_size, p = cfg.patch_size;
    const std::size_t pps = cfg.patches_per_side(), pd = cfg.patch_dim();
    for (std::size_t pr = 0; pr < pps; ++pr)
        for (std::size_t pc = 0; pc < pps; ++pc) {
            const double* src = patches.data() + (pr * pps + pc) * pd;
            for (std::size_t py = 0; py < p; ++py)
                for (std::size_t px = 0; px < p; ++px)
                    for (std::size_t c = 0; c < 3; ++c)
                        img[((pr * p + py) * s + (pc * p + px)) * 3 + c] =
                            src[(py * p + px) * 3 + c];
        }
}

std::vector<ad::RopePos> sequence_positions(const MaeConfig& cfg, std::size_t latent_count) {
    const std::size_t pps = cfg.patches_per_side();
    std::vector<ad::RopePos> pos;
    pos.reserve(cfg.num_patches() + latent_count);
    for (std::size_t r = 0; r < pps; ++r)
        for (std::size_t c = 0; c < pps; ++c)
            pos.push_back({true, static_cast<double>(r), static_cast<double>(c)});
    for (std::size_t l = 0; l < latent_count; ++l) pos.push_back({false, 0.0, 0.0});
    return pos;
}

ad::Tensor linear(MaeModel& m, const std::string& prefix, const ad::Tensor& x) {
    return ad::add(ad::matmul(x, m.p(prefix + ".w")), m.p(prefix + ".b"));
}

ad::Tensor transformer_block(MaeModel& m, const std::string& prefix, const ad::Tensor& x,
                             const std::vector<ad::RopePos>& positions) {
    const std::size_t heads = m.cfg.heads;
    const std::size_t hd = m.cfg.embed_dim / heads;
    auto ln1 = ad::layernorm(x, m.p(prefix + ".ln1.g"), m.p(prefix + ".ln1.b"));
    auto q = ad::add(ad::matmul(ln1, m.p(prefix + ".attn.wq")), m.p(prefix + ".attn.bq"));
    auto k = ad::add(ad::matmul(ln1, m.p(prefix + ".attn.wk")), m.p(prefix + ".attn.bk"));
    auto v = ad::add(ad::matmul(ln1, m.p(prefix + ".attn.wv")), m.p(prefix + ".attn.bv"));
    auto qh = ad::rope2d(ad::split_heads(q, heads), positions);
    auto kh = ad::rope2d(ad::split_heads(k, heads), positions);
    auto vh = ad::split_heads(v, heads);
    auto scores = ad::bmm(ad::scale(qh, 1.0 / std::sqrt(static_cast<double>(hd))),
                          ad::transpose_last2(kh));
    auto ctx = ad::merge_heads(ad::bmm(ad::softmax_lastdim(scores), vh), heads);
    auto attn_out = ad::add(ad::matmul(ctx, m.p(prefix + ".attn.wo")), m.p(prefix + ".attn.bo"));
    auto x1 = ad::add(x, attn_out);
    auto ln2 = ad::layernorm(x1, m.p(prefix + ".ln2.g"), m.p(prefix + ".ln2.b"));
    auto hmid = ad::gelu(ad::add(ad::matmul(ln2, m.p(prefix + ".mlp.w1")), m.p(prefix + ".mlp.b1")));
    auto mlp_out = ad::add(ad::matmul(hmid, m.p(prefix + ".mlp.w2")), m.p(prefix + ".mlp.b2"));
    return ad::add(x1, mlp_out);
}

// Shared decoder trunk: learnable query tokens + latents, both embedded to
// the transformer width, then blocks and a readout at the image positions.
ad::Tensor decoder_trunk(MaeModel& m, const std::string& prefix, std::size_t layers,
                         const ad::Tensor& h) {
    const std::size_t b = h.shape()[0];
    const std::size_t n = m.cfg.num_patches();
    auto e_emb = linear(m, prefix + ".embed", ad::tile_batch(m.p(prefix + ".tokens"), b));
    auto h_emb = ad::add(linear(m, prefix + ".embed", h), m.p(prefix + ".latent_pos"));
    auto seq = ad::concat_tokens(e_emb, h_emb);
    const auto positions = sequence_positions(m.cfg, m.cfg.latent_tokens);
    for (std::size_t i = 0; i < layers; ++i)
        seq = transformer_block(m, prefix + "." + std::to_string(i), seq, positions);
    seq = ad::layernorm(seq, m.p(prefix + ".norm.g"), m.p(prefix + ".norm.b"));
    return ad::slice_tokens(seq, 0, n);
}

// ---- optimizer --------------------------------------------------------------

bool weight_decayed(const std::string& name) {
    const auto dotpos = name.rfind('.');
    const std::string leaf = dotpos == std::string::npos ? name : name.substr(dotpos + 1);
    return leaf == "w" || leaf == "w1" || leaf == "w2" || leaf == "wq" || leaf == "wk" ||
           leaf == "wv" || leaf == "wo";
}

struct AdamW {
    double beta1 = 0.9, beta2 = 0.95, eps = 1e-8;
    double weight_decay = 0.0;
    std::size_t t = 0;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> state;

    void step(MaeModel& model, const std::vector<std::string>& trainable, double lr) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (const auto& name : trainable) {
            ad::Tensor& p = model.p(name);
            auto& [m1, m2] = state[name];
            if (m1.empty()) {
                m1.assign(p.numel(), 0.0);
                m2.assign(p.numel(), 0.0);
            }
            const bool decay = weight_decay > 0.0 && weight_decayed(name);
            auto& val = p.value();
            const auto& g = p.node->grad;
            for (std::size_t i = 0; i < val.size(); ++i) {
                m1[i] = beta1 * m1[i] + (1.0 - beta1) * g[i];
                m2[i] = beta2 * m2[i] + (1.0 - beta2) * g[i] * g[i];
                const double mh = m1[i] / bc1;
                const double vh = m2[i] / bc2;
                val[i] -= lr * (mh / (std::sqrt(vh) + eps));
                if (decay) val[i] -= lr * weight_decay * val[i];
            }
        }
    }
};

double cosine_lr(double base, std::size_t step, std::size_t total, double warmup_frac) {
    const std::size_t warm = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                          std::llround(warmup_frac * static_cast<double>(total))));
    if (step < warm) return base * static_cast<double>(step + 1) / static_cast<double>(warm);
    const double progress =
        static_cast<double>(step - warm) / std::max(1.0, static_cast<double>(total - warm));
    return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

Mat gather_rows(const Mat& src, const std::vector<std::size_t>& idx) {
    Mat out(idx.size(), src.cols);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(src.row(idx[i]).begin(), src.row(idx[i]).end(), out.row(i).begin());
    return out;
}

std::vector<MaeTrainLogRow> run_training(MaeModel& model, const ToyImageSet& data,
                                         const MaeTrainConfig& cfg, RngStream& rng,
                                         bool finetune) {
    const std::size_t n_patches = model.cfg.num_patches();
    std::vector<std::string> trainable;
    for (const auto& [name, tensor] : model.params) {
        (void)tensor;
        if (!finetune || starts_with(name, "dec.")) trainable.push_back(name);
    }
    AdamW opt;
    opt.weight_decay = cfg.weight_decay;
    RngStream batch_rng = rng.substream(1);
    RngStream mask_rng = rng.substream(2);

    std::vector<MaeTrainLogRow> log;
    log.reserve(cfg.steps);
    std::vector<std::size_t> idx(cfg.batch);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        for (auto& i : idx) i = batch_rng.below(data.n);
        const Mat batch = gather_rows(data.pixels, idx);

        MaskSpec mask;
        if (finetune) {
            // Linear decay from mask_high to 0 across the fine-tune steps.
            const double ratio = model.cfg.mask_high *
                                 (1.0 - static_cast<double>(step) / static_cast<double>(cfg.steps));
            const std::size_t count = static_cast<std::size_t>(
                std::llround(ratio * static_cast<double>(n_patches)));
            mask = MaskSpec::none(n_patches);
            mask.ratio = ratio;
            std::vector<std::size_t> all(n_patches);
            for (std::size_t i = 0; i < n_patches; ++i) all[i] = i;
            for (std::size_t i = 0; i < count; ++i)
                std::swap(all[i], all[i + mask_rng.below(n_patches - i)]);
            mask.masked.assign(all.begin(), all.begin() + static_cast<long>(count));
            std::sort(mask.masked.begin(), mask.masked.end());
            for (std::size_t i : mask.masked) mask.indicator[i] = 1;
        } else {
            mask = mask_sample(n_patches, model.cfg, mask_rng);
        }

        double recon_val, mask_val;
        ad::Tensor loss;
        if (finetune) {
            // Pixel loss only; auxiliary decoders are discarded in this stage.
            auto h = encode(model, batch, mask);
            auto xhat = decode_pixels(model, h);
            auto target = ad::constant({batch.rows, n_patches, model.cfg.patch_dim()},
                                       patchify(batch, model.cfg));
            loss = ad::mse(xhat, target);
            recon_val = loss.value()[0];
            mask_val = 0.0;
        } else {
            auto out = mae_loss(model, batch, mask);
            loss = out.total;
            recon_val = out.recon;
            mask_val = out.mask_loss;
        }
        if (!std::isfinite(loss.value()[0]))
            throw std::runtime_error("train_mae: non-finite loss at step " + std::to_string(step));

        for (const auto& name : trainable) {
            auto& g = model.p(name).node->grad;
            std::fill(g.begin(), g.end(), 0.0);
        }
        ad::backward(loss);
        const double lr = cosine_lr(cfg.lr, step, cfg.steps, cfg.warmup_frac);
        opt.step(model, trainable, lr);
        log.push_back({step, recon_val, mask_val, lr, mask.ratio});
    }
    return log;
}

} // namespace

const char* aux_target_name(AuxTarget t) {
    return t == AuxTarget::pixel ? "pixel" : "hog";
}

AuxTarget aux_target_from_name(const std::string& name) {
    if (name == "pixel") return AuxTarget::pixel;
    if (name == "hog") return AuxTarget::hog;
    throw std::invalid_argument("unknown aux target: " + name);
}

void MaeConfig::validate() const {
    if (image_size == 0 || patch_size == 0 || image_size % patch_size != 0)
        throw std::invalid_argument("MaeConfig: image_size must be divisible by patch_size");
    if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
        throw std::invalid_argument("MaeConfig: embed_dim must be divisible by heads");
    if ((embed_dim / heads) % 4 != 0)
        throw std::invalid_argument("MaeConfig: head dim must be divisible by 4 for 2D RoPE");
    if (!(0.0 <= mask_low && mask_low <= mask_high && mask_high < 1.0))
        throw std::invalid_argument("MaeConfig: need 0 <= mask_low <= mask_high < 1");
    if (latent_tokens == 0 || latent_dim == 0)
        throw std::invalid_argument("MaeConfig: latent shape must be nonzero");
}

MaskSpec MaskSpec::none(std::size_t n_patches) {
    MaskSpec m;
    m.indicator.assign(n_patches, 0);
    return m;
}

MaskSpec mask_sample(std::size_t n_patches, const MaeConfig& cfg, RngStream& rng) {
    MaskSpec m = MaskSpec::none(n_patches);
    m.ratio = cfg.mask_low + (cfg.mask_high - cfg.mask_low) * rng.uniform();
    const double nf = static_cast<double>(n_patches);
    long count = std::llround(m.ratio * nf);
    const long lo = static_cast<long>(std::ceil(cfg.mask_low * nf - 1e-9));
    const long hi = static_cast<long>(std::floor(cfg.mask_high * nf + 1e-9));
    count = std::clamp(count, std::max(0L, lo), std::min(static_cast<long>(n_patches), hi));
    std::vector<std::size_t> all(n_patches);
    for (std::size_t i = 0; i < n_patches; ++i) all[i] = i;
    for (long i = 0; i < count; ++i)
        std::swap(all[i], all[i + static_cast<long>(rng.below(n_patches - static_cast<std::size_t>(i)))]);
    m.masked.assign(all.begin(), all.begin() + count);
    std::sort(m.masked.begin(), m.masked.end());
    for (std::size_t i : m.masked) m.indicator[i] = 1;
    return m;
}

ad::Tensor& MaeModel::p(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw std::logic_error("MaeModel: unknown parameter " + name);
    return it->second;
}

const ad::Tensor& MaeModel::p(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw std::logic_error("MaeModel: unknown parameter " + name);
    return it->second;
}

std::size_t aux_target_dim(const MaeConfig& cfg, AuxTarget t) {
    return t == AuxTarget::pixel ? cfg.patch_dim() : HogConfig{cfg.patch_size, 8}.bins;
}

std::vector<double> aux_target_values(const MaeConfig& cfg, AuxTarget t, const Mat& images) {
    if (t == AuxTarget::pixel) return patchify(images, cfg);
    const HogConfig hc{cfg.patch_size, 8};
    const std::size_t n = cfg.num_patches(), dim = hc.bins;
    std::vector<double> out(images.rows * n * dim);
    for (std::size_t bi = 0; bi < images.rows; ++bi) {
        const Mat f = hog_features(images.row(bi), cfg.image_size, hc);
        std::copy(f.data.begin(), f.data.end(), out.begin() + static_cast<long>(bi * n * dim));
    }
    return out;
}

MaeModel mae_init(const MaeConfig& cfg) {
    cfg.validate();
    MaeModel model;
    model.cfg = cfg;
    RngStream master(cfg.seed, 0x6d6165ULL);
    auto& p = model.params;
    const std::size_t d = cfg.embed_dim, h = cfg.latent_dim;
    const std::size_t n = cfg.num_patches(), l = cfg.latent_tokens;

    declare(p, master, "patch_embed.w", {cfg.patch_dim(), d}, InitKind::weight);
    declare(p, master, "patch_embed.b", {d}, InitKind::bias);
    declare(p, master, "latent_tokens", {l, d}, InitKind::token);
    declare(p, master, "enc_latent_pos", {l, d}, InitKind::token);
    declare(p, master, "mask_token", {d}, InitKind::token);
    for (std::size_t i = 0; i < cfg.enc_layers; ++i)
        declare_block(p, master, "enc." + std::to_string(i), d);
    declare(p, master, "enc.norm.g", {d}, InitKind::ln_gain);
    declare(p, master, "enc.norm.b", {d}, InitKind::bias);
    declare(p, master, "latent_head.w", {d, h}, InitKind::weight);
    declare(p, master, "latent_head.b", {h}, InitKind::bias);

    declare(p, master, "dec.tokens", {n, h}, InitKind::token);
    declare(p, master, "dec.latent_pos", {l, d}, InitKind::token);
    declare(p, master, "dec.embed.w", {h, d}, InitKind::weight);
    declare(p, master, "dec.embed.b", {d}, InitKind::bias);
    for (std::size_t i = 0; i < cfg.dec_layers; ++i)
        declare_block(p, master, "dec." + std::to_string(i), d);
    declare(p, master, "dec.norm.g", {d}, InitKind::ln_gain);
    declare(p, master, "dec.norm.b", {d}, InitKind::bias);
    declare(p, master, "dec.pixel_head.w", {d, cfg.patch_dim()}, InitKind::weight);
    declare(p, master, "dec.pixel_head.b", {cfg.patch_dim()}, InitKind::bias);

    for (std::size_t j = 0; j < cfg.aux_targets.size(); ++j) {
        const std::string prefix = "aux" + std::to_string(j);
        declare(p, master, prefix + ".tokens", {n, h}, InitKind::token);
        declare(p, master, prefix + ".latent_pos", {l, d}, InitKind::token);
        declare(p, master, prefix + ".embed.w", {h, d}, InitKind::weight);
        declare(p, master, prefix + ".embed.b", {d}, InitKind::bias);
        for (std::size_t i = 0; i < cfg.aux_dec_layers; ++i)
            declare_block(p, master, prefix + "." + std::to_string(i), d);
        declare(p, master, prefix + ".norm.g", {d}, InitKind::ln_gain);
        declare(p, master, prefix + ".norm.b", {d}, InitKind::bias);
        declare(p, master, prefix + ".head.w", {d, aux_target_dim(cfg, cfg.aux_targets[j])},
                InitKind::weight);
        declare(p, master, prefix + ".head.b", {aux_target_dim(cfg, cfg.aux_targets[j])},
                InitKind::bias);
    }
    return model;
}

ad::Tensor encode(MaeModel& model, const Mat& images, const MaskSpec& mask) {
    const MaeConfig& cfg = model.cfg;
    const std::size_t b = images.rows, n = cfg.num_patches(), l = cfg.latent_tokens;
    if (images.cols != cfg.image_size * cfg.image_size * 3)
        throw std::invalid_argument("encode: image size mismatch");
    if (mask.indicator.size() != n)
        throw std::invalid_argument("encode: mask length != patch count");

    auto xp = ad::constant({b, n, cfg.patch_dim()}, patchify(images, cfg));
    auto tok = linear(model, "patch_embed", xp);
    if (!mask.masked.empty()) tok = ad::replace_tokens(tok, model.p("mask_token"), mask.masked);
    auto z = ad::add(model.p("latent_tokens"), model.p("enc_latent_pos"));
    auto seq = ad::concat_tokens(tok, ad::tile_batch(z, b));
    const auto positions = sequence_positions(cfg, l);
    for (std::size_t i = 0; i < cfg.enc_layers; ++i)
        seq = transformer_block(model, "enc." + std::to_string(i), seq, positions);
    seq = ad::layernorm(seq, model.p("enc.norm.g"), model.p("enc.norm.b"));
    auto lat = ad::slice_tokens(seq, n, l);
    return linear(model, "latent_head", lat);
}

ad::Tensor decode_pixels(MaeModel& model, const ad::Tensor& h) {
    auto img_tokens = decoder_trunk(model, "dec", model.cfg.dec_layers, h);
    return linear(model, "dec.pixel_head", img_tokens);
}

ad::Tensor decode_aux(MaeModel& model, std::size_t aux_index, const ad::Tensor& h) {
    if (aux_index >= model.cfg.aux_targets.size())
        throw std::invalid_argument("decode_aux: no such auxiliary decoder");
    const std::string prefix = "aux" + std::to_string(aux_index);
    auto img_tokens = decoder_trunk(model, prefix, model.cfg.aux_dec_layers, h);
    return linear(model, prefix + ".head", img_tokens);
}

MaeLossOut mae_loss(MaeModel& model, const Mat& images, const MaskSpec& mask) {
    const MaeConfig& cfg = model.cfg;
    const std::size_t b = images.rows, n = cfg.num_patches();

    static bool warned_no_aux = false;
    if (cfg.aux_targets.empty() && cfg.mask_high > 0.0 && !warned_no_aux) {
        std::fprintf(stderr,
                     "warning: mask modeling enabled with no auxiliary targets; "
                     "mask loss will be zero\n");
        warned_no_aux = true;
    }

    auto h = encode(model, images, mask);
    auto xhat = decode_pixels(model, h);
    auto target = ad::constant({b, n, cfg.patch_dim()}, patchify(images, cfg));
    auto recon = ad::mse(xhat, target);

    MaeLossOut out;
    out.recon = recon.value()[0];
    out.total = recon;
    // The perceptual (lambda1) and adversarial (lambda2) terms contribute
    // exactly zero at this scale; only the weights are carried in the config.
    if (!mask.masked.empty()) {
        for (std::size_t j = 0; j < cfg.aux_targets.size(); ++j) {
            const AuxTarget t = cfg.aux_targets[j];
            const std::size_t dim = aux_target_dim(cfg, t);
            const auto full = aux_target_values(cfg, t, images);
            std::vector<double> masked_target(b * mask.masked.size() * dim);
            for (std::size_t bi = 0; bi < b; ++bi)
                for (std::size_t q = 0; q < mask.masked.size(); ++q)
                    std::copy(full.begin() + static_cast<long>((bi * n + mask.masked[q]) * dim),
                              full.begin() + static_cast<long>((bi * n + mask.masked[q] + 1) * dim),
                              masked_target.begin() + static_cast<long>((bi * mask.masked.size() + q) * dim));
            auto pred = ad::select_tokens(decode_aux(model, j, h), mask.masked);
            auto term = ad::mse(pred, ad::constant({b, mask.masked.size(), dim},
                                                   std::move(masked_target)));
            out.mask_loss += term.value()[0];
            out.total = ad::add(out.total, term);
        }
    }
    return out;
}

std::vector<MaeTrainLogRow> train_mae(MaeModel& model, const ToyImageSet& data,
                                      const MaeTrainConfig& cfg, RngStream& rng) {
    return run_training(model, data, cfg, rng, false);
}

std::vector<MaeTrainLogRow> finetune_decoder(MaeModel& model, const ToyImageSet& data,
                                             const MaeTrainConfig& cfg, RngStream& rng) {
    return run_training(model, data, cfg, rng, true);
}

LatentDataset export_latents(MaeModel& model, const Mat& images,
                             const std::optional<std::vector<std::uint32_t>>& labels) {
    const MaeConfig& cfg = model.cfg;
    LatentDataset ds;
    ds.n = images.rows;
    ds.tokens_per_sample = cfg.latent_tokens;
    ds.channels = cfg.latent_dim;
    ds.data.resize(ds.n * ds.tokens_per_sample * ds.channels);
    const MaskSpec zero = MaskSpec::none(cfg.num_patches());
    const std::size_t chunk = 128;
    for (std::size_t start = 0; start < images.rows; start += chunk) {
        const std::size_t stop = std::min(images.rows, start + chunk);
        Mat batch(stop - start, images.cols);
        std::copy(images.data.begin() + static_cast<long>(start * images.cols),
                  images.data.begin() + static_cast<long>(stop * images.cols),
                  batch.data.begin());
        auto h = encode(model, batch, zero);
        std::copy(h.value().begin(), h.value().end(),
                  ds.data.begin() + static_cast<long>(start * ds.tokens_per_sample * ds.channels));
    }
    if (labels) {
        if (labels->size() != ds.n)
            throw std::invalid_argument("export_latents: label count mismatch");
        ds.labels = *labels;
    }
    return ds;
}

Mat reconstruct(MaeModel& model, const Mat& images) {
    const MaeConfig& cfg = model.cfg;
    Mat out(images.rows, images.cols);
    const MaskSpec zero = MaskSpec::none(cfg.num_patches());
    const std::size_t chunk = 128;
    for (std::size_t start = 0; start < images.rows; start += chunk) {
        const std::size_t stop = std::min(images.rows, start + chunk);
        Mat batch(stop - start, images.cols);
        std::copy(images.data.begin() + static_cast<long>(start * images.cols),
                  images.data.begin() + static_cast<long>(stop * images.cols),
                  batch.data.begin());
        auto patches = decode_pixels(model, encode(model, batch, zero));
        const std::size_t per = cfg.num_patches() * cfg.patch_dim();
        for (std::size_t bi = 0; bi < batch.rows; ++bi)
            unpatchify_into({patches.value().data() + bi * per, per}, cfg, out.row(start + bi));
    }
    return out;
}

ReconMetrics recon_metrics(MaeModel& model, const Mat& images) {
    const Mat recon = reconstruct(model, images);
    double mse = 0.0;
    for (std::size_t i = 0; i < images.data.size(); ++i) {
        const double z = images.data[i] - recon.data[i];
        mse += z * z;
    }
    mse /= static_cast<double>(images.data.size());
    const double psnr = mse <= 0.0 ? 99.0 : std::min(99.0, 10.0 * std::log10(1.0 / mse));

    // Moment Frechet on flattened pixels; capped row count keeps the
    // sample-space eigen solve tractable.
    const std::size_t cap = std::min<std::size_t>(images.rows, 384);
    Mat a(cap, images.cols), b(cap, images.cols);
    std::copy(images.data.begin(), images.data.begin() + static_cast<long>(cap * images.cols),
              a.data.begin());
    std::copy(recon.data.begin(), recon.data.begin() + static_cast<long>(cap * images.cols),
              b.data.begin());
    return {mse, psnr, frechet_distance(a, b)};
}

void save_checkpoint(const std::string& path, const MaeModel& model) {
    nlohmann::json cfg_j;
    const MaeConfig& c = model.cfg;
    cfg_j["image_size"] = c.image_size;
    cfg_j["patch_size"] = c.patch_size;
    cfg_j["embed_dim"] = c.embed_dim;
    cfg_j["latent_tokens"] = c.latent_tokens;
    cfg_j["latent_dim"] = c.latent_dim;
    cfg_j["enc_layers"] = c.enc_layers;
    cfg_j["dec_layers"] = c.dec_layers;
    cfg_j["aux_dec_layers"] = c.aux_dec_layers;
    cfg_j["heads"] = c.heads;
    cfg_j["mask_low"] = c.mask_low;
    cfg_j["mask_high"] = c.mask_high;
    cfg_j["lambda1"] = c.lambda1;
    cfg_j["lambda2"] = c.lambda2;
    std::vector<std::string> aux;
    for (AuxTarget t : c.aux_targets) aux.push_back(aux_target_name(t));
    cfg_j["aux_targets"] = aux;
    cfg_j["seed"] = c.seed;
    const std::string cfg_text = cfg_j.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    auto put_u32 = [&](std::uint32_t v) {
        unsigned char bts[4] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>((v >> 8) & 0xff),
                                static_cast<unsigned char>((v >> 16) & 0xff),
                                static_cast<unsigned char>((v >> 24) & 0xff)};
        f.write(reinterpret_cast<const char*>(bts), 4);
    };
    f.write("MAEB", 4);
    put_u32(1); // format version
    put_u32(static_cast<std::uint32_t>(cfg_text.size()));
    f.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
    put_u32(static_cast<std::uint32_t>(model.params.size()));
    for (const auto& [name, tensor] : model.params) {
        put_u32(static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(static_cast<std::uint32_t>(tensor.shape().size()));
        for (std::size_t s : tensor.shape()) put_u32(static_cast<std::uint32_t>(s));
        f.write(reinterpret_cast<const char*>(tensor.value().data()),
                static_cast<std::streamsize>(tensor.value().size() * sizeof(double)));
    }
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

MaeModel load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    auto get_u32 = [&]() {
        unsigned char b[4];
        f.read(reinterpret_cast<char*>(b), 4);
        if (!f) throw std::runtime_error("load_checkpoint: truncated file " + path);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    };
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "MAEB", 4) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    const std::uint32_t version = get_u32();
    if (version != 1)
        throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
    std::string cfg_text(get_u32(), '\0');
    f.read(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
    const auto j = nlohmann::json::parse(cfg_text);

    MaeConfig cfg;
    cfg.image_size = j.at("image_size").get<std::size_t>();
    cfg.patch_size = j.at("patch_size").get<std::size_t>();
    cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
    cfg.latent_tokens = j.at("latent_tokens").get<std::size_t>();
    cfg.latent_dim = j.at("latent_dim").get<std::size_t>();
    cfg.enc_layers = j.at("enc_layers").get<std::size_t>();
    cfg.dec_layers = j.at("dec_layers").get<std::size_t>();
    cfg.aux_dec_layers = j.at("aux_dec_layers").get<std::size_t>();
    cfg.heads = j.at("heads").get<std::size_t>();
    cfg.mask_low = j.at("mask_low").get<double>();
    cfg.mask_high = j.at("mask_high").get<double>();
    cfg.lambda1 = j.at("lambda1").get<double>();
    cfg.lambda2 = j.at("lambda2").get<double>();
    cfg.aux_targets.clear();
    for (const auto& name : j.at("aux_targets"))
        cfg.aux_targets.push_back(aux_target_from_name(name.get<std::string>()));
    cfg.seed = j.at("seed").get<std::uint64_t>();

    MaeModel model = mae_init(cfg);
    const std::uint32_t nparams = get_u32();
    if (nparams != model.params.size())
        throw std::runtime_error("load_checkpoint: parameter count mismatch in " + path);
    for (std::uint32_t i = 0; i < nparams; ++i) {
        std::string name(get_u32(), '\0');
        f.read(name.data(), static_cast<std::streamsize>(name.size()));
        std::vector<std::size_t> shape(get_u32());
        for (auto& s : shape) s = get_u32();
        ad::Tensor& t = model.p(name);
        if (t.shape() != shape)
            throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
        f.read(reinterpret_cast<char*>(t.value().data()),
               static_cast<std::streamsize>(t.value().size() * sizeof(double)));
        if (!f) throw std::runtime_error("load_checkpoint: truncated payload in " + path);
    }
    return model;
}

std::vector<double> encoder_param_snapshot(const MaeModel& model) {
    std::vector<double> out;
    for (const auto& [name, tensor] : model.params) {
        if (starts_with(name, "dec.")) continue;
        out.insert(out.end(), tensor.value().begin(), tensor.value().end());
    }
    return out;
}

} // namespace latlab
