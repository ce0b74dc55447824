// latlab — desk-scale laboratory for tokenizer latent structure and
// GMM-score diffusion experiments.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "latlab/config.hpp"
#include "latlab/diffusion.hpp"
#include "latlab/gmm.hpp"
#include "latlab/gradcheck.hpp"
#include "latlab/latent.hpp"
#include "latlab/mae.hpp"
#include "latlab/pipeline.hpp"
#include "latlab/report.hpp"
#include "latlab/toydata.hpp"

namespace fs = std::filesystem;
using namespace latlab;

namespace {

struct Common {
    std::string out = "out";
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

ConfigFile load_config(const Common& c) {
    return c.config_path.empty() ? ConfigFile{} : ConfigFile::parse_file(c.config_path);
}

void write_echo(const Common& c, const std::string& name, const nlohmann::json& extra) {
    nlohmann::json j;
    j["subcommand"] = name;
    j["seed"] = c.seed;
    j["config"] = extra;
    j["run_id"] = run_id_hex(name + "/" + std::to_string(c.seed) + "/" + extra.dump());
    fs::create_directories(c.out);
    write_text_file(c.out + "/" + name + "_config.json", j.dump(2) + "\n");
}

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--out", c.out, "output directory");
    cmd->add_option("--config", c.config_path, "key = value config file");
    cmd->add_option("--seed", c.seed, "random seed")->each([&c](const std::string&) {
        c.seed_set = true;
    });
}

MaeTrainConfig train_cfg_from(const ConfigFile& f, const std::string& sec, std::uint64_t seed) {
    MaeTrainConfig t;
    t.steps = f.get_u64(sec, "steps", t.steps);
    t.batch = f.get_u64(sec, "batch", t.batch);
    t.lr = f.get_double(sec, "lr", t.lr);
    t.weight_decay = f.get_double(sec, "weight_decay", t.weight_decay);
    t.warmup_frac = f.get_double(sec, "warmup_frac", t.warmup_frac);
    t.seed = seed;
    return t;
}

MaeConfig mae_cfg_from(const ConfigFile& f, std::uint64_t seed) {
    MaeConfig m;
    m.image_size = f.get_u64("mae", "image_size", m.image_size);
    m.patch_size = f.get_u64("mae", "patch_size", m.patch_size);
    m.embed_dim = f.get_u64("mae", "embed_dim", m.embed_dim);
    m.latent_tokens = f.get_u64("mae", "latent_tokens", m.latent_tokens);
    m.latent_dim = f.get_u64("mae", "latent_dim", m.latent_dim);
    m.enc_layers = f.get_u64("mae", "enc_layers", m.enc_layers);
    m.dec_layers = f.get_u64("mae", "dec_layers", m.dec_layers);
    m.aux_dec_layers = f.get_u64("mae", "aux_dec_layers", m.aux_dec_layers);
    m.heads = f.get_u64("mae", "heads", m.heads);
    m.mask_low = f.get_double("mae", "mask_low", m.mask_low);
    m.mask_high = f.get_double("mae", "mask_high", m.mask_high);
    m.lambda1 = f.get_double("mae", "lambda1", m.lambda1);
    m.lambda2 = f.get_double("mae", "lambda2", m.lambda2);
    const std::string aux = f.get_string("mae", "aux_targets", "hog");
    m.aux_targets.clear();
    std::istringstream in(aux);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty() && item != "none") m.aux_targets.push_back(aux_target_from_name(item));
    m.seed = seed;
    f.check_known("mae", {"image_size", "patch_size", "embed_dim", "latent_tokens", "latent_dim",
                          "enc_layers", "dec_layers", "aux_dec_layers", "heads", "mask_low",
                          "mask_high", "lambda1", "lambda2", "aux_targets"});
    return m;
}

EmConfig em_cfg_from(const ConfigFile& f, std::uint64_t seed) {
    EmConfig em;
    em.k = f.get_u64("gmm", "k", em.k);
    em.cov_kind = cov_kind_from_name(f.get_string("gmm", "cov_kind", "full"));
    em.max_iter = f.get_u64("gmm", "max_iter", em.max_iter);
    em.tol = f.get_double("gmm", "tol", em.tol);
    em.n_init = f.get_u64("gmm", "n_init", em.n_init);
    em.init_kind = f.get_string("gmm", "init", "kmeanspp") == "random-points"
                       ? EmInit::random_points
                       : EmInit::kmeanspp;
    em.var_floor = f.get_double("gmm", "var_floor", em.var_floor);
    em.seed = seed;
    f.check_known("gmm", {"k", "cov_kind", "max_iter", "tol", "n_init", "init", "var_floor"});
    return em;
}

// Preprocessing used ahead of GMM fitting: flatten, optional PCA to the
// explained-variance threshold, optional standardization.
Mat preprocess_latents(const LatentDataset& ds, double pca_threshold, bool standardize) {
    Mat x = flatten(ds);
    if (pca_threshold > 0.0) {
        const PcaTransform t = pca_fit(x, pca_threshold);
        x = pca_apply(t, x);
    }
    if (standardize) x = standardize_fit_apply(x).first;
    return x;
}

int cmd_gen_data(const Common& c, const ConfigFile& f, std::size_t n) {
    ToyDataConfig dc;
    dc.image_size = f.get_u64("data", "image_size", dc.image_size);
    dc.background_noise = f.get_double("data", "background_noise", dc.background_noise);
    f.check_known("data", {"image_size", "background_noise", "n"});
    if (n == 0) n = f.get_u64("data", "n", 1000);
    dc.seed = c.seed;
    const ToyImageSet set = gen_toy_dataset(n, dc);
    fs::create_directories(c.out);
    write_imgb1(c.out + "/images.imgb1", set);
    write_echo(c, "gen-data",
               {{"n", n}, {"image_size", dc.image_size}, {"background_noise", dc.background_noise}});
    std::cout << "wrote " << c.out << "/images.imgb1 (" << n << " images)\n";
    return 0;
}

int cmd_train_mae(const Common& c, const ConfigFile& f, const std::string& images_path) {
    const ToyImageSet data = read_imgb1(images_path);
    MaeConfig mc = mae_cfg_from(f, c.seed);
    mc.image_size = data.size;
    const MaeTrainConfig tc = train_cfg_from(f, "train", c.seed);
    f.check_known("train", {"steps", "batch", "lr", "weight_decay", "warmup_frac"});
    MaeModel model = mae_init(mc);
    RngStream rng(c.seed, 0x7472616dULL);
    const auto log = train_mae(model, data, tc, rng);
    fs::create_directories(c.out);
    save_checkpoint(c.out + "/mae.ckpt", model);
    std::vector<std::string> rows;
    for (const auto& r : log)
        rows.push_back(std::to_string(r.step) + "," + format_g9(r.recon) + "," +
                       format_g9(r.mask_loss) + "," + format_g9(r.lr) + "," + format_g9(r.ratio));
    write_csv(c.out + "/mae_train_log.csv", "step,recon,mask_loss,lr,ratio", rows);
    write_echo(c, "train-mae",
               {{"images", images_path}, {"steps", tc.steps}, {"batch", tc.batch}, {"lr", tc.lr}});
    std::cout << "wrote " << c.out << "/mae.ckpt\n";
    return 0;
}

int cmd_finetune(const Common& c, const ConfigFile& f, const std::string& ckpt,
                 const std::string& images_path) {
    const ToyImageSet data = read_imgb1(images_path);
    MaeModel model = load_checkpoint(ckpt);
    const MaeTrainConfig tc = train_cfg_from(f, "finetune", c.seed);
    f.check_known("finetune", {"steps", "batch", "lr", "weight_decay", "warmup_frac"});
    RngStream rng(c.seed, 0x66746472ULL);
    const auto log = finetune_decoder(model, data, tc, rng);
    fs::create_directories(c.out);
    save_checkpoint(c.out + "/mae_ft.ckpt", model);
    std::vector<std::string> rows;
    for (const auto& r : log)
        rows.push_back(std::to_string(r.step) + "," + format_g9(r.recon) + "," +
                       format_g9(r.mask_loss) + "," + format_g9(r.lr) + "," + format_g9(r.ratio));
    write_csv(c.out + "/finetune_log.csv", "step,recon,mask_loss,lr,ratio", rows);
    write_echo(c, "finetune-decoder", {{"checkpoint", ckpt}, {"steps", tc.steps}});
    std::cout << "wrote " << c.out << "/mae_ft.ckpt\n";
    return 0;
}

int cmd_export_latents(const Common& c, const std::string& ckpt, const std::string& images_path) {
    const ToyImageSet data = read_imgb1(images_path);
    MaeModel model = load_checkpoint(ckpt);
    const LatentDataset ds = export_latents(model, data.pixels, data.labels);
    fs::create_directories(c.out);
    write_latb1(c.out + "/latents.latb1", ds);
    write_echo(c, "export-latents", {{"checkpoint", ckpt}, {"images", images_path}});
    std::cout << "wrote " << c.out << "/latents.latb1 (" << ds.n << " x " << ds.tokens_per_sample
              << " x " << ds.channels << ")\n";
    return 0;
}

int cmd_gmm_fit(const Common& c, const ConfigFile& f, const std::string& latents_path,
                double pca_threshold, bool standardize) {
    const LatentDataset ds = read_latb1(latents_path);
    const Mat x = preprocess_latents(ds, pca_threshold, standardize);
    const EmConfig em = em_cfg_from(f, c.seed);
    const EmFitResult fit = gmm_fit_em(x, em);
    fs::create_directories(c.out);
    write_text_file(c.out + "/gmm.json", fit.model.to_json() + "\n");
    write_echo(c, "gmm-fit",
               {{"latents", latents_path},
                {"k", em.k},
                {"pca_threshold", pca_threshold},
                {"standardize", standardize},
                {"final_nll", fit.nll_trace.back()},
                {"collapsed", fit.collapsed}});
    std::cout << "final NLL " << format_g9(fit.nll_trace.back()) << ", wrote " << c.out
              << "/gmm.json\n";
    return 0;
}

int cmd_nll_sweep(const Common& c, const ConfigFile& f, const std::string& latents_path,
                  std::vector<std::size_t> k_list, double pca_threshold, bool standardize,
                  const std::string& eval_latents_path) {
    const LatentDataset ds = read_latb1(latents_path);
    // Preprocessing is fitted on the training latents; an optional held-out
    // file is pushed through the same transforms for evaluation NLL.
    Mat x = flatten(ds);
    std::optional<PcaTransform> pca;
    if (pca_threshold > 0.0) {
        pca = pca_fit(x, pca_threshold);
        x = pca_apply(*pca, x);
    }
    StandardizeStats stats;
    if (standardize) {
        auto [z, st] = standardize_fit_apply(x);
        x = std::move(z);
        stats = std::move(st);
    }
    Mat eval;
    if (!eval_latents_path.empty()) {
        eval = flatten(read_latb1(eval_latents_path));
        if (pca) eval = pca_apply(*pca, eval);
        if (standardize)
            for (std::size_t r = 0; r < eval.rows; ++r)
                for (std::size_t j = 0; j < eval.cols; ++j)
                    eval.at(r, j) = stats.floored[j]
                                        ? 0.0
                                        : (eval.at(r, j) - stats.mean[j]) / stats.std_dev[j];
    }

    EmConfig em = em_cfg_from(f, c.seed);
    if (k_list.empty()) k_list = f.get_list("gmm", "k_list", {1, 2, 4, 8});
    std::sort(k_list.begin(), k_list.end());
    fs::create_directories(c.out);
    std::vector<std::string> lines;
    for (std::size_t k : k_list) {
        EmConfig cfg = em;
        cfg.k = k;
        const auto fit = gmm_fit_em(x, cfg);
        std::string line = std::to_string(k) + "," + format_g9(fit.nll_trace.back()) + "," +
                           (fit.collapsed ? "1" : "0");
        line += "," + (eval.rows ? format_g9(gmm_nll(fit.model, eval)) : std::string("nan"));
        lines.push_back(line);
    }
    write_csv(c.out + "/nll_sweep.csv", "k,nll,collapsed,eval_nll", lines);
    write_echo(c, "nll-sweep",
               {{"latents", latents_path},
                {"pca_threshold", pca_threshold},
                {"eval_latents", eval_latents_path}});
    std::cout << "wrote " << c.out << "/nll_sweep.csv\n";
    return 0;
}

int cmd_train_diffusion(const Common& c, const ConfigFile& f, const std::string& latents_path) {
    TrainConfig tc;
    tc.k = f.get_u64("diffusion", "k", 4);
    tc.iters = f.get_u64("diffusion", "iters", 200);
    tc.lr = f.get_double("diffusion", "lr", 0.5);
    tc.t_fixed = f.get_double("diffusion", "t", 0.25);
    tc.seed = c.seed;
    const std::string t_mode = f.get_string("diffusion", "t_sampling", "fixed");
    tc.t_sampling = t_mode == "uniform" ? TSampling::uniform_range : TSampling::fixed;
    f.check_known("diffusion", {"k", "iters", "lr", "t", "t_sampling", "d", "n", "b_cap",
                                "sep_const", "warm_radius_const", "batch", "init"});
    fs::create_directories(c.out);

    RngStream rng(c.seed, 0x74646966ULL);
    TrainResult trained;
    nlohmann::json extra{{"k", tc.k}, {"iters", tc.iters}, {"lr", tc.lr}, {"t", tc.t_fixed}};
    if (!latents_path.empty()) {
        const LatentDataset ds = read_latb1(latents_path);
        const Mat x = preprocess_latents(ds, 0.0, true);
        tc.n_samples = x.rows;
        tc.batch = f.get_u64("diffusion", "batch", x.rows);
        tc.init_kind = ScoreInit::perturbed;
        trained = train_scorenet(x, std::nullopt, tc, rng);
        extra["latents"] = latents_path;
    } else {
        const std::size_t d = f.get_u64("diffusion", "d", 2);
        const std::size_t n = f.get_u64("diffusion", "n", 8192);
        const double b_cap = f.get_double("diffusion", "b_cap", 6.0);
        const double sep = f.get_double("diffusion", "sep_const", 4.0);
        tc.warm_radius_const = f.get_double("diffusion", "warm_radius_const", 0.5);
        tc.init_kind = ScoreInit::warm;
        tc.n_samples = n;
        tc.batch = f.get_u64("diffusion", "batch", n);
        RngStream mean_rng = rng.substream(1);
        const TheoryGmm truth{generate_separated_means(tc.k, d, b_cap, sep, mean_rng)};
        RngStream data_rng = rng.substream(2);
        const auto sample = gmm_sample(truth.to_gmm(), n, data_rng);
        RngStream train_rng = rng.substream(3);
        trained = train_scorenet(sample.points, truth, tc, train_rng);
        write_text_file(c.out + "/truth.json",
                        ScoreNet{truth.k(), truth.d(), truth.means}.to_json() + "\n");
        extra["d"] = d;
        extra["n"] = n;
        const auto matched = matched_mean_error(trained.net, truth);
        extra["max_matched_error"] = matched.max_err;
        extra["min_matched_error"] = matched.min_err;
    }
    write_text_file(c.out + "/scorenet.json", trained.net.to_json() + "\n");
    std::vector<std::string> rows;
    for (std::size_t i = 0; i < trained.trace.size(); ++i)
        rows.push_back(std::to_string(i) + "," + format_g9(trained.trace[i].loss) + "," +
                       format_g9(trained.trace[i].matched_error));
    write_csv(c.out + "/diffusion_trace.csv", "iter,loss,max_matched_error", rows);
    write_echo(c, "train-diffusion", extra);
    std::cout << "wrote " << c.out << "/scorenet.json\n";
    return 0;
}

int cmd_sample(const Common& c, const ConfigFile& f, const std::string& scorenet_path) {
    const ScoreNet net = ScoreNet::from_json(read_text_file(scorenet_path));
    const std::size_t steps = f.get_u64("sample", "steps", 200);
    const double t_max = f.get_double("sample", "t_max", 3.0);
    const double delta = f.get_double("sample", "delta", 0.01);
    const double c_const = f.get_double("sample", "c_const", 1.0);
    const std::size_t n = f.get_u64("sample", "n", 10000);
    const std::string kind_name = f.get_string("sample", "schedule", "exp-decay");
    const std::string sampler = f.get_string("sample", "sampler", "exp-integrator");
    f.check_known("sample", {"steps", "t_max", "delta", "c_const", "n", "schedule", "sampler"});
    const ScheduleKind kind =
        kind_name == "uniform" ? ScheduleKind::uniform : ScheduleKind::exp_decay;
    const ScheduleTable sched = make_schedule(kind, steps, t_max, delta, c_const, net.d);
    if (sched.warn_t_small)
        std::cerr << "warning: T < 2 is outside the sampling theorem's validity range\n";
    if (sched.warn_delta_large)
        std::cerr << "warning: delta > 1/2 is outside the sampling theorem's validity range\n";
    RngStream rng(c.seed, 0x73616d70ULL);
    const Mat samples = sampler == "euler-maruyama"
                            ? sample_euler_maruyama(make_scorenet_fn(net), sched, n, rng)
                            : sample_exp_integrator(make_scorenet_fn(net), sched, n, rng);
    LatentDataset ds;
    ds.n = samples.rows;
    ds.tokens_per_sample = 1;
    ds.channels = samples.cols;
    ds.data = samples.data;
    fs::create_directories(c.out);
    write_latb1(c.out + "/samples.latb1", ds);
    write_echo(c, "sample",
               {{"scorenet", scorenet_path},
                {"n", n},
                {"steps", steps},
                {"schedule", kind_name},
                {"sampler", sampler},
                {"t_max", t_max},
                {"delta", delta},
                {"pi_value", sched.pi_value}});
    std::cout << "wrote " << c.out << "/samples.latb1 (Pi=" << format_g9(sched.pi_value) << ")\n";
    return 0;
}

int cmd_eval(const Common& c, const std::string& kind, const std::string& a_path,
             const std::string& b_path, const std::string& ckpt, const std::string& images_path,
             double lp_pca_threshold) {
    fs::create_directories(c.out);
    const std::string csv = c.out + "/metrics.csv";
    const std::string header = "kind,input_a,input_b,value1,value2,value3,seed";
    auto row = [&](const std::string& ia, const std::string& ib, double v1, double v2, double v3) {
        append_csv(csv, header,
                   kind + "," + ia + "," + ib + "," + format_g9(v1) + "," + format_g9(v2) + "," +
                       format_g9(v3) + "," + std::to_string(c.seed));
    };
    if (kind == "frechet" || kind == "kl") {
        const Mat a = flatten(read_latb1(a_path));
        const Mat b = flatten(read_latb1(b_path));
        if (kind == "frechet") {
            const double v = frechet_distance(a, b);
            row(a_path, b_path, v, 0.0, 0.0);
            std::cout << "frechet " << format_g9(v) << "\n";
        } else {
            const double v = knn_kl(a, b);
            row(a_path, b_path, v, 0.0, 0.0);
            std::cout << "knn-kl " << format_g9(v) << "\n";
        }
    } else if (kind == "lp") {
        const LatentDataset ds = read_latb1(a_path);
        if (!ds.labels) throw std::invalid_argument("eval lp: latents file has no labels");
        ProbeConfig pc;
        pc.seed = c.seed;
        // Default probes the flattened raw latents; a PCA threshold switches
        // to post-PCA features.
        const Mat feats = preprocess_latents(ds, lp_pca_threshold, lp_pca_threshold > 0.0);
        const double acc = linear_probe(feats, *ds.labels, pc).accuracy;
        row(a_path, "", acc, 0.0, 0.0);
        std::cout << "lp accuracy " << format_g9(acc) << "\n";
    } else if (kind == "recon") {
        MaeModel model = load_checkpoint(ckpt);
        const ToyImageSet data = read_imgb1(images_path);
        const ReconMetrics m = recon_metrics(model, data.pixels);
        row(ckpt, images_path, m.mse, m.psnr, m.pixel_frechet);
        std::cout << "mse " << format_g9(m.mse) << " psnr " << format_g9(m.psnr)
                  << " pixel_frechet " << format_g9(m.pixel_frechet) << "\n";
    } else {
        throw std::invalid_argument("eval: unknown kind " + kind);
    }
    return 0;
}

int cmd_sweep_complexity(const Common& c, const ConfigFile& f) {
    ComplexitySweepConfig sc;
    sc.k_list = f.get_list("complexity", "k_list", {2, 4, 8});
    sc.d = f.get_u64("complexity", "d", 8);
    sc.eps = f.get_double("complexity", "eps", 0.25);
    sc.n_grid = f.get_list("complexity", "n_grid", {128, 256, 512, 1024, 2048, 4096, 8192});
    sc.trials = f.get_u64("complexity", "trials", 5);
    sc.b_cap = f.get_double("complexity", "b_cap", 6.0);
    sc.iters = f.get_u64("complexity", "iters", sc.iters);
    sc.lr = f.get_double("complexity", "lr", sc.lr);
    sc.seed = c.seed;
    f.check_known("complexity", {"k_list", "d", "eps", "n_grid", "trials", "b_cap", "iters", "lr"});
    RngStream rng(c.seed, 0x63706c78ULL);
    const auto res = complexity_sweep(sc, rng);
    fs::create_directories(c.out);
    std::vector<std::string> rows;
    for (const auto& r : res.rows)
        rows.push_back(std::to_string(r.k) + "," +
                       (r.exceeded ? "exceeded" : std::to_string(r.n_required)));
    write_csv(c.out + "/complexity.csv", "k,n_required", rows);
    std::vector<std::string> cell_rows;
    for (const auto& cell : res.cells) {
        std::string tr;
        for (double e : cell.trial_errs) tr += (tr.empty() ? "" : ";") + format_g9(e);
        cell_rows.push_back(std::to_string(cell.k) + "," + std::to_string(cell.n) + "," +
                            format_g9(cell.median_err) + "," + tr);
    }
    write_csv(c.out + "/complexity_cells.csv", "k,n,median_err,trial_errs", cell_rows);
    write_echo(c, "sweep-complexity",
               {{"k_list", sc.k_list}, {"d", sc.d}, {"eps", sc.eps}, {"trials", sc.trials}});
    std::cout << "wrote " << c.out << "/complexity.csv\n";
    return 0;
}

int cmd_pipeline(const Common& c, const ConfigFile& f, const std::string& preset) {
    if (preset != "paper-fig2")
        throw std::invalid_argument("pipeline: unknown preset " + preset);
    PipelineConfig pc = paper_fig2_preset();
    if (c.seed_set) {
        pc.seed = c.seed;
        pc.data.seed = c.seed;
        pc.mae_base.seed = c.seed;
        pc.tokenizer_train.seed = c.seed;
        pc.em.seed = c.seed;
        pc.probe.seed = c.seed;
    }
    pc.n_images = f.get_u64("pipeline", "n_images", pc.n_images);
    pc.tokenizer_train.steps = f.get_u64("pipeline", "steps", pc.tokenizer_train.steps);
    pc.tokenizer_train.batch = f.get_u64("pipeline", "batch", pc.tokenizer_train.batch);
    f.check_known("pipeline", {"n_images", "steps", "batch"});
    const PipelineResult r = run_pipeline(pc, c.out, &std::cerr);
    std::cout << "k_needed masked=" << r.masked.k_needed << " plain=" << r.plain.k_needed
              << "\nfinal_dsm masked=" << format_g9(r.masked.final_dsm)
              << " plain=" << format_g9(r.plain.final_dsm)
              << "\nfrechet  masked=" << format_g9(r.masked.frechet_holdout)
              << " plain=" << format_g9(r.plain.frechet_holdout)
              << "\nlp       masked=" << format_g9(r.masked.lp_accuracy)
              << " plain=" << format_g9(r.plain.lp_accuracy) << "\n"
              << "fewer_modes=" << (r.pass_fewer_modes ? "yes" : "no")
              << " diffusion=" << (r.pass_diffusion ? "yes" : "no")
              << " probe=" << (r.pass_probe ? "yes" : "no") << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"latlab: tokenizer latent-space and diffusion sampling laboratory"};
    app.require_subcommand(1);

    Common c;
    std::size_t gen_n = 0;
    std::string images_path, ckpt_path, latents_path, scorenet_path;
    std::string eval_kind, eval_a, eval_b, eval_latents;
    std::string preset = "paper-fig2";
    std::vector<std::size_t> k_list;
    double pca_threshold = 0.0;
    double lp_pca_threshold = 0.0;
    bool standardize = false;

    auto* gen = app.add_subcommand("gen-data", "generate a procedural toy image set");
    add_common(gen, c);
    gen->add_option("--n", gen_n, "number of images");

    auto* tm = app.add_subcommand("train-mae", "train the tokenizer");
    add_common(tm, c);
    tm->add_option("--images", images_path, "IMGB1 image file")->required();

    auto* ft = app.add_subcommand("finetune-decoder", "frozen-encoder decoder fine-tune");
    add_common(ft, c);
    ft->add_option("--checkpoint", ckpt_path, "MAEB checkpoint")->required();
    ft->add_option("--images", images_path, "IMGB1 image file")->required();

    auto* ex = app.add_subcommand("export-latents", "encode images to a LATB1 latent file");
    add_common(ex, c);
    ex->add_option("--checkpoint", ckpt_path, "MAEB checkpoint")->required();
    ex->add_option("--images", images_path, "IMGB1 image file")->required();

    auto* gf = app.add_subcommand("gmm-fit", "EM-fit a GMM to latents");
    add_common(gf, c);
    gf->add_option("--latents", latents_path, "LATB1 latent file")->required();
    gf->add_option("--pca-threshold", pca_threshold, "PCA explained-variance threshold (0 = off)");
    gf->add_flag("--standardize", standardize, "standardize after PCA");

    auto* ns = app.add_subcommand("nll-sweep", "GMM NLL across component counts");
    add_common(ns, c);
    ns->add_option("--latents", latents_path, "LATB1 latent file")->required();
    ns->add_option("--k-list", k_list, "component counts");
    ns->add_option("--pca-threshold", pca_threshold, "PCA explained-variance threshold (0 = off)");
    ns->add_flag("--standardize", standardize, "standardize after PCA");
    ns->add_option("--eval-latents", eval_latents,
                   "held-out LATB1 file; adds an eval_nll column");

    auto* td = app.add_subcommand("train-diffusion", "train the GMM-parameterized score network");
    add_common(td, c);
    td->add_option("--latents", latents_path, "LATB1 latent file (omit for synthetic truth)");

    auto* sp = app.add_subcommand("sample", "reverse-SDE sampling from a score network");
    add_common(sp, c);
    sp->add_option("--scorenet", scorenet_path, "ScoreNet JSON")->required();

    auto* ev = app.add_subcommand("eval", "metrics: frechet | kl | lp | recon");
    add_common(ev, c);
    ev->add_option("--kind", eval_kind, "frechet|kl|lp|recon")->required();
    ev->add_option("--a", eval_a, "first input file");
    ev->add_option("--b", eval_b, "second input file");
    ev->add_option("--checkpoint", ckpt_path, "MAEB checkpoint (recon)");
    ev->add_option("--images", images_path, "IMGB1 images (recon)");
    ev->add_option("--lp-pca-threshold", lp_pca_threshold,
                   "probe post-PCA features at this threshold (0 = raw latents)");

    auto* sw = app.add_subcommand("sweep-complexity", "sample-size requirement vs K");
    add_common(sw, c);

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    add_common(gc, c);

    auto* pl = app.add_subcommand("pipeline", "end-to-end experiment presets");
    add_common(pl, c);
    pl->add_option("--preset", preset, "preset name (paper-fig2)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << e.what() << "\n" << app.help() << "\n";
        return 2;
    }

    try {
        const ConfigFile f = load_config(c);
        if (gen->parsed()) return cmd_gen_data(c, f, gen_n);
        if (tm->parsed()) return cmd_train_mae(c, f, images_path);
        if (ft->parsed()) return cmd_finetune(c, f, ckpt_path, images_path);
        if (ex->parsed()) return cmd_export_latents(c, ckpt_path, images_path);
        if (gf->parsed()) return cmd_gmm_fit(c, f, latents_path, pca_threshold, standardize);
        if (ns->parsed())
            return cmd_nll_sweep(c, f, latents_path, k_list, pca_threshold, standardize,
                                 eval_latents);
        if (td->parsed()) return cmd_train_diffusion(c, f, latents_path);
        if (sp->parsed()) return cmd_sample(c, f, scorenet_path);
        if (ev->parsed())
            return cmd_eval(c, eval_kind, eval_a, eval_b, ckpt_path, images_path,
                            lp_pca_threshold);
        if (sw->parsed()) return cmd_sweep_complexity(c, f);
        if (gc->parsed()) return run_gradcheck(std::cout) ? 0 : 1;
        if (pl->parsed()) return cmd_pipeline(c, f, preset);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: invalid-argument: " << e.what() << "\n";
        return 1;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: runtime: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
