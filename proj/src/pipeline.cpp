#include "latlab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <json.hpp>

#include "latlab/report.hpp"

namespace latlab {

PipelineConfig paper_fig2_preset() {
    PipelineConfig cfg;
    cfg.seed = 2024;
    cfg.n_images = 5000;
    cfg.data.image_size = 32;
    cfg.data.background_noise = 0.05;
    cfg.data.seed = cfg.seed;

    cfg.mae_base = MaeConfig{};
    cfg.mae_base.seed = cfg.seed;
    cfg.mae_base.aux_targets = {AuxTarget::hog};

    cfg.tokenizer_train.steps = 700;
    cfg.tokenizer_train.batch = 24;
    cfg.tokenizer_train.lr = 2e-3;
    cfg.tokenizer_train.weight_decay = 1e-4;
    cfg.tokenizer_train.seed = cfg.seed;

    cfg.k_list = {1, 2, 4, 8, 16, 32};
    cfg.em.cov_kind = CovKind::full;
    cfg.em.n_init = 2;
    cfg.em.max_iter = 80;
    cfg.em.tol = 1e-5;
    cfg.em.var_floor = 1e-6;
    cfg.em.seed = cfg.seed;

    cfg.probe.epochs = 80;
    cfg.probe.lr = 0.1;
    cfg.probe.l2 = 1e-4;
    cfg.probe.seed = cfg.seed;
    return cfg;
}

namespace {

struct AnalyzedLatents {
    Mat flat;        // raw flattened latents (linear probe input)
    Mat std_train;   // standardized comparison-mode latents, training split
    Mat std_holdout; // held-out split
    std::size_t pca_dim_own = 0;
};

AnalyzedLatents analyze_latents(const LatentDataset& ds, double pca_threshold,
                                std::size_t shared_dim, double holdout_frac) {
    AnalyzedLatents out;
    out.flat = flatten(ds);
    const PcaTransform own = pca_fit(out.flat, pca_threshold);
    out.pca_dim_own = own.output_dim;
    const PcaTransform aligned = pca_fit(out.flat, pca_threshold, shared_dim);
    const Mat reduced = pca_apply(aligned, out.flat);
    auto [standardized, stats] = standardize_fit_apply(reduced);
    (void)stats;
    const std::size_t holdout = static_cast<std::size_t>(
        std::llround(holdout_frac * static_cast<double>(standardized.rows)));
    const std::size_t train_n = standardized.rows - holdout;
    out.std_train = Mat(train_n, standardized.cols);
    out.std_holdout = Mat(holdout, standardized.cols);
    std::copy(standardized.data.begin(),
              standardized.data.begin() + static_cast<long>(train_n * standardized.cols),
              out.std_train.data.begin());
    std::copy(standardized.data.begin() + static_cast<long>(train_n * standardized.cols),
              standardized.data.end(), out.std_holdout.data.begin());
    return out;
}

std::size_t smallest_k_reaching(const std::vector<NllSweepRow>& sweep, double target) {
    for (const auto& row : sweep)
        if (row.nll <= target + 1e-12) return row.k;
    return sweep.back().k;
}

} // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg, const std::string& out_dir,
                            std::ostream* progress) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    auto log = [&](const std::string& msg) {
        if (progress) (*progress) << "[pipeline] " << msg << std::endl;
    };

    log("generating " + std::to_string(cfg.n_images) + " toy images");
    const ToyImageSet data = gen_toy_dataset(cfg.n_images, cfg.data);

    MaeConfig masked_cfg = cfg.mae_base;
    MaeConfig plain_cfg = cfg.mae_base;
    plain_cfg.mask_low = 0.0;
    plain_cfg.mask_high = 0.0;
    plain_cfg.aux_targets.clear();

    RngStream master(cfg.seed, 0x706c6e65ULL);

    log("training mask-modeling tokenizer");
    MaeModel masked = mae_init(masked_cfg);
    RngStream rng_masked = master.substream(1);
    train_mae(masked, data, cfg.tokenizer_train, rng_masked);

    log("training plain autoencoder");
    MaeModel plain = mae_init(plain_cfg);
    RngStream rng_plain = master.substream(2);
    train_mae(plain, data, cfg.tokenizer_train, rng_plain);

    log("exporting latents");
    const LatentDataset lat_masked = export_latents(masked, data.pixels, data.labels);
    const LatentDataset lat_plain = export_latents(plain, data.pixels, data.labels);

    // Comparison mode: one shared PCA dimension (the max of the per-dataset
    // 90% dims) so the NLL scales are comparable.
    const Mat flat_masked = flatten(lat_masked);
    const Mat flat_plain = flatten(lat_plain);
    const std::size_t dim_masked = pca_fit(flat_masked, cfg.pca_threshold).output_dim;
    const std::size_t dim_plain = pca_fit(flat_plain, cfg.pca_threshold).output_dim;
    const std::size_t shared_dim = std::max(dim_masked, dim_plain);
    log("latent PCA dims: masked=" + std::to_string(dim_masked) +
        " plain=" + std::to_string(dim_plain) + " shared=" + std::to_string(shared_dim));

    PipelineResult result;
    result.shared_dim = shared_dim;

    struct Side {
        const char* name;
        MaeModel* model;
        const LatentDataset* latents;
        TokenizerReport* report;
        std::uint64_t stream;
    };
    result.masked.name = "masked";
    result.plain.name = "plain";
    Side sides[2] = {{"masked", &masked, &lat_masked, &result.masked, 10},
                     {"plain", &plain, &lat_plain, &result.plain, 20}};

    for (auto& side : sides) {
        log(std::string(side.name) + ": preprocessing + GMM sweep");
        AnalyzedLatents an =
            analyze_latents(*side.latents, cfg.pca_threshold, shared_dim, cfg.holdout_frac);
        side.report->pca_dim_own = an.pca_dim_own;

        EmConfig em = cfg.em;
        side.report->sweep = nll_sweep(an.std_train, cfg.k_list, em);

        log(std::string(side.name) + ": GMM-score diffusion training");
        TrainConfig tc;
        tc.k = cfg.score_k;
        tc.n_samples = an.std_train.rows;
        tc.batch = an.std_train.rows;
        tc.iters = cfg.score_iters;
        tc.lr = cfg.score_lr;
        tc.t_fixed = cfg.score_t;
        tc.init_kind = ScoreInit::perturbed;
        RngStream train_rng = master.substream(side.stream + 1);
        const TrainResult trained = train_scorenet(an.std_train, std::nullopt, tc, train_rng);
        const std::size_t window = std::min<std::size_t>(20, trained.trace.size());
        double dsm_avg = 0.0;
        for (std::size_t i = trained.trace.size() - window; i < trained.trace.size(); ++i)
            dsm_avg += trained.trace[i].loss;
        side.report->final_dsm = dsm_avg / static_cast<double>(window);

        log(std::string(side.name) + ": sampling + Frechet");
        const ScheduleTable sched = make_schedule(ScheduleKind::exp_decay, cfg.sched_steps,
                                                  cfg.sched_t_max, cfg.sched_delta, 1.0, shared_dim);
        RngStream sample_rng = master.substream(side.stream + 2);
        const Mat samples =
            sample_exp_integrator(make_scorenet_fn(trained.net), sched, cfg.sample_n, sample_rng);
        side.report->frechet_holdout = frechet_distance(samples, an.std_holdout);

        log(std::string(side.name) + ": linear probe");
        side.report->lp_accuracy =
            linear_probe(an.flat, *side.latents->labels, cfg.probe).accuracy;

        side.report->recon_mse = recon_metrics(*side.model, data.pixels).mse;
    }

    // NLL-at-K crossover: the target is the worse of the two largest-K fits.
    result.target_nll =
        std::max(result.masked.sweep.back().nll, result.plain.sweep.back().nll);
    result.masked.k_needed = smallest_k_reaching(result.masked.sweep, result.target_nll);
    result.plain.k_needed = smallest_k_reaching(result.plain.sweep, result.target_nll);

    result.pass_fewer_modes = result.masked.k_needed < result.plain.k_needed;
    result.pass_diffusion = result.masked.final_dsm < result.plain.final_dsm &&
                            result.masked.frechet_holdout < result.plain.frechet_holdout;
    result.pass_probe = result.masked.lp_accuracy > result.plain.lp_accuracy;

    // ---- reports ----
    std::vector<std::string> sweep_rows;
    for (const auto* rep : {&result.masked, &result.plain})
        for (const auto& row : rep->sweep)
            sweep_rows.push_back(rep->name + "," + std::to_string(row.k) + "," +
                                 format_g9(row.nll) + "," + (row.collapsed ? "1" : "0"));
    write_csv(out_dir + "/nll_sweep.csv", "tokenizer,k,nll,collapsed", sweep_rows);

    std::vector<std::string> summary_rows;
    for (const auto* rep : {&result.masked, &result.plain})
        summary_rows.push_back(rep->name + "," + std::to_string(rep->pca_dim_own) + "," +
                               std::to_string(result.shared_dim) + "," +
                               std::to_string(rep->k_needed) + "," + format_g9(result.target_nll) +
                               "," + format_g9(rep->final_dsm) + "," +
                               format_g9(rep->frechet_holdout) + "," +
                               format_g9(rep->lp_accuracy) + "," + format_g9(rep->recon_mse));
    write_csv(out_dir + "/pipeline_summary.csv",
              "tokenizer,pca_dim_own,shared_dim,k_needed,target_nll,final_dsm,"
              "frechet_holdout,lp_accuracy,recon_mse",
              summary_rows);

    nlohmann::json echo;
    echo["preset"] = "paper-fig2";
    echo["seed"] = cfg.seed;
    echo["n_images"] = cfg.n_images;
    echo["image_size"] = cfg.data.image_size;
    echo["tokenizer_steps"] = cfg.tokenizer_train.steps;
    echo["tokenizer_batch"] = cfg.tokenizer_train.batch;
    echo["tokenizer_lr"] = cfg.tokenizer_train.lr;
    echo["k_list"] = cfg.k_list;
    echo["pca_threshold"] = cfg.pca_threshold;
    echo["score_k"] = cfg.score_k;
    echo["score_iters"] = cfg.score_iters;
    echo["score_lr"] = cfg.score_lr;
    echo["score_t"] = cfg.score_t;
    echo["sample_n"] = cfg.sample_n;
    echo["sched_steps"] = cfg.sched_steps;
    echo["sched_t_max"] = cfg.sched_t_max;
    echo["sched_delta"] = cfg.sched_delta;
    echo["holdout_frac"] = cfg.holdout_frac;
    nlohmann::json summary;
    summary["config"] = echo;
    summary["run_id"] = run_id_hex(echo.dump());
    summary["pass_fewer_modes"] = result.pass_fewer_modes;
    summary["pass_diffusion"] = result.pass_diffusion;
    summary["pass_probe"] = result.pass_probe;
    summary["target_nll"] = result.target_nll;
    summary["k_needed_masked"] = result.masked.k_needed;
    summary["k_needed_plain"] = result.plain.k_needed;
    write_text_file(out_dir + "/pipeline_config.json", summary.dump(2) + "\n");

    log("done");
    return result;
}

} // namespace latlab
