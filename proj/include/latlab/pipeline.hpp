#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "latlab/diffusion.hpp"
#include "latlab/gmm.hpp"
#include "latlab/latent.hpp"
#include "latlab/mae.hpp"
#include "latlab/toydata.hpp"

namespace latlab {

// End-to-end comparison of a mask-trained tokenizer against an identically
// sized plain autoencoder: latent GMM mode sweep, GMM-score diffusion
// training + sampling, and linear probing, all under one seed.
struct PipelineConfig {
    std::size_t n_images = 5000;
    ToyDataConfig data{};
    MaeConfig mae_base{};        // masked variant uses this as-is
    MaeTrainConfig tokenizer_train{};
    std::vector<std::size_t> k_list{1, 2, 4, 8, 16, 32};
    EmConfig em{};
    double pca_threshold = 0.90;
    double holdout_frac = 0.2;

    std::size_t score_k = 12;
    std::size_t score_iters = 400;
    double score_lr = 0.3;
    double score_t = 0.30;
    std::size_t sample_n = 4000;
    std::size_t sched_steps = 100;
    double sched_t_max = 3.0;
    double sched_delta = 0.02;

    ProbeConfig probe{};
    std::uint64_t seed = 2024;
};

PipelineConfig paper_fig2_preset();

struct TokenizerReport {
    std::string name;
    std::size_t pca_dim_own = 0;     // 90%-variance dimension before alignment
    std::vector<NllSweepRow> sweep;
    std::size_t k_needed = 0;        // smallest K reaching the target NLL
    double final_dsm = 0.0;          // averaged over the last trace window
    double frechet_holdout = 0.0;
    double lp_accuracy = 0.0;
    double recon_mse = 0.0;
};

struct PipelineResult {
    TokenizerReport masked;
    TokenizerReport plain;
    double target_nll = 0.0;
    std::size_t shared_dim = 0; // comparison-mode PCA dimension (max of the two)
    bool pass_fewer_modes = false;
    bool pass_diffusion = false;
    bool pass_probe = false;
};

// Runs the full chain and writes nll_sweep.csv, pipeline_summary.csv and
// pipeline_config.json under out_dir. progress may be null.
PipelineResult run_pipeline(const PipelineConfig& cfg, const std::string& out_dir,
                            std::ostream* progress);

} // namespace latlab
