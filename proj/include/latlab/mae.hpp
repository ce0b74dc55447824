#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "latlab/autodiff.hpp"
#include "latlab/latent.hpp"
#include "latlab/mat.hpp"
#include "latlab/rng.hpp"
#include "latlab/toydata.hpp"

namespace latlab {

enum class AuxTarget { pixel, hog };

const char* aux_target_name(AuxTarget t);
AuxTarget aux_target_from_name(const std::string& name);

struct MaeConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 4;   // N = (image_size/patch_size)^2 patches
    std::size_t embed_dim = 64;
    std::size_t latent_tokens = 16; // L; production-scale models use 128
    std::size_t latent_dim = 8;     // H; production-scale models use 32
    std::size_t enc_layers = 4;
    std::size_t dec_layers = 4;
    std::size_t aux_dec_layers = 2; // production-scale ablation optimum is 3
    std::size_t heads = 4;          // head dim must be divisible by 4 (2D RoPE)
    double mask_low = 0.40;
    double mask_high = 0.60;
    // Loss weights for the perceptual and adversarial terms. Both terms are
    // zero stubs here (they need pretrained/adversarial nets), so the weights
    // are carried but multiply nothing.
    double lambda1 = 1.0;
    double lambda2 = 0.4;
    std::vector<AuxTarget> aux_targets = {AuxTarget::hog};
    std::uint64_t seed = 0;

    std::size_t patches_per_side() const { return image_size / patch_size; }
    std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
    std::size_t patch_dim() const { return patch_size * patch_size * 3; }
    void validate() const;
};

struct MaskSpec {
    std::vector<std::uint8_t> indicator; // length N, 1 = masked
    double ratio = 0.0;
    std::vector<std::size_t> masked; // sorted indices

    static MaskSpec none(std::size_t n_patches);
};

// ratio ~ U[mask_low, mask_high]; exactly round(ratio*N) positions masked,
// uniformly without replacement. Latent tokens are never masked.
MaskSpec mask_sample(std::size_t n_patches, const MaeConfig& cfg, RngStream& rng);

struct MaeModel {
    MaeConfig cfg;
    std::map<std::string, ad::Tensor> params; // named parameter table

    ad::Tensor& p(const std::string& name);
    const ad::Tensor& p(const std::string& name) const;
};

MaeModel mae_init(const MaeConfig& cfg);

// (B, L, H) latent representations; masked patch embeddings are replaced by
// the learnable mask token before the encoder runs.
ad::Tensor encode(MaeModel& model, const Mat& images, const MaskSpec& mask);
// (B, N, P^2*3) reconstructed patches from the decoder's image-token outputs.
ad::Tensor decode_pixels(MaeModel& model, const ad::Tensor& h);
// (B, N, target_dim) prediction of auxiliary target j.
ad::Tensor decode_aux(MaeModel& model, std::size_t aux_index, const ad::Tensor& h);

std::size_t aux_target_dim(const MaeConfig& cfg, AuxTarget t);
// Ground-truth feature targets for one batch: (B, N, target_dim).
std::vector<double> aux_target_values(const MaeConfig& cfg, AuxTarget t, const Mat& images);

struct MaeLossOut {
    ad::Tensor total;
    double recon = 0.0;
    double mask_loss = 0.0;
};

// recon = MSE over all pixels; mask_loss = per-aux-target MSE restricted to
// masked token positions (mean over masked count x feature dim x batch).
MaeLossOut mae_loss(MaeModel& model, const Mat& images, const MaskSpec& mask);

struct MaeTrainConfig {
    std::size_t steps = 800;
    std::size_t batch = 32;
    double lr = 2e-3;
    double weight_decay = 1e-4;
    double warmup_frac = 0.02; // cosine schedule after a linear warmup
    std::uint64_t seed = 0;
};

struct MaeTrainLogRow {
    std::size_t step;
    double recon;
    double mask_loss;
    double lr;
    double ratio;
};

std::vector<MaeTrainLogRow> train_mae(MaeModel& model, const ToyImageSet& data,
                                      const MaeTrainConfig& cfg, RngStream& rng);

// Frozen-encoder decoder fine-tune; mask ratio decays linearly from
// cfg.mask_high to 0 over the steps, auxiliary decoders are excluded.
std::vector<MaeTrainLogRow> finetune_decoder(MaeModel& model, const ToyImageSet& data,
                                             const MaeTrainConfig& cfg, RngStream& rng);

// Zero-mask encoding of every image; batched forward passes.
LatentDataset export_latents(MaeModel& model, const Mat& images,
                             const std::optional<std::vector<std::uint32_t>>& labels);

// Zero-mask reconstruction in image pixel layout.
Mat reconstruct(MaeModel& model, const Mat& images);

struct ReconMetrics {
    double mse;
    double psnr;          // 10*log10(1/mse) for [0,1] images, capped at 99 dB
    double pixel_frechet; // moment Frechet distance on flattened pixels
};

ReconMetrics recon_metrics(MaeModel& model, const Mat& images);

// Versioned binary checkpoint: config echo plus a named parameter table
// (name, shape, float64 payload).
void save_checkpoint(const std::string& path, const MaeModel& model);
MaeModel load_checkpoint(const std::string& path);

// Byte image of the encoder-side parameters (used by the freeze contract).
std::vector<double> encoder_param_snapshot(const MaeModel& model);

} // namespace latlab
