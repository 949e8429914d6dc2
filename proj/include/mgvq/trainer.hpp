#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mgvq/mgq.hpp"
#include "mgvq/model.hpp"
#include "mgvq/objectives.hpp"
#include "mgvq/rng.hpp"

namespace mgvq {

struct TrainConfig {
    // AdamW with a constant learning rate.
    double learning_rate = 1e-5;
    double weight_decay = 5e-2;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;

    std::size_t batch_size = 8;
    std::size_t steps = 1000;
    std::uint64_t seed = 0;

    ModelConfig model;
    std::size_t groups = 4;
    std::size_t codebook_size = 64;
    // Empty means MaskSchedule::standard(groups).
    std::vector<double> mask_probs;
    LossWeights weights;

    std::size_t image_size = 32;
    std::size_t eval_every = 100;  // held-out PSNR cadence in steps; 0 disables

    MaskSchedule schedule() const;
    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

nlohmann::json config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const nlohmann::json& j);

struct OptState {
    std::vector<std::vector<float>> m;  // first moments, one per trainable tensor
    std::vector<std::vector<float>> v;  // second moments
    std::uint64_t step = 0;
};

// Complete training state. Reloading one and continuing reproduces the
// uninterrupted run bit for bit.
struct Checkpoint {
    TrainConfig config;
    ParamSet params;
    CodebookSet codebooks;
    OptState opt;
    std::uint64_t step = 0;
    Rng rng;
};

struct NamedTensor {
    std::string name;
    nd::Tensor tensor;  // shares storage with the owner
};

// Model parameters followed by "codebook.<g>" tables, in a fixed order.
std::vector<NamedTensor> trainable(const Checkpoint& ckpt);

Checkpoint initialize(const TrainConfig& cfg);

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint8_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

// Decodes PNG files from `dir` in a seed-shuffled order, center-crops and
// resizes them to image_size. Unreadable files are skipped with a warning
// on stderr; zero usable images throws.
std::vector<nd::Tensor> load_dataset(const std::filesystem::path& dir, std::size_t max_items, std::uint64_t seed,
                                     std::size_t image_size);

// Held-out split: the last 10% (at least one image when there are two or more).
struct DatasetSplit {
    std::vector<nd::Tensor> train;
    std::vector<nd::Tensor> eval;
};
DatasetSplit split_dataset(std::vector<nd::Tensor> images);

// Decoupled weight decay then bias-corrected Adam. Missing gradients count
// as zero. Any NaN gradient rejects the whole step before anything changes.
void adamw_step(std::span<NamedTensor> params, OptState& state, const TrainConfig& cfg);

struct StepResult {
    LossBreakdown losses;
    std::size_t keep = 0;
    UsageStats usage;  // over this batch
};

// encode -> quantize -> straight-through -> nested mask -> decode -> loss
// -> backward -> AdamW. M_keep is drawn from the checkpoint's generator
// unless forced.
StepResult train_step(std::span<const nd::Tensor> batch, Checkpoint& ckpt,
                      std::optional<std::size_t> forced_keep = std::nullopt);

struct Reconstruction {
    nd::Tensor images;  // B x H x W x 3
    std::vector<TokenMap> tokens;
};

// Inference path; keep defaults to every group.
Reconstruction reconstruct(const Checkpoint& ckpt, const nd::Tensor& batch,
                           std::optional<std::size_t> keep = std::nullopt);

struct EvalResult {
    double psnr = 0.0;  // mean over images
    double ssim = 0.0;
    std::vector<double> image_psnr;
    UsageStats usage;
};

EvalResult evaluate(const Checkpoint& ckpt, std::span<const nd::Tensor> images,
                    std::optional<std::size_t> keep = std::nullopt);

struct StepLog {
    std::uint64_t step = 0;
    std::size_t keep = 0;
    LossBreakdown losses;
    std::vector<double> usage;
    std::optional<double> psnr;

    nlohmann::json to_json() const;
};

struct FitResult {
    Checkpoint checkpoint;
    std::vector<StepLog> log;
};

// Runs train steps until the checkpoint reaches cfg.steps, starting from
// `resume` when given. Each step appends one JSON line to `log_out` (when
// given); a failed write stops training with the lines so far intact.
FitResult fit(const TrainConfig& cfg, const DatasetSplit& data, std::ostream* log_out = nullptr,
              std::optional<Checkpoint> resume = std::nullopt);

}  // namespace mgvq
