#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mgvq/trainer.hpp"

namespace mgvq {

// Column-named table serialized as RFC 4180 CSV.
class ExperimentReport {
public:
    using Cell = std::variant<std::int64_t, double, std::string>;

    explicit ExperimentReport(std::vector<std::string> columns) : columns_(std::move(columns)) {}

    void add_row(std::vector<Cell> row);
    const std::vector<std::string>& columns() const { return columns_; }
    std::size_t rows() const { return rows_.size(); }
    const Cell& at(std::size_t row, const std::string& column) const;
    double number(std::size_t row, const std::string& column) const;

    void write_csv(std::ostream& out) const;
    std::string to_csv() const;

private:
    std::vector<std::string> columns_;
    std::vector<std::vector<Cell>> rows_;
};

// Procedural RGB images (gradient background plus a few flat rectangles
// and discs), values in [0, 1].
std::vector<nd::Tensor> synthetic_corpus(std::size_t count, std::size_t size, std::uint64_t seed);

// size x size grayscale-in-RGB images of one Gaussian bump whose center is
// drawn from a mixture of 8 Gaussians arranged on a ring.
std::vector<nd::Tensor> blob_samples(std::size_t count, std::size_t size, std::uint64_t seed);

struct DeadpointConfig {
    std::vector<std::pair<std::size_t, std::size_t>> cells;  // (sub_dim, K)
    std::size_t image_size = 8;
    std::size_t hidden_dim = 64;
    std::size_t depth = 1;
    std::size_t steps = 1500;
    std::size_t batch_size = 32;
    std::size_t train_samples = 4096;
    std::size_t eval_samples = 4096;
    double learning_rate = 2e-3;
    std::uint64_t seed = 0;
};

struct CodePoint {
    std::size_t sub_dim = 0, size = 0, index = 0;
    double x = 0, y = 0;
    std::uint64_t uses = 0;
};

struct DeadpointResult {
    ExperimentReport report{{"sub_dim", "K", "usage", "dead_fraction", "perplexity", "psnr", "loss"}};
    std::vector<CodePoint> points;  // every code of the sub_dim == 2 cells
};

// Trains one single-group quantizing autoencoder per cell and measures how
// many codes an evaluation pass never selects.
DeadpointResult run_deadpoint_experiment(const DeadpointConfig& cfg);
void write_code_points(std::ostream& out, const std::vector<CodePoint>& points);

// PSNR/SSIM for M_keep = 1..G on an evaluation set.
ExperimentReport run_mkeep_sweep(const Checkpoint& ckpt, std::span<const nd::Tensor> eval);

struct GridConfig {
    std::vector<std::pair<std::size_t, std::size_t>> cells;  // (G, K)
    TrainConfig base;  // latent_dim fixed across cells; groups/codebook_size/mask_probs overridden
    bool nested_masking = true;
};

// Identically budgeted training per (G, K) cell.
ExperimentReport run_ablation_grid(const GridConfig& cfg, const DatasetSplit& data);

}  // namespace mgvq
