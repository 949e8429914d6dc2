#include "mgvq/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "mgvq/image_io.hpp"

namespace mgvq {

// ---------------------------------------------------------------- report

void ExperimentReport::add_row(std::vector<Cell> row) {
    if (row.size() != columns_.size())
        throw std::invalid_argument("report row has " + std::to_string(row.size()) + " cells for " +
                                    std::to_string(columns_.size()) + " columns");
    rows_.push_back(std::move(row));
}

const ExperimentReport::Cell& ExperimentReport::at(std::size_t row, const std::string& column) const {
    const auto it = std::find(columns_.begin(), columns_.end(), column);
    if (it == columns_.end()) throw std::out_of_range("report has no column '" + column + "'");
    return rows_.at(row)[static_cast<std::size_t>(it - columns_.begin())];
}

double ExperimentReport::number(std::size_t row, const std::string& column) const {
    const Cell& c = at(row, column);
    if (const auto* i = std::get_if<std::int64_t>(&c)) return static_cast<double>(*i);
    if (const auto* d = std::get_if<double>(&c)) return *d;
    throw std::invalid_argument("report cell '" + column + "' is not numeric");
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

std::string format_cell(const ExperimentReport::Cell& c) {
    if (const auto* i = std::get_if<std::int64_t>(&c)) return std::to_string(*i);
    if (const auto* d = std::get_if<double>(&c)) {
        std::ostringstream os;
        os << std::setprecision(10) << *d;
        return os.str();
    }
    return std::get<std::string>(c);
}

}  // namespace

void ExperimentReport::write_csv(std::ostream& out) const {
    for (std::size_t i = 0; i < columns_.size(); ++i) out << (i ? "," : "") << csv_field(columns_[i]);
    out << "\r\n";
    for (const auto& row : rows_) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << csv_field(format_cell(row[i]));
        out << "\r\n";
    }
}

std::string ExperimentReport::to_csv() const {
    std::ostringstream os;
    write_csv(os);
    return os.str();
}

// ---------------------------------------------------------------- synthetic data

std::vector<nd::Tensor> synthetic_corpus(std::size_t count, std::size_t size, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<nd::Tensor> out;
    out.reserve(count);
    const double s = static_cast<double>(size);
    for (std::size_t n = 0; n < count; ++n) {
        double c0[3], c1[3];
        for (int c = 0; c < 3; ++c) c0[c] = rng.uniform(0.1, 0.9), c1[c] = rng.uniform(0.1, 0.9);
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double gx = std::cos(angle), gy = std::sin(angle);
        std::vector<float> px(size * size * 3);
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                const double t = 0.5 + 0.5 * ((x / s - 0.5) * gx + (y / s - 0.5) * gy) * 1.4;
                for (int c = 0; c < 3; ++c)
                    px[(y * size + x) * 3 + c] = static_cast<float>(c0[c] + (c1[c] - c0[c]) * std::clamp(t, 0.0, 1.0));
            }
        const std::size_t shapes = 1 + rng.below(3);
        for (std::size_t k = 0; k < shapes; ++k) {
            double col[3];
            for (auto& v : col) v = rng.uniform(0.0, 1.0);
            const double cx = rng.uniform(0.0, s), cy = rng.uniform(0.0, s);
            const double rx = rng.uniform(0.1 * s, 0.35 * s), ry = rng.uniform(0.1 * s, 0.35 * s);
            const bool disc = rng.uniform01() < 0.5;
            for (std::size_t y = 0; y < size; ++y)
                for (std::size_t x = 0; x < size; ++x) {
                    const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
                    const bool inside = disc ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
                    if (!inside) continue;
                    for (int c = 0; c < 3; ++c) px[(y * size + x) * 3 + c] = static_cast<float>(col[c]);
                }
        }
        out.emplace_back(nd::Shape{size, size, 3}, std::move(px));
    }
    return out;
}

std::vector<nd::Tensor> blob_samples(std::size_t count, std::size_t size, std::uint64_t seed) {
    constexpr int kModes = 8;
    constexpr double kRing = 0.22, kModeSigma = 0.07;
    Rng rng(seed);
    const double s = static_cast<double>(size);
    const double width = 0.18 * s;  // bump radius in pixels
    std::vector<nd::Tensor> out;
    out.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
        const auto mode = static_cast<double>(rng.below(kModes));
        const double a = 2.0 * std::numbers::pi * mode / kModes;
        const double u = 0.5 + kRing * std::cos(a) + kModeSigma * rng.normal();
        const double v = 0.5 + kRing * std::sin(a) + kModeSigma * rng.normal();
        const double cx = u * s, cy = v * s;
        std::vector<float> px(size * size * 3);
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                const auto val = static_cast<float>(std::exp(-(dx * dx + dy * dy) / (2.0 * width * width)));
                for (int c = 0; c < 3; ++c) px[(y * size + x) * 3 + c] = val;
            }
        out.emplace_back(nd::Shape{size, size, 3}, std::move(px));
    }
    return out;
}

// ---------------------------------------------------------------- dead points

namespace {

double tail_mean_loss(const std::vector<StepLog>& log) {
    if (log.empty()) return 0.0;
    const std::size_t n = std::min<std::size_t>(50, log.size());
    double s = 0.0;
    for (std::size_t i = log.size() - n; i < log.size(); ++i) s += log[i].losses.total;
    return s / static_cast<double>(n);
}

}  // namespace

DeadpointResult run_deadpoint_experiment(const DeadpointConfig& cfg) {
    auto cells = cfg.cells;
    std::sort(cells.begin(), cells.end());
    cells.erase(std::unique(cells.begin(), cells.end()), cells.end());

    DatasetSplit data{blob_samples(cfg.train_samples, cfg.image_size, cfg.seed),
                      blob_samples(cfg.eval_samples, cfg.image_size, cfg.seed + 1)};
    DeadpointResult res;
    for (const auto& [dim, size] : cells) {
        TrainConfig tc;
        tc.model = {cfg.image_size, dim, cfg.hidden_dim, cfg.depth};
        tc.image_size = cfg.image_size;
        tc.groups = 1;
        tc.codebook_size = size;
        tc.mask_probs = {1.0};
        tc.learning_rate = cfg.learning_rate;
        tc.batch_size = cfg.batch_size;
        tc.steps = cfg.steps;
        tc.seed = cfg.seed;
        tc.eval_every = 0;
        const auto fitted = fit(tc, data);
        const Checkpoint& ck = fitted.checkpoint;

        const EvalResult ev = evaluate(ck, data.eval);
        UsageCounter counter(size, 1);
        for (std::size_t start = 0; start < data.eval.size(); start += 256) {
            const std::size_t end = std::min(data.eval.size(), start + 256);
            const auto batch = stack_images(std::span<const nd::Tensor>(data.eval).subspan(start, end - start));
            counter.add(reconstruct(ck, batch).tokens);
        }
        const UsageStats st = counter.stats();
        res.report.add_row({static_cast<std::int64_t>(dim), static_cast<std::int64_t>(size), st.usage[0], 1.0 - st.usage[0],
                            st.perplexity[0], ev.psnr, tail_mean_loss(fitted.log)});
        if (dim == 2) {
            const auto table = ck.codebooks.tables[0].data();
            const auto uses = counter.counts(0);
            for (std::size_t k = 0; k < size; ++k)
                res.points.push_back({dim, size, k, table[2 * k], table[2 * k + 1], uses[k]});
        }
    }
    return res;
}

void write_code_points(std::ostream& out, const std::vector<CodePoint>& points) {
    ExperimentReport r({"sub_dim", "K", "index", "x", "y", "uses", "used"});
    for (const auto& p : points)
        r.add_row({static_cast<std::int64_t>(p.sub_dim), static_cast<std::int64_t>(p.size), static_cast<std::int64_t>(p.index),
                   p.x, p.y, static_cast<std::int64_t>(p.uses), static_cast<std::int64_t>(p.uses > 0)});
    r.write_csv(out);
}

// ---------------------------------------------------------------- sweeps

ExperimentReport run_mkeep_sweep(const Checkpoint& ckpt, std::span<const nd::Tensor> eval) {
    ExperimentReport r({"G", "K", "M_keep", "psnr", "ssim"});
    for (std::size_t keep = 1; keep <= ckpt.config.groups; ++keep) {
        const auto ev = evaluate(ckpt, eval, keep);
        r.add_row({static_cast<std::int64_t>(ckpt.config.groups), static_cast<std::int64_t>(ckpt.config.codebook_size),
                   static_cast<std::int64_t>(keep), ev.psnr, ev.ssim});
    }
    return r;
}

ExperimentReport run_ablation_grid(const GridConfig& cfg, const DatasetSplit& data) {
    auto cells = cfg.cells;
    std::sort(cells.begin(), cells.end());
    cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
    ExperimentReport r({"G", "K", "sub_dim", "capacity_log2", "psnr", "ssim", "usage", "loss"});
    for (const auto& [groups, size] : cells) {
        TrainConfig tc = cfg.base;
        tc.groups = groups;
        tc.codebook_size = size;
        tc.mask_probs = cfg.nested_masking ? MaskSchedule::standard(groups).probs : MaskSchedule::disabled(groups).probs;
        tc.validate();
        const auto fitted = fit(tc, data);
        const auto ev = evaluate(fitted.checkpoint, data.eval);
        r.add_row({static_cast<std::int64_t>(groups), static_cast<std::int64_t>(size),
                   static_cast<std::int64_t>(tc.model.latent_dim / groups), capacity_log2(size, groups), ev.psnr, ev.ssim,
                   ev.usage.mean_usage(), tail_mean_loss(fitted.log)});
    }
    return r;
}

}  // namespace mgvq
