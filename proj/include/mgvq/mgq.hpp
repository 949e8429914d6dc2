#pragma once

// Multi-group vector quantization.
//
// A latent site of width C_l is split into G contiguous sub-tokens of width
// C_l / G. Sub-token i is replaced by its Euclidean nearest row in the i-th
// sub-codebook (K rows each, no sharing between groups) and the quantized
// sub-tokens are concatenated back in group order. The representable
// combinations per site grow as K^G while each table stays small.

#include <cstdint>
#include <span>
#include <vector>

#include "mgvq/ndgrad.hpp"
#include "mgvq/rng.hpp"

namespace mgvq {

template <class T>
struct BasicCodebookSet {
    std::size_t groups = 0;
    std::size_t size = 0;     // K
    std::size_t sub_dim = 0;  // C_l / G
    std::vector<nd::BasicTensor<T>> tables;  // G tensors of K x sub_dim

    // Rows drawn from uniform(-1/K, 1/K), one independent table per group.
    static BasicCodebookSet init(std::size_t groups, std::size_t size, std::size_t sub_dim, std::uint64_t seed);

    std::size_t latent_dim() const { return groups * sub_dim; }
    void validate() const;
    void zero_grad();
};

using CodebookSet = BasicCodebookSet<float>;

template <class To, class From>
BasicCodebookSet<To> cast_codebooks(const BasicCodebookSet<From>& cb) {
    BasicCodebookSet<To> out{cb.groups, cb.size, cb.sub_dim, {}};
    for (const auto& t : cb.tables) out.tables.push_back(nd::cast<To>(t));
    return out;
}

// Per-group index grids, each grid_h x grid_w in row-major order.
struct TokenMap {
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::vector<std::vector<std::uint32_t>> indices;  // [group][row * grid_w + col]

    std::size_t groups() const { return indices.size(); }
    std::uint32_t at(std::size_t group, std::size_t row, std::size_t col) const {
        return indices[group][row * grid_w + col];
    }
    // Throws unless every group has grid_h * grid_w entries, all < size.
    void validate(std::size_t size) const;
    bool operator==(const TokenMap&) const = default;
};

struct MaskSchedule {
    std::vector<double> probs;  // probs[i] = P(M_keep = i + 1)

    void validate() const;
    // {0.1, 0.1, 0.1, 0.7} for G = 4; in general 0.3 spread evenly over
    // the first G - 1 entries and 0.7 on keeping every group.
    static MaskSchedule standard(std::size_t groups);
    // M_keep = G always.
    static MaskSchedule disabled(std::size_t groups);
};

// Channel slices [i*C/G, (i+1)*C/G) of the last axis.
template <class T>
std::vector<nd::BasicTensor<T>> split_groups(const nd::BasicTensor<T>& z, std::size_t groups);

struct NearestCode {
    std::uint32_t index = 0;
    double sq_distance = 0.0;
};

// Exhaustive Euclidean argmin; ties resolve to the lowest index.
template <class T>
NearestCode nearest_code(std::span<const T> query, const nd::BasicTensor<T>& table);

template <class T>
struct QuantizeResult {
    nd::BasicTensor<T> z_q;          // same shape as z; differentiable w.r.t. the tables
    std::vector<TokenMap> tokens;    // one per batch item (one for an unbatched z)
    std::vector<double> group_mse;   // mean squared distance per group over all sites
};

// z: h x w x C_l or B x h x w x C_l.
template <class T>
QuantizeResult<T> quantize(const nd::BasicTensor<T>& z, const BasicCodebookSet<T>& cb);

// Rebuilds quantized latents from tokens (B x h x w x C_l when batched).
template <class T>
nd::BasicTensor<T> lookup(std::span<const TokenMap> tokens, const BasicCodebookSet<T>& cb, bool batched);

// Forward value of z_q, gradient passed unchanged to z.
template <class T>
nd::BasicTensor<T> straight_through(const nd::BasicTensor<T>& z, const nd::BasicTensor<T>& z_q);

std::size_t sample_keep(const MaskSchedule& sched, Rng& rng);

// Zeroes the channels of groups keep+1..G. keep == G returns z_q itself.
template <class T>
nd::BasicTensor<T> nested_mask(const nd::BasicTensor<T>& z_q, std::size_t keep, std::size_t groups);

struct UsageStats {
    std::vector<double> usage;       // distinct indices seen / K, per group
    std::vector<double> perplexity;  // exp(entropy) of the index histogram, per group

    double mean_usage() const;
};

UsageStats usage_stats(std::span<const TokenMap> history, std::size_t size, std::size_t groups);

// Running per-group index histograms.
class UsageCounter {
public:
    UsageCounter(std::size_t size, std::size_t groups);
    void add(const TokenMap& tokens);
    void add(std::span<const TokenMap> tokens);
    UsageStats stats() const;
    // Row use counts of one group.
    std::span<const std::uint64_t> counts(std::size_t group) const { return counts_[group]; }

private:
    std::size_t size_;
    std::vector<std::vector<std::uint64_t>> counts_;
};

// log2 of K^G.
double capacity_log2(std::uint64_t size, std::uint64_t groups);

}  // namespace mgvq
