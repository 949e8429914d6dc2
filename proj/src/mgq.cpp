#include "mgvq/mgq.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mgvq {

using nd::BasicTensor;

template <class T>
BasicCodebookSet<T> BasicCodebookSet<T>::init(std::size_t groups, std::size_t size, std::size_t sub_dim,
                                              std::uint64_t seed) {
    if (groups == 0 || size == 0 || sub_dim == 0)
        throw std::invalid_argument("codebook: groups, size and sub_dim must be positive");
    Rng rng(seed);
    BasicCodebookSet cb{groups, size, sub_dim, {}};
    const double a = 1.0 / static_cast<double>(size);
    for (std::size_t g = 0; g < groups; ++g) {
        std::vector<T> rows(size * sub_dim);
        for (auto& v : rows) v = static_cast<T>(rng.uniform(-a, a));
        cb.tables.emplace_back(nd::Shape{size, sub_dim}, std::move(rows), true);
    }
    return cb;
}

template <class T>
void BasicCodebookSet<T>::validate() const {
    if (tables.size() != groups) throw std::invalid_argument("codebook: table count differs from group count");
    for (const auto& t : tables)
        if (t.shape() != nd::Shape{size, sub_dim})
            throw nd::ShapeError("codebook: table shape " + nd::shape_str(t.shape()) + " expected " +
                                 nd::shape_str({size, sub_dim}));
}

template <class T>
void BasicCodebookSet<T>::zero_grad() {
    for (auto& t : tables) t.zero_grad();
}

void TokenMap::validate(std::size_t size) const {
    for (std::size_t g = 0; g < indices.size(); ++g) {
        if (indices[g].size() != grid_h * grid_w)
            throw std::invalid_argument("token map: group " + std::to_string(g) + " has " +
                                        std::to_string(indices[g].size()) + " entries, expected " +
                                        std::to_string(grid_h * grid_w));
        for (auto k : indices[g])
            if (k >= size)
                throw std::out_of_range("token map: index " + std::to_string(k) + " in group " + std::to_string(g) +
                                        " is not below codebook size " + std::to_string(size));
    }
}

void MaskSchedule::validate() const {
    if (probs.empty()) throw std::invalid_argument("mask schedule: empty");
    double total = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw std::invalid_argument("mask schedule: probabilities must be non-negative");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-6)
        throw std::invalid_argument("mask schedule: probabilities sum to " + std::to_string(total) + ", not 1");
}

MaskSchedule MaskSchedule::standard(std::size_t groups) {
    if (groups == 0) throw std::invalid_argument("mask schedule: groups must be positive");
    if (groups == 1) return {{1.0}};
    std::vector<double> p(groups, 0.3 / static_cast<double>(groups - 1));
    p.back() = 0.7;
    return {p};
}

MaskSchedule MaskSchedule::disabled(std::size_t groups) {
    if (groups == 0) throw std::invalid_argument("mask schedule: groups must be positive");
    std::vector<double> p(groups, 0.0);
    p.back() = 1.0;
    return {p};
}

template <class T>
std::vector<BasicTensor<T>> split_groups(const BasicTensor<T>& z, std::size_t groups) {
    const std::size_t width = z.shape().back();
    if (groups == 0 || width % groups != 0)
        throw nd::ShapeError("split_groups: latent width " + std::to_string(width) + " is not divisible by " +
                             std::to_string(groups) + " groups");
    const std::size_t sub = width / groups;
    std::vector<BasicTensor<T>> out;
    out.reserve(groups);
    for (std::size_t g = 0; g < groups; ++g) out.push_back(nd::slice_channels(z, g * sub, (g + 1) * sub));
    return out;
}

template <class T>
NearestCode nearest_code(std::span<const T> query, const BasicTensor<T>& table) {
    if (table.rank() != 2) throw nd::ShapeError("nearest_code: table must be K x d, got " + nd::shape_str(table.shape()));
    const std::size_t rows = table.dim(0), d = table.dim(1);
    if (d != query.size())
        throw nd::ShapeError("nearest_code: query width " + std::to_string(query.size()) + " vs table " +
                             nd::shape_str(table.shape()));
    NearestCode best{0, INFINITY};
    const T* row = table.data().data();
    for (std::size_t k = 0; k < rows; ++k, row += d) {
        double dist = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = static_cast<double>(query[j]) - static_cast<double>(row[j]);
            dist += diff * diff;
        }
        if (dist < best.sq_distance) best = {static_cast<std::uint32_t>(k), dist};
    }
    return best;
}

template <class T>
BasicTensor<T> lookup(std::span<const TokenMap> tokens, const BasicCodebookSet<T>& cb, bool batched) {
    if (tokens.empty()) throw std::invalid_argument("lookup: no token maps");
    if (!batched && tokens.size() != 1) throw std::invalid_argument("lookup: unbatched lookup takes one token map");
    const std::size_t gh = tokens[0].grid_h, gw = tokens[0].grid_w, B = tokens.size();
    for (const auto& t : tokens) {
        if (t.groups() != cb.groups)
            throw std::invalid_argument("lookup: token map has " + std::to_string(t.groups()) +
                                        " groups, codebook has " + std::to_string(cb.groups));
        if (t.grid_h != gh || t.grid_w != gw) throw std::invalid_argument("lookup: token maps differ in grid size");
        t.validate(cb.size);
    }
    const std::size_t sites = gh * gw, d = cb.sub_dim;
    nd::Shape lead = batched ? nd::Shape{B, gh, gw} : nd::Shape{gh, gw};
    nd::Shape part_shape = lead;
    part_shape.push_back(d);

    std::vector<BasicTensor<T>> parts;
    std::vector<std::uint32_t> idx(B * sites * d);
    for (std::size_t g = 0; g < cb.groups; ++g) {
        std::size_t k = 0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t s = 0; s < sites; ++s) {
                const std::uint32_t row = tokens[b].indices[g][s];
                for (std::size_t j = 0; j < d; ++j) idx[k++] = static_cast<std::uint32_t>(row * d + j);
            }
        parts.push_back(nd::gather<T>(cb.tables[g], idx, part_shape));
    }
    return cb.groups == 1 ? parts.front() : nd::concat_channels(parts);
}

template <class T>
QuantizeResult<T> quantize(const BasicTensor<T>& z, const BasicCodebookSet<T>& cb) {
    cb.validate();
    const auto& s = z.shape();
    if ((s.size() != 3 && s.size() != 4) || s.back() != cb.latent_dim())
        throw nd::ShapeError("quantize: latent " + nd::shape_str(s) + " incompatible with " +
                             std::to_string(cb.groups) + " groups of width " + std::to_string(cb.sub_dim));
    const bool batched = s.size() == 4;
    const std::size_t B = batched ? s[0] : 1, gh = s[s.size() - 3], gw = s[s.size() - 2];
    const std::size_t C = cb.latent_dim(), d = cb.sub_dim, sites = gh * gw;

    QuantizeResult<T> res;
    res.group_mse.assign(cb.groups, 0.0);
    res.tokens.assign(B, TokenMap{gh, gw, std::vector<std::vector<std::uint32_t>>(cb.groups, std::vector<std::uint32_t>(sites))});
    const T* base = z.data().data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t site = 0; site < sites; ++site) {
            const T* vec = base + (b * sites + site) * C;
            for (std::size_t g = 0; g < cb.groups; ++g) {
                auto nc = nearest_code<T>(std::span<const T>(vec + g * d, d), cb.tables[g]);
                res.tokens[b].indices[g][site] = nc.index;
                res.group_mse[g] += nc.sq_distance;
            }
        }
    for (auto& m : res.group_mse) m /= static_cast<double>(B * sites);
    res.z_q = lookup<T>(res.tokens, cb, batched);
    return res;
}

template <class T>
BasicTensor<T> straight_through(const BasicTensor<T>& z, const BasicTensor<T>& z_q) {
    if (z.shape() != z_q.shape())
        throw nd::ShapeError("straight_through: shape mismatch " + nd::shape_str(z.shape()) + " vs " +
                             nd::shape_str(z_q.shape()));
    return nd::substitute(z_q, z);
}

std::size_t sample_keep(const MaskSchedule& sched, Rng& rng) {
    sched.validate();
    const double u = rng.uniform01();
    double acc = 0.0;
    for (std::size_t i = 0; i < sched.probs.size(); ++i) {
        acc += sched.probs[i];
        if (u < acc) return i + 1;
    }
    // Rounding left u above the cumulative sum: take the last non-zero entry.
    for (std::size_t i = sched.probs.size(); i-- > 0;)
        if (sched.probs[i] > 0.0) return i + 1;
    return sched.probs.size();
}

template <class T>
BasicTensor<T> nested_mask(const BasicTensor<T>& z_q, std::size_t keep, std::size_t groups) {
    if (keep < 1 || keep > groups)
        throw std::out_of_range("nested_mask: M_keep " + std::to_string(keep) + " outside [1, " +
                                std::to_string(groups) + "]");
    const std::size_t width = z_q.shape().back();
    if (width % groups != 0)
        throw nd::ShapeError("nested_mask: width " + std::to_string(width) + " not divisible by " +
                             std::to_string(groups));
    if (keep == groups) return z_q;
    const std::size_t kept = keep * (width / groups);
    nd::Shape zero_shape = z_q.shape();
    zero_shape.back() = width - kept;
    return nd::concat_channels<T>({nd::slice_channels(z_q, 0, kept), BasicTensor<T>::zeros(zero_shape)});
}

double UsageStats::mean_usage() const {
    if (usage.empty()) return 0.0;
    return std::accumulate(usage.begin(), usage.end(), 0.0) / static_cast<double>(usage.size());
}

UsageCounter::UsageCounter(std::size_t size, std::size_t groups)
    : size_(size), counts_(groups, std::vector<std::uint64_t>(size, 0)) {}

void UsageCounter::add(const TokenMap& tokens) {
    if (tokens.groups() != counts_.size())
        throw std::invalid_argument("usage: token map has " + std::to_string(tokens.groups()) + " groups, expected " +
                                    std::to_string(counts_.size()));
    tokens.validate(size_);
    for (std::size_t g = 0; g < counts_.size(); ++g)
        for (auto k : tokens.indices[g]) ++counts_[g][k];
}

void UsageCounter::add(std::span<const TokenMap> tokens) {
    for (const auto& t : tokens) add(t);
}

UsageStats UsageCounter::stats() const {
    UsageStats st;
    for (const auto& c : counts_) {
        const double total = static_cast<double>(std::accumulate(c.begin(), c.end(), std::uint64_t{0}));
        std::size_t used = 0;
        double entropy = 0.0;
        for (auto n : c) {
            if (n == 0) continue;
            ++used;
            const double p = static_cast<double>(n) / total;
            entropy -= p * std::log(p);
        }
        st.usage.push_back(static_cast<double>(used) / static_cast<double>(size_));
        st.perplexity.push_back(std::exp(entropy));
    }
    return st;
}

UsageStats usage_stats(std::span<const TokenMap> history, std::size_t size, std::size_t groups) {
    if (history.empty()) throw std::invalid_argument("usage_stats: empty history");
    UsageCounter counter(size, groups);
    counter.add(history);
    return counter.stats();
}

double capacity_log2(std::uint64_t size, std::uint64_t groups) {
    if (size == 0 || groups == 0) throw std::invalid_argument("capacity_log2: K and G must be at least 1");
    return static_cast<double>(groups) * std::log2(static_cast<double>(size));
}

#define MGVQ_INSTANTIATE(T)                                                                                \
    template struct BasicCodebookSet<T>;                                                                   \
    template std::vector<BasicTensor<T>> split_groups(const BasicTensor<T>&, std::size_t);                 \
    template NearestCode nearest_code(std::span<const T>, const BasicTensor<T>&);                          \
    template QuantizeResult<T> quantize(const BasicTensor<T>&, const BasicCodebookSet<T>&);                \
    template BasicTensor<T> lookup(std::span<const TokenMap>, const BasicCodebookSet<T>&, bool);           \
    template BasicTensor<T> straight_through(const BasicTensor<T>&, const BasicTensor<T>&);                \
    template BasicTensor<T> nested_mask(const BasicTensor<T>&, std::size_t, std::size_t);

MGVQ_INSTANTIATE(float)
MGVQ_INSTANTIATE(double)

#undef MGVQ_INSTANTIATE

}  // namespace mgvq
