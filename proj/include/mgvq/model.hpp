#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mgvq/ndgrad.hpp"

namespace mgvq {

// Patch-MLP autoencoder. Each non-overlapping D x D x 3 patch is flattened
// and mapped to one C_l-dimensional latent site:
//   patch -> linear(hidden) -> lrelu -> [linear(hidden) -> lrelu] x depth -> linear(C_l)
// The decoder mirrors this and squashes its output with 0.5 * (tanh + 1).
struct ModelConfig {
    std::size_t downsample = 8;  // D, patch side in pixels
    std::size_t latent_dim = 32;
    std::size_t hidden_dim = 256;
    std::size_t depth = 2;

    std::size_t patch_dim() const { return downsample * downsample * 3; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Named parameters in insertion order.
template <class T>
class BasicParamSet {
public:
    void add(std::string name, nd::BasicTensor<T> tensor);
    const nd::BasicTensor<T>& at(const std::string& name) const;
    nd::BasicTensor<T>& at(const std::string& name);
    bool contains(const std::string& name) const;

    std::size_t size() const { return items_.size(); }
    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

    void zero_grad();
    std::size_t scalar_count() const;

private:
    std::vector<std::pair<std::string, nd::BasicTensor<T>>> items_;
};

using ParamSet = BasicParamSet<float>;

template <class To, class From>
BasicParamSet<To> cast_params(const BasicParamSet<From>& src) {
    BasicParamSet<To> out;
    for (const auto& [name, t] : src) out.add(name, nd::cast<To>(t));
    return out;
}

// Glorot-uniform weights, zero biases; bit-identical for equal seeds.
template <class T = float>
BasicParamSet<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

// image: H x W x 3 or B x H x W x 3 -> (B x) H/D x W/D x C_l
template <class T>
nd::BasicTensor<T> encode(const nd::BasicTensor<T>& image, const BasicParamSet<T>& params, const ModelConfig& cfg);

// latent: (B x) h x w x C_l -> (B x) hD x wD x 3, values in [0, 1]
template <class T>
nd::BasicTensor<T> decode(const nd::BasicTensor<T>& latent, const BasicParamSet<T>& params, const ModelConfig& cfg);

}  // namespace mgvq
