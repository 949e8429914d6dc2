#include "mgvq/model.hpp"

#include <cmath>
#include <stdexcept>

#include "mgvq/rng.hpp"

namespace mgvq {

using nd::BasicTensor;
using nd::Shape;

void ModelConfig::validate() const {
    if (downsample == 0 || latent_dim == 0 || hidden_dim == 0)
        throw std::invalid_argument("model config: downsample, latent_dim and hidden_dim must be positive");
}

template <class T>
void BasicParamSet<T>::add(std::string name, nd::BasicTensor<T> tensor) {
    if (contains(name)) throw std::invalid_argument("parameter '" + name + "' already exists");
    items_.emplace_back(std::move(name), std::move(tensor));
}

template <class T>
const nd::BasicTensor<T>& BasicParamSet<T>::at(const std::string& name) const {
    for (const auto& [n, t] : items_)
        if (n == name) return t;
    throw std::out_of_range("no parameter named '" + name + "'");
}

template <class T>
nd::BasicTensor<T>& BasicParamSet<T>::at(const std::string& name) {
    for (auto& [n, t] : items_)
        if (n == name) return t;
    throw std::out_of_range("no parameter named '" + name + "'");
}

template <class T>
bool BasicParamSet<T>::contains(const std::string& name) const {
    for (const auto& item : items_)
        if (item.first == name) return true;
    return false;
}

template <class T>
void BasicParamSet<T>::zero_grad() {
    for (auto& item : items_) item.second.zero_grad();
}

template <class T>
std::size_t BasicParamSet<T>::scalar_count() const {
    std::size_t n = 0;
    for (const auto& item : items_) n += item.second.numel();
    return n;
}

namespace {

struct Layer {
    std::string name;
    std::size_t in, out;
};

std::vector<Layer> layers(const ModelConfig& cfg, const std::string& side) {
    const bool enc = side == "enc";
    const std::size_t outer = enc ? cfg.patch_dim() : cfg.latent_dim;
    const std::size_t inner = enc ? cfg.latent_dim : cfg.patch_dim();
    std::vector<Layer> out;
    out.push_back({side + ".in", outer, cfg.hidden_dim});
    for (std::size_t i = 0; i < cfg.depth; ++i) out.push_back({side + ".h" + std::to_string(i), cfg.hidden_dim, cfg.hidden_dim});
    out.push_back({side + ".out", cfg.hidden_dim, inner});
    return out;
}

template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicParamSet<T>& params, const std::string& name) {
    const auto& w = params.at(name + ".w");
    const auto& b = params.at(name + ".b");
    const std::size_t rows = x.dim(0), width = w.dim(1);
    std::vector<std::uint32_t> tile(rows * width);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < width; ++j) tile[r * width + j] = static_cast<std::uint32_t>(j);
    return nd::add(nd::matmul(x, w), nd::gather<T>(b, tile, {rows, width}));
}

template <class T>
BasicTensor<T> mlp(BasicTensor<T> x, const BasicParamSet<T>& params, const std::vector<Layer>& ls) {
    for (std::size_t i = 0; i < ls.size(); ++i) {
        x = linear(x, params, ls[i].name);
        if (i + 1 < ls.size()) x = nd::leaky_relu(x);
    }
    return x;
}

}  // namespace

template <class T>
BasicParamSet<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    BasicParamSet<T> ps;
    for (const auto* side : {"enc", "dec"}) {
        for (const auto& l : layers(cfg, side)) {
            const double a = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
            std::vector<T> w(l.in * l.out);
            for (auto& v : w) v = static_cast<T>(rng.uniform(-a, a));
            ps.add(l.name + ".w", BasicTensor<T>({l.in, l.out}, std::move(w), true));
            ps.add(l.name + ".b", BasicTensor<T>::zeros({l.out}, true));
        }
    }
    return ps;
}

template <class T>
BasicTensor<T> encode(const BasicTensor<T>& image, const BasicParamSet<T>& params, const ModelConfig& cfg) {
    const auto& s = image.shape();
    const bool batched = s.size() == 4;
    if ((s.size() != 3 && s.size() != 4) || s.back() != 3)
        throw nd::ShapeError("encode: expected H x W x 3 or B x H x W x 3 image, got " + nd::shape_str(s));
    const std::size_t D = cfg.downsample;
    const std::size_t B = batched ? s[0] : 1, H = s[s.size() - 3], W = s[s.size() - 2];
    if (H % D != 0 || W % D != 0)
        throw nd::ShapeError("encode: image " + std::to_string(H) + "x" + std::to_string(W) +
                             " must have sides that are multiples of " + std::to_string(D));
    const std::size_t h = H / D, w = W / D, P = cfg.patch_dim();

    std::vector<std::uint32_t> idx(B * h * w * P);
    std::size_t k = 0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t gy = 0; gy < h; ++gy)
            for (std::size_t gx = 0; gx < w; ++gx)
                for (std::size_t py = 0; py < D; ++py)
                    for (std::size_t px = 0; px < D; ++px)
                        for (std::size_t c = 0; c < 3; ++c)
                            idx[k++] = static_cast<std::uint32_t>(((b * H + gy * D + py) * W + gx * D + px) * 3 + c);
    auto patches = nd::gather<T>(image, idx, {B * h * w, P});
    auto z = mlp(patches, params, layers(cfg, "enc"));
    return batched ? nd::reshape(z, {B, h, w, cfg.latent_dim}) : nd::reshape(z, {h, w, cfg.latent_dim});
}

template <class T>
BasicTensor<T> decode(const BasicTensor<T>& latent, const BasicParamSet<T>& params, const ModelConfig& cfg) {
    const auto& s = latent.shape();
    const bool batched = s.size() == 4;
    if ((s.size() != 3 && s.size() != 4) || s.back() != cfg.latent_dim)
        throw nd::ShapeError("decode: expected (B x) h x w x " + std::to_string(cfg.latent_dim) + " latent, got " +
                             nd::shape_str(s));
    const std::size_t D = cfg.downsample, P = cfg.patch_dim();
    const std::size_t B = batched ? s[0] : 1, h = s[s.size() - 3], w = s[s.size() - 2];
    auto rows = nd::reshape(latent, {B * h * w, cfg.latent_dim});
    auto out = mlp(rows, params, layers(cfg, "dec"));
    out = nd::add_scalar(nd::scale(nd::tanh(out), 0.5), 0.5);

    const std::size_t H = h * D, W = w * D;
    std::vector<std::uint32_t> idx(B * H * W * 3);
    std::size_t k = 0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                for (std::size_t c = 0; c < 3; ++c) {
                    const std::size_t row = (b * h + y / D) * w + x / D;
                    const std::size_t col = ((y % D) * D + x % D) * 3 + c;
                    idx[k++] = static_cast<std::uint32_t>(row * P + col);
                }
    return batched ? nd::gather<T>(out, idx, {B, H, W, 3}) : nd::gather<T>(out, idx, {H, W, 3});
}

template class BasicParamSet<float>;
template class BasicParamSet<double>;
template BasicParamSet<float> init_params<float>(const ModelConfig&, std::uint64_t);
template BasicParamSet<double> init_params<double>(const ModelConfig&, std::uint64_t);
template BasicTensor<float> encode(const BasicTensor<float>&, const BasicParamSet<float>&, const ModelConfig&);
template BasicTensor<double> encode(const BasicTensor<double>&, const BasicParamSet<double>&, const ModelConfig&);
template BasicTensor<float> decode(const BasicTensor<float>&, const BasicParamSet<float>&, const ModelConfig&);
template BasicTensor<double> decode(const BasicTensor<double>&, const BasicParamSet<double>&, const ModelConfig&);

}  // namespace mgvq
