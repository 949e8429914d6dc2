#pragma once

#include <functional>

#include "mgvq/ndgrad.hpp"

namespace mgvq {

// Weights of the six-term training objective
//   total = l1*l2 + l2*charbonnier + l3*commit + l4*vq + l5*gan + l6*perceptual
struct LossWeights {
    double l2 = 2.0;
    double charbonnier = 1.0;
    double commit = 0.25;
    double vq = 1.0;
    double gan = 0.5;
    double perceptual = 1.0;
    double epsilon = 1e-3;  // Charbonnier smoothing constant

    void validate() const;
    bool operator==(const LossWeights&) const = default;
};

struct LossBreakdown {
    double l2 = 0, charbonnier = 0, commit = 0, vq = 0, gan = 0, perceptual = 0, total = 0;
};

// Scalar-valued extra terms computed from (reconstruction, target). An empty
// hook contributes zero.
template <class T>
struct BasicLossHooks {
    std::function<nd::BasicTensor<T>(const nd::BasicTensor<T>&, const nd::BasicTensor<T>&)> gan;
    std::function<nd::BasicTensor<T>(const nd::BasicTensor<T>&, const nd::BasicTensor<T>&)> perceptual;
};

template <class T>
struct LossResult {
    nd::BasicTensor<T> total;  // differentiable
    LossBreakdown parts;
};

// mean(sqrt(diff^2 + eps^2))
template <class T>
nd::BasicTensor<T> charbonnier(const nd::BasicTensor<T>& recon, const nd::BasicTensor<T>& target, double eps);

template <class T>
nd::BasicTensor<T> l2_loss(const nd::BasicTensor<T>& recon, const nd::BasicTensor<T>& target);

// mean((z - sg[z_q])^2); only z receives gradient.
template <class T>
nd::BasicTensor<T> commit_loss(const nd::BasicTensor<T>& z, const nd::BasicTensor<T>& z_q);

// mean((sg[z] - z_q)^2); only the codebook rows behind z_q receive gradient.
template <class T>
nd::BasicTensor<T> vq_loss(const nd::BasicTensor<T>& z, const nd::BasicTensor<T>& z_q);

// Terms with a zero weight are reported but kept out of the graph.
template <class T>
LossResult<T> total_loss(const nd::BasicTensor<T>& recon, const nd::BasicTensor<T>& target,
                         const nd::BasicTensor<T>& z, const nd::BasicTensor<T>& z_q, const LossWeights& weights,
                         const BasicLossHooks<T>& hooks = {});

// Peak 1; identical images report kPsnrCap.
inline constexpr double kPsnrCap = 99.0;
double psnr(const nd::Tensor& a, const nd::Tensor& b);

// Mean SSIM over non-overlapping 8x8 windows of the channel-mean grayscale
// image, C1 = 1e-4, C2 = 9e-4.
double ssim(const nd::Tensor& a, const nd::Tensor& b);

}  // namespace mgvq
