#include "mgvq/objectives.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgvq {

using nd::BasicTensor;

void LossWeights::validate() const {
    for (double w : {l2, charbonnier, commit, vq, gan, perceptual})
        if (!(w >= 0.0)) throw std::invalid_argument("loss weights must be non-negative, got " + std::to_string(w));
    if (!(epsilon > 0.0)) throw std::invalid_argument("Charbonnier epsilon must be positive");
}

namespace {

template <class T>
void require_same(const char* what, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.shape() != b.shape())
        throw nd::ShapeError(std::string(what) + ": shape mismatch " + nd::shape_str(a.shape()) + " vs " +
                             nd::shape_str(b.shape()));
}

}  // namespace

template <class T>
BasicTensor<T> charbonnier(const BasicTensor<T>& recon, const BasicTensor<T>& target, double eps) {
    require_same("charbonnier", recon, target);
    if (!(eps > 0.0)) throw std::invalid_argument("charbonnier: epsilon must be positive");
    return nd::mean(nd::sqrt(nd::add_scalar(nd::square(nd::sub(recon, target)), eps * eps)));
}

template <class T>
BasicTensor<T> l2_loss(const BasicTensor<T>& recon, const BasicTensor<T>& target) {
    require_same("l2_loss", recon, target);
    return nd::mean(nd::square(nd::sub(recon, target)));
}

template <class T>
BasicTensor<T> commit_loss(const BasicTensor<T>& z, const BasicTensor<T>& z_q) {
    require_same("commit_loss", z, z_q);
    return nd::mean(nd::square(nd::sub(z, z_q.detach())));
}

template <class T>
BasicTensor<T> vq_loss(const BasicTensor<T>& z, const BasicTensor<T>& z_q) {
    require_same("vq_loss", z, z_q);
    return nd::mean(nd::square(nd::sub(z.detach(), z_q)));
}

template <class T>
LossResult<T> total_loss(const BasicTensor<T>& recon, const BasicTensor<T>& target, const BasicTensor<T>& z,
                         const BasicTensor<T>& z_q, const LossWeights& w, const BasicLossHooks<T>& hooks) {
    w.validate();
    LossResult<T> res;
    std::vector<BasicTensor<T>> terms;
    auto take = [&](double weight, const BasicTensor<T>& value, double& slot) {
        slot = static_cast<double>(value.item());
        if (weight != 0.0) terms.push_back(nd::scale(value, weight));
    };
    take(w.l2, l2_loss(recon, target), res.parts.l2);
    take(w.charbonnier, charbonnier(recon, target, w.epsilon), res.parts.charbonnier);
    take(w.commit, commit_loss(z, z_q), res.parts.commit);
    take(w.vq, vq_loss(z, z_q), res.parts.vq);
    if (hooks.gan) take(w.gan, hooks.gan(recon, target), res.parts.gan);
    if (hooks.perceptual) take(w.perceptual, hooks.perceptual(recon, target), res.parts.perceptual);

    if (terms.empty()) {
        res.total = BasicTensor<T>::scalar(T(0));
    } else {
        res.total = terms.front();
        for (std::size_t i = 1; i < terms.size(); ++i) res.total = nd::add(res.total, terms[i]);
    }
    res.parts.total = static_cast<double>(res.total.item());
    return res;
}

double psnr(const nd::Tensor& a, const nd::Tensor& b) {
    require_same("psnr", a, b);
    double se = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.numel());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const nd::Tensor& a, const nd::Tensor& b) {
    require_same("ssim", a, b);
    constexpr std::size_t win = 8;
    constexpr double c1 = 1e-4, c2 = 9e-4;
    if (a.rank() != 3 || a.dim(2) != 3) throw nd::ShapeError("ssim: expected H x W x 3, got " + nd::shape_str(a.shape()));
    const std::size_t H = a.dim(0), W = a.dim(1);
    if (H < win || W < win)
        throw nd::ShapeError("ssim: image " + nd::shape_str(a.shape()) + " smaller than the 8x8 window");

    auto gray = [&](const nd::Tensor& t, std::size_t y, std::size_t x) {
        const float* p = t.data().data() + (y * W + x) * 3;
        return (static_cast<double>(p[0]) + p[1] + p[2]) / 3.0;
    };
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t y0 = 0; y0 + win <= H; y0 += win)
        for (std::size_t x0 = 0; x0 + win <= W; x0 += win) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (std::size_t y = y0; y < y0 + win; ++y)
                for (std::size_t x = x0; x < x0 + win; ++x) {
                    const double va = gray(a, y, x), vb = gray(b, y, x);
                    sa += va, sb += vb, saa += va * va, sbb += vb * vb, sab += va * vb;
                }
            const double n = win * win;
            const double ma = sa / n, mb = sb / n;
            const double va = saa / n - ma * ma, vb = sbb / n - mb * mb, cov = sab / n - ma * mb;
            acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return acc / static_cast<double>(count);
}

#define MGVQ_INSTANTIATE(T)                                                                                       \
    template BasicTensor<T> charbonnier(const BasicTensor<T>&, const BasicTensor<T>&, double);                    \
    template BasicTensor<T> l2_loss(const BasicTensor<T>&, const BasicTensor<T>&);                                \
    template BasicTensor<T> commit_loss(const BasicTensor<T>&, const BasicTensor<T>&);                            \
    template BasicTensor<T> vq_loss(const BasicTensor<T>&, const BasicTensor<T>&);                                \
    template LossResult<T> total_loss(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,        \
                                      const BasicTensor<T>&, const LossWeights&, const BasicLossHooks<T>&);

MGVQ_INSTANTIATE(float)
MGVQ_INSTANTIATE(double)

#undef MGVQ_INSTANTIATE

}  // namespace mgvq
