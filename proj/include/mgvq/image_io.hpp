#pragma once

#include <filesystem>
#include <stdexcept>

#include "mgvq/ndgrad.hpp"

namespace mgvq {

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Decodes any PNG to H x W x 3 floats in [0, 1]. 16-bit samples are divided
// by 65535, 8-bit by 255; grayscale is replicated, alpha dropped.
nd::Tensor read_png(const std::filesystem::path& path);

// Writes H x W x 3 values clamped to [0, 1] as 8-bit (or 16-bit) RGB.
void write_png(const std::filesystem::path& path, const nd::Tensor& image, int bit_depth = 8);

// Largest centered crop whose sides are multiples of `multiple`.
nd::Tensor center_crop_to_multiple(const nd::Tensor& image, std::size_t multiple);

// Centered square crop resampled bilinearly to size x size.
nd::Tensor square_resize(const nd::Tensor& image, std::size_t size);

// Stacks equally sized H x W x 3 images into B x H x W x 3.
nd::Tensor stack_images(std::span<const nd::Tensor> images);
// i-th image of a B x H x W x 3 batch.
nd::Tensor unstack_image(const nd::Tensor& batch, std::size_t i);

}  // namespace mgvq
