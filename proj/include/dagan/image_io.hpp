#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace dagan::io {

// RGB image as float32 [3, H, W] in [0, 1].
torch::Tensor read_rgb(const std::filesystem::path& path);
void write_rgb(const std::filesystem::path& path, const torch::Tensor& image);

// 8-bit label image binarized at `threshold` into float32 [H, W] of {0, 1}.
torch::Tensor read_mask(const std::filesystem::path& path, int threshold = 128);
// Writes a {0, 1} map as {0, 255}.
void write_mask(const std::filesystem::path& path, const torch::Tensor& mask);

// Probability map in [0, 1] stored as 16-bit grayscale.
void write_probability(const std::filesystem::path& path, const torch::Tensor& prob);
torch::Tensor read_probability(const std::filesystem::path& path);

// uint8 [H, W, 3] RGB image.
void write_color(const std::filesystem::path& path, const torch::Tensor& rgb);

}  // namespace dagan::io
