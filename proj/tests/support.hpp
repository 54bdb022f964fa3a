#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace dagan::testing {

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("dagan_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

struct GradCheck {
    double relative_error = 0.0;  // ||g_auto - g_fd|| / max(||g_auto||, ||g_fd||)
    double auto_norm = 0.0;
    int64_t coordinates = 0;
};

// Central differences of the scalar `loss` with respect to every tensor in
// `wrt` (double, requires_grad). At most `max_coords` coordinates per tensor
// are probed, chosen by a fixed-seed RNG.
inline GradCheck gradient_check(const std::function<torch::Tensor()>& loss, const std::vector<torch::Tensor>& wrt,
                                double step = 1e-6, int64_t max_coords = 64, uint64_t seed = 7) {
    for (const auto& t : wrt) {
        if (t.grad().defined()) {
            t.mutable_grad().zero_();
        }
    }
    loss().backward();

    std::mt19937_64 rng(seed);
    double diff2 = 0.0, auto2 = 0.0, fd2 = 0.0;
    int64_t count = 0;
    torch::NoGradGuard no_grad;
    for (const auto& t : wrt) {
        auto flat = t.view({-1});
        // tensors the loss never reaches keep an undefined grad
        auto grad = t.grad().defined() ? t.grad().reshape({-1}) : torch::zeros_like(flat);
        std::vector<int64_t> idx(static_cast<size_t>(flat.numel()));
        for (size_t i = 0; i < idx.size(); ++i) {
            idx[i] = static_cast<int64_t>(i);
        }
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min<size_t>(idx.size(), static_cast<size_t>(max_coords)));
        for (int64_t i : idx) {
            const double original = flat[i].item<double>();
            flat[i] = original + step;
            const double up = loss().item<double>();
            flat[i] = original - step;
            const double down = loss().item<double>();
            flat[i] = original;
            const double fd = (up - down) / (2.0 * step);
            const double ad = grad[i].item<double>();
            diff2 += (fd - ad) * (fd - ad);
            auto2 += ad * ad;
            fd2 += fd * fd;
            ++count;
        }
    }
    const double scale = std::max({std::sqrt(auto2), std::sqrt(fd2), 1e-300});
    return {std::sqrt(diff2) / scale, std::sqrt(auto2), count};
}

inline std::vector<torch::Tensor> parameters_of(torch::nn::Module& module) {
    return module.parameters();
}

}  // namespace dagan::testing
