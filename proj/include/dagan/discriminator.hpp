#pragma once

#include <array>

#include <torch/torch.h>

namespace dagan::discriminator {

struct DiscriminatorOptions {
    // Concatenate both RGB images to the change map (7 input channels).
    bool conditional = false;
    std::array<int64_t, 4> channels{32, 64, 128, 256};
    double leaky_slope = 0.2;
};

// Four 3x3 stride-2 convolutions with leaky ReLU, global average pooling and a
// linear head. Scores a [B, 1, H, W] change map (H, W >= 16) as real.
class DiscriminatorImpl : public torch::nn::Module {
public:
    explicit DiscriminatorImpl(const DiscriminatorOptions& options = {});

    // [B] pre-sigmoid scores.
    torch::Tensor logit(const torch::Tensor& map, const torch::Tensor& image_t1 = {},
                        const torch::Tensor& image_t2 = {});
    // [B] probabilities, kept strictly inside (0, 1) even where float32
    // sigmoid would round to an endpoint.
    torch::Tensor forward(const torch::Tensor& map, const torch::Tensor& image_t1 = {},
                          const torch::Tensor& image_t2 = {});

    int64_t conv_layer_count() const;
    torch::nn::Linear head() const { return head_; }
    const DiscriminatorOptions& options() const { return options_; }

private:
    DiscriminatorOptions options_;
    std::vector<torch::nn::Conv2d> convs_;
    torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(Discriminator);

}  // namespace dagan::discriminator
