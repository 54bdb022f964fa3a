#include "dagan/discriminator.hpp"

#include "dagan/errors.hpp"

namespace dagan::discriminator {

namespace nn = torch::nn;

DiscriminatorImpl::DiscriminatorImpl(const DiscriminatorOptions& options) : options_(options) {
    int64_t in = options_.conditional ? 7 : 1;
    for (size_t i = 0; i < options_.channels.size(); ++i) {
        convs_.push_back(register_module("conv" + std::to_string(i + 1),
                                         nn::Conv2d(nn::Conv2dOptions(in, options_.channels[i], 3).stride(2).padding(1))));
        in = options_.channels[i];
    }
    head_ = register_module("head", nn::Linear(in, 1));
}

torch::Tensor DiscriminatorImpl::logit(const torch::Tensor& map, const torch::Tensor& image_t1,
                                       const torch::Tensor& image_t2) {
    if (map.dim() != 4 || map.size(1) != 1) {
        throw ShapeError("discriminator expects a [B, 1, H, W] change map");
    }
    if (map.size(2) < 16 || map.size(3) < 16) {
        throw ShapeError("discriminator input must be at least 16x16, got " + std::to_string(map.size(2)) + "x" +
                         std::to_string(map.size(3)));
    }
    auto x = map;
    if (options_.conditional) {
        if (!image_t1.defined() || !image_t2.defined() || image_t1.size(0) != map.size(0) ||
            image_t1.size(2) != map.size(2) || image_t1.size(3) != map.size(3) || image_t2.sizes() != image_t1.sizes()) {
            throw ShapeError("conditional discriminator needs both [B, 3, H, W] images matching the map");
        }
        x = torch::cat({map, image_t1.to(map.dtype()), image_t2.to(map.dtype())}, 1);
    }
    for (auto& conv : convs_) {
        x = torch::leaky_relu(conv(x), options_.leaky_slope);
    }
    return head_(x.mean({2, 3})).squeeze(1);
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& map, const torch::Tensor& image_t1,
                                         const torch::Tensor& image_t2) {
    constexpr double kEdge = 1e-7;
    return torch::sigmoid(logit(map, image_t1, image_t2)).clamp(kEdge, 1.0 - kEdge);
}

int64_t DiscriminatorImpl::conv_layer_count() const {
    int64_t count = 0;
    for (const auto& m : modules(false)) {
        if (m->as<nn::Conv2d>() != nullptr) {
            ++count;
        }
    }
    return count;
}

}  // namespace dagan::discriminator
