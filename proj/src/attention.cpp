#include "dagan/attention.hpp"

#include <algorithm>

#include "dagan/errors.hpp"

namespace dagan::attention {

namespace nn = torch::nn;

std::string to_string(GatePool pool) {
    return pool == GatePool::max ? "max" : "avg";
}

GatePool gate_pool_from_string(const std::string& name) {
    if (name == "avg") return GatePool::avg;
    if (name == "max") return GatePool::max;
    throw ConfigError("unknown mafm_pool '" + name + "' (expected avg or max)");
}

MAFMImpl::MAFMImpl(const MAFMOptions& options) : options_(options) {
    const int64_t c = options_.channels;
    for (int64_t rate : options_.rates) {
        atrous_.push_back(register_module("atrous" + std::to_string(rate),
                                          nn::Conv2d(nn::Conv2dOptions(c, c, 3).padding(rate).dilation(rate))));
    }
    const int64_t hidden = std::max<int64_t>(1, c / options_.reduction);
    fc1 = register_module("fc1", nn::Conv2d(nn::Conv2dOptions(c, hidden, 1)));
    fc2 = register_module("fc2", nn::Conv2d(nn::Conv2dOptions(hidden, c, 1)));
}

void MAFMImpl::check_channels(const torch::Tensor& m) const {
    if (m.dim() != 4 || m.size(1) != options_.channels) {
        throw ShapeError("MAFM expects [B, " + std::to_string(options_.channels) + ", H, W] input");
    }
}

torch::Tensor MAFMImpl::gate(const torch::Tensor& m) {
    check_channels(m);
    auto pooled = options_.pool == GatePool::avg ? torch::adaptive_avg_pool2d(m, {1, 1})
                                                 : std::get<0>(torch::adaptive_max_pool2d(m, {1, 1}));
    return torch::sigmoid(fc2(torch::relu(fc1(pooled))));
}

torch::Tensor MAFMImpl::branch_sum(const torch::Tensor& m) {
    check_channels(m);
    auto mid = atrous_[0]->forward(m);
    for (size_t i = 1; i < atrous_.size(); ++i) {
        mid = mid + atrous_[i]->forward(m);
    }
    return mid;
}

torch::Tensor MAFMImpl::forward(const torch::Tensor& m) {
    return m + branch_sum(m) * gate(m);
}

CRMImpl::CRMImpl(const CRMOptions& options) : options_(options) {
    const int64_t c = options_.channels;
    norm_in = register_module("norm_in", nn::LayerNorm(nn::LayerNormOptions({c})));
    key = register_module("key", nn::Conv2d(nn::Conv2dOptions(c, c, 1)));
    query = register_module("query", nn::Conv2d(nn::Conv2dOptions(c, c, 1)));
    value = register_module("value", nn::Conv2d(nn::Conv2dOptions(c, c, 1)));
    norm_out = register_module("norm_out", nn::LayerNorm(nn::LayerNormOptions({c})));
    mlp_in = register_module("mlp_in", nn::Conv2d(nn::Conv2dOptions(c, c * options_.mlp_expansion, 1)));
    mlp_out = register_module("mlp_out", nn::Conv2d(nn::Conv2dOptions(c * options_.mlp_expansion, c, 1)));
}

torch::Tensor CRMImpl::channel_norm(nn::LayerNorm& norm, const torch::Tensor& x) const {
    return norm(x.permute({0, 2, 3, 1})).permute({0, 3, 1, 2});
}

CRMTrace CRMImpl::trace(const torch::Tensor& x) {
    if (x.dim() != 4 || x.size(1) != options_.channels) {
        throw ShapeError("CRM expects [B, " + std::to_string(options_.channels) + ", H, W] input");
    }
    const int64_t b = x.size(0);
    const int64_t c = x.size(1);
    const int64_t n = x.size(2) * x.size(3);

    auto xn = channel_norm(norm_in, x);
    auto k = key(xn).reshape({b, c, n});
    auto q = query(xn).reshape({b, c, n});
    auto v = value(xn).reshape({b, c, n});

    CRMTrace t;
    // torch::softmax subtracts the row maximum before exponentiating.
    t.attention = torch::softmax(torch::bmm(q.transpose(1, 2), k), -1);
    t.value = v;
    t.context = torch::bmm(v, t.attention).reshape(x.sizes());
    auto y = channel_norm(norm_out, t.context + x);
    t.output = mlp_out(torch::gelu(mlp_in(y)));
    return t;
}

torch::Tensor CRMImpl::forward(const torch::Tensor& x) {
    return trace(x).output;
}

}  // namespace dagan::attention
