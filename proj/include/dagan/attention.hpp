#pragma once

#include <array>
#include <string>

#include <torch/torch.h>

namespace dagan::attention {

enum class GatePool { avg, max };
std::string to_string(GatePool pool);
GatePool gate_pool_from_string(const std::string& name);

struct MAFMOptions {
    int64_t channels = 32;
    int64_t reduction = 4;
    GatePool pool = GatePool::avg;
    std::array<int64_t, 3> rates{3, 5, 7};
};

// Multi-scale adaptive fusion:
//   out = m + (A3(m) + A5(m) + A7(m)) * sigmoid(fc2(relu(fc1(pool(m)))))
// with 3x3 atrous convs padded by their rate, so spatial size is preserved and
// the gate is broadcast per channel.
class MAFMImpl : public torch::nn::Module {
public:
    explicit MAFMImpl(const MAFMOptions& options);

    // m: [B, C, H, W]
    torch::Tensor forward(const torch::Tensor& m);
    // [B, C, 1, 1] channel weights in (0, 1).
    torch::Tensor gate(const torch::Tensor& m);
    torch::Tensor branch_sum(const torch::Tensor& m);

    const MAFMOptions& options() const { return options_; }
    torch::nn::Conv2d branch(size_t i) const { return atrous_.at(i); }

private:
    void check_channels(const torch::Tensor& m) const;

    MAFMOptions options_;
    std::vector<torch::nn::Conv2d> atrous_;
    torch::nn::Conv2d fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(MAFM);

struct CRMOptions {
    int64_t channels = 32;
    int64_t mlp_expansion = 4;
};

// Intermediate tensors of one CRM pass.
struct CRMTrace {
    torch::Tensor attention;  // [B, HW, HW], row-stochastic
    torch::Tensor value;      // [B, C, HW]
    torch::Tensor context;    // [B, C, H, W] = value x attention, reshaped
    torch::Tensor output;     // [B, C, H, W]
};

// Context refinement: single-head spatial self-attention over flattened
// positions without positional encoding or temperature scaling.
//   xn = LN(x);  K, Q, V = 1x1 convs of xn
//   A = softmax(Q^T K) over the last axis;  context = V A
//   out = MLP(LN(context + x))
class CRMImpl : public torch::nn::Module {
public:
    explicit CRMImpl(const CRMOptions& options);

    torch::Tensor forward(const torch::Tensor& x);
    CRMTrace trace(const torch::Tensor& x);

    torch::nn::Conv2d key_conv() const { return key; }
    torch::nn::Conv2d query_conv() const { return query; }
    torch::nn::Conv2d value_conv() const { return value; }

private:
    torch::Tensor channel_norm(torch::nn::LayerNorm& norm, const torch::Tensor& x) const;

    CRMOptions options_;
    torch::nn::LayerNorm norm_in{nullptr}, norm_out{nullptr};
    torch::nn::Conv2d key{nullptr}, query{nullptr}, value{nullptr};
    torch::nn::Conv2d mlp_in{nullptr}, mlp_out{nullptr};
};
TORCH_MODULE(CRM);

}  // namespace dagan::attention
