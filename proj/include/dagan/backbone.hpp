#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace dagan::backbone {

enum class BackboneKind { tiny, resnet50 };

std::string to_string(BackboneKind kind);
BackboneKind backbone_from_string(const std::string& name);

inline constexpr int kStageCount = 6;
inline constexpr int kFirstLevel = 2;
inline constexpr int kLastLevel = 5;

// Channel layout of the six stride-2 stages and of the fused pyramid.
struct StagePlan {
    BackboneKind kind = BackboneKind::tiny;
    std::array<int64_t, kStageCount> stage_channels{8, 16, 32, 64, 64, 64};
    int64_t proj_channels = 32;

    static StagePlan tiny();
    static StagePlan resnet50();  // 64, 256, 512, 1024, 2048, 512 with 128-channel projections
};

// Six-stage feature extractor. The ResNet-50 variant keeps torchvision's
// parameter names (conv1, bn1, layer1..layer4) so ImageNet weights load by name;
// its max-pool is replaced by a stride-2 3x3 conv ("pool_conv") and a sixth
// stride-2 block ("extra") is appended. Stage i has spatial size H / 2^i.
class StageExtractorImpl : public torch::nn::Module {
public:
    explicit StageExtractorImpl(const StagePlan& plan);

    // image: [B, 3, H, W] with H, W >= 64 and divisible by 64.
    std::vector<torch::Tensor> forward(const torch::Tensor& image);

    const StagePlan& plan() const { return plan_; }

private:
    StagePlan plan_;
    // resnet50
    torch::nn::Conv2d conv1{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr};
    torch::nn::Sequential pool_conv{nullptr};
    torch::nn::Sequential layer1{nullptr}, layer2{nullptr}, layer3{nullptr}, layer4{nullptr};
    // tiny: stages 1..5; both kinds use `extra` as stage 6
    std::vector<torch::nn::Sequential> tiny_stages_;
    torch::nn::Sequential extra{nullptr};
};
TORCH_MODULE(StageExtractor);

// Throws ShapeError unless image is [B,3,H,W] (or [3,H,W]) with H, W >= 64 and
// divisible by 64.
void check_input_size(const torch::Tensor& image);

// Elementwise sum of the two temporal stage lists.
std::vector<torch::Tensor> fuse_bitemporal(const std::vector<torch::Tensor>& stages_t1,
                                           const std::vector<torch::Tensor>& stages_t2);

// Stages (1-based) summed into pyramid level `level` (2..5). With aggregation
// disabled each level only sees its own stage.
std::vector<int> contributors(int level, bool aggregate);

// Aggregate connections: every contributor is projected by a bias-free 1x1 conv
// to proj_channels, bilinearly resampled to the level's stage size, and summed.
class AggregatorImpl : public torch::nn::Module {
public:
    AggregatorImpl(const StagePlan& plan, bool aggregate);

    // fused_stages: the six stage maps. Returns levels 2..5 in order.
    std::vector<torch::Tensor> forward(const std::vector<torch::Tensor>& fused_stages);

    torch::nn::Conv2d projection(int level, int stage) const;
    bool aggregates() const { return aggregate_; }

private:
    bool aggregate_;
    std::vector<std::vector<torch::nn::Conv2d>> projections_;  // [level - 2][contributor index]
};
TORCH_MODULE(Aggregator);

// Copies parameters and buffers from a TorchScript-serialized torchvision
// ResNet-50 (see tools/export_resnet50.py) into `extractor` by name. Returns the
// number of tensors copied; throws ConfigError when nothing matched.
int64_t load_pretrained(StageExtractor& extractor, const std::filesystem::path& path);

// $DAGAN_PRETRAINED, else $TORCH_HOME/dagan/resnet50_scripted.pt, else
// ~/.cache/torch/dagan/resnet50_scripted.pt. Empty when none exists.
std::filesystem::path default_pretrained_path();

}  // namespace dagan::backbone
