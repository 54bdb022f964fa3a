#include "dagan/backbone.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>

#include <torch/script.h>

#include "dagan/errors.hpp"

namespace dagan::backbone {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

std::string to_string(BackboneKind kind) {
    return kind == BackboneKind::resnet50 ? "resnet50" : "tiny";
}

BackboneKind backbone_from_string(const std::string& name) {
    if (name == "tiny") return BackboneKind::tiny;
    if (name == "resnet50") return BackboneKind::resnet50;
    throw ConfigError("unknown backbone '" + name + "' (expected tiny or resnet50)");
}

StagePlan StagePlan::tiny() {
    return {};
}

StagePlan StagePlan::resnet50() {
    StagePlan plan;
    plan.kind = BackboneKind::resnet50;
    plan.stage_channels = {64, 256, 512, 1024, 2048, 512};
    plan.proj_channels = 128;
    return plan;
}

namespace {

nn::Conv2dOptions conv_opts(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding) {
    return nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(false);
}

// torchvision Bottleneck (stride on the 3x3 conv).
class BottleneckImpl : public nn::Module {
public:
    BottleneckImpl(int64_t in, int64_t planes, int64_t stride) {
        const int64_t out = planes * 4;
        conv1 = register_module("conv1", nn::Conv2d(conv_opts(in, planes, 1, 1, 0)));
        bn1 = register_module("bn1", nn::BatchNorm2d(planes));
        conv2 = register_module("conv2", nn::Conv2d(conv_opts(planes, planes, 3, stride, 1)));
        bn2 = register_module("bn2", nn::BatchNorm2d(planes));
        conv3 = register_module("conv3", nn::Conv2d(conv_opts(planes, out, 1, 1, 0)));
        bn3 = register_module("bn3", nn::BatchNorm2d(out));
        if (stride != 1 || in != out) {
            downsample = register_module(
                "downsample", nn::Sequential(nn::Conv2d(conv_opts(in, out, 1, stride, 0)), nn::BatchNorm2d(out)));
        }
    }

    torch::Tensor forward(const torch::Tensor& x) {
        auto y = torch::relu(bn1(conv1(x)));
        y = torch::relu(bn2(conv2(y)));
        y = bn3(conv3(y));
        auto identity = downsample ? downsample->forward(x) : x;
        return torch::relu(y + identity);
    }

private:
    nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
    nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
    nn::Sequential downsample{nullptr};
};
TORCH_MODULE(Bottleneck);

// Batch-independent normalization for the tiny plan: about eight channels per group.
nn::GroupNorm group_norm(int64_t channels) {
    int64_t groups = std::max<int64_t>(1, channels / 8);
    while (channels % groups != 0) {
        --groups;
    }
    return nn::GroupNorm(groups, channels);
}

class BasicBlockImpl : public nn::Module {
public:
    explicit BasicBlockImpl(int64_t channels) {
        conv1 = register_module("conv1", nn::Conv2d(conv_opts(channels, channels, 3, 1, 1)));
        bn1 = register_module("bn1", group_norm(channels));
        conv2 = register_module("conv2", nn::Conv2d(conv_opts(channels, channels, 3, 1, 1)));
        bn2 = register_module("bn2", group_norm(channels));
    }

    torch::Tensor forward(const torch::Tensor& x) {
        auto y = torch::relu(bn1(conv1(x)));
        y = bn2(conv2(y));
        return torch::relu(y + x);
    }

private:
    nn::Conv2d conv1{nullptr}, conv2{nullptr};
    nn::GroupNorm bn1{nullptr}, bn2{nullptr};
};
TORCH_MODULE(BasicBlock);

nn::Sequential make_layer(int64_t in, int64_t planes, int64_t blocks, int64_t stride) {
    nn::Sequential layer;
    layer->push_back(Bottleneck(in, planes, stride));
    for (int64_t i = 1; i < blocks; ++i) {
        layer->push_back(Bottleneck(planes * 4, planes, 1));
    }
    return layer;
}

nn::Sequential strided_block(int64_t in, int64_t out, int64_t kernel, bool batch_norm) {
    nn::Sequential block(nn::Conv2d(conv_opts(in, out, kernel, 2, kernel / 2)));
    if (batch_norm) {
        block->push_back(nn::BatchNorm2d(out));
    } else {
        block->push_back(group_norm(out));
    }
    block->push_back(nn::ReLU(nn::ReLUOptions().inplace(true)));
    return block;
}

std::string shape_str(const torch::Tensor& t) {
    std::ostringstream os;
    os << t.sizes();
    return os.str();
}

}  // namespace

StageExtractorImpl::StageExtractorImpl(const StagePlan& plan) : plan_(plan) {
    const auto& ch = plan_.stage_channels;
    if (plan_.kind == BackboneKind::resnet50) {
        conv1 = register_module("conv1", nn::Conv2d(conv_opts(3, 64, 7, 2, 3)));
        bn1 = register_module("bn1", nn::BatchNorm2d(64));
        pool_conv = register_module("pool_conv", strided_block(64, 64, 3, true));
        layer1 = register_module("layer1", make_layer(64, 64, 3, 1));
        layer2 = register_module("layer2", make_layer(256, 128, 4, 2));
        layer3 = register_module("layer3", make_layer(512, 256, 6, 2));
        layer4 = register_module("layer4", make_layer(1024, 512, 3, 2));
        extra = register_module("extra", strided_block(2048, ch[5], 3, true));
        plan_.stage_channels = {64, 256, 512, 1024, 2048, ch[5]};
        return;
    }
    int64_t in = 3;
    for (int i = 0; i < kStageCount - 1; ++i) {
        auto stage = strided_block(in, ch[static_cast<size_t>(i)], i == 0 ? 7 : 3, false);
        if (i > 0) {
            stage->push_back(BasicBlock(ch[static_cast<size_t>(i)]));
        }
        tiny_stages_.push_back(register_module("stage" + std::to_string(i + 1), stage));
        in = ch[static_cast<size_t>(i)];
    }
    extra = register_module("extra", strided_block(in, ch[5], 3, false));
}

void check_input_size(const torch::Tensor& image) {
    const bool batched = image.dim() == 4;
    if (!(batched || image.dim() == 3) || image.size(batched ? 1 : 0) != 3) {
        throw ShapeError("expected an RGB image [B,3,H,W] or [3,H,W], got " + shape_str(image));
    }
    const int64_t h = image.size(-2);
    const int64_t w = image.size(-1);
    if (h < 64 || w < 64 || h % 64 != 0 || w % 64 != 0) {
        throw ShapeError("input size " + std::to_string(h) + "x" + std::to_string(w) +
                         " must be at least 64 and divisible by 64 (six stride-2 stages)");
    }
}

std::vector<torch::Tensor> StageExtractorImpl::forward(const torch::Tensor& image) {
    check_input_size(image);
    const bool batched = image.dim() == 4;
    auto x = batched ? image : image.unsqueeze(0);

    std::vector<torch::Tensor> stages;
    stages.reserve(kStageCount);
    if (plan_.kind == BackboneKind::resnet50) {
        stages.push_back(torch::relu(bn1(conv1(x))));
        stages.push_back(layer1->forward(pool_conv->forward(stages.back())));
        stages.push_back(layer2->forward(stages.back()));
        stages.push_back(layer3->forward(stages.back()));
        stages.push_back(layer4->forward(stages.back()));
    } else {
        for (auto& stage : tiny_stages_) {
            x = stage->forward(x);
            stages.push_back(x);
        }
    }
    stages.push_back(extra->forward(stages.back()));
    if (!batched) {
        for (auto& s : stages) {
            s = s.squeeze(0);
        }
    }
    return stages;
}

std::vector<torch::Tensor> fuse_bitemporal(const std::vector<torch::Tensor>& stages_t1,
                                           const std::vector<torch::Tensor>& stages_t2) {
    if (stages_t1.size() != stages_t2.size()) {
        throw ShapeError("fuse_bitemporal: stage counts differ");
    }
    std::vector<torch::Tensor> fused;
    fused.reserve(stages_t1.size());
    for (size_t i = 0; i < stages_t1.size(); ++i) {
        if (stages_t1[i].sizes() != stages_t2[i].sizes()) {
            throw ShapeError("fuse_bitemporal: stage " + std::to_string(i + 1) + " shapes differ: " +
                             shape_str(stages_t1[i]) + " vs " + shape_str(stages_t2[i]));
        }
        fused.push_back(stages_t1[i] + stages_t2[i]);
    }
    return fused;
}

std::vector<int> contributors(int level, bool aggregate) {
    if (level < kFirstLevel || level > kLastLevel) {
        throw ShapeError("pyramid level must be in 2..5, got " + std::to_string(level));
    }
    if (!aggregate) {
        return {level};
    }
    switch (level) {
        case 2: return {2, 3};
        case 3: return {2, 3, 4};
        case 4: return {3, 4, 5};
        default: return {5, 6};
    }
}

AggregatorImpl::AggregatorImpl(const StagePlan& plan, bool aggregate) : aggregate_(aggregate) {
    for (int level = kFirstLevel; level <= kLastLevel; ++level) {
        std::vector<nn::Conv2d> row;
        for (int stage : contributors(level, aggregate_)) {
            const int64_t in = plan.stage_channels[static_cast<size_t>(stage - 1)];
            row.push_back(register_module("proj_l" + std::to_string(level) + "_s" + std::to_string(stage),
                                          nn::Conv2d(nn::Conv2dOptions(in, plan.proj_channels, 1).bias(false))));
        }
        projections_.push_back(std::move(row));
    }
}

nn::Conv2d AggregatorImpl::projection(int level, int stage) const {
    const auto members = contributors(level, aggregate_);
    for (size_t k = 0; k < members.size(); ++k) {
        if (members[k] == stage) {
            return projections_[static_cast<size_t>(level - kFirstLevel)][k];
        }
    }
    throw ShapeError("stage " + std::to_string(stage) + " does not feed level " + std::to_string(level));
}

std::vector<torch::Tensor> AggregatorImpl::forward(const std::vector<torch::Tensor>& fused_stages) {
    if (fused_stages.size() != kStageCount) {
        throw ShapeError("aggregate_neighbors expects 6 stage maps, got " + std::to_string(fused_stages.size()));
    }
    std::vector<torch::Tensor> levels;
    for (int level = kFirstLevel; level <= kLastLevel; ++level) {
        const auto& anchor = fused_stages[static_cast<size_t>(level - 1)];
        const std::vector<int64_t> size{anchor.size(-2), anchor.size(-1)};
        torch::Tensor sum;
        const auto members = contributors(level, aggregate_);
        for (size_t k = 0; k < members.size(); ++k) {
            auto x = fused_stages[static_cast<size_t>(members[k] - 1)];
            const bool batched = x.dim() == 4;
            if (!batched) {
                x = x.unsqueeze(0);
            }
            auto y = projections_[static_cast<size_t>(level - kFirstLevel)][k]->forward(x);
            if (y.size(2) != size[0] || y.size(3) != size[1]) {
                y = F::interpolate(y, F::InterpolateFuncOptions().size(size).mode(torch::kBilinear).align_corners(false));
            }
            if (!batched) {
                y = y.squeeze(0);
            }
            sum = sum.defined() ? sum + y : y;
        }
        levels.push_back(sum);
    }
    return levels;
}

int64_t load_pretrained(StageExtractor& extractor, const std::filesystem::path& path) {
    torch::jit::Module source;
    try {
        source = torch::jit::load(path.string());
    } catch (const c10::Error& e) {
        throw ConfigError("cannot load pretrained weights from " + path.string() + ": " + e.what_without_backtrace());
    }
    auto params = extractor->named_parameters(true);
    auto buffers = extractor->named_buffers(true);
    int64_t copied = 0;
    torch::NoGradGuard no_grad;
    auto copy_into = [&](const std::string& name, const torch::Tensor& value) {
        torch::Tensor* target = params.find(name);
        if (target == nullptr) {
            target = buffers.find(name);
        }
        if (target == nullptr || target->sizes() != value.sizes()) {
            return;
        }
        target->copy_(value.to(target->dtype()));
        ++copied;
    };
    for (const auto& p : source.named_parameters(true)) {
        copy_into(p.name, p.value);
    }
    for (const auto& b : source.named_buffers(true)) {
        copy_into(b.name, b.value);
    }
    if (copied == 0) {
        throw ConfigError("no parameter in " + path.string() + " matches the ResNet-50 stage extractor");
    }
    return copied;
}

std::filesystem::path default_pretrained_path() {
    std::vector<std::filesystem::path> candidates;
    if (const char* explicit_path = std::getenv("DAGAN_PRETRAINED")) {
        candidates.emplace_back(explicit_path);
    }
    if (const char* torch_home = std::getenv("TORCH_HOME")) {
        candidates.push_back(std::filesystem::path(torch_home) / "dagan" / "resnet50_scripted.pt");
    }
    if (const char* home = std::getenv("HOME")) {
        candidates.push_back(std::filesystem::path(home) / ".cache" / "torch" / "dagan" / "resnet50_scripted.pt");
    }
    for (const auto& c : candidates) {
        if (std::filesystem::exists(c)) {
            return c;
        }
    }
    return {};
}

}  // namespace dagan::backbone
