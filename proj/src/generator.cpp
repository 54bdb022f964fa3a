#include "dagan/generator.hpp"

#include <sstream>

#include "dagan/errors.hpp"

namespace dagan::generator {

namespace nn = torch::nn;
namespace F = torch::nn::functional;
using backbone::kFirstLevel;
using backbone::kLastLevel;

std::string to_string(Variant variant) {
    switch (variant) {
        case Variant::R: return "R";
        case Variant::A: return "A";
        case Variant::M: return "M";
        case Variant::MC: return "MC";
        case Variant::full: return "full";
    }
    return "full";
}

Variant variant_from_string(const std::string& name) {
    if (name == "R") return Variant::R;
    if (name == "A") return Variant::A;
    if (name == "M") return Variant::M;
    if (name == "MC") return Variant::MC;
    if (name == "full") return Variant::full;
    throw ConfigError("unknown variant '" + name + "' (expected R, A, M, MC or full)");
}

bool uses_gan(Variant variant) {
    return variant == Variant::full;
}

std::string to_string(DecoderMode mode) {
    return mode == DecoderMode::literal ? "literal" : "recursive";
}

DecoderMode decoder_from_string(const std::string& name) {
    if (name == "recursive") return DecoderMode::recursive;
    if (name == "literal") return DecoderMode::literal;
    throw ConfigError("unknown decoder '" + name + "' (expected recursive or literal)");
}

GeneratorOptions GeneratorOptions::for_variant(Variant variant, const backbone::StagePlan& plan) {
    GeneratorOptions o;
    o.plan = plan;
    o.aggregate = variant != Variant::R;
    o.use_mafm = variant == Variant::M || variant == Variant::MC || variant == Variant::full;
    o.use_crm = variant == Variant::MC || variant == Variant::full;
    return o;
}

void check_pair(const torch::Tensor& image_t1, const torch::Tensor& image_t2) {
    if (image_t1.sizes() != image_t2.sizes()) {
        std::ostringstream os;
        os << "image pair shapes differ: " << image_t1.sizes() << " vs " << image_t2.sizes();
        throw ShapeError(os.str());
    }
    backbone::check_input_size(image_t1);
    if (image_t1.size(-1) != image_t1.size(-2)) {
        throw ShapeError("generator expects square inputs");
    }
}

int64_t count_parameters(const nn::Module& module) {
    int64_t total = 0;
    for (const auto& p : module.parameters(true)) {
        if (p.requires_grad()) {
            total += p.numel();
        }
    }
    return total;
}

DANetImpl::DANetImpl(const GeneratorOptions& options) : options_(options) {
    extractor_ = register_module("backbone", backbone::StageExtractor(options_.plan));
    options_.plan = extractor_->plan();
    aggregator_ = register_module("aggregate", backbone::Aggregator(options_.plan, options_.aggregate));
    const int64_t c = options_.plan.proj_channels;
    for (int level = kFirstLevel; level <= kLastLevel; ++level) {
        const std::string suffix = std::to_string(level);
        if (options_.use_mafm) {
            attention::MAFMOptions mo;
            mo.channels = c;
            mo.reduction = options_.mafm_reduction;
            mo.pool = options_.mafm_pool;
            mafm_.push_back(register_module("mafm" + suffix, attention::MAFM(mo)));
        }
        if (options_.use_crm) {
            crm_.push_back(register_module("crm" + suffix, attention::CRM(attention::CRMOptions{c, options_.crm_expansion})));
        }
        if (level > kFirstLevel) {
            deconv_.push_back(register_module(
                "dconv" + suffix, nn::ConvTranspose2d(nn::ConvTranspose2dOptions(c, c, 4).stride(2).padding(1))));
        }
        heads_.push_back(register_module("head" + suffix, nn::Conv2d(nn::Conv2dOptions(c, 1, 1))));
    }
}

nn::ConvTranspose2d DANetImpl::deconv(int level) const {
    if (level <= kFirstLevel || level > kLastLevel) {
        throw ShapeError("no deconvolution feeds out of level " + std::to_string(level));
    }
    return deconv_[static_cast<size_t>(level - kFirstLevel - 1)];
}

torch::Tensor DANetImpl::normalize(const torch::Tensor& image) const {
    auto opts = torch::TensorOptions().dtype(image.dtype()).device(image.device());
    auto mean = torch::tensor({options_.mean[0], options_.mean[1], options_.mean[2]}, opts).view({1, 3, 1, 1});
    auto stdev = torch::tensor({options_.std[0], options_.std[1], options_.std[2]}, opts).view({1, 3, 1, 1});
    return (image - mean) / stdev;
}

GeneratorTrace DANetImpl::trace(const torch::Tensor& image_t1, const torch::Tensor& image_t2) {
    check_pair(image_t1, image_t2);
    const bool batched = image_t1.dim() == 4;
    auto x1 = normalize(batched ? image_t1 : image_t1.unsqueeze(0));
    auto x2 = normalize(batched ? image_t2 : image_t2.unsqueeze(0));
    const std::vector<int64_t> input_size{x1.size(2), x1.size(3)};

    GeneratorTrace t;
    t.stages = backbone::fuse_bitemporal(extractor_->forward(x1), extractor_->forward(x2));
    t.m = aggregator_->forward(t.stages);
    for (size_t k = 0; k < t.m.size(); ++k) {
        t.a.push_back(options_.use_mafm ? mafm_[k]->forward(t.m[k]) : t.m[k]);
        t.s.push_back(options_.use_crm ? crm_[k]->forward(t.a[k]) : t.a[k]);
    }

    // Top-down decoding from level 5 to level 2.
    t.d.assign(t.s.size(), torch::Tensor());
    t.d.back() = t.s.back();
    for (int level = kLastLevel; level > kFirstLevel; --level) {
        const auto k = static_cast<size_t>(level - kFirstLevel);
        const auto& from = options_.decoder == DecoderMode::recursive ? t.d[k] : t.s[k];
        t.d[k - 1] = t.s[k - 1] + deconv(level)->forward(from);
    }

    auto up = [&](const torch::Tensor& x) {
        return F::interpolate(x, F::InterpolateFuncOptions().size(input_size).mode(torch::kBilinear).align_corners(false));
    };
    auto& pred = t.prediction;
    for (int level = kLastLevel; level >= kFirstLevel; --level) {
        const auto k = static_cast<size_t>(level - kFirstLevel);
        auto logit = heads_[k]->forward(t.d[k]);
        auto prob = torch::sigmoid(logit);
        pred.aux_logits.push_back(logit);
        pred.aux_probs.push_back(prob);
        // upsampled in logit space so edges stay sharp between cells
        pred.aux_probs_full.push_back(torch::sigmoid(up(logit)));
    }
    pred.final_prob = pred.aux_probs_full.back();
    pred.final_logit = up(pred.aux_logits.back());
    return t;
}

ChangePrediction DANetImpl::forward(const torch::Tensor& image_t1, const torch::Tensor& image_t2) {
    return trace(image_t1, image_t2).prediction;
}

int64_t DANetImpl::count_parameters() const {
    return generator::count_parameters(*this);
}

}  // namespace dagan::generator
