#pragma once

#include <array>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dagan/attention.hpp"
#include "dagan/backbone.hpp"

namespace dagan::generator {

// Ablation ladder: R = backbone + add fusion + decoder, A adds aggregate
// connections, M adds MAFM, MC adds CRM, full adds adversarial training.
enum class Variant { R, A, M, MC, full };
std::string to_string(Variant variant);
Variant variant_from_string(const std::string& name);
bool uses_gan(Variant variant);

// recursive: d_{i-1} = s_{i-1} + Dconv(d_i)
// literal:   d_{i-1} = s_{i-1} + Dconv(s_i)
enum class DecoderMode { recursive, literal };
std::string to_string(DecoderMode mode);
DecoderMode decoder_from_string(const std::string& name);

struct GeneratorOptions {
    backbone::StagePlan plan = backbone::StagePlan::tiny();
    bool aggregate = true;
    bool use_mafm = true;
    bool use_crm = true;
    attention::GatePool mafm_pool = attention::GatePool::avg;
    int64_t mafm_reduction = 4;
    int64_t crm_expansion = 4;
    DecoderMode decoder = DecoderMode::recursive;
    // Input normalization applied inside forward; images arrive in [0, 1].
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> std{0.229, 0.224, 0.225};

    static GeneratorOptions for_variant(Variant variant, const backbone::StagePlan& plan);
};

// Probability maps are [B, 1, h, w]. aux_* are ordered coarse to fine
// (levels 5, 4, 3, 2 -> H/32 ... H/4); aux_probs_full holds the sigmoid of
// each logit map bilinearly upsampled to the input size.
struct ChangePrediction {
    torch::Tensor final_prob;   // [B, 1, H, W]: sigmoid of final_logit
    torch::Tensor final_logit;  // [B, 1, H, W]: level-2 logit upsampled x4
    std::vector<torch::Tensor> aux_logits;
    std::vector<torch::Tensor> aux_probs;
    std::vector<torch::Tensor> aux_probs_full;
};

// Every intermediate of one forward pass; vectors over levels are ordered 2..5.
struct GeneratorTrace {
    std::vector<torch::Tensor> stages;  // fused stages 1..6
    std::vector<torch::Tensor> m;       // aggregated pyramid
    std::vector<torch::Tensor> a;       // after MAFM
    std::vector<torch::Tensor> s;       // after CRM
    std::vector<torch::Tensor> d;       // decoder outputs
    ChangePrediction prediction;
};

// Siamese change-detection generator. Both temporal images share one stage
// extractor; their stages are summed before aggregation.
class DANetImpl : public torch::nn::Module {
public:
    explicit DANetImpl(const GeneratorOptions& options);

    // image_t1, image_t2: [B,3,H,W] or [3,H,W], square, side divisible by 64.
    ChangePrediction forward(const torch::Tensor& image_t1, const torch::Tensor& image_t2);
    GeneratorTrace trace(const torch::Tensor& image_t1, const torch::Tensor& image_t2);

    int64_t count_parameters() const;
    const GeneratorOptions& options() const { return options_; }

    backbone::StageExtractor extractor() const { return extractor_; }
    // Transposed conv that upsamples level `level` (3..5) into level - 1.
    torch::nn::ConvTranspose2d deconv(int level) const;

private:
    torch::Tensor normalize(const torch::Tensor& image) const;

    GeneratorOptions options_;
    backbone::StageExtractor extractor_{nullptr};
    backbone::Aggregator aggregator_{nullptr};
    std::vector<attention::MAFM> mafm_;
    std::vector<attention::CRM> crm_;
    std::vector<torch::nn::ConvTranspose2d> deconv_;  // index 0 -> level 3, 2 -> level 5
    std::vector<torch::nn::Conv2d> heads_;            // index 0 -> level 2
};
TORCH_MODULE(DANet);

// Throws ShapeError unless both images are equal-shaped squares with side
// divisible by 64.
void check_pair(const torch::Tensor& image_t1, const torch::Tensor& image_t2);

int64_t count_parameters(const torch::nn::Module& module);

}  // namespace dagan::generator
