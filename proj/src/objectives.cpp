#include "dagan/objectives.hpp"

#include <cmath>

#include <json.hpp>

#include "dagan/errors.hpp"

namespace dagan::objectives {

namespace F = torch::nn::functional;

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes()) {
        throw ShapeError(std::string(what) + ": prediction and target shapes differ");
    }
}

torch::Tensor clamp_prob(const torch::Tensor& p) {
    return p.clamp(kBceEpsilon, 1.0 - kBceEpsilon);
}

}  // namespace

torch::Tensor bce_loss(const torch::Tensor& pred, const torch::Tensor& target) {
    require_same_shape(pred, target, "bce_loss");
    auto p = clamp_prob(pred);
    auto t = target.to(pred.dtype());
    return -(t * p.log() + (1.0 - t) * (1.0 - p).log()).mean();
}

torch::Tensor dice_loss(const torch::Tensor& pred, const torch::Tensor& target) {
    require_same_shape(pred, target, "dice_loss");
    auto t = target.to(pred.dtype());
    if (pred.dim() == 4) {
        auto p = pred.flatten(1);
        auto y = t.flatten(1);
        auto score = (2.0 * (p * y).sum(1) + kDiceSmooth) / (p.sum(1) + y.sum(1) + kDiceSmooth);
        return (1.0 - score).mean();
    }
    return 1.0 - (2.0 * (pred * t).sum() + kDiceSmooth) / (pred.sum() + t.sum() + kDiceSmooth);
}

torch::Tensor generator_loss(const torch::Tensor& d_on_fake) {
    return -clamp_prob(d_on_fake).log().mean();
}

torch::Tensor adversarial_loss(const torch::Tensor& d_on_real, const torch::Tensor& d_on_fake) {
    return -(clamp_prob(d_on_real).log().mean() + (1.0 - clamp_prob(d_on_fake)).log().mean());
}

SupervisedTerms deep_supervision(const std::vector<torch::Tensor>& aux_probs, const torch::Tensor& target) {
    if (aux_probs.size() != 4) {
        throw ShapeError("deep supervision expects 4 decoder maps, got " + std::to_string(aux_probs.size()));
    }
    if (target.dim() != 4) {
        throw ShapeError("deep supervision target must be [B, 1, H, W]");
    }
    SupervisedTerms terms;
    for (const auto& prob : aux_probs) {
        auto y = target.to(prob.dtype());
        if (prob.size(2) != y.size(2) || prob.size(3) != y.size(3)) {
            y = F::interpolate(y, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{prob.size(2), prob.size(3)})
                                      .mode(torch::kNearest));
        }
        auto bce = bce_loss(prob, y);
        auto dice = dice_loss(prob, y);
        terms.bce = terms.bce.defined() ? terms.bce + bce : bce;
        terms.dice = terms.dice.defined() ? terms.dice + dice : dice;
    }
    return terms;
}

bool LossReport::finite() const {
    return std::isfinite(l_g) && std::isfinite(l_d_adv) && std::isfinite(l_bce) && std::isfinite(l_dice) &&
           std::isfinite(total_d);
}

std::string LossReport::to_json() const {
    nlohmann::json j = {{"l_g", l_g}, {"l_d_adv", l_d_adv}, {"l_bce", l_bce}, {"l_dice", l_dice}, {"total_d", total_d}};
    return j.dump();
}

DiscriminatorObjective discriminator_objective(const torch::Tensor& d_on_real, const torch::Tensor& d_on_fake,
                                               const std::vector<torch::Tensor>& aux_probs,
                                               const torch::Tensor& target) {
    DiscriminatorObjective out;
    out.adversarial = adversarial_loss(d_on_real, d_on_fake);
    out.supervised = deep_supervision(aux_probs, target);
    out.report.l_d_adv = out.adversarial.item<double>();
    out.report.l_bce = out.supervised.bce.item<double>();
    out.report.l_dice = out.supervised.dice.item<double>();
    out.report.total_d = out.report.l_d_adv + out.report.l_bce + out.report.l_dice;
    return out;
}

}  // namespace dagan::objectives
