#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

namespace dagan::objectives {

inline constexpr double kBceEpsilon = 1e-7;
inline constexpr double kDiceSmooth = 1.0;

// Mean binary cross-entropy over every element, with `pred` clamped into
// [eps, 1 - eps].
torch::Tensor bce_loss(const torch::Tensor& pred, const torch::Tensor& target);

// 1 - (2 sum(p t) + s) / (sum(p) + sum(t) + s). A 4-d [B, ...] input is scored
// per sample and averaged; anything else is scored as one map.
torch::Tensor dice_loss(const torch::Tensor& pred, const torch::Tensor& target);

// -mean(log D(G(x))) for a batch of discriminator probabilities.
torch::Tensor generator_loss(const torch::Tensor& d_on_fake);

// -mean(log D(y) + log(1 - D(G(x)))).
torch::Tensor adversarial_loss(const torch::Tensor& d_on_real, const torch::Tensor& d_on_fake);

struct SupervisedTerms {
    torch::Tensor bce;   // sum over decoder levels
    torch::Tensor dice;  // sum over decoder levels
    torch::Tensor total() const { return bce + dice; }
};

// Deep supervision over exactly four decoder maps. The target is resampled with
// nearest-neighbour to each map's spatial size, so both native-scale and
// full-resolution maps are accepted.
SupervisedTerms deep_supervision(const std::vector<torch::Tensor>& aux_probs, const torch::Tensor& target);

// Per-iteration loss bookkeeping. total_d groups the adversarial and supervised
// parts the way the discriminator objective writes them.
struct LossReport {
    double l_g = 0.0;
    double l_d_adv = 0.0;
    double l_bce = 0.0;
    double l_dice = 0.0;
    double total_d = 0.0;

    bool finite() const;
    std::string to_json() const;
};

struct DiscriminatorObjective {
    torch::Tensor adversarial;
    SupervisedTerms supervised;
    LossReport report;
};

// Full discriminator-side objective. Only `adversarial` depends on the
// discriminator's parameters; the supervised part is what the trainer routes to
// the generator.
DiscriminatorObjective discriminator_objective(const torch::Tensor& d_on_real, const torch::Tensor& d_on_fake,
                                               const std::vector<torch::Tensor>& aux_probs,
                                               const torch::Tensor& target);

}  // namespace dagan::objectives
