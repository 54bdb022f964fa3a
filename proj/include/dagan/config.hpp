#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dagan/data.hpp"
#include "dagan/discriminator.hpp"
#include "dagan/generator.hpp"

namespace dagan {

enum class Profile { desk, paper };
std::string to_string(Profile profile);
Profile profile_from_string(const std::string& name);

// How deep-supervision targets meet the decoder maps: `full` scores every aux
// map after bilinear upsampling to the input size, `native` scores it at its
// own scale against a nearest-downsampled mask.
enum class SupervisionScale { full, native };

struct ModelConfig {
    backbone::BackboneKind backbone = backbone::BackboneKind::tiny;
    std::array<int64_t, 6> stage_channels{8, 16, 32, 64, 64, 64};
    int64_t proj_channels = 32;
    std::string mafm_pool = "avg";
    int64_t mafm_reduction = 4;
    int64_t crm_expansion = 4;
    std::string decoder = "recursive";
    bool cond_disc = false;
    std::string pretrained_path;
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> std{0.229, 0.224, 0.225};
};

struct TrainConfig {
    double base_lr = 5e-4;
    int64_t max_iter = 300;
    int64_t batch_size = 4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double weight_decay = 1e-4;
    int64_t m_steps = 1;
    double adv_weight = 1.0;
    uint64_t seed = 0;
    bool deterministic = true;
    int64_t self_training_rounds = 1;
    double tau = 0.8;
    double pseudo_shift = 0.1;
    int64_t eval_every = 0;  // 0: once per pass over the training set
    std::string supervision = "full";
};

struct DataConfig {
    std::string root;
    int64_t tile_size = 64;
    std::array<double, 3> split{0.7, 0.1, 0.2};
    bool augment = true;
    double hflip_p = 0.5;
    double vflip_p = 0.5;
    double crop_min_scale = 0.8;
};

struct ExperimentConfig {
    generator::Variant variant = generator::Variant::full;
    Profile profile = Profile::desk;
    ModelConfig model;
    TrainConfig train;
    DataConfig data;

    // 300 iterations, batch 4, tiny backbone, 64-pixel tiles.
    static ExperimentConfig desk();
    // 80000 iterations, batch 16, ResNet-50, 256-pixel tiles.
    static ExperimentConfig paper();
    static ExperimentConfig for_profile(Profile profile);

    // Throws ConfigError naming the offending field.
    void validate() const;

    generator::GeneratorOptions generator_options() const;
    discriminator::DiscriminatorOptions discriminator_options() const;
    data::AugmentConfig augment_config() const;
    SupervisionScale supervision_scale() const;
    bool adversarial() const { return generator::uses_gan(variant); }

    // Canonical structured text: JSON with sorted keys, two-space indent and a
    // trailing newline. from_json(to_json()) reproduces it byte for byte.
    std::string to_json() const;
    static ExperimentConfig from_json(const std::string& text);

    // Hash of every field that changes the network's structure or function.
    std::string fingerprint() const;
};

// Applies "section.key=value" overrides (or "variant=MC" at top level). Values
// are parsed as JSON where possible and as bare strings otherwise. Unknown keys
// or ill-typed values throw ConfigError before anything runs.
ExperimentConfig apply_overrides(const ExperimentConfig& config, const std::vector<std::string>& overrides);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

}  // namespace dagan
