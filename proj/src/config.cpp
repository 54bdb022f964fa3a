#include "dagan/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dagan/errors.hpp"

namespace dagan {

using nlohmann::json;

std::string to_string(Profile profile) {
    return profile == Profile::paper ? "paper" : "desk";
}

Profile profile_from_string(const std::string& name) {
    if (name == "desk") return Profile::desk;
    if (name == "paper") return Profile::paper;
    throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
}

ExperimentConfig ExperimentConfig::desk() {
    return {};
}

ExperimentConfig ExperimentConfig::paper() {
    ExperimentConfig c;
    c.profile = Profile::paper;
    const auto plan = backbone::StagePlan::resnet50();
    c.model.backbone = plan.kind;
    c.model.stage_channels = plan.stage_channels;
    c.model.proj_channels = plan.proj_channels;
    c.train.max_iter = 80000;
    c.train.batch_size = 16;
    c.train.eval_every = 1000;
    c.data.tile_size = 256;
    return c;
}

ExperimentConfig ExperimentConfig::for_profile(Profile profile) {
    return profile == Profile::paper ? paper() : desk();
}

namespace {

json to_object(const ExperimentConfig& c) {
    json model = {{"backbone", backbone::to_string(c.model.backbone)},
                  {"stage_channels", c.model.stage_channels},
                  {"proj_channels", c.model.proj_channels},
                  {"mafm_pool", c.model.mafm_pool},
                  {"mafm_reduction", c.model.mafm_reduction},
                  {"crm_expansion", c.model.crm_expansion},
                  {"decoder", c.model.decoder},
                  {"cond_disc", c.model.cond_disc},
                  {"pretrained_path", c.model.pretrained_path},
                  {"mean", c.model.mean},
                  {"std", c.model.std}};
    json train = {{"base_lr", c.train.base_lr},
                  {"max_iter", c.train.max_iter},
                  {"batch_size", c.train.batch_size},
                  {"beta1", c.train.beta1},
                  {"beta2", c.train.beta2},
                  {"weight_decay", c.train.weight_decay},
                  {"m_steps", c.train.m_steps},
                  {"adv_weight", c.train.adv_weight},
                  {"seed", c.train.seed},
                  {"deterministic", c.train.deterministic},
                  {"self_training_rounds", c.train.self_training_rounds},
                  {"tau", c.train.tau},
                  {"pseudo_shift", c.train.pseudo_shift},
                  {"eval_every", c.train.eval_every},
                  {"supervision", c.train.supervision}};
    json data = {{"root", c.data.root},
                 {"tile_size", c.data.tile_size},
                 {"split", c.data.split},
                 {"augment", c.data.augment},
                 {"hflip_p", c.data.hflip_p},
                 {"vflip_p", c.data.vflip_p},
                 {"crop_min_scale", c.data.crop_min_scale}};
    return {{"variant", generator::to_string(c.variant)},
            {"profile", to_string(c.profile)},
            {"model", model},
            {"train", train},
            {"data", data}};
}

bool compatible(const json& reference, const json& value) {
    if (reference.is_number_float()) {
        return value.is_number();
    }
    if (reference.is_number_unsigned()) {
        return value.is_number_unsigned() || (value.is_number_integer() && value.get<int64_t>() >= 0);
    }
    if (reference.is_number_integer()) {
        return value.is_number_integer();
    }
    if (reference.is_array()) {
        if (!value.is_array() || value.size() != reference.size()) {
            return false;
        }
        for (size_t i = 0; i < value.size(); ++i) {
            if (!compatible(reference[i], value[i])) {
                return false;
            }
        }
        return true;
    }
    return reference.type() == value.type();
}

std::string type_name(const json& reference) {
    if (reference.is_number_float()) return "number";
    if (reference.is_number_integer()) return "integer";
    if (reference.is_array()) return "array of " + std::to_string(reference.size()) + " " + type_name(reference[0]) + "s";
    return reference.type_name();
}

// Overlays `input` on `base`, rejecting keys that `base` does not have.
void merge_strict(json& base, const json& input, const std::string& prefix) {
    if (!input.is_object()) {
        throw ConfigError((prefix.empty() ? std::string("config") : prefix) + ": expected an object");
    }
    for (const auto& [key, value] : input.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!base.contains(key)) {
            throw ConfigError("unknown config key '" + path + "'");
        }
        auto& slot = base[key];
        if (slot.is_object()) {
            merge_strict(slot, value, path);
        } else if (!compatible(slot, value)) {
            throw ConfigError("config field '" + path + "': expected " + type_name(slot) + ", got " + value.dump());
        } else if (slot.is_number_float() && value.is_number()) {
            slot = value.get<double>();
        } else if (slot.is_array()) {
            for (size_t i = 0; i < slot.size(); ++i) {
                slot[i] = slot[i].is_number_float() ? json(value[i].get<double>()) : value[i];
            }
        } else {
            slot = value;
        }
    }
}

ExperimentConfig from_object(const json& j) {
    ExperimentConfig c;
    c.variant = generator::variant_from_string(j.at("variant").get<std::string>());
    c.profile = profile_from_string(j.at("profile").get<std::string>());
    const auto& m = j.at("model");
    c.model.backbone = backbone::backbone_from_string(m.at("backbone").get<std::string>());
    c.model.stage_channels = m.at("stage_channels").get<std::array<int64_t, 6>>();
    c.model.proj_channels = m.at("proj_channels").get<int64_t>();
    c.model.mafm_pool = m.at("mafm_pool").get<std::string>();
    c.model.mafm_reduction = m.at("mafm_reduction").get<int64_t>();
    c.model.crm_expansion = m.at("crm_expansion").get<int64_t>();
    c.model.decoder = m.at("decoder").get<std::string>();
    c.model.cond_disc = m.at("cond_disc").get<bool>();
    c.model.pretrained_path = m.at("pretrained_path").get<std::string>();
    c.model.mean = m.at("mean").get<std::array<double, 3>>();
    c.model.std = m.at("std").get<std::array<double, 3>>();
    const auto& t = j.at("train");
    c.train.base_lr = t.at("base_lr").get<double>();
    c.train.max_iter = t.at("max_iter").get<int64_t>();
    c.train.batch_size = t.at("batch_size").get<int64_t>();
    c.train.beta1 = t.at("beta1").get<double>();
    c.train.beta2 = t.at("beta2").get<double>();
    c.train.weight_decay = t.at("weight_decay").get<double>();
    c.train.m_steps = t.at("m_steps").get<int64_t>();
    c.train.adv_weight = t.at("adv_weight").get<double>();
    c.train.seed = t.at("seed").get<uint64_t>();
    c.train.deterministic = t.at("deterministic").get<bool>();
    c.train.self_training_rounds = t.at("self_training_rounds").get<int64_t>();
    c.train.tau = t.at("tau").get<double>();
    c.train.pseudo_shift = t.at("pseudo_shift").get<double>();
    c.train.eval_every = t.at("eval_every").get<int64_t>();
    c.train.supervision = t.at("supervision").get<std::string>();
    const auto& d = j.at("data");
    c.data.root = d.at("root").get<std::string>();
    c.data.tile_size = d.at("tile_size").get<int64_t>();
    c.data.split = d.at("split").get<std::array<double, 3>>();
    c.data.augment = d.at("augment").get<bool>();
    c.data.hflip_p = d.at("hflip_p").get<double>();
    c.data.vflip_p = d.at("vflip_p").get<double>();
    c.data.crop_min_scale = d.at("crop_min_scale").get<double>();
    return c;
}

ExperimentConfig parse_and_validate(const json& input) {
    if (!input.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    Profile profile = Profile::desk;
    if (input.contains("profile")) {
        if (!input.at("profile").is_string()) {
            throw ConfigError("config field 'profile': expected string");
        }
        profile = profile_from_string(input.at("profile").get<std::string>());
    }
    json merged = to_object(ExperimentConfig::for_profile(profile));
    merge_strict(merged, input, "");
    auto config = from_object(merged);
    config.validate();
    return config;
}

void require(bool condition, const std::string& field, const std::string& rule) {
    if (!condition) {
        throw ConfigError("config field '" + field + "': " + rule);
    }
}

uint64_t fnv1a(const std::string& text) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

void ExperimentConfig::validate() const {
    for (size_t i = 0; i < model.stage_channels.size(); ++i) {
        require(model.stage_channels[i] > 0, "model.stage_channels", "every entry must be positive");
    }
    require(model.proj_channels > 0, "model.proj_channels", "must be positive");
    attention::gate_pool_from_string(model.mafm_pool);
    generator::decoder_from_string(model.decoder);
    require(model.mafm_reduction >= 1, "model.mafm_reduction", "must be >= 1");
    require(model.crm_expansion >= 1, "model.crm_expansion", "must be >= 1");
    for (double s : model.std) {
        require(s > 0.0, "model.std", "entries must be positive");
    }
    require(train.base_lr > 0.0 && std::isfinite(train.base_lr), "train.base_lr", "must be > 0");
    require(train.max_iter >= 1, "train.max_iter", "must be >= 1");
    require(train.batch_size >= 1, "train.batch_size", "must be >= 1");
    require(train.beta1 > 0.0 && train.beta1 < 1.0, "train.beta1", "must lie in (0, 1)");
    require(train.beta2 > 0.0 && train.beta2 < 1.0, "train.beta2", "must lie in (0, 1)");
    require(train.weight_decay >= 0.0, "train.weight_decay", "must be >= 0");
    require(train.m_steps >= 1, "train.m_steps", "must be >= 1");
    require(train.adv_weight >= 0.0, "train.adv_weight", "must be >= 0");
    require(train.self_training_rounds >= 0, "train.self_training_rounds", "must be >= 0");
    require(train.tau >= 0.0 && train.tau <= 1.0, "train.tau", "must lie in [0, 1]");
    require(train.pseudo_shift >= 0.0 && train.pseudo_shift < 0.5, "train.pseudo_shift", "must lie in [0, 0.5)");
    require(train.eval_every >= 0, "train.eval_every", "must be >= 0");
    require(train.supervision == "full" || train.supervision == "native", "train.supervision",
            "must be 'full' or 'native'");
    require(data.tile_size >= 64 && data.tile_size % 64 == 0, "data.tile_size", "must be a positive multiple of 64");
    for (double r : data.split) {
        require(r >= 0.0, "data.split", "ratios must be nonnegative");
    }
    require(data.split[0] > 0.0, "data.split", "train ratio must be positive");
    try {
        augment_config().validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("config section 'data': ") + e.what());
    }
}

generator::GeneratorOptions ExperimentConfig::generator_options() const {
    backbone::StagePlan plan;
    plan.kind = model.backbone;
    plan.stage_channels = model.stage_channels;
    plan.proj_channels = model.proj_channels;
    auto o = generator::GeneratorOptions::for_variant(variant, plan);
    o.mafm_pool = attention::gate_pool_from_string(model.mafm_pool);
    o.mafm_reduction = model.mafm_reduction;
    o.crm_expansion = model.crm_expansion;
    o.decoder = generator::decoder_from_string(model.decoder);
    o.mean = model.mean;
    o.std = model.std;
    return o;
}

discriminator::DiscriminatorOptions ExperimentConfig::discriminator_options() const {
    discriminator::DiscriminatorOptions o;
    o.conditional = model.cond_disc;
    return o;
}

data::AugmentConfig ExperimentConfig::augment_config() const {
    data::AugmentConfig a;
    a.enabled = data.augment;
    a.hflip_p = data.hflip_p;
    a.vflip_p = data.vflip_p;
    a.crop_min_scale = data.crop_min_scale;
    return a;
}

SupervisionScale ExperimentConfig::supervision_scale() const {
    return train.supervision == "native" ? SupervisionScale::native : SupervisionScale::full;
}

std::string ExperimentConfig::to_json() const {
    return to_object(*this).dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    json parsed;
    try {
        parsed = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_and_validate(parsed);
}

std::string ExperimentConfig::fingerprint() const {
    json model_part = to_object(*this).at("model");
    model_part.erase("pretrained_path");
    json arch = {{"variant", generator::to_string(variant)}, {"model", model_part}};
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(arch.dump())));
    return buf;
}

ExperimentConfig apply_overrides(const ExperimentConfig& config, const std::vector<std::string>& overrides) {
    json patch = json::object();
    for (const auto& item : overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("override '" + item + "' is not of the form section.key=value");
        }
        const std::string key = item.substr(0, eq);
        const std::string raw = item.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::parse_error&) {
            value = raw;
        }
        json* node = &patch;
        std::stringstream path(key);
        std::string part;
        std::vector<std::string> parts;
        while (std::getline(path, part, '.')) {
            parts.push_back(part);
        }
        for (size_t i = 0; i + 1 < parts.size(); ++i) {
            node = &(*node)[parts[i]];
            if (!node->is_object()) {
                *node = json::object();
            }
        }
        (*node)[parts.back()] = value;
    }
    // Overrides sit on top of the full current config, so the profile default
    // table only fills keys that neither mentions.
    json base = to_object(config);
    merge_strict(base, patch, "");
    return parse_and_validate(base);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw ConfigError("cannot read config file " + path.string());
    }
    std::stringstream ss;
    ss << is.rdbuf();
    return ExperimentConfig::from_json(ss.str());
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path);
    if (!os) {
        throw ConfigError("cannot write config file " + path.string());
    }
    os << config.to_json();
}

}  // namespace dagan
