#include "dagan/commands.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "dagan/errors.hpp"
#include "dagan/image_io.hpp"
#include "dagan/trainer.hpp"

namespace dagan::cli {

namespace fs = std::filesystem;
using nlohmann::json;

ExperimentConfig resolve_config(const CommandOptions& options) {
    ExperimentConfig config = options.config
                                  ? load_config(*options.config)
                                  : ExperimentConfig::for_profile(profile_from_string(options.profile.value_or("desk")));
    std::vector<std::string> flags;
    if (options.config && options.profile) {
        flags.push_back("profile=" + *options.profile);
    }
    if (options.variant) {
        flags.push_back("variant=" + *options.variant);
    }
    if (options.seed) {
        flags.push_back("train.seed=" + std::to_string(*options.seed));
    }
    if (options.data) {
        flags.push_back("data.root=" + json(options.data->string()).dump());
    }
    flags.insert(flags.end(), options.overrides.begin(), options.overrides.end());
    return flags.empty() ? config : apply_overrides(config, flags);
}

namespace {

std::vector<data::BiTemporalSample> load_refs(const std::vector<data::SampleRef>& refs) {
    std::vector<data::BiTemporalSample> out;
    out.reserve(refs.size());
    for (const auto& ref : refs) {
        out.push_back(data::load_sample(ref));
    }
    return out;
}

fs::path require_data_root(const ExperimentConfig& config) {
    if (config.data.root.empty()) {
        throw DataError("no dataset root given (use --data or data.root)");
    }
    const fs::path root = config.data.root;
    if (!fs::is_directory(root)) {
        throw DataError("dataset root does not exist: " + root.string());
    }
    return root;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream os(path);
    if (!os) {
        throw DataError("cannot write " + path.string());
    }
    os << text;
}

trainer::ExperimentResult train_into(const ExperimentConfig& config, const fs::path& out, const Logger& log) {
    const auto root = require_data_root(config);
    auto refs = data::scan_dataset_dir(root);
    auto manifests = data::split_dataset(refs, config.data.split, config.train.seed);
    for (auto* m : {&manifests.train, &manifests.val, &manifests.test}) {
        m->tile_size = config.data.tile_size;
    }
    fs::create_directories(out);
    data::save_manifests(out / "manifest.jsonl", manifests);
    save_config(out / "config.json", config);

    const auto train = data::tile_pairs(load_refs(manifests.train.samples), config.data.tile_size);
    const auto val = data::tile_pairs(load_refs(manifests.val.samples), config.data.tile_size);
    log("training " + generator::to_string(config.variant) + " on " + std::to_string(train.size()) +
        " tiles, validating on " + std::to_string(val.size()));

    trainer::Trainer trainer(config);
    log("generator parameters: " + std::to_string(trainer.generator()->count_parameters()));
    trainer::ExperimentIO io;
    io.out_dir = out;
    io.log = log;
    return trainer::run_experiment(trainer, train, val, io);
}

}  // namespace

void cmd_train(const CommandOptions& options, const Logger& log) {
    const auto config = resolve_config(options);
    const auto result = train_into(config, options.out, log);
    log("metric report: " + result.report_json);
    log("checkpoint: " + result.checkpoint.string());
}

void cmd_eval(const CommandOptions& options, const Logger& log) {
    if (!options.checkpoint) {
        throw ConfigError("eval requires --checkpoint");
    }
    auto trainer = trainer::Trainer::from_checkpoint(*options.checkpoint);
    if (options.config || options.variant || !options.overrides.empty()) {
        const auto expected = resolve_config(options);
        if (expected.fingerprint() != trainer.config().fingerprint()) {
            throw ConfigError("checkpoint fingerprint " + trainer.config().fingerprint() +
                              " does not match the requested configuration " + expected.fingerprint());
        }
    }
    auto config = trainer.config();
    if (options.data) {
        config.data.root = options.data->string();
    }
    const auto root = require_data_root(config);

    std::vector<data::SampleRef> refs;
    fs::path manifest_path = options.manifest.value_or(options.checkpoint->parent_path() / "manifest.jsonl");
    if (fs::exists(manifest_path)) {
        refs = data::load_manifests(manifest_path).get(data::split_from_string(options.split)).samples;
    } else if (options.manifest) {
        throw DataError("manifest not found: " + manifest_path.string());
    } else {
        refs = data::scan_dataset_dir(root);
    }
    if (refs.empty()) {
        throw DataError("nothing to evaluate: the '" + options.split + "' split is empty");
    }

    metrics::ConfusionMatrix total;
    std::vector<metrics::ImageTally> per_image;
    for (const auto& ref : refs) {
        const auto sample = data::load_sample(ref);
        const auto prob = trainer.predict_image(sample.image_t1, sample.image_t2);
        const auto cm = metrics::accumulate({}, prob, sample.mask);
        total += cm;
        per_image.push_back({sample.id, cm});
        if (options.write_maps) {
            io::write_color(options.out / "maps" / (sample.id + ".png"), metrics::error_map(prob, sample.mask));
        }
    }
    const auto report = metrics::compute_all(total);
    fs::create_directories(options.out);
    write_text(options.out / "eval_report.json", metrics::to_json(report) + "\n");
    metrics::write_per_image_csv(options.out / "per_image.csv", per_image);
    log("evaluated " + std::to_string(refs.size()) + " images: " + metrics::to_json(report));
}

void cmd_predict(const CommandOptions& options, const Logger& log) {
    if (!options.checkpoint) {
        throw ConfigError("predict requires --checkpoint");
    }
    auto trainer = trainer::Trainer::from_checkpoint(*options.checkpoint);
    const auto t1 = io::read_rgb(options.image_t1);
    const auto t2 = io::read_rgb(options.image_t2);
    if (t1.sizes() != t2.sizes()) {
        throw DataError("T1 and T2 images differ in size");
    }
    torch::Tensor prob;
    try {
        prob = trainer.predict_image(t1, t2);
    } catch (const ShapeError& e) {
        throw DataError(e.what());
    }
    io::write_mask(options.out / "change_mask.png", prob.gt(0.5));
    io::write_probability(options.out / "change_prob.png", prob);
    const double area = prob.gt(0.5).to(torch::kDouble).mean().item<double>();
    log("changed area fraction: " + std::to_string(area));
}

void cmd_ablate(const CommandOptions& options, const Logger& log) {
    const auto base = resolve_config(options);
    json table = json::array();
    for (const auto& name : options.variants) {
        auto config = base;
        config.variant = generator::variant_from_string(name);
        const auto result = train_into(config, options.out / name, log);
        auto row = json::parse(result.report_json);
        row["variant"] = name;
        row["generator_parameters"] = result.generator_parameters;
        row["discriminator_parameters"] = config.adversarial() ? result.discriminator_parameters : 0;
        table.push_back(row);
        log("variant " + name + ": " + row.dump());
    }
    write_text(options.out / "ablation_report.json", table.dump(2) + "\n");
}

void cmd_synth(const CommandOptions& options, const Logger& log) {
    if (options.count < 1 || options.size < 16) {
        throw ConfigError("synth needs --count >= 1 and --size >= 16");
    }
    const auto samples = data::make_synthetic_dataset(options.count, options.size, options.seed.value_or(0));
    data::write_dataset_dir(options.out, samples);
    log("wrote " + std::to_string(samples.size()) + " synthetic pairs to " + options.out.string());
}

int run(const std::string& verb, const CommandOptions& options, const Logger& log, const Logger& error) {
    try {
        if (verb == "train") {
            cmd_train(options, log);
        } else if (verb == "eval") {
            cmd_eval(options, log);
        } else if (verb == "predict") {
            cmd_predict(options, log);
        } else if (verb == "ablate") {
            cmd_ablate(options, log);
        } else if (verb == "synth") {
            cmd_synth(options, log);
        } else {
            error("unknown command '" + verb + "'");
            return kConfigError;
        }
    } catch (const ConfigError& e) {
        error(std::string("config error: ") + e.what());
        return kConfigError;
    } catch (const DataError& e) {
        error(std::string("data error: ") + e.what());
        return kDataError;
    } catch (const ShapeError& e) {
        error(std::string("data error: ") + e.what());
        return kDataError;
    } catch (const NumericError& e) {
        error(std::string("numeric failure: ") + e.what());
        return kNumericError;
    } catch (const std::exception& e) {
        error(e.what());
        return kFailure;
    }
    return kOk;
}

}  // namespace dagan::cli
