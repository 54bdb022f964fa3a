#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dagan/commands.hpp"

namespace {

void add_common(CLI::App* cmd, dagan::cli::CommandOptions& o) {
    cmd->add_option("--config", o.config, "JSON experiment config");
    cmd->add_option("--profile", o.profile, "Default profile")->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("--variant", o.variant, "Model variant")->check(CLI::IsMember({"R", "A", "M", "MC", "full"}));
    cmd->add_option("--seed", o.seed, "Experiment seed");
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--set", o.overrides, "Override a config field, section.key=value")->allow_extra_args(false);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-attention GAN change detection"};
    app.require_subcommand(1);
    dagan::cli::CommandOptions o;

    auto* train = app.add_subcommand("train", "Train, self-train and retrain one variant");
    add_common(train, o);
    train->add_option("--data", o.data, "Dataset root with A/, B/ and label/");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
    add_common(eval, o);
    eval->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
    eval->add_option("--data", o.data, "Dataset root");
    eval->add_option("--manifest", o.manifest, "Manifest written by train");
    eval->add_option("--split", o.split, "Manifest split")->check(CLI::IsMember({"train", "val", "test"}));
    eval->add_flag("--maps", o.write_maps, "Write error-colour maps");

    auto* predict = app.add_subcommand("predict", "Predict a change mask for one image pair");
    add_common(predict, o);
    predict->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
    predict->add_option("--t1", o.image_t1, "Image at time 1")->required();
    predict->add_option("--t2", o.image_t2, "Image at time 2")->required();

    auto* ablate = app.add_subcommand("ablate", "Train every variant and tabulate");
    add_common(ablate, o);
    ablate->add_option("--data", o.data, "Dataset root");
    ablate->add_option("--variants", o.variants, "Variants to run");

    auto* synth = app.add_subcommand("synth", "Write a synthetic change-detection dataset");
    add_common(synth, o);
    synth->add_option("--count", o.count, "Number of pairs");
    synth->add_option("--size", o.size, "Image side length");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return dagan::cli::kConfigError;
    }

    const std::string verb = app.get_subcommands().front()->get_name();
    return dagan::cli::run(
        verb, o, [](const std::string& line) { std::cout << line << std::endl; },
        [](const std::string& line) { std::cerr << "dagan: " << line << std::endl; });
}
