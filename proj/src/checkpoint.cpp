#include <fstream>
#include <sstream>

#include "dagan/errors.hpp"
#include "dagan/trainer.hpp"

// Checkpoint layout (one torch archive):
//   meta_fingerprint, meta_config   config identity and full canonical config
//   meta_iteration, meta_schedule   global and in-phase step counters
//   meta_rng, meta_order, meta_cursor  sampler state
//   meta_best_f1
//   generator, discriminator, optim_g, optim_d   nested archives

namespace dagan::trainer {

namespace ser = torch::serialize;

namespace {

std::string read_string(ser::InputArchive& archive, const std::string& key) {
    c10::IValue value;
    archive.read(key, value);
    return value.toStringRef();
}

ExperimentConfig read_config(ser::InputArchive& archive) {
    return ExperimentConfig::from_json(read_string(archive, "meta_config"));
}

// Adam state keyed by parameter position. The stock serializer keys it by
// tensor address, which differs between processes.
void save_adam(torch::optim::Adam& optim, ser::OutputArchive& archive) {
    const auto& params = optim.param_groups().at(0).params();
    const auto& options = static_cast<const torch::optim::AdamOptions&>(optim.param_groups().at(0).options());
    archive.write("lr", c10::IValue(options.lr()));
    for (size_t i = 0; i < params.size(); ++i) {
        const auto it = optim.state().find(params[i].unsafeGetTensorImpl());
        if (it == optim.state().end()) {
            continue;
        }
        const auto& st = static_cast<const torch::optim::AdamParamState&>(*it->second);
        ser::OutputArchive entry;
        entry.write("step", c10::IValue(st.step()));
        entry.write("exp_avg", st.exp_avg());
        entry.write("exp_avg_sq", st.exp_avg_sq());
        archive.write(std::to_string(i), entry);
    }
}

void load_adam(torch::optim::Adam& optim, ser::InputArchive& archive) {
    auto& group = optim.param_groups().at(0);
    c10::IValue lr;
    archive.read("lr", lr);
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr.toDouble());
    optim.state().clear();
    const auto& params = group.params();
    for (size_t i = 0; i < params.size(); ++i) {
        ser::InputArchive entry;
        if (!archive.try_read(std::to_string(i), entry)) {
            continue;
        }
        auto st = std::make_unique<torch::optim::AdamParamState>();
        c10::IValue step;
        torch::Tensor avg, avg_sq;
        entry.read("step", step);
        entry.read("exp_avg", avg);
        entry.read("exp_avg_sq", avg_sq);
        st->step(step.toInt());
        st->exp_avg(avg.to(params[i].device()));
        st->exp_avg_sq(avg_sq.to(params[i].device()));
        optim.state()[params[i].unsafeGetTensorImpl()] = std::move(st);
    }
}

}  // namespace

void Trainer::save_to(std::ostream& stream) {
    ser::OutputArchive archive;
    archive.write("meta_fingerprint", c10::IValue(config_.fingerprint()));
    archive.write("meta_config", c10::IValue(config_.to_json()));
    archive.write("meta_iteration", c10::IValue(iteration_));
    archive.write("meta_schedule", c10::IValue(schedule_iteration_));
    archive.write("meta_rng", c10::IValue(rng_state()));
    std::vector<int64_t> order(order_.begin(), order_.end());
    archive.write("meta_order", torch::tensor(order, torch::kInt64));
    archive.write("meta_cursor", c10::IValue(static_cast<int64_t>(cursor_)));
    archive.write("meta_best_f1", c10::IValue(best_f1_));

    ser::OutputArchive g, d, og, od;
    generator_->save(g);
    discriminator_->save(d);
    save_adam(*optim_g_, og);
    save_adam(*optim_d_, od);
    archive.write("generator", g);
    archive.write("discriminator", d);
    archive.write("optim_g", og);
    archive.write("optim_d", od);
    archive.save_to(stream);
}

void Trainer::save(const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw DataError("cannot write checkpoint " + path.string());
    }
    save_to(os);
}

void Trainer::load_from(std::istream& stream) {
    ser::InputArchive archive;
    archive.load_from(stream);
    const auto fingerprint = read_string(archive, "meta_fingerprint");
    if (fingerprint != config_.fingerprint()) {
        throw ConfigError("checkpoint fingerprint " + fingerprint + " does not match configuration fingerprint " +
                          config_.fingerprint());
    }
    c10::IValue value;
    archive.read("meta_iteration", value);
    iteration_ = value.toInt();
    archive.read("meta_schedule", value);
    schedule_iteration_ = value.toInt();
    std::istringstream rng(read_string(archive, "meta_rng"));
    rng >> rng_;
    torch::Tensor order;
    archive.read("meta_order", order);
    order_.clear();
    for (int64_t i = 0; i < order.numel(); ++i) {
        order_.push_back(static_cast<size_t>(order[i].item<int64_t>()));
    }
    archive.read("meta_cursor", value);
    cursor_ = static_cast<size_t>(value.toInt());
    archive.read("meta_best_f1", value);
    best_f1_ = value.toDouble();

    ser::InputArchive g, d, og, od;
    archive.read("generator", g);
    archive.read("discriminator", d);
    archive.read("optim_g", og);
    archive.read("optim_d", od);
    generator_->load(g);
    discriminator_->load(d);
    load_adam(*optim_g_, og);
    load_adam(*optim_d_, od);
}

void Trainer::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw DataError("cannot read checkpoint " + path.string());
    }
    load_from(is);
}

Trainer Trainer::from_checkpoint(const std::filesystem::path& path) {
    ser::InputArchive archive;
    try {
        archive.load_from(path.string());
    } catch (const c10::Error& e) {
        throw DataError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
    Trainer trainer(read_config(archive));
    trainer.load(path);
    return trainer;
}

}  // namespace dagan::trainer
