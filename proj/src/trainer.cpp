#include "dagan/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "dagan/errors.hpp"

namespace dagan::trainer {

using objectives::LossReport;

double poly_lr(int64_t iter, int64_t max_iter, double base_lr, double power) {
    if (max_iter < 1 || iter < 0 || iter > max_iter) {
        throw std::out_of_range("poly_lr: iteration " + std::to_string(iter) + " outside [0, " +
                                std::to_string(max_iter) + "]");
    }
    return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

void seed_everything(uint64_t seed, bool deterministic) {
    torch::manual_seed(seed);
    at::globalContext().setDeterministicAlgorithms(deterministic, /*warn_only=*/true);
}

Trainer::Trainer(const ExperimentConfig& config) : config_(config), rng_(config.train.seed) {
    config_.validate();
    seed_everything(config_.train.seed, config_.train.deterministic);
    generator_ = generator::DANet(config_.generator_options());
    discriminator_ = discriminator::Discriminator(config_.discriminator_options());

    if (config_.model.backbone == backbone::BackboneKind::resnet50) {
        std::filesystem::path weights = config_.model.pretrained_path;
        if (weights.empty()) {
            weights = backbone::default_pretrained_path();
        }
        if (!weights.empty()) {
            auto extractor = generator_->extractor();
            backbone::load_pretrained(extractor, weights);
        }
    }

    const auto& t = config_.train;
    auto adam = [&]() {
        return torch::optim::AdamOptions(t.base_lr).betas({t.beta1, t.beta2}).weight_decay(t.weight_decay);
    };
    optim_g_ = std::make_unique<torch::optim::Adam>(generator_->parameters(), adam());
    optim_d_ = std::make_unique<torch::optim::Adam>(discriminator_->parameters(), adam());
    generator_->train();
    discriminator_->train();
}

double Trainer::current_lr() const {
    const auto max_iter = config_.train.max_iter;
    return poly_lr(std::min(schedule_iteration_, max_iter), max_iter, config_.train.base_lr);
}

void Trainer::set_lr(double lr) {
    for (auto* optim : {optim_g_.get(), optim_d_.get()}) {
        for (auto& group : optim->param_groups()) {
            static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
        }
    }
}

void Trainer::set_requires_grad(torch::nn::Module& module, bool flag) {
    for (auto& p : module.parameters(true)) {
        p.set_requires_grad(flag);
    }
}

objectives::SupervisedTerms Trainer::supervised(const generator::ChangePrediction& pred,
                                                const torch::Tensor& mask) const {
    const auto& maps = config_.supervision_scale() == SupervisionScale::full ? pred.aux_probs_full : pred.aux_probs;
    return objectives::deep_supervision(maps, mask);
}

LossReport Trainer::generator_step(const data::Batch& batch, torch::Tensor* fake) {
    generator_->train();
    set_requires_grad(*discriminator_, false);
    optim_g_->zero_grad();

    auto pred = generator_->forward(batch.image_t1, batch.image_t2);
    auto terms = supervised(pred, batch.mask);
    auto loss = terms.total();

    LossReport report;
    report.l_bce = terms.bce.item<double>();
    report.l_dice = terms.dice.item<double>();
    if (config_.adversarial()) {
        auto d_fake = discriminator_->forward(pred.final_prob, batch.image_t1, batch.image_t2);
        auto l_g = objectives::generator_loss(d_fake);
        report.l_g = l_g.item<double>();
        loss = loss + config_.train.adv_weight * l_g;
    }
    report.total_d = report.l_bce + report.l_dice;
    if (!std::isfinite(loss.item<double>())) {
        set_requires_grad(*discriminator_, true);
        throw NumericError("non-finite generator loss at iteration " + std::to_string(iteration_) + ": " +
                           report.to_json());
    }
    loss.backward();
    optim_g_->step();
    set_requires_grad(*discriminator_, true);
    if (fake != nullptr) {
        *fake = pred.final_prob.detach();
    }
    return report;
}

double Trainer::discriminator_step(const data::Batch& batch, const torch::Tensor& fake) {
    optim_d_->zero_grad();
    auto d_real = discriminator_->forward(batch.mask, batch.image_t1, batch.image_t2);
    auto d_fake = discriminator_->forward(fake.detach(), batch.image_t1, batch.image_t2);
    auto loss = objectives::adversarial_loss(d_real, d_fake);
    const double value = loss.item<double>();
    if (!std::isfinite(value)) {
        throw NumericError("non-finite discriminator loss at iteration " + std::to_string(iteration_));
    }
    loss.backward();
    optim_d_->step();
    return value;
}

LossReport Trainer::train_step(const data::Batch& batch) {
    set_lr(current_lr());
    LossReport report;
    for (int64_t m = 0; m < config_.train.m_steps; ++m) {
        torch::Tensor fake;
        report = generator_step(batch, &fake);
        if (config_.adversarial()) {
            report.l_d_adv = discriminator_step(batch, fake);
        }
        report.total_d = report.l_d_adv + report.l_bce + report.l_dice;
    }
    if (!report.finite()) {
        throw NumericError("non-finite loss at iteration " + std::to_string(iteration_) + ": " + report.to_json());
    }
    ++iteration_;
    ++schedule_iteration_;
    return report;
}

data::Batch Trainer::next_batch(const std::vector<data::BiTemporalSample>& samples, bool augment) {
    if (samples.empty()) {
        throw DataError("next_batch: no training samples");
    }
    const auto n = samples.size();
    const auto bs = std::min<size_t>(static_cast<size_t>(config_.train.batch_size), n);
    if (order_.size() != n || cursor_ + bs > n) {
        order_.resize(n);
        for (size_t i = 0; i < n; ++i) {
            order_[i] = i;
        }
        for (size_t i = n - 1; i > 0; --i) {
            std::swap(order_[i], order_[rng_() % (i + 1)]);
        }
        cursor_ = 0;
    }
    const auto aug = config_.augment_config();
    std::vector<data::BiTemporalSample> picked;
    for (size_t k = 0; k < bs; ++k) {
        const auto& s = samples[order_[cursor_++]];
        picked.push_back(augment ? data::augment(s, aug, rng_) : s);
    }
    return data::collate(picked);
}

generator::ChangePrediction Trainer::predict(const torch::Tensor& image_t1, const torch::Tensor& image_t2) {
    torch::NoGradGuard no_grad;
    generator_->eval();
    auto pred = generator_->forward(image_t1, image_t2);
    generator_->train();
    return pred;
}

torch::Tensor Trainer::predict_image(const torch::Tensor& image_t1, const torch::Tensor& image_t2) {
    generator::check_pair(image_t1, image_t2);
    if (image_t1.dim() != 3) {
        throw ShapeError("predict_image expects unbatched [3, H, W] images");
    }
    const int64_t size = image_t1.size(1);
    const int64_t tile = config_.data.tile_size;
    if (size <= tile || size % tile != 0) {
        return predict(image_t1, image_t2).final_prob.squeeze(0).squeeze(0);
    }
    data::BiTemporalSample whole{image_t1, image_t2, torch::zeros({size, size}), "image"};
    const auto tiles = data::tile_pairs({whole}, tile);
    std::vector<torch::Tensor> maps;
    const auto bs = static_cast<size_t>(config_.train.batch_size);
    for (size_t start = 0; start < tiles.size(); start += bs) {
        std::vector<data::BiTemporalSample> chunk(tiles.begin() + static_cast<std::ptrdiff_t>(start),
                                                  tiles.begin() + static_cast<std::ptrdiff_t>(std::min(start + bs, tiles.size())));
        auto batch = data::collate(chunk);
        auto prob = predict(batch.image_t1, batch.image_t2).final_prob;
        for (int64_t i = 0; i < prob.size(0); ++i) {
            maps.push_back(prob[i][0]);
        }
    }
    return data::stitch_maps(maps, size / tile);
}

metrics::ConfusionMatrix Trainer::confusion(const std::vector<data::BiTemporalSample>& samples,
                                            std::vector<metrics::ImageTally>* per_image) {
    metrics::ConfusionMatrix cm;
    const auto bs = static_cast<size_t>(config_.train.batch_size);
    for (size_t start = 0; start < samples.size(); start += bs) {
        std::vector<data::BiTemporalSample> chunk(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                                  samples.begin() + static_cast<std::ptrdiff_t>(std::min(start + bs, samples.size())));
        auto batch = data::collate(chunk);
        auto prob = predict(batch.image_t1, batch.image_t2).final_prob;
        for (int64_t i = 0; i < prob.size(0); ++i) {
            auto one = metrics::accumulate({}, prob[i], batch.mask[i]);
            cm += one;
            if (per_image != nullptr) {
                per_image->push_back({batch.ids[static_cast<size_t>(i)], one});
            }
        }
    }
    return cm;
}

metrics::MetricReport Trainer::evaluate(const std::vector<data::BiTemporalSample>& samples) {
    if (samples.empty()) {
        throw DataError("evaluate: no samples");
    }
    return metrics::compute_all(confusion(samples));
}

std::string Trainer::rng_state() const {
    std::ostringstream os;
    os << rng_;
    return os.str();
}

std::string to_string(ConfusionDirection direction) {
    switch (direction) {
        case ConfusionDirection::fp_heavy: return "fp_heavy";
        case ConfusionDirection::fn_heavy: return "fn_heavy";
        case ConfusionDirection::balanced: break;
    }
    return "balanced";
}

ConfusionDirection dominant_direction(const metrics::ConfusionMatrix& cm) {
    if (cm.fp > cm.fn) return ConfusionDirection::fp_heavy;
    if (cm.fn > cm.fp) return ConfusionDirection::fn_heavy;
    return ConfusionDirection::balanced;
}

SelfTrainingResult self_training_round(Trainer& trainer, const std::vector<data::BiTemporalSample>& train,
                                       const metrics::ConfusionMatrix& validation, double tau, int64_t round) {
    SelfTrainingResult result;
    result.samples = train;
    result.direction = dominant_direction(validation);
    const double shift = trainer.config().train.pseudo_shift;
    result.binarize_threshold = result.direction == ConfusionDirection::fp_heavy   ? 0.5 + shift
                                : result.direction == ConfusionDirection::fn_heavy ? 0.5 - shift
                                                                                   : 0.5;
    if (tau >= 1.0 || train.empty()) {
        return result;
    }
    const bool adversarial = trainer.config().adversarial();
    // Compared in logit space so float32 sigmoid saturation cannot admit tau = 1.
    const double logit_tau = tau <= 0.0 ? -INFINITY : std::log(tau / (1.0 - tau));
    const auto bs = static_cast<size_t>(trainer.config().train.batch_size);
    torch::NoGradGuard no_grad;
    for (size_t start = 0; start < train.size(); start += bs) {
        std::vector<data::BiTemporalSample> chunk(train.begin() + static_cast<std::ptrdiff_t>(start),
                                                  train.begin() + static_cast<std::ptrdiff_t>(std::min(start + bs, train.size())));
        auto batch = data::collate(chunk);
        auto prob = trainer.predict(batch.image_t1, batch.image_t2).final_prob;
        torch::Tensor selected;
        if (adversarial) {
            auto logits = trainer.discriminator()->logit(prob, batch.image_t1, batch.image_t2).to(torch::kDouble);
            selected = logits.gt(logit_tau);
        } else {
            auto confidence = (2.0 * prob - 1.0).abs().flatten(1).mean(1).to(torch::kDouble);
            selected = tau <= 0.0 ? torch::ones_like(confidence, torch::kBool) : confidence.gt(tau);
        }
        for (int64_t i = 0; i < prob.size(0); ++i) {
            if (!selected[i].item<bool>()) {
                continue;
            }
            const auto& src = chunk[static_cast<size_t>(i)];
            data::BiTemporalSample pseudo{src.image_t1, src.image_t2,
                                          prob[i][0].gt(result.binarize_threshold).to(torch::kFloat),
                                          src.id + "_pseudo" + std::to_string(round)};
            result.samples.push_back(std::move(pseudo));
            ++result.added;
        }
    }
    if (result.added == 0) {
        TORCH_WARN("self-training round ", round, " selected no tiles at tau = ", tau);
    }
    return result;
}

namespace {

void append_line(const std::optional<std::filesystem::path>& file, const std::string& line) {
    if (!file) {
        return;
    }
    std::ofstream os(*file, std::ios::app);
    os << line << '\n';
}

}  // namespace

ExperimentResult run_experiment(Trainer& trainer, std::vector<data::BiTemporalSample> train,
                                const std::vector<data::BiTemporalSample>& val, const ExperimentIO& io) {
    if (train.empty()) {
        throw DataError("run_experiment: empty training set");
    }
    const auto& cfg = trainer.config();
    const auto& eval_set = val.empty() ? train : val;
    auto log = [&](const std::string& line) {
        if (io.log) io.log(line);
    };

    std::optional<std::filesystem::path> loss_log, metric_log;
    ExperimentResult result;
    if (io.out_dir) {
        std::filesystem::create_directories(*io.out_dir);
        loss_log = *io.out_dir / "loss_log.jsonl";
        metric_log = *io.out_dir / "metrics_log.jsonl";
        std::filesystem::remove(*loss_log);
        std::filesystem::remove(*metric_log);
        result.checkpoint = *io.out_dir / "checkpoint.pt";
    }
    result.generator_parameters = trainer.generator()->count_parameters();
    result.discriminator_parameters = generator::count_parameters(*trainer.discriminator());

    // Best state kept in memory so the final report reflects it with or without an output directory.
    std::string best_state;
    const int64_t phases = cfg.train.self_training_rounds + 1;
    for (int64_t phase = 0; phase < phases; ++phase) {
        trainer.start_phase();
        const auto pass = static_cast<int64_t>((train.size() + static_cast<size_t>(cfg.train.batch_size) - 1) /
                                               static_cast<size_t>(cfg.train.batch_size));
        const int64_t eval_every = cfg.train.eval_every > 0 ? cfg.train.eval_every : pass;
        for (int64_t it = 0; it < cfg.train.max_iter; ++it) {
            const double lr = trainer.current_lr();
            auto batch = trainer.next_batch(train, cfg.data.augment);
            LossReport report;
            try {
                report = trainer.train_step(batch);
            } catch (const NumericError&) {
                if (io.out_dir) {
                    trainer.save(*io.out_dir / "nan_snapshot.pt");
                }
                throw;
            }
            ++result.iterations;
            auto line = nlohmann::json::parse(report.to_json());
            line["iter"] = trainer.iteration();
            line["phase"] = phase;
            line["lr"] = lr;
            append_line(loss_log, line.dump());

            if ((it + 1) % eval_every == 0 || it + 1 == cfg.train.max_iter) {
                const auto metrics = trainer.evaluate(eval_set);
                auto mline = nlohmann::json::parse(metrics::to_json(metrics));
                mline["iter"] = trainer.iteration();
                mline["phase"] = phase;
                append_line(metric_log, mline.dump());
                if (metrics.f1 > trainer.best_f1()) {
                    trainer.set_best_f1(metrics.f1);
                    std::ostringstream snapshot;
                    trainer.save_to(snapshot);
                    best_state = snapshot.str();
                }
                log("phase " + std::to_string(phase) + " iter " + std::to_string(trainer.iteration()) +
                    " loss " + report.to_json() + " eval f1 " + std::to_string(metrics.f1));
            }
        }
        if (phase + 1 < phases) {
            const auto cm = trainer.confusion(eval_set);
            auto round = self_training_round(trainer, train, cm, cfg.train.tau, phase + 1);
            result.pseudo_labelled += round.added;
            log("self-training round " + std::to_string(phase + 1) + ": " + to_string(round.direction) + ", added " +
                std::to_string(round.added) + " pseudo-labelled tiles");
            train = std::move(round.samples);
        }
    }

    if (!best_state.empty()) {
        std::istringstream snapshot(best_state);
        trainer.load_from(snapshot);
    }
    result.report = trainer.evaluate(eval_set);
    result.report_json = metrics::to_json(result.report);
    if (io.out_dir) {
        trainer.save(result.checkpoint);
        std::ofstream(*io.out_dir / "metric_report.json") << result.report_json << '\n';
    }
    return result;
}

}  // namespace dagan::trainer
