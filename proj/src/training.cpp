#include "mcbm/training.hpp"

#include "mcbm/checkpoint.hpp"
#include "mcbm/errors.hpp"
#include "mcbm/io.hpp"
#include "mcbm/rng.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace mcbm::train {

using model::ConceptKind;
using model::ModelBundle;
using model::Variant;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::size_t> iota_rows(std::size_t n) {
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return rows;
}

int argmax_row(const diff::Tensor& t, std::size_t r) {
    const std::size_t k = t.cols();
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
        if (t.at(r, c) > t.at(r, best)) best = c;
    }
    return static_cast<int>(best);
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (stage2_epochs < 0) throw ConfigError("train: stage2_epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(optimizer.learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
    if (optimizer.momentum < 0.0 || optimizer.momentum >= 1.0) throw ConfigError("train: momentum must be in [0, 1)");
    if (optimizer.weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    if (scheduler.step_size_epochs < 1 || !(scheduler.decay_factor > 0.0) || scheduler.decay_factor > 1.0) {
        throw ConfigError("train: scheduler needs step_size >= 1 and decay in (0, 1]");
    }
    if ((beta && *beta < 0.0) || (gamma && *gamma < 0.0)) throw ConfigError("train: beta and gamma must be >= 0");
    if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
    if (reparam_samples < 1) throw ConfigError("train: reparam_samples must be >= 1");
}

nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json j{{"epochs", c.epochs},
                     {"stage2_epochs", c.stage2_epochs},
                     {"batch_size", c.batch_size},
                     {"optimizer",
                      {{"kind", diff::to_string(c.optimizer.kind)},
                       {"learning_rate", c.optimizer.learning_rate},
                       {"momentum", c.optimizer.momentum},
                       {"weight_decay", c.optimizer.weight_decay},
                       {"adam_beta1", c.optimizer.adam_beta1},
                       {"adam_beta2", c.optimizer.adam_beta2},
                       {"adam_eps", c.optimizer.adam_eps}}},
                     {"scheduler",
                      {{"step_size_epochs", c.scheduler.step_size_epochs},
                       {"decay_factor", c.scheduler.decay_factor}}},
                     {"master_seed", c.master_seed},
                     {"eval_every", c.eval_every},
                     {"reparam_samples", c.reparam_samples}};
    if (c.beta) j["beta"] = *c.beta;
    if (c.gamma) j["gamma"] = *c.gamma;
    return j;
}

// ---- history ------------------------------------------------------------

std::string TrainHistory::to_csv() const {
    std::size_t nc = 0, nk = 0;
    for (const auto& r : records) {
        nc = std::max(nc, r.concept_terms.size());
        nk = std::max(nk, r.kl.size());
    }
    std::string out = "epoch,stage,lr,loss_total,loss_task";
    for (std::size_t j = 0; j < nc; ++j) out += ",loss_concept_" + std::to_string(j);
    for (std::size_t j = 0; j < nk; ++j) out += ",kl_" + std::to_string(j);
    out += ",train_task_acc,val_task_acc,train_concept_acc,val_concept_acc\n";
    auto num = [](double v) { return std::isnan(v) ? std::string() : io::format_double(v); };
    for (const auto& r : records) {
        out += std::to_string(r.epoch) + "," + std::to_string(r.stage) + "," + num(r.lr) + "," + num(r.total) + "," +
               num(r.task);
        for (std::size_t j = 0; j < nc; ++j) out += "," + (j < r.concept_terms.size() ? num(r.concept_terms[j]) : "");
        for (std::size_t j = 0; j < nk; ++j) out += "," + (j < r.kl.size() ? num(r.kl[j]) : "");
        out += "," + num(r.train_task_accuracy) + "," + num(r.val_task_accuracy) + "," +
               num(r.train_concept_accuracy) + "," + num(r.val_concept_accuracy) + "\n";
    }
    return out;
}

nlohmann::json TrainHistory::to_json() const {
    auto num = [](double v) { return std::isnan(v) ? nlohmann::json() : nlohmann::json(v); };
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : records) {
        arr.push_back({{"epoch", r.epoch},
                       {"stage", r.stage},
                       {"lr", r.lr},
                       {"total", r.total},
                       {"task", r.task},
                       {"concept", r.concept_terms},
                       {"kl", r.kl},
                       {"train_task_accuracy", num(r.train_task_accuracy)},
                       {"val_task_accuracy", num(r.val_task_accuracy)},
                       {"train_concept_accuracy", num(r.train_concept_accuracy)},
                       {"val_concept_accuracy", num(r.val_concept_accuracy)}});
    }
    return arr;
}

// ---- evaluation ---------------------------------------------------------

std::vector<int> predict_labels(const ModelBundle& model, const diff::Tensor& x) {
    const auto logits = model.predict_logits(x);
    std::vector<int> out(logits.rows());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax_row(logits, i);
    return out;
}

model::ConceptValues predict_concepts(const ModelBundle& model, const data::Dataset& split) {
    if (model.variant() == Variant::VM) {
        return {};
    }
    const auto batch = model::make_batch(split, {});
    const auto mu = model.encode(batch.x, nullptr).mu;
    const auto& specs = model.concepts();
    model::ConceptValues out(specs.size(), std::vector<double>(split.n));
    for (std::size_t j = 0; j < specs.size(); ++j) {
        const auto& blk = model.layout().blocks[j];
        const auto o = model.concept_output(j, diff::slice_cols(mu, blk.offset, blk.dim));
        for (std::size_t i = 0; i < split.n; ++i) {
            switch (specs[j].kind) {
                case ConceptKind::Binary: out[j][i] = model::binarize(o.at(i, 0)); break;
                case ConceptKind::Multiclass: out[j][i] = argmax_row(o, i); break;
                case ConceptKind::Continuous: out[j][i] = o.at(i, 0); break;
            }
        }
    }
    return out;
}

EvalResult evaluate(const ModelBundle& model, const data::Dataset& split) {
    if (split.n == 0) {
        throw UsageError("evaluate: empty split");
    }
    EvalResult r;
    const auto specs = model.variant() == Variant::VM ? std::vector<model::ConceptSpec>{} : model.concepts();
    const auto batch = model::make_batch(split, specs);
    const auto pred = predict_labels(model, batch.x);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < split.n; ++i) hit += pred[i] == batch.y[i];
    r.task_accuracy = static_cast<double>(hit) / static_cast<double>(split.n);

    const auto c_hat = predict_concepts(model, split);
    double acc_sum = 0.0;
    int discrete = 0;
    for (std::size_t j = 0; j < specs.size(); ++j) {
        if (specs[j].kind == ConceptKind::Continuous) {
            double se = 0.0;
            for (std::size_t i = 0; i < split.n; ++i) {
                const double d = c_hat[j][i] - batch.concepts[j][i];
                se += d * d;
            }
            r.concept_accuracy.push_back(kNaN);
            r.concept_mse.push_back(se / static_cast<double>(split.n));
        } else {
            std::size_t h = 0;
            for (std::size_t i = 0; i < split.n; ++i) h += c_hat[j][i] == batch.concepts[j][i];
            const double a = static_cast<double>(h) / static_cast<double>(split.n);
            r.concept_accuracy.push_back(a);
            r.concept_mse.push_back(kNaN);
            acc_sum += a;
            ++discrete;
        }
    }
    r.mean_concept_accuracy = discrete > 0 ? acc_sum / discrete : kNaN;
    r.loss = model.loss(batch, nullptr).parts;
    return r;
}

// ---- training -----------------------------------------------------------

namespace {

void check_finite(double v, int epoch, std::size_t batch_index) {
    if (!std::isfinite(v)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
    }
}

void fill_eval(EpochRecord& rec, const ModelBundle& model, const data::Dataset& train_split,
               const data::Dataset* val_split) {
    const auto tr = evaluate(model, train_split);
    rec.train_task_accuracy = tr.task_accuracy;
    rec.train_concept_accuracy = tr.mean_concept_accuracy;
    if (val_split && val_split->n > 0) {
        const auto va = evaluate(model, *val_split);
        rec.val_task_accuracy = va.task_accuracy;
        rec.val_concept_accuracy = va.mean_concept_accuracy;
    } else {
        rec.val_task_accuracy = kNaN;
        rec.val_concept_accuracy = kNaN;
    }
}

}  // namespace

TrainHistory train(ModelBundle& model, const data::Dataset& train_split, const data::Dataset* val_split,
                   const TrainConfig& config) {
    config.validate();
    if (train_split.n == 0) {
        throw UsageError("train: empty training split");
    }
    if (train_split.input_dim != model.config().input_dim) {
        throw DimensionError("train: dataset input_dim " + std::to_string(train_split.input_dim) +
                             " does not match the model's " + std::to_string(model.config().input_dim));
    }
    if (config.beta) model.mutable_weights().beta = *config.beta;
    if (config.gamma) model.mutable_weights().gamma = *config.gamma;
    model.config().validate();

    const auto specs = model.variant() == Variant::VM ? std::vector<model::ConceptSpec>{} : model.concepts();
    RngStream shuffle_rng(config.master_seed, "train.shuffle");
    RngStream noise_rng(config.master_seed, "train.reparam");
    TrainHistory history;
    auto rows = iota_rows(train_split.n);

    const bool two_stage = model.variant() == Variant::HCBM;
    const int stages = two_stage ? 2 : 1;
    for (int stage = 0; stage < stages; ++stage) {
        auto params = model.stage_parameters(stage);
        diff::Optimizer opt(config.optimizer);
        const int epochs = stage == 1 && config.stage2_epochs > 0 ? config.stage2_epochs : config.epochs;
        for (int epoch = 0; epoch < epochs; ++epoch) {
            const double lr = config.scheduler.lr(config.optimizer.learning_rate, epoch);
            shuffle_rng.shuffle(rows);
            EpochRecord rec;
            rec.epoch = epoch + 1;
            rec.stage = stage;
            rec.lr = lr;
            std::size_t n_batches = 0;
            for (std::size_t start = 0; start < rows.size(); start += config.batch_size) {
                const std::size_t end = std::min(rows.size(), start + config.batch_size);
                const std::span<const std::size_t> idx(rows.data() + start, end - start);
                const auto batch = model::make_batch(train_split, specs, idx);
                model.store().zero_grad();
                const auto res = stage == 1 ? model.hcbm_task_loss(batch)
                                            : model.loss(batch, &noise_rng, config.reparam_samples);
                check_finite(res.parts.total, epoch + 1, n_batches);
                diff::backward(res.total);
                opt.step(params, lr);

                rec.total += res.parts.total;
                rec.task += res.parts.task;
                if (rec.concept_terms.size() < res.parts.concept_terms.size())
                    rec.concept_terms.resize(res.parts.concept_terms.size());
                if (rec.kl.size() < res.parts.kl.size()) rec.kl.resize(res.parts.kl.size());
                for (std::size_t j = 0; j < res.parts.concept_terms.size(); ++j)
                    rec.concept_terms[j] += res.parts.concept_terms[j];
                for (std::size_t j = 0; j < res.parts.kl.size(); ++j) rec.kl[j] += res.parts.kl[j];
                ++n_batches;
            }
            const double inv = 1.0 / static_cast<double>(n_batches);
            rec.total *= inv;
            rec.task *= inv;
            for (auto& v : rec.concept_terms) v *= inv;
            for (auto& v : rec.kl) v *= inv;
            if ((epoch + 1) % config.eval_every == 0 || epoch + 1 == epochs) {
                fill_eval(rec, model, train_split, val_split);
            } else {
                rec.train_task_accuracy = rec.val_task_accuracy = kNaN;
                rec.train_concept_accuracy = rec.val_concept_accuracy = kNaN;
            }
            history.records.push_back(std::move(rec));
        }
    }
    return history;
}

// ---- checkpoints --------------------------------------------------------

void save_checkpoint(const ModelBundle& model, const TrainHistory* history, std::uint64_t master_seed,
                     const std::filesystem::path& path) {
    diff::CheckpointHeader header;
    header.master_seed = master_seed;
    auto doc = diff::parameters_to_json(model.store().all(), header);
    doc["model"] = model.descriptor();
    if (history) {
        doc["history"] = history->to_json();
    }
    io::write_json(path, doc);
}

ModelBundle load_checkpoint(const std::filesystem::path& path, std::optional<Variant> expected) {
    const auto doc = io::read_json(path);
    if (!doc.contains("model") || !doc.at("model").contains("model")) {
        throw LoadError("'" + path.string() + "' has no model descriptor");
    }
    // Checked before touching any payload so old files fail with the
    // version message rather than a shape error.
    if (doc.contains("header") && doc["header"].contains("format_version") &&
        doc["header"]["format_version"] != diff::kCheckpointFormatVersion) {
        throw LoadError("checkpoint format_version " + doc["header"]["format_version"].dump() +
                        " is not supported (this build reads version " +
                        std::to_string(diff::kCheckpointFormatVersion) + ")");
    }
    auto cfg = model::model_config_from_json(doc.at("model").at("model"));
    if (expected && cfg.variant != *expected) {
        throw LoadError("checkpoint holds a " + model::to_string(cfg.variant) + " model, expected " +
                        model::to_string(*expected));
    }
    ModelBundle m(cfg);
    diff::parameters_from_json(doc, m.store().all());
    return m;
}

}  // namespace mcbm::train
