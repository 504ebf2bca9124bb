#pragma once

#include "mcbm/datagen.hpp"
#include "mcbm/models.hpp"
#include "mcbm/optim.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mcbm::train {

struct TrainConfig {
    int epochs = 50;
    // Epochs of the HCBM task-head stage; 0 reuses `epochs`.
    int stage2_epochs = 0;
    std::size_t batch_size = 128;
    diff::OptimizerConfig optimizer;
    diff::StepScheduler scheduler;
    // Override the model's loss weights when set.
    std::optional<double> beta;
    std::optional<double> gamma;
    std::uint64_t master_seed = 0;
    int eval_every = 1;
    int reparam_samples = 1;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);

struct EpochRecord {
    int epoch = 0;
    int stage = 0;
    double lr = 0.0;
    double total = 0.0;
    double task = 0.0;
    std::vector<double> concept_terms;
    std::vector<double> kl;
    // NaN on epochs that were not evaluated.
    double train_task_accuracy = 0.0;
    double val_task_accuracy = 0.0;
    double train_concept_accuracy = 0.0;
    double val_concept_accuracy = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> records;

    std::string to_csv() const;
    nlohmann::json to_json() const;
};

struct EvalResult {
    double task_accuracy = 0.0;
    // One entry per model concept; NaN for continuous concepts.
    std::vector<double> concept_accuracy;
    // One entry per model concept; NaN for discrete concepts.
    std::vector<double> concept_mse;
    // Mean over discrete concepts; NaN when the model has none.
    double mean_concept_accuracy = 0.0;
    model::LossComponents loss;
};

// Shuffled mini-batch training of loss_total. HCBM runs two stages:
// encoder on the concept loss, then the task head on thresholded concepts.
TrainHistory train(model::ModelBundle& model, const data::Dataset& train_split, const data::Dataset* val_split,
                   const TrainConfig& config);

// Deterministic forward passes (z = mu); never touches an RNG.
EvalResult evaluate(const model::ModelBundle& model, const data::Dataset& split);

// Concept predictions from the deterministic forward pass, [concept][sample]:
// 0/1 for binary, argmax for multiclass, the value for continuous.
model::ConceptValues predict_concepts(const model::ModelBundle& model, const data::Dataset& split);
std::vector<int> predict_labels(const model::ModelBundle& model, const diff::Tensor& x);

void save_checkpoint(const model::ModelBundle& model, const TrainHistory* history, std::uint64_t master_seed,
                     const std::filesystem::path& path);
// Throws LoadError on version mismatch, corrupt payloads or (when given)
// a variant other than `expected`.
model::ModelBundle load_checkpoint(const std::filesystem::path& path,
                                   std::optional<model::Variant> expected = std::nullopt);

}  // namespace mcbm::train
