#pragma once

#include "mcbm/datagen.hpp"
#include "mcbm/mlp.hpp"
#include "mcbm/optim.hpp"
#include "mcbm/rng.hpp"
#include "mcbm/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mcbm::model {

using diff::Tensor;

enum class Variant { VM, CBM, MCBM, HCBM };
enum class ConceptKind { Binary, Multiclass, Continuous };

std::string to_string(Variant v);
std::string to_string(ConceptKind k);
Variant variant_from_string(const std::string& s);
ConceptKind concept_kind_from_string(const std::string& s);

// One supervised concept as the model sees it. `factor` points at the
// dataset factor it is read from; `positive_state` >= 0 marks a one-vs-rest
// binary concept that is 1 when the factor's discretised state equals it.
struct ConceptSpec {
    std::string name;
    ConceptKind kind = ConceptKind::Binary;
    int classes = 2;
    int levels = 2;  // discretisation levels of a continuous concept
    int factor = -1;
    int positive_state = -1;

    std::size_t block_dim() const { return kind == ConceptKind::Multiclass ? static_cast<std::size_t>(classes) : 1; }
    void validate() const;
};

// Concept specs for every concept factor of a dataset, in factor order.
std::vector<ConceptSpec> concept_specs_from_factors(const std::vector<data::FactorSpec>& factors);

// Replaces every multiclass(k) spec by k binary specs. With
// `bin_continuous`, continuous specs are expanded over their levels as
// well. Appends a note per expansion to `notes` when given.
std::vector<ConceptSpec> expand_one_vs_rest(const std::vector<ConceptSpec>& specs, bool bin_continuous,
                                            std::vector<std::string>* notes = nullptr);

struct LatentBlock {
    std::size_t concept_index = 0;
    std::size_t offset = 0;
    std::size_t dim = 0;
};

struct LatentLayout {
    std::vector<LatentBlock> blocks;
    std::size_t total_dim = 0;

    static LatentLayout from_specs(const std::vector<ConceptSpec>& specs);
};

// Per-sample concept values, [concept][sample]: 0/1 for binary, the class
// index for multiclass, the raw value for continuous.
using ConceptValues = std::vector<std::vector<double>>;

ConceptValues concept_values(const std::vector<ConceptSpec>& specs, const data::Dataset& dataset,
                             std::span<const std::size_t> rows);
ConceptValues concept_values(const std::vector<ConceptSpec>& specs, const data::Dataset& dataset);

// Prior mean of the latent block for a concept value.
std::vector<double> representation_target(const ConceptSpec& spec, double value, double lambda);

struct LossWeights {
    double beta = 1.0;
    double gamma = 1.0;
    double lambda = 3.0;
    double sigma_x = 1.0;
    double sigma_zhat = 1.0;
    double sigma_y = 1.0;
    double sigma_c = 1.0;
};

struct ModelConfig {
    Variant variant = Variant::MCBM;
    std::vector<ConceptSpec> concepts;
    std::size_t input_dim = 0;
    int n_classes = 0;
    // Width of z for VM; 0 derives it from the concept layout.
    std::size_t latent_dim = 0;
    std::vector<std::size_t> encoder_hidden{64, 64};
    std::vector<std::size_t> task_hidden{32};
    // Hidden width of the MCBM concept heads; 0 picks k for multiclass
    // blocks and 4 for one-dimensional blocks.
    std::size_t concept_hidden = 0;
    bool learnable_representation_heads = false;
    std::size_t representation_hidden = 3;
    LossWeights weights;
    std::uint64_t seed = 0;

    // Fills σ_x per variant and zeroes β/γ where the variant has no such term.
    static ModelConfig for_variant(Variant v, std::vector<ConceptSpec> concepts, std::size_t input_dim,
                                   int n_classes);
    void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Batch {
    Tensor x;              // [B, input_dim]
    std::vector<int> y;    // [B]
    ConceptValues concepts;  // [concept][B]
    std::size_t size() const { return y.size(); }
};

Batch make_batch(const data::Dataset& dataset, const std::vector<ConceptSpec>& specs,
                 std::span<const std::size_t> rows);
Batch make_batch(const data::Dataset& dataset, const std::vector<ConceptSpec>& specs);

struct LossComponents {
    double total = 0.0;
    double task = 0.0;
    std::vector<double> concept_terms;
    std::vector<double> kl;
};

struct LossResult {
    Tensor total;
    LossComponents parts;
};

struct Encoded {
    Tensor mu;
    Tensor z;
};

struct HardForward {
    Tensor c_prob;    // [B, m]
    Tensor c_binary;  // [B, m]
    Tensor logits;    // [B, n_classes]
};

class ModelBundle {
public:
    ModelBundle() = default;
    explicit ModelBundle(ModelConfig config);
    // Copies would share parameter storage; use clone() for a deep copy.
    ModelBundle(const ModelBundle&) = delete;
    ModelBundle& operator=(const ModelBundle&) = delete;
    ModelBundle(ModelBundle&&) noexcept = default;
    ModelBundle& operator=(ModelBundle&&) noexcept = default;

    ModelBundle clone() const;

    const ModelConfig& config() const noexcept { return config_; }
    Variant variant() const noexcept { return config_.variant; }
    const std::vector<ConceptSpec>& concepts() const noexcept { return config_.concepts; }
    const LatentLayout& layout() const noexcept { return layout_; }
    std::size_t total_dim() const noexcept { return layout_.total_dim; }
    const LossWeights& weights() const noexcept { return config_.weights; }
    LossWeights& mutable_weights() noexcept { return config_.weights; }

    diff::ParameterStore& store() noexcept { return store_; }
    const diff::ParameterStore& store() const noexcept { return store_; }
    // Parameters trained in each stage; HCBM splits them, other variants
    // use a single stage.
    std::vector<diff::Parameter> stage_parameters(int stage) const;

    // mu = f(x); z = mu + σ_x ε. rng == nullptr or σ_x == 0 gives z == mu.
    Encoded encode(const Tensor& x, RngStream* rng) const;

    // Concept head output for block j from the block slice zj: a logit for
    // binary, k logits for multiclass, the prediction for continuous.
    Tensor concept_head(std::size_t j, const Tensor& zj) const;
    // Probability of the positive class (binary), class probabilities
    // (multiclass) or the prediction itself (continuous).
    Tensor concept_output(std::size_t j, const Tensor& zj) const;

    Tensor task_logits_from_z(const Tensor& z) const;
    Tensor task_logits_from_binary(const Tensor& c_binary) const;
    // Mean of the representation head for a batch of values of concept j.
    Tensor representation_mean(std::size_t j, std::span<const double> values) const;

    HardForward hcbm_forward(const Tensor& x) const;
    // Deterministic task logits (z = mu) for any variant.
    Tensor predict_logits(const Tensor& x) const;

    // total = task + β Σ concept + γ Σ kl, each averaged over the batch.
    // With samples > 1 the task and concept terms average several
    // reparameterisation draws.
    LossResult loss(const Batch& batch, RngStream* rng, int samples = 1) const;
    // HCBM stage-2 objective: task cross-entropy on thresholded concepts.
    LossResult hcbm_task_loss(const Batch& batch) const;

    nlohmann::json descriptor() const;
    // One-vs-rest expansions applied while building.
    const std::vector<std::string>& notes() const noexcept { return notes_; }

private:
    void build();

    ModelConfig config_;
    LatentLayout layout_;
    diff::ParameterStore store_;
    diff::Mlp encoder_;
    diff::Mlp task_head_;
    std::vector<diff::Mlp> concept_heads_;
    std::vector<diff::Mlp> representation_heads_;
    std::vector<std::string> notes_;
};

ModelBundle build_model(const ModelConfig& config);

// Heaviside at 0.5 with ties going to 1.
double binarize(double p);

}  // namespace mcbm::model
