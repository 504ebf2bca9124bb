#pragma once

#include "mcbm/datagen.hpp"
#include "mcbm/models.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mcbm::intervene {

enum class Mechanism { CbmPercentile, McbmHead, HcbmBinary };
enum class Policy { LowestConfidence, Random };

std::string to_string(Mechanism m);
std::string to_string(Policy p);
Policy policy_from_string(const std::string& s);

// The mechanism each variant supports; VM has none and throws UsageError.
Mechanism mechanism_for(model::Variant v);

struct InterventionSpec {
    std::size_t concept_index = 0;
    double target_value = 0.0;
    Mechanism mechanism = Mechanism::McbmHead;
};

// Percentile on sorted-or-not data with linear interpolation between order
// statistics: position q/100 * (n - 1).
double percentile(std::vector<double> values, double q);

struct PercentileTable {
    // Per model concept; NaN for concepts that are not binary.
    std::vector<double> p5;
    std::vector<double> p95;

    nlohmann::json to_json() const;
    static PercentileTable from_json(const nlohmann::json& j);
};

// Percentiles of each binary block of z over the training split.
PercentileTable fit_percentile_table(const model::ModelBundle& model, const data::Dataset& train_split);

// Whether concept j can be intervened on under the model's mechanism.
bool intervenable(const model::ModelBundle& model, std::size_t j);

// Task logits after replacing, for every row i and concept j with
// mask[j][i], the concept's representation by the value values[j][i].
// Unmasked blocks keep their encoded values.
diff::Tensor intervened_logits(const model::ModelBundle& model, const diff::Tensor& x,
                               const std::vector<std::vector<char>>& mask, const model::ConceptValues& values,
                               const PercentileTable* table);

// Same target for every row of the batch. Throws UsageError on a
// mechanism/variant mismatch or repeated concepts.
diff::Tensor intervene(const model::ModelBundle& model, const diff::Tensor& x,
                       std::span<const InterventionSpec> specs, const PercentileTable* table);

// The latent (CBM/MCBM) or binarised concept (HCBM) matrix after the same
// replacement, for inspecting what an intervention did.
diff::Tensor intervened_representation(const model::ModelBundle& model, const diff::Tensor& x,
                                       const std::vector<std::vector<char>>& mask,
                                       const model::ConceptValues& values, const PercentileTable* table);

// Per-sample, per-concept confidence of the concept head in its own
// prediction, [concept][sample].
std::vector<std::vector<double>> concept_confidence(const model::ModelBundle& model, const diff::Tensor& x);

struct InterventionCurve {
    Policy policy = Policy::LowestConfidence;
    std::vector<double> fractions;
    std::vector<double> mean_error;
    std::vector<double> std_error;
    int n_seeds = 1;
    // [seed][fraction]
    std::vector<std::vector<double>> errors;

    std::string to_csv() const;
};

// Concepts chosen per sample: ceil(f * m) of the m intervenable concepts.
std::size_t concepts_for_fraction(double f, std::size_t m);

InterventionCurve intervention_curve(const model::ModelBundle& model, const data::Dataset& test_split,
                                     Policy policy, std::span<const double> fractions, int n_seeds,
                                     std::uint64_t seed, const PercentileTable* table);

// ln(p / (1 - p)); DomainError outside (0, 1).
double sigmoid_inverse(double p);

struct BayesDemo {
    std::vector<double> z;
    std::vector<double> prior;
    std::vector<double> posterior;
    double evidence = 0.0;       // p(c) by trapezoidal integration
    double normalization = 0.0;  // integral of the posterior on the grid
    double mode = 0.0;
    double mass_positive = 0.0;  // posterior mass on z > 0
    double surrogate = 0.0;      // sigma^-1 of 0.95 (c = 1) or 0.05 (c = 0)
    double mode_distance = 0.0;  // |mode - surrogate|
    // Between the posterior (as grid-cell masses) and a point mass at the
    // grid point nearest the surrogate.
    double total_variation = 0.0;

    std::string to_csv() const;
    nlohmann::json summary() const;
};

// p(z | c) ∝ σ(z)^c (1 - σ(z))^(1 - c) p(z) on an even grid. Throws
// ConfigError when the grid holds less than 99.9% of the prior mass or has
// fewer than 1000 points.
BayesDemo bayes_posterior_demo(const data::MixturePrior& prior, int c_value, double z_min, double z_max,
                               std::size_t n_points);

}  // namespace mcbm::intervene
