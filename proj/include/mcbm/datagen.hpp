#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mcbm::data {

enum class FactorKind { Binary, Multiclass, Continuous };
enum class FactorRole { Concept, TaskNuisance, FreeNuisance };
enum class SplitTag { Full, Train, Val, Test };

std::string to_string(FactorKind k);
std::string to_string(FactorRole r);
std::string to_string(SplitTag t);
FactorKind factor_kind_from_string(const std::string& s);
FactorRole factor_role_from_string(const std::string& s);
SplitTag split_tag_from_string(const std::string& s);

struct FactorSpec {
    std::string name;
    FactorKind kind = FactorKind::Binary;
    int classes = 2;  // multiclass only
    int levels = 2;   // continuous only: bins used by the label table and probes
    FactorRole role = FactorRole::Concept;

    // Number of discrete states after discretisation.
    int cardinality() const;
    // Width of the embedding fed to the decoder.
    int embed_dim() const;
    // Discrete state of a raw value (continuous values are binned on [-1, 1]).
    int discretize(double value) const;
    void validate() const;
};

struct GenerativeConfig {
    std::vector<FactorSpec> factors;
    int input_dim = 32;
    int n_classes = 4;
    int decoder_hidden = 64;
    std::uint64_t decoder_seed = 1;
    std::uint64_t label_seed = 2;
    int n_samples = 8000;
    double noise_std = 0.05;

    void validate() const;
    std::vector<int> indices_with_role(FactorRole role) const;
};

// 3 concepts (binary, multiclass(4), continuous), one multiclass(4) task
// nuisance and one multiclass(4) free nuisance; input_dim 32, N 8000.
GenerativeConfig default_factor_config();

// y = table[(c, n_y) cell]. Cells enumerate the discretised concept factors
// followed by the task nuisances, in config order, last index fastest.
struct LabelTable {
    std::vector<int> factor_indices;
    std::vector<int> cardinalities;
    std::vector<int> labels;
    int n_classes = 0;

    std::size_t cell(std::span<const int> states) const;
    int label(std::span<const int> states) const { return labels[cell(states)]; }
    std::size_t cell_count() const { return labels.size(); }
};

// Random surjective table built from label_seed.
LabelTable build_label_table(const GenerativeConfig& config);

// Accuracy of the best predictor of y from the concepts alone, by exact
// enumeration of the table under the (uniform, independent) factor prior.
double c_only_bayes_accuracy(const GenerativeConfig& config, const LabelTable& table);

struct Dataset {
    std::size_t n = 0;
    std::size_t input_dim = 0;
    std::vector<double> x;  // row-major [n, input_dim]
    std::vector<int> y;
    int n_classes = 0;
    std::vector<FactorSpec> factors;
    std::vector<std::vector<double>> factor_values;  // [factor][sample]
    SplitTag split = SplitTag::Full;
    std::vector<std::string> warnings;

    std::vector<int> indices_with_role(FactorRole role) const;
    std::span<const double> row(std::size_t i) const { return {x.data() + i * input_dim, input_dim}; }
    // Discretised state of factor f for sample i.
    int state(std::size_t f, std::size_t i) const { return factors[f].discretize(factor_values[f][i]); }
    Dataset subset(std::span<const std::size_t> indices, SplitTag tag) const;
    void validate() const;
};

Dataset make_factor_dataset(const GenerativeConfig& config, std::uint64_t seed);

// Four interleaved spiral arms: class k at angle k*pi/2 + t*span, radius t,
// t ~ U(0.1, 1). The single concept equals the class.
inline constexpr double kSpiralAngleSpan = 3.14159265358979323846 * 1.5;
std::array<double, 2> spiral_arm_point(int arm, double t);
Dataset make_spiral_dataset(std::span<const int> counts, double noise_std, std::uint64_t seed);

struct MixturePrior {
    std::array<double, 2> weights{0.5, 0.5};
    std::array<double, 2> means{-3.0, 3.0};
    std::array<double, 2> sigmas{1.0, 1.0};

    void validate() const;
    double density(double z) const;
    // Mass of the mixture inside [lo, hi].
    double mass(double lo, double hi) const;
};

std::vector<double> make_bimodal_prior(const MixturePrior& prior, std::size_t n, std::uint64_t seed);

struct Splits {
    Dataset train;
    Dataset val;
    Dataset test;
    std::vector<std::string> warnings;
};

// Stratified by y. Split sizes are round(cumulative ratio * N); every class
// lands within one sample of its exact quota in every split.
Splits split(const Dataset& dataset, std::array<double, 3> ratios, std::uint64_t seed);

}  // namespace mcbm::data
