#pragma once

#include "mcbm/datagen.hpp"
#include "mcbm/models.hpp"
#include "mcbm/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mcbm::metrics {

using diff::Tensor;

struct ProbeConfig {
    std::vector<std::size_t> hidden_layers{64};
    int epochs = 30;
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    // Share of rows used to fit the probe; the rest is held out.
    double train_fraction = 0.5;

    void validate() const;
};

nlohmann::json to_json(const ProbeConfig& c);

struct ProbeFit {
    double heldout_nll = 0.0;  // nats per sample
    double heldout_accuracy = 0.0;
};

// MLP classifier fitted on features[train_rows] and scored on
// features[eval_rows]. Features are standardised with probe-train moments.
ProbeFit fit_probe(const Tensor& features, std::span<const int> labels, int n_classes,
                   std::span<const std::size_t> train_rows, std::span<const std::size_t> eval_rows,
                   const ProbeConfig& config);

// Plug-in entropy (nats) of the empirical distribution of labels.
double empirical_entropy(std::span<const int> labels);

struct UrrResult {
    double urr = 0.0;  // clamped to [0, 1]
    double raw = 0.0;
    double h_n = 0.0;
    double h_n_given_c = 0.0;
    double h_n_given_cz = 0.0;
};

// (Ĥ(N|C) - Ĥ(N|C,Z)) / H(N) from two probes evaluated on held-out rows.
// Throws UndefinedMetricError when n takes a single value.
UrrResult urr(const Tensor& z, const Tensor& c, std::span<const int> n, const ProbeConfig& config);

// Linear CKA with column-centred inputs.
double cka(const Tensor& x, const Tensor& y);

// Importance matrix [latent dim][concept] from one-dimensional softmax
// probes: baseline-adjusted held-out accuracy.
std::vector<std::vector<double>> importance_matrix(const Tensor& z, const std::vector<std::vector<int>>& concepts,
                                                   std::uint64_t seed);
// Σ_i ρ_i (1 - H_norm(R[i, ·])), ρ_i = ΣR[i, ·] / ΣR.
double disentanglement_from_importance(const std::vector<std::vector<double>>& r);
double disentanglement(const Tensor& z, const std::vector<std::vector<int>>& concepts, std::uint64_t seed);

// Ground-truth concept matrix: one-hot for multiclass, 0/1 for binary, the
// raw value for continuous concepts.
Tensor concept_matrix(const std::vector<data::FactorSpec>& factors, const data::Dataset& d);
// Discretised concept states, [concept][sample].
std::vector<std::vector<int>> concept_states(const data::Dataset& d);

// ---- calibration on the spiral -----------------------------------------

struct CalibrationPoint {
    double x1 = 0.0, x2 = 0.0;
    int argmax = 0;
    double top1 = 0.0, top2 = 0.0, sum_p = 0.0;
};

struct CalibrationReport {
    std::vector<CalibrationPoint> points;
    double frac_sum_off = 0.0;   // |Σp - 1| > 0.2
    double max_sum_dev = 0.0;    // max |Σp - 1|
    double frac_top2_above_0_9 = 0.0;
    double frac_top2_above_0_5 = 0.0;
    double frac_top2_above_0_3 = 0.0;
    // Rates of predicting the most frequent class vs its true frequency;
    // true rate is NaN when labels are not supplied.
    double majority_prediction_rate = 0.0;
    double majority_true_rate = 0.0;

    std::string to_csv() const;
    nlohmann::json summary() const;
};

// Per-point class probabilities: four independent sigmoids for a
// one-vs-rest CBM/HCBM, the multiclass softmax for MCBM.
CalibrationReport calibration_report(const model::ModelBundle& model, const Tensor& points,
                                     std::span<const int> labels = {}, int majority_class = 0);

// Even grid over [lo, hi]^2 as an [n*n, 2] tensor.
Tensor grid_points(double lo, double hi, std::size_t n);

// Rows of `query` whose k nearest rows of `reference` carry at least two
// distinct labels.
std::vector<char> boundary_band(const Tensor& query, const Tensor& reference, std::span<const int> ref_labels,
                                std::size_t k);

// ---- information-theory oracles ----------------------------------------

struct DiscreteInfo {
    double mutual_information = 0.0;
    double h_a = 0.0;
    double h_b = 0.0;
    double h_a_given_b = 0.0;
};

// Exact quantities (nats) from a joint table p(a, b); DomainError if the
// table is negative or does not sum to 1.
DiscreteInfo discrete_mi_oracle(const std::vector<std::vector<double>>& joint);

struct BoundCheck {
    double lhs = 0.0;
    double rhs = 0.0;
    double gap = 0.0;  // rhs - lhs for lower bounds, lhs - rhs for the upper bound
};

// I(Z;Y) >= E_{p(x,y)} E_{p(z|x)}[log q(y|z)] + H(Y).
// joint_xy [X][Y], encoder [X][Z] = p(z|x), decoder [Z][Y] = q(y|z).
BoundCheck variational_lower_bound_check(const std::vector<std::vector<double>>& joint_xy,
                                         const std::vector<std::vector<double>>& encoder,
                                         const std::vector<std::vector<double>>& decoder);

// E_{p(x,c)}[KL(p(z|x) || q(z|c))] >= I(Z;X|C) with Z independent of C
// given X. joint_xc [X][C], encoder [X][Z], prior [C][Z] = q(z|c).
BoundCheck variational_upper_bound_check(const std::vector<std::vector<double>>& joint_xc,
                                         const std::vector<std::vector<double>>& encoder,
                                         const std::vector<std::vector<double>>& prior);

// Gaussian N(mean, sd^2) discretised onto grid points (normalised weights).
std::vector<double> discretized_gaussian(std::span<const double> grid, double mean, double sd);

// Exact posterior q(y|z) = p(y|z) implied by joint_xy and the encoder.
std::vector<std::vector<double>> exact_decoder(const std::vector<std::vector<double>>& joint_xy,
                                               const std::vector<std::vector<double>>& encoder);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

// ---- report --------------------------------------------------------------

struct MetricReport {
    std::string model;
    std::vector<std::string> nuisance_names;
    std::vector<UrrResult> urr;
    double mean_urr = 0.0;
    double cka = 0.0;
    double disentanglement = 0.0;
    double task_accuracy = 0.0;
    std::vector<double> concept_accuracy;
    double mean_concept_accuracy = 0.0;

    nlohmann::json to_json() const;
};

struct MetricsConfig {
    ProbeConfig probe;
    // Probe MCBM leakage on sampled z (σ_x noise) rather than on the mean.
    bool sample_latent = true;
    std::uint64_t seed = 0;
};

// Leakage, CKA and disentanglement of a trained model on a factor split.
// VM and CBM read z = mu; MCBM reads a reparameterised sample when
// sample_latent is set. CKA and disentanglement always use mu.
MetricReport evaluate_metrics(const model::ModelBundle& model, const data::Dataset& split,
                              const MetricsConfig& config);

}  // namespace mcbm::metrics
