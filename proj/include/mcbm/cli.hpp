#pragma once

#include "mcbm/datagen.hpp"
#include "mcbm/interventions.hpp"
#include "mcbm/metrics.hpp"
#include "mcbm/models.hpp"
#include "mcbm/training.hpp"

#include <json.hpp>

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mcbm::cli {

inline constexpr const char* kArtifactVersion = "1.0.0";

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNumeric = 3, kExitIo = 4 };

// Maps a library exception onto the process exit code.
int exit_code_for(const std::exception& e);

enum class DatasetKind { Factor, Spiral, Csv };

struct DatasetSection {
    DatasetKind kind = DatasetKind::Factor;
    data::GenerativeConfig generator = data::default_factor_config();
    std::vector<int> spiral_counts{2000, 200, 200, 200};
    double spiral_noise = 0.05;
    std::string csv_path;
    std::array<double, 3> split{0.7, 0.1, 0.2};
};

struct ModelSection {
    model::Variant variant = model::Variant::MCBM;
    // Unset fields keep the variant defaults (γ defaults to 30 for MCBM).
    std::optional<double> beta;
    std::optional<double> gamma;
    double lambda = 3.0;
    double sigma_zhat = 1.0;
    std::vector<std::size_t> encoder_hidden{64, 64};
    std::vector<std::size_t> task_hidden{32};
    std::size_t concept_hidden = 0;
    std::size_t latent_dim = 0;
    bool learnable_representation_heads = false;
    std::size_t representation_hidden = 3;
};

inline constexpr double kDefaultMcbmGamma = 30.0;

struct MetricsSection {
    // "full" probes the whole dataset, "test" the held-out split.
    std::string on = "full";
    bool sample_latent = true;
    metrics::ProbeConfig probe;
};

struct InterventionsSection {
    std::vector<intervene::Policy> policies{intervene::Policy::LowestConfidence, intervene::Policy::Random};
    std::vector<double> fractions{0.0, 0.25, 0.5, 0.75, 1.0};
    // Repetitions of the random policy; lowest-confidence is deterministic.
    int seeds = 3;
};

struct CalibrationSection {
    double grid_min = -1.1;
    double grid_max = 1.1;
    std::size_t grid_n = 60;
    std::size_t neighbors = 10;
};

struct BayesSection {
    data::MixturePrior prior;
    int c = 1;
    double z_min = -12.0;
    double z_max = 12.0;
    std::size_t points = 24001;
};

struct BoundSection {
    int joints = 100;
};

struct SweepSection {
    std::vector<double> gammas{3.0, 30.0, 300.0};
    std::vector<model::Variant> variants{model::Variant::VM, model::Variant::CBM, model::Variant::MCBM,
                                         model::Variant::HCBM};
    std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string output_dir;
    int threads = 1;
    DatasetSection dataset;
    ModelSection model;
    train::TrainConfig train;
    MetricsSection metrics;
    InterventionsSection interventions;
    CalibrationSection calibration;
    BayesSection bayes;
    BoundSection bounds;
    SweepSection sweep;

    void validate() const;
};

// Strict parse: unknown keys, wrong types and invalid values raise
// ConfigError as "<origin>:<line>:<col>: <message>".
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& c);

// ---- run directories and manifests ---------------------------------------

struct FileRecord {
    std::string path;  // relative to the run directory
    std::string sha256;
    std::uintmax_t bytes = 0;
};

struct RunManifest {
    std::string command;
    nlohmann::json arguments = nlohmann::json::object();
    nlohmann::json config;
    std::uint64_t master_seed = 0;
    std::string artifact_version = kArtifactVersion;
    std::string started_at;
    double wall_seconds = 0.0;
    std::vector<FileRecord> files;
    // Dataset split warnings and model construction notes.
    std::vector<std::string> notes;

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
};

// Append-only output directory: files are created once and never
// overwritten. finish() writes manifest.json.
class RunDir {
public:
    explicit RunDir(std::filesystem::path root);

    const std::filesystem::path& root() const noexcept { return root_; }
    void write(const std::string& relative, const std::string& content);
    void write_json(const std::string& relative, const nlohmann::json& doc);
    // Records a file some other writer produced inside the directory.
    void adopt(const std::string& relative);
    RunManifest finish(RunManifest manifest);

private:
    std::filesystem::path reserve(const std::string& relative) const;

    std::filesystem::path root_;
    std::vector<FileRecord> files_;
    std::chrono::steady_clock::time_point start_;
    std::string started_at_;
};

// ---- pipelines -----------------------------------------------------------

data::Dataset make_dataset(const DatasetSection& section, std::uint64_t seed);

// Variant defaults with the model section applied on top.
model::ModelConfig resolve_model_config(const ModelSection& section, const data::Dataset& dataset,
                                        std::uint64_t seed);
train::TrainConfig resolve_train_config(const train::TrainConfig& section, std::uint64_t seed);

struct TrainedRun {
    data::Dataset dataset;
    data::Splits splits;
    model::ModelBundle model;
    train::TrainHistory history;
};

TrainedRun run_training(const ExperimentConfig& config);

metrics::MetricReport run_metrics(const ExperimentConfig& config, const model::ModelBundle& model,
                                  const data::Dataset& dataset, const data::Splits& splits);

// One curve per configured policy on the test split; CBM uses percentiles
// fitted on the train split.
std::vector<intervene::InterventionCurve> run_interventions(const ExperimentConfig& config,
                                                            const model::ModelBundle& model,
                                                            const data::Splits& splits);

struct CalibrationAnalysis {
    metrics::CalibrationReport test;
    // Grid report and band statistics exist only for 2-D inputs.
    std::optional<metrics::CalibrationReport> grid;
    std::vector<char> band;
    double band_fraction = 0.0;
    // Share of grid points with top-2 > 0.3 that lie in a boundary band.
    double top2_in_band = 0.0;
    std::size_t top2_count = 0;

    nlohmann::json summary() const;
};

CalibrationAnalysis run_calibration(const ExperimentConfig& config, const model::ModelBundle& model,
                                    const data::Splits& splits);

struct BoundRow {
    int joint = 0;
    std::string bound;  // "task_lower", "concept_lower" or "compression_upper"
    metrics::BoundCheck check;
};

// Random enumerable joints with random encoders/decoders (lower bounds) and
// discretised Gaussian encoders/priors (upper bound).
std::vector<BoundRow> run_bound_checks(int joints, std::uint64_t seed);
std::string bound_rows_csv(const std::vector<BoundRow>& rows);

// ---- sweeps --------------------------------------------------------------

struct SweepPoint {
    std::string label;
    model::Variant variant = model::Variant::MCBM;
    std::optional<double> gamma;
};

std::vector<SweepPoint> gamma_points(const std::vector<double>& gammas);
std::vector<SweepPoint> variant_points(const std::vector<model::Variant>& variants);

struct PointResult {
    SweepPoint point;
    std::uint64_t seed = 0;
    train::EvalResult test_eval;
    metrics::MetricReport metrics;
    std::vector<intervene::InterventionCurve> curves;
    // Exact c-only Bayes accuracy of the generator; NaN for other datasets.
    double bayes_accuracy = 0.0;
};

// The experiment config with the point's variant/γ and `seed` applied.
ExperimentConfig point_config(const ExperimentConfig& base, const SweepPoint& point, std::uint64_t seed);
PointResult run_point(const ExperimentConfig& base, const SweepPoint& point, std::uint64_t seed);

// Every (point, seed) pair on up to `threads` workers; results are ordered
// point-major regardless of scheduling.
std::vector<PointResult> run_sweep(const ExperimentConfig& base, const std::vector<SweepPoint>& points,
                                   const std::vector<std::uint64_t>& seeds, int threads);

// One row per (point, seed).
std::string sweep_runs_csv(const std::vector<PointResult>& results);
// One row per point, mean and std over seeds for every metric column.
std::string sweep_table_csv(const std::vector<PointResult>& results);

// ---- commands ------------------------------------------------------------

RunManifest cmd_generate(const ExperimentConfig& config, const std::filesystem::path& out);
RunManifest cmd_train(const ExperimentConfig& config, const std::filesystem::path& out);
// `which`: metrics, interventions, calibration, bayes-demo or bound-check.
// The first three read `run_dir` (a train output directory).
RunManifest cmd_report(const std::string& which, const ExperimentConfig& config,
                       const std::optional<std::filesystem::path>& run_dir, const std::filesystem::path& out);
RunManifest cmd_sweep(const ExperimentConfig& config, const std::vector<SweepPoint>& points,
                      const std::filesystem::path& out, int threads);

struct ReplayResult {
    RunManifest original;
    RunManifest rerun;
    std::vector<std::string> mismatched;  // files whose hash differs or is missing

    bool ok() const { return mismatched.empty(); }
};

// Re-executes the command recorded in a manifest into `out` and compares
// every recorded file hash.
ReplayResult replay(const std::filesystem::path& manifest_path, const std::filesystem::path& out, int threads);

// Full command-line entry point; returns the process exit code.
int run(int argc, char** argv);

}  // namespace mcbm::cli
