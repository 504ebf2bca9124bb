#include "mcbm/cli.hpp"

#include "mcbm/errors.hpp"
#include "mcbm/io.hpp"
#include "mcbm/rng.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <type_traits>

namespace mcbm::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using model::Variant;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using Path = std::vector<std::string>;

Path child(Path p, std::string key) {
    p.push_back(std::move(key));
    return p;
}

Path child(Path p, std::size_t index) {
    p.push_back("[" + std::to_string(index) + "]");
    return p;
}

std::string dotted(const Path& p) {
    std::string out;
    for (const auto& part : p) {
        if (!out.empty() && part.front() != '[') out += '.';
        out += part;
    }
    return out.empty() ? "<root>" : out;
}

std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t pos) {
    pos = std::min(pos, text.size());
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < pos; ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

// Locates config values in the source text so that errors can point at a
// line. Keys are searched in order along the path; array indices keep the
// position of their parent.
class Reader {
public:
    Reader(const std::string& text, std::string origin) : text_(text), origin_(std::move(origin)) {}

    std::size_t locate(const Path& path) const {
        std::size_t pos = 0;
        for (const auto& part : path) {
            if (part.front() == '[') continue;
            const std::string quoted = "\"" + part + "\"";
            std::size_t at = text_.find(quoted, pos);
            while (at != std::string::npos) {
                std::size_t k = at + quoted.size();
                while (k < text_.size() && std::isspace(static_cast<unsigned char>(text_[k]))) ++k;
                if (k < text_.size() && text_[k] == ':') break;
                at = text_.find(quoted, at + 1);
            }
            if (at == std::string::npos) break;
            pos = at;
        }
        return pos;
    }

    std::string where(const Path& path) const {
        const auto [line, col] = line_col(text_, locate(path));
        return origin_ + ":" + std::to_string(line) + ":" + std::to_string(col);
    }

    [[noreturn]] void fail(const Path& path, const std::string& message) const {
        throw ConfigError(where(path) + ": " + dotted(path) + ": " + message);
    }

    const json& object(const json& j, const Path& path) const {
        if (!j.is_object()) fail(path, std::string("expected an object, got ") + j.type_name());
        return j;
    }

    void allow(const json& obj, const Path& path, std::initializer_list<const char*> keys) const {
        object(obj, path);
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            bool known = false;
            for (const char* k : keys) known = known || it.key() == k;
            if (!known) {
                std::string expected;
                for (const char* k : keys) expected += (expected.empty() ? "" : ", ") + std::string(k);
                fail(child(path, it.key()), "unknown key '" + it.key() + "' (expected one of: " + expected + ")");
            }
        }
    }

    template <class T>
    T convert(const json& j, const Path& path) const {
        if constexpr (std::is_same_v<T, bool>) {
            if (!j.is_boolean()) fail(path, std::string("expected a boolean, got ") + j.type_name());
            return j.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!j.is_number_integer()) fail(path, std::string("expected an integer, got ") + j.type_name());
            if constexpr (std::is_unsigned_v<T>) {
                if (!j.is_number_unsigned()) fail(path, "expected a nonnegative integer");
            }
            return j.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!j.is_number()) fail(path, std::string("expected a number, got ") + j.type_name());
            return j.get<T>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!j.is_string()) fail(path, std::string("expected a string, got ") + j.type_name());
            return j.get<std::string>();
        } else {
            using E = typename T::value_type;
            if (!j.is_array()) fail(path, std::string("expected an array, got ") + j.type_name());
            T out;
            for (std::size_t i = 0; i < j.size(); ++i) out.push_back(convert<E>(j[i], child(path, i)));
            return out;
        }
    }

    template <class T>
    bool read(const json& obj, const Path& path, const char* key, T& out) const {
        const auto it = obj.find(key);
        if (it == obj.end()) return false;
        out = convert<T>(*it, child(path, key));
        return true;
    }

    // Runs `fn`, re-raising library errors at `path`.
    template <class Fn>
    auto anchored(const Path& path, Fn&& fn) const {
        try {
            return fn();
        } catch (const ConfigError& e) {
            fail(path, e.what());
        } catch (const Error& e) {
            fail(path, e.what());
        } catch (const json::exception& e) {
            fail(path, e.what());
        }
    }

private:
    const std::string& text_;
    std::string origin_;
};

std::string to_string(DatasetKind k) {
    switch (k) {
        case DatasetKind::Factor: return "factor";
        case DatasetKind::Spiral: return "spiral";
        case DatasetKind::Csv: return "csv";
    }
    return "factor";
}

DatasetKind dataset_kind_from_string(const std::string& s) {
    if (s == "factor") return DatasetKind::Factor;
    if (s == "spiral") return DatasetKind::Spiral;
    if (s == "csv") return DatasetKind::Csv;
    throw ConfigError("unknown dataset kind '" + s + "' (expected factor, spiral or csv)");
}

// ---- section validation ----------------------------------------------------

void validate_dataset(const DatasetSection& d) {
    double sum = 0.0;
    for (double r : d.split) {
        if (!(r >= 0.0)) throw ConfigError("split ratios must be nonnegative");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
    if (!(d.split[0] > 0.0)) throw ConfigError("the train split ratio must be positive");
    switch (d.kind) {
        case DatasetKind::Factor: d.generator.validate(); break;
        case DatasetKind::Spiral:
            if (d.spiral_counts.empty()) throw ConfigError("spiral counts must not be empty");
            for (int c : d.spiral_counts) {
                if (c < 1) throw ConfigError("spiral counts must be positive");
            }
            if (!(d.spiral_noise >= 0.0)) throw ConfigError("spiral noise_std must be >= 0");
            break;
        case DatasetKind::Csv:
            if (d.csv_path.empty()) throw ConfigError("csv_path is required for kind 'csv'");
            break;
    }
}

void validate_model(const ModelSection& m) {
    if (m.beta && *m.beta < 0.0) throw ConfigError("beta must be >= 0");
    if (m.gamma && *m.gamma < 0.0) throw ConfigError("gamma must be >= 0");
    if (m.gamma && *m.gamma > 0.0 && m.variant != Variant::MCBM) {
        throw ConfigError("gamma > 0 is only valid for MCBM, got " + model::to_string(m.variant));
    }
    if (m.beta && *m.beta > 0.0 && m.variant == Variant::VM) {
        throw ConfigError("VM has no concept heads, beta must be 0");
    }
    if (!(m.lambda > 0.0)) throw ConfigError("lambda must be positive");
    if (!(m.sigma_zhat > 0.0)) throw ConfigError("sigma_zhat must be positive");
    for (auto h : m.encoder_hidden) {
        if (h == 0) throw ConfigError("encoder_hidden widths must be positive");
    }
    for (auto h : m.task_hidden) {
        if (h == 0) throw ConfigError("task_hidden widths must be positive");
    }
}

void validate_metrics(const MetricsSection& m) {
    if (m.on != "full" && m.on != "test") throw ConfigError("'on' must be 'full' or 'test'");
    m.probe.validate();
}

void validate_interventions(const InterventionsSection& s) {
    if (s.policies.empty()) throw ConfigError("at least one policy is required");
    if (s.fractions.empty()) throw ConfigError("at least one fraction is required");
    for (std::size_t i = 0; i < s.fractions.size(); ++i) {
        if (!(s.fractions[i] >= 0.0 && s.fractions[i] <= 1.0)) throw ConfigError("fractions must lie in [0, 1]");
        if (i > 0 && !(s.fractions[i] > s.fractions[i - 1])) {
            throw ConfigError("fractions must be strictly increasing");
        }
    }
    if (s.seeds < 1) throw ConfigError("seeds must be >= 1");
}

void validate_calibration(const CalibrationSection& c) {
    if (!(c.grid_max > c.grid_min)) throw ConfigError("grid_max must exceed grid_min");
    if (c.grid_n < 2) throw ConfigError("grid_n must be >= 2");
    if (c.neighbors < 1) throw ConfigError("neighbors must be >= 1");
}

void validate_bayes(const BayesSection& b) {
    b.prior.validate();
    if (b.c != 0 && b.c != 1) throw ConfigError("c must be 0 or 1");
    if (!(b.z_max > b.z_min)) throw ConfigError("z_max must exceed z_min");
    if (b.points < 1000) throw ConfigError("points must be >= 1000");
}

void validate_sweep(const SweepSection& s) {
    if (s.seeds.empty()) throw ConfigError("at least one seed is required");
    if (s.gammas.empty() && s.variants.empty()) throw ConfigError("gammas or variants must be non-empty");
    for (double g : s.gammas) {
        if (!(g >= 0.0)) throw ConfigError("gammas must be >= 0");
    }
}

// ---- section parsers -------------------------------------------------------

void parse_generator(const Reader& r, const json& j, const Path& path, data::GenerativeConfig& out) {
    r.allow(j, path,
            {"factors", "input_dim", "n_classes", "decoder_hidden", "decoder_seed", "label_seed", "n_samples",
             "noise_std"});
    r.read(j, path, "input_dim", out.input_dim);
    r.read(j, path, "n_classes", out.n_classes);
    r.read(j, path, "decoder_hidden", out.decoder_hidden);
    r.read(j, path, "decoder_seed", out.decoder_seed);
    r.read(j, path, "label_seed", out.label_seed);
    r.read(j, path, "n_samples", out.n_samples);
    r.read(j, path, "noise_std", out.noise_std);
    if (const auto it = j.find("factors"); it != j.end()) {
        const auto fpath = child(path, "factors");
        if (!it->is_array()) r.fail(fpath, std::string("expected an array, got ") + it->type_name());
        out.factors.clear();
        for (std::size_t i = 0; i < it->size(); ++i) {
            const auto p = child(fpath, i);
            const auto& f = (*it)[i];
            r.allow(f, p, {"name", "kind", "classes", "levels", "role"});
            data::FactorSpec spec;
            std::string kind = "binary", role = "concept";
            if (!r.read(f, p, "name", spec.name)) r.fail(p, "factor needs a name");
            r.read(f, p, "kind", kind);
            r.read(f, p, "role", role);
            r.read(f, p, "classes", spec.classes);
            r.read(f, p, "levels", spec.levels);
            spec.kind = r.anchored(child(p, "kind"), [&] { return data::factor_kind_from_string(kind); });
            spec.role = r.anchored(child(p, "role"), [&] { return data::factor_role_from_string(role); });
            r.anchored(p, [&] { spec.validate(); });
            out.factors.push_back(spec);
        }
    }
}

void parse_dataset(const Reader& r, const json& j, const Path& path, DatasetSection& out) {
    r.allow(j, path, {"kind", "generator", "spiral", "csv_path", "split"});
    std::string kind = to_string(out.kind);
    if (r.read(j, path, "kind", kind)) {
        out.kind = r.anchored(child(path, "kind"), [&] { return dataset_kind_from_string(kind); });
    }
    if (const auto it = j.find("generator"); it != j.end()) {
        parse_generator(r, *it, child(path, "generator"), out.generator);
    }
    if (const auto it = j.find("spiral"); it != j.end()) {
        const auto p = child(path, "spiral");
        r.allow(*it, p, {"counts", "noise_std"});
        r.read(*it, p, "counts", out.spiral_counts);
        r.read(*it, p, "noise_std", out.spiral_noise);
    }
    r.read(j, path, "csv_path", out.csv_path);
    std::vector<double> split;
    if (r.read(j, path, "split", split)) {
        if (split.size() != 3) r.fail(child(path, "split"), "expected [train, val, test] ratios");
        std::copy(split.begin(), split.end(), out.split.begin());
    }
    r.anchored(path, [&] { validate_dataset(out); });
}

void parse_model(const Reader& r, const json& j, const Path& path, ModelSection& out) {
    r.allow(j, path,
            {"variant", "beta", "gamma", "lambda", "sigma_zhat", "encoder_hidden", "task_hidden", "concept_hidden",
             "latent_dim", "learnable_representation_heads", "representation_hidden"});
    std::string variant;
    if (r.read(j, path, "variant", variant)) {
        out.variant = r.anchored(child(path, "variant"), [&] { return model::variant_from_string(variant); });
    }
    double v = 0.0;
    if (r.read(j, path, "beta", v)) out.beta = v;
    if (r.read(j, path, "gamma", v)) out.gamma = v;
    r.read(j, path, "lambda", out.lambda);
    r.read(j, path, "sigma_zhat", out.sigma_zhat);
    r.read(j, path, "encoder_hidden", out.encoder_hidden);
    r.read(j, path, "task_hidden", out.task_hidden);
    r.read(j, path, "concept_hidden", out.concept_hidden);
    r.read(j, path, "latent_dim", out.latent_dim);
    r.read(j, path, "learnable_representation_heads", out.learnable_representation_heads);
    r.read(j, path, "representation_hidden", out.representation_hidden);
    const auto anchor = j.contains("gamma") ? child(path, "gamma") : path;
    r.anchored(anchor, [&] { validate_model(out); });
}

void parse_train(const Reader& r, const json& j, const Path& path, train::TrainConfig& out) {
    r.allow(j, path, {"epochs", "stage2_epochs", "batch_size", "optimizer", "scheduler", "eval_every", "reparam_samples"});
    r.read(j, path, "epochs", out.epochs);
    r.read(j, path, "stage2_epochs", out.stage2_epochs);
    r.read(j, path, "batch_size", out.batch_size);
    r.read(j, path, "eval_every", out.eval_every);
    r.read(j, path, "reparam_samples", out.reparam_samples);
    if (const auto it = j.find("optimizer"); it != j.end()) {
        const auto p = child(path, "optimizer");
        r.allow(*it, p,
                {"kind", "learning_rate", "momentum", "weight_decay", "adam_beta1", "adam_beta2", "adam_eps"});
        std::string kind;
        if (r.read(*it, p, "kind", kind)) {
            out.optimizer.kind = r.anchored(child(p, "kind"), [&] { return diff::optimizer_kind_from_string(kind); });
        }
        r.read(*it, p, "learning_rate", out.optimizer.learning_rate);
        r.read(*it, p, "momentum", out.optimizer.momentum);
        r.read(*it, p, "weight_decay", out.optimizer.weight_decay);
        r.read(*it, p, "adam_beta1", out.optimizer.adam_beta1);
        r.read(*it, p, "adam_beta2", out.optimizer.adam_beta2);
        r.read(*it, p, "adam_eps", out.optimizer.adam_eps);
    }
    if (const auto it = j.find("scheduler"); it != j.end()) {
        const auto p = child(path, "scheduler");
        r.allow(*it, p, {"step_size_epochs", "decay_factor"});
        r.read(*it, p, "step_size_epochs", out.scheduler.step_size_epochs);
        r.read(*it, p, "decay_factor", out.scheduler.decay_factor);
    }
    r.anchored(path, [&] { out.validate(); });
}

void parse_metrics(const Reader& r, const json& j, const Path& path, MetricsSection& out) {
    r.allow(j, path, {"on", "sample_latent", "probe"});
    r.read(j, path, "on", out.on);
    r.read(j, path, "sample_latent", out.sample_latent);
    if (const auto it = j.find("probe"); it != j.end()) {
        const auto p = child(path, "probe");
        r.allow(*it, p, {"hidden_layers", "epochs", "learning_rate", "batch_size", "train_fraction"});
        r.read(*it, p, "hidden_layers", out.probe.hidden_layers);
        r.read(*it, p, "epochs", out.probe.epochs);
        r.read(*it, p, "learning_rate", out.probe.learning_rate);
        r.read(*it, p, "batch_size", out.probe.batch_size);
        r.read(*it, p, "train_fraction", out.probe.train_fraction);
    }
    r.anchored(path, [&] { validate_metrics(out); });
}

void parse_interventions(const Reader& r, const json& j, const Path& path, InterventionsSection& out) {
    r.allow(j, path, {"policies", "fractions", "seeds"});
    std::vector<std::string> policies;
    if (r.read(j, path, "policies", policies)) {
        out.policies.clear();
        for (std::size_t i = 0; i < policies.size(); ++i) {
            out.policies.push_back(r.anchored(child(child(path, "policies"), i),
                                              [&] { return intervene::policy_from_string(policies[i]); }));
        }
    }
    r.read(j, path, "fractions", out.fractions);
    r.read(j, path, "seeds", out.seeds);
    r.anchored(path, [&] { validate_interventions(out); });
}

void parse_calibration(const Reader& r, const json& j, const Path& path, CalibrationSection& out) {
    r.allow(j, path, {"grid_min", "grid_max", "grid_n", "neighbors"});
    r.read(j, path, "grid_min", out.grid_min);
    r.read(j, path, "grid_max", out.grid_max);
    r.read(j, path, "grid_n", out.grid_n);
    r.read(j, path, "neighbors", out.neighbors);
    r.anchored(path, [&] { validate_calibration(out); });
}

void read_pair(const Reader& r, const json& j, const Path& path, const char* key, std::array<double, 2>& out) {
    std::vector<double> v;
    if (!r.read(j, path, key, v)) return;
    if (v.size() != 2) r.fail(child(path, key), "expected two values");
    out = {v[0], v[1]};
}

void parse_bayes(const Reader& r, const json& j, const Path& path, BayesSection& out) {
    r.allow(j, path, {"weights", "means", "sigmas", "c", "z_min", "z_max", "points"});
    read_pair(r, j, path, "weights", out.prior.weights);
    read_pair(r, j, path, "means", out.prior.means);
    read_pair(r, j, path, "sigmas", out.prior.sigmas);
    r.read(j, path, "c", out.c);
    r.read(j, path, "z_min", out.z_min);
    r.read(j, path, "z_max", out.z_max);
    r.read(j, path, "points", out.points);
    r.anchored(path, [&] { validate_bayes(out); });
}

void parse_sweep(const Reader& r, const json& j, const Path& path, SweepSection& out) {
    r.allow(j, path, {"gammas", "variants", "seeds"});
    r.read(j, path, "gammas", out.gammas);
    std::vector<std::string> variants;
    if (r.read(j, path, "variants", variants)) {
        out.variants.clear();
        for (std::size_t i = 0; i < variants.size(); ++i) {
            out.variants.push_back(r.anchored(child(child(path, "variants"), i),
                                              [&] { return model::variant_from_string(variants[i]); }));
        }
    }
    r.read(j, path, "seeds", out.seeds);
    r.anchored(path, [&] { validate_sweep(out); });
}

json probe_json(const metrics::ProbeConfig& p) {
    return {{"hidden_layers", p.hidden_layers},
            {"epochs", p.epochs},
            {"learning_rate", p.learning_rate},
            {"batch_size", p.batch_size},
            {"train_fraction", p.train_fraction}};
}

}  // namespace

// ---- config ----------------------------------------------------------------

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const IoError*>(&e)) return kExitIo;
    if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const UndefinedMetricError*>(&e)) {
        return kExitNumeric;
    }
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UsageError*>(&e) ||
        dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const DomainError*>(&e)) {
        return kExitConfig;
    }
    return kExitFailure;
}

void ExperimentConfig::validate() const {
    if (threads < 1) throw ConfigError("threads must be >= 1");
    validate_dataset(dataset);
    validate_model(model);
    train.validate();
    validate_metrics(metrics);
    validate_interventions(interventions);
    validate_calibration(calibration);
    validate_bayes(bayes);
    if (bounds.joints < 1) throw ConfigError("bound_check joints must be >= 1");
    validate_sweep(sweep);
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        const auto [line, col] = line_col(text, e.byte > 0 ? e.byte - 1 : 0);
        throw ConfigError(origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": invalid JSON: " +
                          e.what());
    }
    const Reader r(text, origin);
    const Path root;
    r.allow(doc, root,
            {"seed", "output_dir", "threads", "dataset", "model", "train", "metrics", "interventions", "calibration",
             "bayes_demo", "bound_check", "sweep"});
    ExperimentConfig c;
    r.read(doc, root, "seed", c.seed);
    r.read(doc, root, "output_dir", c.output_dir);
    if (r.read(doc, root, "threads", c.threads) && c.threads < 1) r.fail({"threads"}, "threads must be >= 1");
    if (doc.contains("dataset")) parse_dataset(r, doc["dataset"], {"dataset"}, c.dataset);
    if (doc.contains("model")) parse_model(r, doc["model"], {"model"}, c.model);
    if (doc.contains("train")) parse_train(r, doc["train"], {"train"}, c.train);
    if (doc.contains("metrics")) parse_metrics(r, doc["metrics"], {"metrics"}, c.metrics);
    if (doc.contains("interventions")) parse_interventions(r, doc["interventions"], {"interventions"}, c.interventions);
    if (doc.contains("calibration")) parse_calibration(r, doc["calibration"], {"calibration"}, c.calibration);
    if (doc.contains("bayes_demo")) parse_bayes(r, doc["bayes_demo"], {"bayes_demo"}, c.bayes);
    if (doc.contains("bound_check")) {
        const Path p{"bound_check"};
        r.allow(doc["bound_check"], p, {"joints"});
        r.read(doc["bound_check"], p, "joints", c.bounds.joints);
        if (c.bounds.joints < 1) r.fail(child(p, "joints"), "joints must be >= 1");
    }
    if (doc.contains("sweep")) parse_sweep(r, doc["sweep"], {"sweep"}, c.sweep);
    r.anchored(root, [&] { c.validate(); });
    return c;
}

ExperimentConfig load_config(const fs::path& path) { return parse_config(io::read_file(path), path.string()); }

json to_json(const ExperimentConfig& c) {
    json model{{"variant", model::to_string(c.model.variant)},
               {"lambda", c.model.lambda},
               {"sigma_zhat", c.model.sigma_zhat},
               {"encoder_hidden", c.model.encoder_hidden},
               {"task_hidden", c.model.task_hidden},
               {"concept_hidden", c.model.concept_hidden},
               {"latent_dim", c.model.latent_dim},
               {"learnable_representation_heads", c.model.learnable_representation_heads},
               {"representation_hidden", c.model.representation_hidden}};
    if (c.model.beta) model["beta"] = *c.model.beta;
    if (c.model.gamma) model["gamma"] = *c.model.gamma;
    const auto& t = c.train;
    json train{{"epochs", t.epochs},
               {"stage2_epochs", t.stage2_epochs},
               {"batch_size", t.batch_size},
               {"eval_every", t.eval_every},
               {"reparam_samples", t.reparam_samples},
               {"optimizer",
                {{"kind", diff::to_string(t.optimizer.kind)},
                 {"learning_rate", t.optimizer.learning_rate},
                 {"momentum", t.optimizer.momentum},
                 {"weight_decay", t.optimizer.weight_decay},
                 {"adam_beta1", t.optimizer.adam_beta1},
                 {"adam_beta2", t.optimizer.adam_beta2},
                 {"adam_eps", t.optimizer.adam_eps}}},
               {"scheduler",
                {{"step_size_epochs", t.scheduler.step_size_epochs}, {"decay_factor", t.scheduler.decay_factor}}}};
    json policies = json::array();
    for (auto p : c.interventions.policies) policies.push_back(intervene::to_string(p));
    json variants = json::array();
    for (auto v : c.sweep.variants) variants.push_back(model::to_string(v));
    const auto& b = c.bayes;
    return {{"seed", c.seed},
            {"output_dir", c.output_dir},
            {"threads", c.threads},
            {"dataset",
             {{"kind", to_string(c.dataset.kind)},
              {"generator", data::to_json(c.dataset.generator)},
              {"spiral", {{"counts", c.dataset.spiral_counts}, {"noise_std", c.dataset.spiral_noise}}},
              {"csv_path", c.dataset.csv_path},
              {"split", c.dataset.split}}},
            {"model", model},
            {"train", train},
            {"metrics",
             {{"on", c.metrics.on}, {"sample_latent", c.metrics.sample_latent}, {"probe", probe_json(c.metrics.probe)}}},
            {"interventions",
             {{"policies", policies}, {"fractions", c.interventions.fractions}, {"seeds", c.interventions.seeds}}},
            {"calibration",
             {{"grid_min", c.calibration.grid_min},
              {"grid_max", c.calibration.grid_max},
              {"grid_n", c.calibration.grid_n},
              {"neighbors", c.calibration.neighbors}}},
            {"bayes_demo",
             {{"weights", b.prior.weights},
              {"means", b.prior.means},
              {"sigmas", b.prior.sigmas},
              {"c", b.c},
              {"z_min", b.z_min},
              {"z_max", b.z_max},
              {"points", b.points}}},
            {"bound_check", {{"joints", c.bounds.joints}}},
            {"sweep", {{"gammas", c.sweep.gammas}, {"variants", variants}, {"seeds", c.sweep.seeds}}}};
}

// ---- manifests -------------------------------------------------------------

json RunManifest::to_json() const {
    json files_json = json::array();
    for (const auto& f : files) files_json.push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
    return {{"command", command},
            {"arguments", arguments},
            {"config", config},
            {"master_seed", master_seed},
            {"artifact_version", artifact_version},
            {"started_at", started_at},
            {"wall_seconds", wall_seconds},
            {"files", files_json},
            {"notes", notes}};
}

RunManifest RunManifest::from_json(const json& j) {
    try {
        RunManifest m;
        m.command = j.at("command").get<std::string>();
        m.arguments = j.at("arguments");
        m.config = j.at("config");
        m.master_seed = j.at("master_seed").get<std::uint64_t>();
        m.artifact_version = j.at("artifact_version").get<std::string>();
        m.started_at = j.value("started_at", "");
        m.wall_seconds = j.value("wall_seconds", 0.0);
        for (const auto& f : j.at("files")) {
            m.files.push_back({f.at("path").get<std::string>(), f.at("sha256").get<std::string>(),
                               f.at("bytes").get<std::uintmax_t>()});
        }
        if (j.contains("notes")) m.notes = j.at("notes").get<std::vector<std::string>>();
        return m;
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed manifest: ") + e.what());
    }
}

namespace {

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

RunDir::RunDir(fs::path root)
    : root_(std::move(root)), start_(std::chrono::steady_clock::now()), started_at_(utc_now()) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec) throw IoError("cannot create run directory '" + root_.string() + "': " + ec.message());
    if (fs::exists(root_ / "manifest.json")) {
        throw IoError("run directory '" + root_.string() + "' already holds a manifest; runs are append-only");
    }
}

fs::path RunDir::reserve(const std::string& relative) const {
    const auto path = root_ / relative;
    if (fs::exists(path)) {
        throw IoError("refusing to overwrite '" + path.string() + "' (run directories are append-only)");
    }
    return path;
}

void RunDir::write(const std::string& relative, const std::string& content) {
    io::write_file(reserve(relative), content);
    files_.push_back({relative, io::sha256_hex(content), content.size()});
}

void RunDir::write_json(const std::string& relative, const json& doc) { write(relative, doc.dump(2) + "\n"); }

void RunDir::adopt(const std::string& relative) {
    const auto path = root_ / relative;
    if (!fs::exists(path)) throw IoError("expected output '" + path.string() + "' was not written");
    files_.push_back({relative, io::sha256_file(path), fs::file_size(path)});
}

RunManifest RunDir::finish(RunManifest manifest) {
    manifest.started_at = started_at_;
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    manifest.files = files_;
    io::write_json(reserve("manifest.json"), manifest.to_json());
    return manifest;
}

// ---- pipelines -------------------------------------------------------------

data::Dataset make_dataset(const DatasetSection& section, std::uint64_t seed) {
    switch (section.kind) {
        case DatasetKind::Factor: return data::make_factor_dataset(section.generator, seed);
        case DatasetKind::Spiral: return data::make_spiral_dataset(section.spiral_counts, section.spiral_noise, seed);
        case DatasetKind::Csv: return data::load_dataset(section.csv_path);
    }
    throw ConfigError("unknown dataset kind");
}

model::ModelConfig resolve_model_config(const ModelSection& s, const data::Dataset& dataset, std::uint64_t seed) {
    auto specs = model::concept_specs_from_factors(dataset.factors);
    auto mc = model::ModelConfig::for_variant(s.variant, std::move(specs), dataset.input_dim, dataset.n_classes);
    if (s.variant == Variant::MCBM) mc.weights.gamma = s.gamma.value_or(kDefaultMcbmGamma);
    if (s.gamma && s.variant != Variant::MCBM) mc.weights.gamma = *s.gamma;
    if (s.beta) mc.weights.beta = *s.beta;
    mc.weights.lambda = s.lambda;
    mc.weights.sigma_zhat = s.sigma_zhat;
    mc.encoder_hidden = s.encoder_hidden;
    mc.task_hidden = s.task_hidden;
    mc.concept_hidden = s.concept_hidden;
    mc.latent_dim = s.latent_dim;
    mc.learnable_representation_heads = s.learnable_representation_heads;
    mc.representation_hidden = s.representation_hidden;
    mc.seed = seed;
    mc.validate();
    return mc;
}

train::TrainConfig resolve_train_config(const train::TrainConfig& section, std::uint64_t seed) {
    auto tc = section;
    tc.master_seed = seed;
    tc.beta.reset();
    tc.gamma.reset();
    return tc;
}

TrainedRun run_training(const ExperimentConfig& config) {
    config.validate();
    TrainedRun run;
    run.dataset = make_dataset(config.dataset, config.seed);
    run.splits = data::split(run.dataset, config.dataset.split, config.seed);
    run.model = model::build_model(resolve_model_config(config.model, run.dataset, config.seed));
    run.history = train::train(run.model, run.splits.train, &run.splits.val,
                               resolve_train_config(config.train, config.seed));
    return run;
}

metrics::MetricReport run_metrics(const ExperimentConfig& config, const model::ModelBundle& model,
                                  const data::Dataset& dataset, const data::Splits& splits) {
    metrics::MetricsConfig mc;
    mc.probe = config.metrics.probe;
    mc.probe.seed = config.seed;
    mc.seed = config.seed;
    mc.sample_latent = config.metrics.sample_latent;
    return metrics::evaluate_metrics(model, config.metrics.on == "test" ? splits.test : dataset, mc);
}

std::vector<intervene::InterventionCurve> run_interventions(const ExperimentConfig& config,
                                                            const model::ModelBundle& model,
                                                            const data::Splits& splits) {
    intervene::PercentileTable table;
    const intervene::PercentileTable* table_ptr = nullptr;
    if (model.variant() == Variant::CBM) {
        table = intervene::fit_percentile_table(model, splits.train);
        table_ptr = &table;
    }
    std::vector<intervene::InterventionCurve> curves;
    for (auto policy : config.interventions.policies) {
        const int n_seeds = policy == intervene::Policy::Random ? config.interventions.seeds : 1;
        curves.push_back(intervene::intervention_curve(model, splits.test, policy, config.interventions.fractions,
                                                       n_seeds, config.seed, table_ptr));
    }
    return curves;
}

json CalibrationAnalysis::summary() const {
    json j{{"test", test.summary()}};
    if (grid) {
        j["grid"] = grid->summary();
        j["band_fraction"] = band_fraction;
        j["top2_above_0_3_in_band"] = top2_in_band;
        j["top2_above_0_3_count"] = top2_count;
    }
    return j;
}

CalibrationAnalysis run_calibration(const ExperimentConfig& config, const model::ModelBundle& model,
                                    const data::Splits& splits) {
    const auto& train_split = splits.train;
    std::vector<std::size_t> counts(static_cast<std::size_t>(train_split.n_classes), 0);
    for (int y : train_split.y) ++counts[static_cast<std::size_t>(y)];
    const int majority = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());

    CalibrationAnalysis out;
    const auto& test = splits.test;
    out.test = metrics::calibration_report(model, diff::Tensor::matrix(test.n, test.input_dim, test.x), test.y,
                                           majority);
    if (test.input_dim != 2) return out;
    const auto& cal = config.calibration;
    const auto grid = metrics::grid_points(cal.grid_min, cal.grid_max, cal.grid_n);
    out.grid = metrics::calibration_report(model, grid, {}, majority);
    out.band = metrics::boundary_band(grid, diff::Tensor::matrix(train_split.n, 2, train_split.x), train_split.y,
                                      cal.neighbors);
    std::size_t in_band = 0, band_size = 0;
    for (std::size_t i = 0; i < out.band.size(); ++i) {
        band_size += out.band[i] != 0;
        if (out.grid->points[i].top2 > 0.3) {
            ++out.top2_count;
            in_band += out.band[i] != 0;
        }
    }
    out.band_fraction = static_cast<double>(band_size) / static_cast<double>(out.band.size());
    out.top2_in_band = out.top2_count > 0 ? static_cast<double>(in_band) / static_cast<double>(out.top2_count) : 1.0;
    return out;
}

namespace {

std::vector<double> random_simplex(std::size_t n, RngStream& rng) {
    std::vector<double> p(n);
    double sum = 0.0;
    for (auto& v : p) {
        const double u = rng.uniform();
        v = u * u * u + 1e-4;
        sum += v;
    }
    for (auto& v : p) v /= sum;
    return p;
}

std::vector<std::vector<double>> random_joint(std::size_t rows, std::size_t cols, RngStream& rng) {
    const auto flat = random_simplex(rows * cols, rng);
    std::vector<std::vector<double>> j(rows, std::vector<double>(cols));
    for (std::size_t a = 0; a < rows; ++a) {
        for (std::size_t b = 0; b < cols; ++b) j[a][b] = flat[a * cols + b];
    }
    return j;
}

std::vector<std::vector<double>> random_conditional(std::size_t rows, std::size_t cols, RngStream& rng) {
    std::vector<std::vector<double>> t;
    for (std::size_t a = 0; a < rows; ++a) t.push_back(random_simplex(cols, rng));
    return t;
}

std::size_t between(std::size_t lo, std::size_t hi, RngStream& rng) { return lo + rng.below(hi - lo + 1); }

}  // namespace

std::vector<BoundRow> run_bound_checks(int joints, std::uint64_t seed) {
    if (joints < 1) throw ConfigError("bound checks need at least one joint");
    RngStream rng(seed, "bound_check");
    std::vector<BoundRow> rows;
    for (int k = 0; k < joints; ++k) {
        const std::size_t nx = between(2, 6, rng), ny = between(2, 4, rng), nc = between(2, 4, rng);
        const std::size_t nz = between(2, 6, rng);
        const auto encoder = random_conditional(nx, nz, rng);
        rows.push_back({k, "task_lower",
                        metrics::variational_lower_bound_check(random_joint(nx, ny, rng), encoder,
                                                               random_conditional(nz, ny, rng))});
        rows.push_back({k, "concept_lower",
                        metrics::variational_lower_bound_check(random_joint(nx, nc, rng), encoder,
                                                               random_conditional(nz, nc, rng))});

        const std::size_t n_grid = between(7, 21, rng);
        std::vector<double> grid(n_grid);
        for (std::size_t i = 0; i < n_grid; ++i) grid[i] = -4.0 + 8.0 * static_cast<double>(i) / (n_grid - 1);
        std::vector<std::vector<double>> gauss_encoder, prior;
        for (std::size_t x = 0; x < nx; ++x) {
            gauss_encoder.push_back(metrics::discretized_gaussian(grid, rng.uniform(-2.0, 2.0), rng.uniform(0.3, 1.5)));
        }
        for (std::size_t c = 0; c < nc; ++c) {
            prior.push_back(metrics::discretized_gaussian(grid, rng.uniform(-2.0, 2.0), rng.uniform(0.3, 1.5)));
        }
        rows.push_back({k, "compression_upper",
                        metrics::variational_upper_bound_check(random_joint(nx, nc, rng), gauss_encoder, prior)});
    }
    return rows;
}

std::string bound_rows_csv(const std::vector<BoundRow>& rows) {
    std::string out = "joint,bound,lhs,rhs,gap\n";
    for (const auto& r : rows) {
        out += std::to_string(r.joint) + "," + r.bound + "," + io::format_double(r.check.lhs) + "," +
               io::format_double(r.check.rhs) + "," + io::format_double(r.check.gap) + "\n";
    }
    return out;
}

// ---- sweeps ----------------------------------------------------------------

std::vector<SweepPoint> gamma_points(const std::vector<double>& gammas) {
    std::vector<SweepPoint> out;
    for (double g : gammas) out.push_back({"MCBM(gamma=" + io::format_double(g) + ")", Variant::MCBM, g});
    return out;
}

std::vector<SweepPoint> variant_points(const std::vector<Variant>& variants) {
    std::vector<SweepPoint> out;
    for (auto v : variants) out.push_back({model::to_string(v), v, std::nullopt});
    return out;
}

ExperimentConfig point_config(const ExperimentConfig& base, const SweepPoint& point, std::uint64_t seed) {
    auto c = base;
    c.seed = seed;
    if (c.model.variant != point.variant) {
        c.model.beta.reset();
        c.model.gamma.reset();
    }
    c.model.variant = point.variant;
    if (point.gamma) c.model.gamma = *point.gamma;
    if (point.variant != Variant::MCBM && c.model.gamma == 0.0) c.model.gamma.reset();
    return c;
}

PointResult run_point(const ExperimentConfig& base, const SweepPoint& point, std::uint64_t seed) {
    const auto config = point_config(base, point, seed);
    auto run = run_training(config);
    PointResult r;
    r.point = point;
    r.seed = seed;
    r.test_eval = train::evaluate(run.model, run.splits.test);
    r.metrics = run_metrics(config, run.model, run.dataset, run.splits);
    if (point.variant != Variant::VM) r.curves = run_interventions(config, run.model, run.splits);
    r.bayes_accuracy = kNaN;
    if (config.dataset.kind == DatasetKind::Factor) {
        const auto& g = config.dataset.generator;
        r.bayes_accuracy = data::c_only_bayes_accuracy(g, data::build_label_table(g));
    }
    return r;
}

std::vector<PointResult> run_sweep(const ExperimentConfig& base, const std::vector<SweepPoint>& points,
                                   const std::vector<std::uint64_t>& seeds, int threads) {
    if (points.empty() || seeds.empty()) throw ConfigError("sweep needs at least one point and one seed");
    base.validate();
    for (const auto& p : points) point_config(base, p, seeds.front()).validate();
    const std::size_t n = points.size() * seeds.size();
    std::vector<PointResult> results(n);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t k = next++; k < n; k = next++) {
            try {
                results[k] = run_point(base, points[k / seeds.size()], seeds[k % seeds.size()]);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = n;
            }
        }
    };
    const auto n_workers = static_cast<std::size_t>(std::max(1, threads));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(n_workers, n); ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    return results;
}

namespace {

std::string cell(double v) { return std::isnan(v) ? "" : io::format_double(v); }

// Named metric columns of one result, in a fixed order.
std::vector<std::pair<std::string, double>> metric_columns(const PointResult& r,
                                                           const std::vector<std::string>& nuisances,
                                                           const std::vector<std::string>& curve_columns) {
    std::vector<std::pair<std::string, double>> cols;
    cols.emplace_back("task_accuracy", r.test_eval.task_accuracy);
    cols.emplace_back("concept_accuracy", r.test_eval.mean_concept_accuracy);
    for (const auto& name : nuisances) {
        double v = kNaN;
        for (std::size_t i = 0; i < r.metrics.nuisance_names.size(); ++i) {
            if (r.metrics.nuisance_names[i] == name) v = r.metrics.urr[i].urr;
        }
        cols.emplace_back("urr_" + name, v);
    }
    cols.emplace_back("mean_urr", r.metrics.urr.empty() ? kNaN : r.metrics.mean_urr);
    cols.emplace_back("cka", r.metrics.cka);
    cols.emplace_back("disentanglement", r.metrics.disentanglement);
    for (const auto& name : curve_columns) {
        double v = kNaN;
        for (const auto& c : r.curves) {
            for (std::size_t i = 0; i < c.fractions.size(); ++i) {
                if ("error_" + intervene::to_string(c.policy) + "_f" + io::format_double(c.fractions[i]) == name) {
                    v = c.mean_error[i];
                }
            }
        }
        cols.emplace_back(name, v);
    }
    cols.emplace_back("bayes_accuracy", r.bayes_accuracy);
    return cols;
}

std::pair<std::vector<std::string>, std::vector<std::string>> column_sets(const std::vector<PointResult>& results) {
    std::vector<std::string> nuisances, curves;
    for (const auto& r : results) {
        for (const auto& name : r.metrics.nuisance_names) {
            if (std::find(nuisances.begin(), nuisances.end(), name) == nuisances.end()) nuisances.push_back(name);
        }
        for (const auto& c : r.curves) {
            for (double f : c.fractions) {
                const auto name = "error_" + intervene::to_string(c.policy) + "_f" + io::format_double(f);
                if (std::find(curves.begin(), curves.end(), name) == curves.end()) curves.push_back(name);
            }
        }
    }
    return {nuisances, curves};
}

std::string gamma_cell(const PointResult& r) {
    if (r.point.variant != Variant::MCBM) return "0";
    return io::format_double(r.point.gamma.value_or(kDefaultMcbmGamma));
}

}  // namespace

std::string sweep_runs_csv(const std::vector<PointResult>& results) {
    const auto [nuisances, curves] = column_sets(results);
    std::string out = "model,variant,gamma,seed";
    if (!results.empty()) {
        for (const auto& [name, v] : metric_columns(results.front(), nuisances, curves)) out += "," + name;
    }
    out += "\n";
    for (const auto& r : results) {
        out += r.point.label + "," + model::to_string(r.point.variant) + "," + gamma_cell(r) + "," +
               std::to_string(r.seed);
        for (const auto& [name, v] : metric_columns(r, nuisances, curves)) out += "," + cell(v);
        out += "\n";
    }
    return out;
}

std::string sweep_table_csv(const std::vector<PointResult>& results) {
    const auto [nuisances, curves] = column_sets(results);
    std::vector<std::string> labels;
    for (const auto& r : results) {
        if (std::find(labels.begin(), labels.end(), r.point.label) == labels.end()) labels.push_back(r.point.label);
    }
    std::string out = "model,variant,gamma,n_seeds";
    if (!results.empty()) {
        for (const auto& [name, v] : metric_columns(results.front(), nuisances, curves)) {
            out += "," + name + "_mean," + name + "_std";
        }
    }
    out += "\n";
    for (const auto& label : labels) {
        std::vector<const PointResult*> group;
        for (const auto& r : results) {
            if (r.point.label == label) group.push_back(&r);
        }
        const auto& first = *group.front();
        out += label + "," + model::to_string(first.point.variant) + "," + gamma_cell(first) + "," +
               std::to_string(group.size());
        const auto n_cols = metric_columns(first, nuisances, curves).size();
        std::vector<std::vector<double>> values(n_cols);
        for (const auto* r : group) {
            const auto cols = metric_columns(*r, nuisances, curves);
            for (std::size_t k = 0; k < n_cols; ++k) {
                if (!std::isnan(cols[k].second)) values[k].push_back(cols[k].second);
            }
        }
        for (const auto& v : values) {
            if (v.empty()) {
                out += ",,";
                continue;
            }
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            double var = 0.0;
            for (double x : v) var += (x - mean) * (x - mean);
            const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
            out += "," + io::format_double(mean) + "," + io::format_double(sd);
        }
        out += "\n";
    }
    return out;
}

// ---- commands --------------------------------------------------------------

namespace {

std::string file_safe(const std::string& label) {
    std::string out;
    for (char ch : label) {
        if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-') {
            out += ch;
        } else if (!out.empty() && out.back() != '_') {
            out += '_';
        }
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out;
}

RunManifest base_manifest(const std::string& command, const ExperimentConfig& config) {
    RunManifest m;
    m.command = command;
    m.config = to_json(config);
    m.master_seed = config.seed;
    return m;
}

json eval_json(const train::EvalResult& e) {
    json acc = json::array(), mse = json::array();
    for (double v : e.concept_accuracy) acc.push_back(std::isnan(v) ? json(nullptr) : json(v));
    for (double v : e.concept_mse) mse.push_back(std::isnan(v) ? json(nullptr) : json(v));
    return {{"task_accuracy", e.task_accuracy},
            {"concept_accuracy", acc},
            {"concept_mse", mse},
            {"mean_concept_accuracy", std::isnan(e.mean_concept_accuracy) ? json(nullptr)
                                                                         : json(e.mean_concept_accuracy)},
            {"loss_total", e.loss.total}};
}

void write_dataset(RunDir& dir, const data::Dataset& d, const ExperimentConfig& config) {
    std::optional<data::GenerativeConfig> generator;
    if (config.dataset.kind == DatasetKind::Factor) generator = config.dataset.generator;
    dir.write("dataset.csv", data::dataset_to_csv(d));
    dir.write_json("dataset.csv.json", data::dataset_sidecar(d, generator));
}

struct LoadedRun {
    data::Dataset dataset;
    data::Splits splits;
    model::ModelBundle model;
};

LoadedRun load_run(const fs::path& run_dir, const ExperimentConfig& config) {
    LoadedRun r;
    r.dataset = data::load_dataset(run_dir / "dataset.csv");
    r.splits = data::split(r.dataset, config.dataset.split, config.seed);
    r.model = train::load_checkpoint(run_dir / "model.json", config.model.variant);
    return r;
}

}  // namespace

RunManifest cmd_generate(const ExperimentConfig& config, const fs::path& out) {
    config.validate();
    RunDir dir(out);
    const auto d = make_dataset(config.dataset, config.seed);
    dir.write_json("config.json", to_json(config));
    write_dataset(dir, d, config);
    auto m = base_manifest("generate", config);
    m.notes = d.warnings;
    return dir.finish(std::move(m));
}

RunManifest cmd_train(const ExperimentConfig& config, const fs::path& out) {
    config.validate();
    RunDir dir(out);
    auto run = run_training(config);
    dir.write_json("config.json", to_json(config));
    write_dataset(dir, run.dataset, config);
    train::save_checkpoint(run.model, &run.history, config.seed, dir.root() / "model.json");
    dir.adopt("model.json");
    dir.write("history.csv", run.history.to_csv());
    json eval{{"train", eval_json(train::evaluate(run.model, run.splits.train))},
              {"val", eval_json(train::evaluate(run.model, run.splits.val))},
              {"test", eval_json(train::evaluate(run.model, run.splits.test))},
              {"model", run.model.descriptor()}};
    if (config.dataset.kind == DatasetKind::Factor) {
        const auto& g = config.dataset.generator;
        eval["c_only_bayes_accuracy"] = data::c_only_bayes_accuracy(g, data::build_label_table(g));
    }
    dir.write_json("eval.json", eval);
    auto m = base_manifest("train", config);
    m.notes = run.splits.warnings;
    for (const auto& n : run.model.notes()) m.notes.push_back(n);
    return dir.finish(std::move(m));
}

RunManifest cmd_report(const std::string& which, const ExperimentConfig& config,
                       const std::optional<fs::path>& run_dir, const fs::path& out) {
    config.validate();
    static const std::set<std::string> kinds{"metrics", "interventions", "calibration", "bayes-demo", "bound-check"};
    if (!kinds.count(which)) {
        throw UsageError("unknown report '" + which +
                         "' (expected metrics, interventions, calibration, bayes-demo or bound-check)");
    }
    const bool needs_run = which == "metrics" || which == "interventions" || which == "calibration";
    if (needs_run && !run_dir) throw UsageError("report " + which + " needs --run <train output directory>");

    RunDir dir(out);
    auto manifest = base_manifest("report", config);
    manifest.arguments = {{"which", which}};
    if (run_dir) manifest.arguments["run_dir"] = fs::absolute(*run_dir).string();

    if (which == "bayes-demo") {
        const auto& b = config.bayes;
        const auto demo = intervene::bayes_posterior_demo(b.prior, b.c, b.z_min, b.z_max, b.points);
        dir.write("bayes_demo.csv", demo.to_csv());
        dir.write_json("bayes_demo.json", demo.summary());
    } else if (which == "bound-check") {
        const auto rows = run_bound_checks(config.bounds.joints, config.seed);
        double min_gap = std::numeric_limits<double>::infinity();
        for (const auto& r : rows) min_gap = std::min(min_gap, r.check.gap);
        dir.write("bound_check.csv", bound_rows_csv(rows));
        dir.write_json("bound_check.json", {{"joints", config.bounds.joints},
                                            {"checks", rows.size()},
                                            {"min_gap", min_gap}});
    } else {
        const auto run = load_run(*run_dir, config);
        if (which == "metrics") {
            auto j = run_metrics(config, run.model, run.dataset, run.splits).to_json();
            j["on"] = config.metrics.on;
            dir.write_json("metrics.json", j);
        } else if (which == "interventions") {
            for (const auto& c : run_interventions(config, run.model, run.splits)) {
                dir.write("interventions_" + intervene::to_string(c.policy) + ".csv", c.to_csv());
            }
            if (run.model.variant() == Variant::CBM) {
                dir.write_json("percentiles.json", intervene::fit_percentile_table(run.model, run.splits.train).to_json());
            }
        } else {
            const auto cal = run_calibration(config, run.model, run.splits);
            dir.write("calibration_test.csv", cal.test.to_csv());
            if (cal.grid) dir.write("calibration_grid.csv", cal.grid->to_csv());
            dir.write_json("calibration.json", cal.summary());
        }
    }
    return dir.finish(std::move(manifest));
}

RunManifest cmd_sweep(const ExperimentConfig& config, const std::vector<SweepPoint>& points, const fs::path& out,
                      int threads) {
    config.validate();
    RunDir dir(out);
    const auto results = run_sweep(config, points, config.sweep.seeds, threads);
    dir.write_json("config.json", to_json(config));
    dir.write("sweep_runs.csv", sweep_runs_csv(results));
    dir.write("sweep.csv", sweep_table_csv(results));
    for (const auto& r : results) {
        for (const auto& c : r.curves) {
            dir.write("curves/" + file_safe(r.point.label) + "_seed" + std::to_string(r.seed) + "_" +
                          intervene::to_string(c.policy) + ".csv",
                      c.to_csv());
        }
    }
    auto manifest = base_manifest("sweep", config);
    json pts = json::array();
    for (const auto& p : points) {
        json jp{{"label", p.label}, {"variant", model::to_string(p.variant)}};
        if (p.gamma) jp["gamma"] = *p.gamma;
        pts.push_back(jp);
    }
    manifest.arguments = {{"points", pts}};
    return dir.finish(std::move(manifest));
}

ReplayResult replay(const fs::path& manifest_path, const fs::path& out, int threads) {
    ReplayResult r;
    r.original = RunManifest::from_json(io::read_json(manifest_path));
    if (r.original.artifact_version != kArtifactVersion) {
        throw LoadError("manifest was written by artifact version " + r.original.artifact_version + ", this is " +
                        kArtifactVersion);
    }
    const auto config = parse_config(r.original.config.dump(2), manifest_path.string() + "#config");
    const auto& args = r.original.arguments;
    if (r.original.command == "generate") {
        r.rerun = cmd_generate(config, out);
    } else if (r.original.command == "train") {
        r.rerun = cmd_train(config, out);
    } else if (r.original.command == "report") {
        std::optional<fs::path> run_dir;
        if (args.contains("run_dir")) run_dir = args.at("run_dir").get<std::string>();
        r.rerun = cmd_report(args.at("which").get<std::string>(), config, run_dir, out);
    } else if (r.original.command == "sweep") {
        std::vector<SweepPoint> points;
        for (const auto& p : args.at("points")) {
            SweepPoint sp{p.at("label").get<std::string>(), model::variant_from_string(p.at("variant").get<std::string>()), std::nullopt};
            if (p.contains("gamma")) sp.gamma = p.at("gamma").get<double>();
            points.push_back(sp);
        }
        r.rerun = cmd_sweep(config, points, out, threads);
    } else {
        throw LoadError("manifest names unknown command '" + r.original.command + "'");
    }
    std::map<std::string, std::string> rerun_hashes;
    for (const auto& f : r.rerun.files) rerun_hashes[f.path] = f.sha256;
    for (const auto& f : r.original.files) {
        const auto it = rerun_hashes.find(f.path);
        if (it == rerun_hashes.end() || it->second != f.sha256) r.mismatched.push_back(f.path);
    }
    return r;
}

// ---- entry point -----------------------------------------------------------

namespace {

std::optional<std::string> env(const char* name) {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
}

int env_threads() {
    const auto v = env("MCBM_THREADS");
    if (!v) return 0;
    try {
        const int t = std::stoi(*v);
        if (t < 1) throw ConfigError("");
        return t;
    } catch (const std::exception&) {
        throw ConfigError("MCBM_THREADS must be a positive integer, got '" + *v + "'");
    }
}

void print_manifest(const RunManifest& m, const fs::path& out) {
    std::cout << m.command << ": wrote " << m.files.size() << " files to " << out.string() << "\n";
    for (const auto& f : m.files) std::cout << "  " << f.sha256.substr(0, 12) << "  " << f.path << "\n";
    for (const auto& n : m.notes) std::cout << "  note: " << n << "\n";
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"Minimal concept bottleneck models: data generation, training and analysis"};
    app.require_subcommand(1);

    std::string config_path, out_flag;
    std::optional<std::uint64_t> seed_flag;
    std::optional<int> threads_flag;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "Experiment config (JSON)");
        sub->add_option("--out", out_flag, "Output directory (created, never overwritten)");
        sub->add_option("--seed", seed_flag, "Master seed override");
        sub->add_option("--threads", threads_flag, "Worker threads")->check(CLI::PositiveNumber);
    };

    auto* gen = app.add_subcommand("generate", "Write a dataset CSV and sidecar");
    add_common(gen);
    auto* tr = app.add_subcommand("train", "Train one model and write checkpoint, history and evaluation");
    add_common(tr);
    auto* rep = app.add_subcommand("report", "Metrics, interventions, calibration, bayes-demo or bound-check");
    add_common(rep);
    std::string which, run_flag;
    rep->add_option("which", which, "Report kind")
        ->required()
        ->check(CLI::IsMember({"metrics", "interventions", "calibration", "bayes-demo", "bound-check"}));
    rep->add_option("--run", run_flag, "Train output directory");
    auto* sw = app.add_subcommand("sweep", "Train and evaluate a grid of models over seeds");
    add_common(sw);
    std::string over = "gamma";
    std::vector<double> gammas;
    std::vector<std::string> variants;
    sw->add_option("--over", over, "Sweep axis")->check(CLI::IsMember({"gamma", "variant"}));
    sw->add_option("--gammas", gammas, "MCBM gamma values")->delimiter(',');
    sw->add_option("--variants", variants, "Model variants")->delimiter(',');
    auto* rp = app.add_subcommand("replay", "Re-run a manifest and compare output hashes");
    std::string manifest_path;
    rp->add_option("manifest", manifest_path, "manifest.json of a previous run")->required();
    rp->add_option("--out", out_flag, "Output directory for the re-run")->required();
    rp->add_option("--threads", threads_flag, "Worker threads")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        const int threads_env = env_threads();
        if (rp->parsed()) {
            const int threads = threads_flag.value_or(threads_env > 0 ? threads_env : 1);
            const auto r = replay(manifest_path, out_flag, threads);
            print_manifest(r.rerun, out_flag);
            if (!r.ok()) {
                for (const auto& f : r.mismatched) std::cerr << "hash mismatch: " << f << "\n";
                return kExitNumeric;
            }
            std::cout << "replay: all " << r.original.files.size() << " recorded hashes reproduced\n";
            return kExitOk;
        }

        ExperimentConfig config;
        if (!config_path.empty()) {
            config = load_config(config_path);
        } else if (rep->parsed() && !run_flag.empty()) {
            config = load_config(fs::path(run_flag) / "config.json");
        }
        if (seed_flag) config.seed = *seed_flag;
        // A run's snapshot names the run itself; reports default to a subdirectory.
        if (rep->parsed() && !run_flag.empty()) config.output_dir = (fs::path(run_flag) / ("report-" + which)).string();
        if (const auto o = env("MCBM_OUTPUT_DIR")) config.output_dir = *o;
        if (!out_flag.empty()) config.output_dir = out_flag;
        if (threads_env > 0) config.threads = threads_env;
        if (threads_flag) config.threads = *threads_flag;
        config.validate();

        const fs::path out = config.output_dir;
        if (out.empty()) throw ConfigError("no output directory: pass --out, set output_dir or MCBM_OUTPUT_DIR");

        RunManifest m;
        if (gen->parsed()) {
            m = cmd_generate(config, out);
        } else if (tr->parsed()) {
            m = cmd_train(config, out);
        } else if (rep->parsed()) {
            std::optional<fs::path> run_dir;
            if (!run_flag.empty()) run_dir = run_flag;
            m = cmd_report(which, config, run_dir, out);
        } else {
            std::vector<SweepPoint> points;
            if (!gammas.empty() || (over == "gamma" && variants.empty())) {
                points = gamma_points(gammas.empty() ? config.sweep.gammas : gammas);
            } else {
                std::vector<Variant> vs;
                for (const auto& v : variants) vs.push_back(model::variant_from_string(v));
                points = variant_points(vs.empty() ? config.sweep.variants : vs);
            }
            m = cmd_sweep(config, points, out, config.threads);
        }
        print_manifest(m, out);
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

}  // namespace mcbm::cli
