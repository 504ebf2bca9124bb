#include "mcbm/datagen.hpp"

#include "mcbm/errors.hpp"
#include "mcbm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace mcbm::data {

std::string to_string(FactorKind k) {
    switch (k) {
        case FactorKind::Binary: return "binary";
        case FactorKind::Multiclass: return "multiclass";
        case FactorKind::Continuous: return "continuous";
    }
    return "?";
}

std::string to_string(FactorRole r) {
    switch (r) {
        case FactorRole::Concept: return "concept";
        case FactorRole::TaskNuisance: return "task_nuisance";
        case FactorRole::FreeNuisance: return "free_nuisance";
    }
    return "?";
}

std::string to_string(SplitTag t) {
    switch (t) {
        case SplitTag::Full: return "full";
        case SplitTag::Train: return "train";
        case SplitTag::Val: return "val";
        case SplitTag::Test: return "test";
    }
    return "?";
}

FactorKind factor_kind_from_string(const std::string& s) {
    if (s == "binary") return FactorKind::Binary;
    if (s == "multiclass") return FactorKind::Multiclass;
    if (s == "continuous") return FactorKind::Continuous;
    throw ConfigError("unknown factor kind '" + s + "'");
}

FactorRole factor_role_from_string(const std::string& s) {
    if (s == "concept") return FactorRole::Concept;
    if (s == "task_nuisance") return FactorRole::TaskNuisance;
    if (s == "free_nuisance") return FactorRole::FreeNuisance;
    throw ConfigError("unknown factor role '" + s + "'");
}

SplitTag split_tag_from_string(const std::string& s) {
    if (s == "full") return SplitTag::Full;
    if (s == "train") return SplitTag::Train;
    if (s == "val") return SplitTag::Val;
    if (s == "test") return SplitTag::Test;
    throw ConfigError("unknown split tag '" + s + "'");
}

// ---- factors ------------------------------------------------------------

int FactorSpec::cardinality() const {
    switch (kind) {
        case FactorKind::Binary: return 2;
        case FactorKind::Multiclass: return classes;
        case FactorKind::Continuous: return levels;
    }
    return 0;
}

int FactorSpec::embed_dim() const { return kind == FactorKind::Multiclass ? classes : 1; }

int FactorSpec::discretize(double value) const {
    if (kind != FactorKind::Continuous) {
        return static_cast<int>(std::lround(value));
    }
    const double u = (std::clamp(value, -1.0, 1.0) + 1.0) / 2.0;
    return std::min(levels - 1, static_cast<int>(std::floor(u * levels)));
}

void FactorSpec::validate() const {
    if (kind == FactorKind::Multiclass && classes < 2) {
        throw ConfigError("factor '" + name + "': multiclass needs k >= 2");
    }
    if (kind == FactorKind::Continuous && levels < 1) {
        throw ConfigError("factor '" + name + "': continuous factor needs levels >= 1");
    }
}

std::vector<int> GenerativeConfig::indices_with_role(FactorRole role) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < factors.size(); ++i) {
        if (factors[i].role == role) {
            out.push_back(static_cast<int>(i));
        }
    }
    return out;
}

void GenerativeConfig::validate() const {
    if (n_samples <= 0) {
        throw ConfigError("generative config: n_samples must be positive");
    }
    if (indices_with_role(FactorRole::Concept).empty()) {
        throw ConfigError("generative config: at least one concept factor is required");
    }
    if (n_classes < 2) {
        throw ConfigError("generative config: n_classes must be at least 2");
    }
    if (noise_std < 0.0) {
        throw ConfigError("generative config: noise_std must be >= 0");
    }
    if (decoder_hidden <= 0) {
        throw ConfigError("generative config: decoder_hidden must be positive");
    }
    int total = 0;
    std::size_t cells = 1;
    for (const auto& f : factors) {
        f.validate();
        total += f.embed_dim();
        if (f.role != FactorRole::FreeNuisance) {
            cells *= static_cast<std::size_t>(f.cardinality());
        }
    }
    if (input_dim < total) {
        throw ConfigError("generative config: input_dim " + std::to_string(input_dim) +
                          " is below the total factor dimension " + std::to_string(total));
    }
    if (cells < static_cast<std::size_t>(n_classes)) {
        throw ConfigError("generative config: " + std::to_string(cells) +
                          " label cells cannot cover " + std::to_string(n_classes) + " classes");
    }
}

GenerativeConfig default_factor_config() {
    GenerativeConfig c;
    c.factors = {
        {"c_binary", FactorKind::Binary, 2, 2, FactorRole::Concept},
        {"c_multiclass", FactorKind::Multiclass, 4, 2, FactorRole::Concept},
        {"c_continuous", FactorKind::Continuous, 2, 2, FactorRole::Concept},
        {"n_task", FactorKind::Multiclass, 4, 2, FactorRole::TaskNuisance},
        {"n_free", FactorKind::Multiclass, 4, 2, FactorRole::FreeNuisance},
    };
    return c;
}

// ---- label table --------------------------------------------------------

std::size_t LabelTable::cell(std::span<const int> states) const {
    if (states.size() != cardinalities.size()) {
        throw DimensionError("label table: expected " + std::to_string(cardinalities.size()) + " states");
    }
    std::size_t idx = 0;
    for (std::size_t i = 0; i < states.size(); ++i) {
        if (states[i] < 0 || states[i] >= cardinalities[i]) {
            throw DomainError("label table: state out of range");
        }
        idx = idx * static_cast<std::size_t>(cardinalities[i]) + static_cast<std::size_t>(states[i]);
    }
    return idx;
}

LabelTable build_label_table(const GenerativeConfig& config) {
    config.validate();
    LabelTable t;
    t.n_classes = config.n_classes;
    for (int role_pass = 0; role_pass < 2; ++role_pass) {
        const auto role = role_pass == 0 ? FactorRole::Concept : FactorRole::TaskNuisance;
        for (int i : config.indices_with_role(role)) {
            t.factor_indices.push_back(i);
            t.cardinalities.push_back(config.factors[i].cardinality());
        }
    }
    std::size_t cells = 1;
    for (int c : t.cardinalities) {
        cells *= static_cast<std::size_t>(c);
    }
    RngStream rng(config.label_seed, "label_table");
    t.labels.resize(cells);
    for (auto& l : t.labels) {
        l = static_cast<int>(rng.below(static_cast<std::uint64_t>(config.n_classes)));
    }
    // Surjectivity: the first n_classes cells of a random order get one class each.
    const auto order = random_permutation(cells, rng);
    for (int k = 0; k < config.n_classes; ++k) {
        t.labels[order[static_cast<std::size_t>(k)]] = k;
    }
    return t;
}

double c_only_bayes_accuracy(const GenerativeConfig& config, const LabelTable& table) {
    const std::size_t n_concepts = config.indices_with_role(FactorRole::Concept).size();
    std::size_t concept_cells = 1, nuisance_cells = 1;
    for (std::size_t i = 0; i < table.cardinalities.size(); ++i) {
        (i < n_concepts ? concept_cells : nuisance_cells) *= static_cast<std::size_t>(table.cardinalities[i]);
    }
    // Cells are laid out concept-major, so each concept cell owns a
    // contiguous run of nuisance cells; all states are equiprobable.
    double acc = 0.0;
    std::vector<int> counts(static_cast<std::size_t>(table.n_classes));
    for (std::size_t c = 0; c < concept_cells; ++c) {
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t n = 0; n < nuisance_cells; ++n) {
            ++counts[static_cast<std::size_t>(table.labels[c * nuisance_cells + n])];
        }
        acc += static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
               static_cast<double>(nuisance_cells);
    }
    return acc / static_cast<double>(concept_cells);
}

// ---- dataset ------------------------------------------------------------

std::vector<int> Dataset::indices_with_role(FactorRole role) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < factors.size(); ++i) {
        if (factors[i].role == role) {
            out.push_back(static_cast<int>(i));
        }
    }
    return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices, SplitTag tag) const {
    Dataset d;
    d.n = indices.size();
    d.input_dim = input_dim;
    d.n_classes = n_classes;
    d.factors = factors;
    d.split = tag;
    d.x.reserve(d.n * input_dim);
    d.y.reserve(d.n);
    d.factor_values.assign(factors.size(), {});
    for (std::size_t idx : indices) {
        if (idx >= n) {
            throw DimensionError("dataset subset index out of range");
        }
        const auto r = row(idx);
        d.x.insert(d.x.end(), r.begin(), r.end());
        d.y.push_back(y[idx]);
        for (std::size_t f = 0; f < factors.size(); ++f) {
            d.factor_values[f].push_back(factor_values[f][idx]);
        }
    }
    return d;
}

void Dataset::validate() const {
    if (x.size() != n * input_dim || y.size() != n || factor_values.size() != factors.size()) {
        throw DimensionError("dataset fields disagree on the sample count");
    }
    for (const auto& v : factor_values) {
        if (v.size() != n) {
            throw DimensionError("dataset factor column has the wrong length");
        }
    }
}

namespace {

// Fixed random 2-hidden-layer tanh network; never trained.
class FrozenDecoder {
public:
    FrozenDecoder(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed) {
        RngStream rng(seed, "decoder");
        const std::array<std::size_t, 4> w{in, hidden, hidden, out};
        for (std::size_t l = 0; l < 3; ++l) {
            const double gain = l < 2 ? 1.5 : 1.0;
            const double sd = gain / std::sqrt(static_cast<double>(w[l]));
            Layer layer{w[l], w[l + 1], std::vector<double>(w[l] * w[l + 1]), std::vector<double>(w[l + 1])};
            for (auto& v : layer.weight) v = sd * rng.normal();
            for (auto& v : layer.bias) v = 0.1 * rng.normal();
            layers_.push_back(std::move(layer));
        }
    }

    std::vector<double> operator()(const std::vector<double>& e) const {
        std::vector<double> h = e;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& L = layers_[l];
            std::vector<double> next(L.bias);
            for (std::size_t i = 0; i < L.in; ++i) {
                for (std::size_t j = 0; j < L.out; ++j) {
                    next[j] += h[i] * L.weight[i * L.out + j];
                }
            }
            if (l + 1 < layers_.size()) {
                for (auto& v : next) v = std::tanh(v);
            }
            h = std::move(next);
        }
        return h;
    }

private:
    struct Layer {
        std::size_t in, out;
        std::vector<double> weight, bias;
    };
    std::vector<Layer> layers_;
};

double sample_factor(const FactorSpec& f, RngStream& rng) {
    switch (f.kind) {
        case FactorKind::Binary: return static_cast<double>(rng.below(2));
        case FactorKind::Multiclass: return static_cast<double>(rng.below(static_cast<std::uint64_t>(f.classes)));
        case FactorKind::Continuous: return rng.uniform(-1.0, 1.0);
    }
    return 0.0;
}

void embed(const FactorSpec& f, double v, std::vector<double>& out) {
    switch (f.kind) {
        case FactorKind::Binary: out.push_back(2.0 * v - 1.0); break;
        case FactorKind::Multiclass:
            for (int k = 0; k < f.classes; ++k) out.push_back(static_cast<int>(v) == k ? 1.0 : 0.0);
            break;
        case FactorKind::Continuous: out.push_back(v); break;
    }
}

}  // namespace

Dataset make_factor_dataset(const GenerativeConfig& config, std::uint64_t seed) {
    config.validate();
    const LabelTable table = build_label_table(config);
    std::size_t embed_total = 0;
    for (const auto& f : config.factors) {
        embed_total += static_cast<std::size_t>(f.embed_dim());
    }
    const FrozenDecoder decoder(embed_total, static_cast<std::size_t>(config.decoder_hidden),
                                static_cast<std::size_t>(config.input_dim), config.decoder_seed);

    Dataset d;
    d.n = static_cast<std::size_t>(config.n_samples);
    d.input_dim = static_cast<std::size_t>(config.input_dim);
    d.n_classes = config.n_classes;
    d.factors = config.factors;
    d.factor_values.assign(config.factors.size(), std::vector<double>(d.n));
    d.x.resize(d.n * d.input_dim);
    d.y.resize(d.n);

    RngStream factor_rng(seed, "factors");
    RngStream noise_rng(seed, "input_noise");
    std::vector<int> states(table.factor_indices.size());
    std::vector<double> e;
    for (std::size_t i = 0; i < d.n; ++i) {
        e.clear();
        for (std::size_t f = 0; f < config.factors.size(); ++f) {
            const double v = sample_factor(config.factors[f], factor_rng);
            d.factor_values[f][i] = v;
            embed(config.factors[f], v, e);
        }
        const auto out = decoder(e);
        for (std::size_t j = 0; j < d.input_dim; ++j) {
            const double noise = config.noise_std > 0.0 ? config.noise_std * noise_rng.normal() : 0.0;
            d.x[i * d.input_dim + j] = out[j] + noise;
        }
        for (std::size_t k = 0; k < states.size(); ++k) {
            states[k] = d.state(static_cast<std::size_t>(table.factor_indices[k]), i);
        }
        d.y[i] = table.label(states);
    }
    return d;
}

// ---- spiral -------------------------------------------------------------

std::array<double, 2> spiral_arm_point(int arm, double t) {
    const double angle = arm * 3.14159265358979323846 / 2.0 + t * kSpiralAngleSpan;
    return {t * std::cos(angle), t * std::sin(angle)};
}

Dataset make_spiral_dataset(std::span<const int> counts, double noise_std, std::uint64_t seed) {
    if (counts.size() != 4) {
        throw ConfigError("spiral: exactly four class counts are required");
    }
    for (int c : counts) {
        if (c < 1) {
            throw ConfigError("spiral: every class count must be >= 1");
        }
    }
    if (noise_std < 0.0) {
        throw ConfigError("spiral: noise_std must be >= 0");
    }
    RngStream rng(seed, "spiral");
    Dataset d;
    d.input_dim = 2;
    d.n_classes = 4;
    d.factors = {{"class", FactorKind::Multiclass, 4, 2, FactorRole::Concept}};
    d.factor_values.assign(1, {});
    for (int k = 0; k < 4; ++k) {
        for (int i = 0; i < counts[static_cast<std::size_t>(k)]; ++i) {
            const double t = rng.uniform(0.1, 1.0);
            auto p = spiral_arm_point(k, t);
            if (noise_std > 0.0) {
                p[0] += noise_std * rng.normal();
                p[1] += noise_std * rng.normal();
            }
            d.x.push_back(p[0]);
            d.x.push_back(p[1]);
            d.y.push_back(k);
            d.factor_values[0].push_back(k);
        }
    }
    d.n = d.y.size();
    return d;
}

// ---- mixture prior ------------------------------------------------------

void MixturePrior::validate() const {
    if (weights[0] < 0.0 || weights[1] < 0.0 || std::abs(weights[0] + weights[1] - 1.0) > 1e-9) {
        throw ConfigError("mixture: weights must be nonnegative and sum to 1");
    }
    if (!(sigmas[0] > 0.0) || !(sigmas[1] > 0.0)) {
        throw ConfigError("mixture: sigmas must be positive");
    }
}

double MixturePrior::density(double z) const {
    double p = 0.0;
    for (int k = 0; k < 2; ++k) {
        const double u = (z - means[k]) / sigmas[k];
        p += weights[k] * std::exp(-0.5 * u * u) / (sigmas[k] * std::sqrt(2.0 * 3.14159265358979323846));
    }
    return p;
}

double MixturePrior::mass(double lo, double hi) const {
    double m = 0.0;
    for (int k = 0; k < 2; ++k) {
        const double s = sigmas[k] * std::sqrt(2.0);
        m += weights[k] * 0.5 * (std::erf((hi - means[k]) / s) - std::erf((lo - means[k]) / s));
    }
    return m;
}

std::vector<double> make_bimodal_prior(const MixturePrior& prior, std::size_t n, std::uint64_t seed) {
    prior.validate();
    RngStream rng(seed, "bimodal_prior");
    std::vector<double> out(n);
    for (auto& v : out) {
        const int k = rng.uniform() < prior.weights[0] ? 0 : 1;
        v = prior.means[k] + prior.sigmas[k] * rng.normal();
    }
    return out;
}

// ---- split --------------------------------------------------------------

Splits split(const Dataset& dataset, std::array<double, 3> ratios, std::uint64_t seed) {
    double total_ratio = 0.0;
    for (double r : ratios) {
        if (r < 0.0) {
            throw ConfigError("split: ratios must be nonnegative");
        }
        total_ratio += r;
    }
    if (std::abs(total_ratio - 1.0) > 1e-6) {
        throw ConfigError("split: ratios must sum to 1");
    }

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < dataset.n; ++i) {
        by_class[dataset.y[i]].push_back(i);
    }
    const std::size_t n = dataset.n;
    std::array<std::size_t, 3> totals{};
    {
        const auto b1 = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n)));
        const auto b2 = static_cast<std::size_t>(std::llround((ratios[0] + ratios[1]) * static_cast<double>(n)));
        totals = {std::min(b1, n), std::min(b2, n) - std::min(b1, n), n - std::min(b2, n)};
    }

    // Floor of every class/split quota, then hand out the remaining slots by
    // largest fractional part while respecting both row and column totals.
    const std::size_t n_cls = by_class.size();
    std::vector<std::array<std::size_t, 3>> alloc(n_cls);
    struct Frac {
        double frac;
        std::size_t cls, split;
    };
    std::vector<Frac> fracs;
    std::array<std::size_t, 3> used{};
    std::vector<std::size_t> cls_left(n_cls);
    std::size_t ci = 0;
    for (const auto& [label, idx] : by_class) {
        std::size_t assigned = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            const double q = ratios[s] * static_cast<double>(idx.size());
            alloc[ci][s] = static_cast<std::size_t>(std::floor(q));
            assigned += alloc[ci][s];
            used[s] += alloc[ci][s];
            fracs.push_back({q - std::floor(q), ci, s});
        }
        cls_left[ci] = idx.size() - assigned;
        ++ci;
    }
    std::stable_sort(fracs.begin(), fracs.end(), [](const Frac& a, const Frac& b) { return a.frac > b.frac; });
    for (int pass = 0; pass < 2; ++pass) {
        for (const auto& f : fracs) {
            if (cls_left[f.cls] > 0 && used[f.split] < totals[f.split] && (pass == 1 || f.frac > 0.0)) {
                ++alloc[f.cls][f.split];
                ++used[f.split];
                --cls_left[f.cls];
            }
        }
    }

    RngStream rng(seed, "split");
    std::array<std::vector<std::size_t>, 3> parts;
    Splits out;
    ci = 0;
    for (const auto& [label, idx_in] : by_class) {
        auto idx = idx_in;
        rng.shuffle(idx);
        std::size_t off = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            parts[s].insert(parts[s].end(), idx.begin() + static_cast<std::ptrdiff_t>(off),
                            idx.begin() + static_cast<std::ptrdiff_t>(off + alloc[ci][s]));
            off += alloc[ci][s];
            if (alloc[ci][s] == 0 && ratios[s] > 0.0) {
                out.warnings.push_back("split " + to_string(static_cast<SplitTag>(s + 1)) +
                                       " received no samples of class " + std::to_string(label));
            }
        }
        ++ci;
    }
    for (auto& p : parts) {
        std::sort(p.begin(), p.end());
    }
    out.train = dataset.subset(parts[0], SplitTag::Train);
    out.val = dataset.subset(parts[1], SplitTag::Val);
    out.test = dataset.subset(parts[2], SplitTag::Test);
    out.train.warnings = out.warnings;
    return out;
}

}  // namespace mcbm::data
