#include "mcbm/models.hpp"

#include "mcbm/errors.hpp"
#include "mcbm/losses.hpp"

#include <algorithm>
#include <cmath>

namespace mcbm::model {

using diff::Mlp;
using diff::Parameter;

std::string to_string(Variant v) {
    switch (v) {
        case Variant::VM: return "VM";
        case Variant::CBM: return "CBM";
        case Variant::MCBM: return "MCBM";
        case Variant::HCBM: return "HCBM";
    }
    return "?";
}

std::string to_string(ConceptKind k) {
    switch (k) {
        case ConceptKind::Binary: return "binary";
        case ConceptKind::Multiclass: return "multiclass";
        case ConceptKind::Continuous: return "continuous";
    }
    return "?";
}

Variant variant_from_string(const std::string& s) {
    if (s == "VM") return Variant::VM;
    if (s == "CBM") return Variant::CBM;
    if (s == "MCBM") return Variant::MCBM;
    if (s == "HCBM") return Variant::HCBM;
    throw ConfigError("unknown model variant '" + s + "' (expected VM, CBM, MCBM or HCBM)");
}

ConceptKind concept_kind_from_string(const std::string& s) {
    if (s == "binary") return ConceptKind::Binary;
    if (s == "multiclass") return ConceptKind::Multiclass;
    if (s == "continuous") return ConceptKind::Continuous;
    throw ConfigError("unknown concept kind '" + s + "'");
}

void ConceptSpec::validate() const {
    if (kind == ConceptKind::Multiclass && classes < 2) {
        throw ConfigError("concept '" + name + "': multiclass needs k >= 2");
    }
    if (kind == ConceptKind::Continuous && levels < 1) {
        throw ConfigError("concept '" + name + "': levels must be >= 1");
    }
    if (positive_state >= 0 && kind != ConceptKind::Binary) {
        throw ConfigError("concept '" + name + "': only binary concepts can be one-vs-rest views");
    }
}

std::vector<ConceptSpec> concept_specs_from_factors(const std::vector<data::FactorSpec>& factors) {
    std::vector<ConceptSpec> out;
    for (std::size_t i = 0; i < factors.size(); ++i) {
        const auto& f = factors[i];
        if (f.role != data::FactorRole::Concept) {
            continue;
        }
        ConceptSpec s;
        s.name = f.name;
        s.factor = static_cast<int>(i);
        switch (f.kind) {
            case data::FactorKind::Binary: s.kind = ConceptKind::Binary; break;
            case data::FactorKind::Multiclass:
                s.kind = ConceptKind::Multiclass;
                s.classes = f.classes;
                break;
            case data::FactorKind::Continuous:
                s.kind = ConceptKind::Continuous;
                s.levels = f.levels;
                break;
        }
        out.push_back(s);
    }
    return out;
}

std::vector<ConceptSpec> expand_one_vs_rest(const std::vector<ConceptSpec>& specs, bool bin_continuous,
                                            std::vector<std::string>* notes) {
    std::vector<ConceptSpec> out;
    for (const auto& s : specs) {
        int states = 0;
        if (s.kind == ConceptKind::Multiclass) {
            states = s.classes;
        } else if (s.kind == ConceptKind::Continuous && bin_continuous) {
            states = s.levels;
        }
        if (states == 0) {
            out.push_back(s);
            continue;
        }
        for (int k = 0; k < states; ++k) {
            ConceptSpec b;
            b.name = s.name + "=" + std::to_string(k);
            b.kind = ConceptKind::Binary;
            b.factor = s.factor;
            b.positive_state = k;
            out.push_back(b);
        }
        if (notes) {
            notes->push_back("concept '" + s.name + "' (" + to_string(s.kind) + ") expanded one-vs-rest into " +
                             std::to_string(states) + " binary concepts");
        }
    }
    return out;
}

LatentLayout LatentLayout::from_specs(const std::vector<ConceptSpec>& specs) {
    LatentLayout l;
    for (std::size_t j = 0; j < specs.size(); ++j) {
        l.blocks.push_back({j, l.total_dim, specs[j].block_dim()});
        l.total_dim += specs[j].block_dim();
    }
    return l;
}

ConceptValues concept_values(const std::vector<ConceptSpec>& specs, const data::Dataset& dataset,
                             std::span<const std::size_t> rows) {
    ConceptValues out(specs.size(), std::vector<double>(rows.size()));
    for (std::size_t j = 0; j < specs.size(); ++j) {
        const auto& s = specs[j];
        if (s.factor < 0 || static_cast<std::size_t>(s.factor) >= dataset.factors.size()) {
            throw DimensionError("concept '" + s.name + "' refers to a factor the dataset does not have");
        }
        const auto f = static_cast<std::size_t>(s.factor);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const std::size_t i = rows[r];
            if (s.positive_state >= 0) {
                out[j][r] = dataset.state(f, i) == s.positive_state ? 1.0 : 0.0;
            } else if (s.kind == ConceptKind::Continuous) {
                out[j][r] = dataset.factor_values[f][i];
            } else {
                out[j][r] = static_cast<double>(dataset.state(f, i));
            }
        }
    }
    return out;
}

ConceptValues concept_values(const std::vector<ConceptSpec>& specs, const data::Dataset& dataset) {
    std::vector<std::size_t> rows(dataset.n);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return concept_values(specs, dataset, rows);
}

std::vector<double> representation_target(const ConceptSpec& spec, double value, double lambda) {
    switch (spec.kind) {
        case ConceptKind::Binary:
            if (value != 0.0 && value != 1.0) {
                throw DomainError("binary concept '" + spec.name + "' takes values 0 or 1");
            }
            return {value == 1.0 ? lambda : -lambda};
        case ConceptKind::Multiclass: {
            const auto k = static_cast<int>(value);
            if (static_cast<double>(k) != value || k < 0 || k >= spec.classes) {
                throw DomainError("class index out of range for concept '" + spec.name + "'");
            }
            std::vector<double> t(static_cast<std::size_t>(spec.classes), 0.0);
            t[static_cast<std::size_t>(k)] = lambda;
            return t;
        }
        case ConceptKind::Continuous:
            if (!std::isfinite(value)) {
                throw DomainError("continuous concept '" + spec.name + "' must be finite");
            }
            return {lambda * value};
    }
    return {};
}

// ---- configuration ------------------------------------------------------

ModelConfig ModelConfig::for_variant(Variant v, std::vector<ConceptSpec> concepts, std::size_t input_dim,
                                     int n_classes) {
    ModelConfig c;
    c.variant = v;
    c.input_dim = input_dim;
    c.n_classes = n_classes;
    c.concepts = std::move(concepts);
    switch (v) {
        case Variant::VM:
            c.weights.beta = 0.0;
            c.weights.gamma = 0.0;
            c.weights.sigma_x = 0.0;
            break;
        case Variant::CBM:
            c.weights.gamma = 0.0;
            c.weights.sigma_x = 0.0;
            break;
        case Variant::HCBM:
            c.weights.gamma = 0.0;
            c.weights.sigma_x = 0.0;
            c.concepts = expand_one_vs_rest(c.concepts, true);
            break;
        case Variant::MCBM:
            c.weights.sigma_x = 1.0;
            c.weights.sigma_zhat = 1.0;
            break;
    }
    return c;
}

void ModelConfig::validate() const {
    if (input_dim == 0) {
        throw ConfigError("model: input_dim must be positive");
    }
    if (n_classes < 2) {
        throw ConfigError("model: n_classes must be at least 2");
    }
    if (variant != Variant::VM && concepts.empty()) {
        throw ConfigError("model: " + to_string(variant) + " needs at least one concept");
    }
    if (variant == Variant::VM && concepts.empty() && latent_dim == 0) {
        throw ConfigError("model: VM needs latent_dim or concepts to size z");
    }
    for (const auto& s : concepts) {
        s.validate();
    }
    const auto& w = weights;
    if (w.beta < 0.0 || w.gamma < 0.0) {
        throw ConfigError("model: beta and gamma must be >= 0");
    }
    if (!(w.lambda > 0.0)) {
        throw ConfigError("model: lambda must be positive");
    }
    if (w.sigma_x < 0.0 || !(w.sigma_zhat > 0.0) || !(w.sigma_c > 0.0) || !(w.sigma_y > 0.0)) {
        throw ConfigError("model: sigma_x must be >= 0 and the other sigmas positive");
    }
    if (w.gamma > 0.0 && w.sigma_x == 0.0) {
        throw ConfigError("model: gamma > 0 requires sigma_x > 0 (the KL term is undefined for a point mass)");
    }
    if (w.gamma > 0.0 && variant != Variant::MCBM) {
        throw ConfigError("model: gamma > 0 is only meaningful for MCBM, got " + to_string(variant));
    }
    if (variant == Variant::VM && w.beta > 0.0) {
        throw ConfigError("model: VM has no concept heads, beta must be 0");
    }
    if (variant == Variant::HCBM) {
        for (const auto& s : concepts) {
            if (s.kind != ConceptKind::Binary) {
                throw ConfigError("model: HCBM concepts must be binary (expand '" + s.name + "' one-vs-rest)");
            }
        }
    }
    if (learnable_representation_heads && representation_hidden == 0) {
        throw ConfigError("model: representation_hidden must be positive");
    }
}

nlohmann::json to_json(const ModelConfig& c) {
    nlohmann::json specs = nlohmann::json::array();
    for (const auto& s : c.concepts) {
        specs.push_back({{"name", s.name},
                         {"kind", to_string(s.kind)},
                         {"classes", s.classes},
                         {"levels", s.levels},
                         {"factor", s.factor},
                         {"positive_state", s.positive_state}});
    }
    const auto& w = c.weights;
    return {{"variant", to_string(c.variant)},
            {"concepts", specs},
            {"input_dim", c.input_dim},
            {"n_classes", c.n_classes},
            {"latent_dim", c.latent_dim},
            {"encoder_hidden", c.encoder_hidden},
            {"task_hidden", c.task_hidden},
            {"concept_hidden", c.concept_hidden},
            {"learnable_representation_heads", c.learnable_representation_heads},
            {"representation_hidden", c.representation_hidden},
            {"weights",
             {{"beta", w.beta},
              {"gamma", w.gamma},
              {"lambda", w.lambda},
              {"sigma_x", w.sigma_x},
              {"sigma_zhat", w.sigma_zhat},
              {"sigma_y", w.sigma_y},
              {"sigma_c", w.sigma_c}}},
            {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    try {
        ModelConfig c;
        c.variant = variant_from_string(j.at("variant").get<std::string>());
        for (const auto& s : j.at("concepts")) {
            ConceptSpec spec;
            spec.name = s.at("name").get<std::string>();
            spec.kind = concept_kind_from_string(s.at("kind").get<std::string>());
            spec.classes = s.at("classes").get<int>();
            spec.levels = s.at("levels").get<int>();
            spec.factor = s.at("factor").get<int>();
            spec.positive_state = s.at("positive_state").get<int>();
            c.concepts.push_back(spec);
        }
        c.input_dim = j.at("input_dim").get<std::size_t>();
        c.n_classes = j.at("n_classes").get<int>();
        c.latent_dim = j.at("latent_dim").get<std::size_t>();
        c.encoder_hidden = j.at("encoder_hidden").get<std::vector<std::size_t>>();
        c.task_hidden = j.at("task_hidden").get<std::vector<std::size_t>>();
        c.concept_hidden = j.at("concept_hidden").get<std::size_t>();
        c.learnable_representation_heads = j.at("learnable_representation_heads").get<bool>();
        c.representation_hidden = j.at("representation_hidden").get<std::size_t>();
        const auto& w = j.at("weights");
        c.weights.beta = w.at("beta").get<double>();
        c.weights.gamma = w.at("gamma").get<double>();
        c.weights.lambda = w.at("lambda").get<double>();
        c.weights.sigma_x = w.at("sigma_x").get<double>();
        c.weights.sigma_zhat = w.at("sigma_zhat").get<double>();
        c.weights.sigma_y = w.at("sigma_y").get<double>();
        c.weights.sigma_c = w.at("sigma_c").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("malformed model descriptor: ") + e.what());
    }
}

// ---- batches ------------------------------------------------------------

Batch make_batch(const data::Dataset& dataset, const std::vector<ConceptSpec>& specs,
                 std::span<const std::size_t> rows) {
    Batch b;
    std::vector<double> x;
    x.reserve(rows.size() * dataset.input_dim);
    for (std::size_t i : rows) {
        const auto r = dataset.row(i);
        x.insert(x.end(), r.begin(), r.end());
        b.y.push_back(dataset.y[i]);
    }
    b.x = Tensor::matrix(rows.size(), dataset.input_dim, std::move(x));
    b.concepts = concept_values(specs, dataset, rows);
    return b;
}

Batch make_batch(const data::Dataset& dataset, const std::vector<ConceptSpec>& specs) {
    std::vector<std::size_t> rows(dataset.n);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return make_batch(dataset, specs, rows);
}

// ---- model --------------------------------------------------------------

ModelBundle::ModelBundle(ModelConfig config) : config_(std::move(config)) {
    if (config_.variant == Variant::CBM) {
        const bool has_multiclass = std::any_of(config_.concepts.begin(), config_.concepts.end(),
                                                [](const ConceptSpec& s) { return s.kind == ConceptKind::Multiclass; });
        if (has_multiclass) {
            config_.concepts = expand_one_vs_rest(config_.concepts, false, &notes_);
        }
    }
    config_.validate();
    build();
}

void ModelBundle::build() {
    layout_ = LatentLayout::from_specs(config_.concepts);
    if (config_.variant == Variant::VM && config_.latent_dim > 0) {
        layout_ = LatentLayout{{}, config_.latent_dim};
    }
    const std::uint64_t seed = config_.seed;

    std::vector<std::size_t> enc{config_.input_dim};
    enc.insert(enc.end(), config_.encoder_hidden.begin(), config_.encoder_hidden.end());
    enc.push_back(layout_.total_dim);
    encoder_ = Mlp(store_, "encoder", enc, seed);

    const std::size_t task_in =
        config_.variant == Variant::HCBM ? config_.concepts.size() : layout_.total_dim;
    std::vector<std::size_t> task{task_in};
    task.insert(task.end(), config_.task_hidden.begin(), config_.task_hidden.end());
    task.push_back(static_cast<std::size_t>(config_.n_classes));
    task_head_ = Mlp(store_, "task_head", task, seed);

    concept_heads_.assign(config_.concepts.size(), Mlp());
    representation_heads_.assign(config_.concepts.size(), Mlp());
    if (config_.variant == Variant::MCBM) {
        for (std::size_t j = 0; j < config_.concepts.size(); ++j) {
            const auto& s = config_.concepts[j];
            const std::size_t dim = s.block_dim();
            const std::size_t hidden = config_.concept_hidden > 0 ? config_.concept_hidden : (dim > 1 ? dim : 4);
            concept_heads_[j] = Mlp(store_, "concept_head" + std::to_string(j), {dim, hidden, dim}, seed);
            if (config_.learnable_representation_heads) {
                representation_heads_[j] = Mlp(store_, "representation_head" + std::to_string(j),
                                               {dim, config_.representation_hidden, dim}, seed);
            }
        }
    }
}

ModelBundle ModelBundle::clone() const {
    ModelBundle m(config_);
    auto& dst = m.store_.all();
    const auto& src = store_.all();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const auto v = src[i].tensor.values();
        std::copy(v.begin(), v.end(), dst[i].tensor.mutable_values().begin());
    }
    return m;
}

std::vector<Parameter> ModelBundle::stage_parameters(int stage) const {
    std::vector<Parameter> out;
    for (const auto& p : store_.all()) {
        const bool is_task = p.name.rfind("task_head", 0) == 0;
        if (config_.variant != Variant::HCBM) {
            if (stage == 0) out.push_back(p);
        } else if ((stage == 1) == is_task) {
            out.push_back(p);
        }
    }
    return out;
}

Encoded ModelBundle::encode(const Tensor& x, RngStream* rng) const {
    if (x.rank() != 2 || x.cols() != config_.input_dim) {
        throw DimensionError("encode: expected [B, " + std::to_string(config_.input_dim) + "] input, got " +
                             diff::to_string(x.shape()));
    }
    Encoded e;
    e.mu = encoder_.forward(x);
    if (rng == nullptr || config_.weights.sigma_x == 0.0) {
        e.z = e.mu;
    } else {
        e.z = diff::gaussian_reparam_sample(e.mu, config_.weights.sigma_x, *rng);
    }
    return e;
}

Tensor ModelBundle::concept_head(std::size_t j, const Tensor& zj) const {
    if (j >= config_.concepts.size()) {
        throw UsageError("concept index out of range");
    }
    if (concept_heads_[j].empty()) {
        return zj;
    }
    return concept_heads_[j].forward(zj);
}

Tensor ModelBundle::concept_output(std::size_t j, const Tensor& zj) const {
    const Tensor h = concept_head(j, zj);
    switch (config_.concepts[j].kind) {
        case ConceptKind::Binary: return diff::sigmoid(h);
        case ConceptKind::Multiclass: return diff::softmax(h, 1);
        case ConceptKind::Continuous: return h;
    }
    return h;
}

Tensor ModelBundle::task_logits_from_z(const Tensor& z) const {
    if (config_.variant == Variant::HCBM) {
        throw UsageError("HCBM predicts the task from thresholded concepts, not from z");
    }
    return task_head_.forward(z);
}

Tensor ModelBundle::task_logits_from_binary(const Tensor& c_binary) const {
    if (config_.variant != Variant::HCBM) {
        throw UsageError("task_logits_from_binary requires an HCBM model");
    }
    return task_head_.forward(c_binary);
}

Tensor ModelBundle::representation_mean(std::size_t j, std::span<const double> values) const {
    const auto& s = config_.concepts[j];
    const std::size_t dim = s.block_dim();
    if (!representation_heads_[j].empty()) {
        // Learnable head: embed c_j (one-hot for multiclass) and map it.
        std::vector<double> in;
        in.reserve(values.size() * dim);
        for (double v : values) {
            if (s.kind == ConceptKind::Multiclass) {
                for (std::size_t k = 0; k < dim; ++k) in.push_back(static_cast<double>(k) == v ? 1.0 : 0.0);
            } else if (s.kind == ConceptKind::Binary) {
                in.push_back(2.0 * v - 1.0);
            } else {
                in.push_back(v);
            }
        }
        return representation_heads_[j].forward(Tensor::matrix(values.size(), dim, std::move(in)));
    }
    std::vector<double> t;
    t.reserve(values.size() * dim);
    for (double v : values) {
        const auto r = representation_target(s, v, config_.weights.lambda);
        t.insert(t.end(), r.begin(), r.end());
    }
    return Tensor::matrix(values.size(), dim, std::move(t));
}

double binarize(double p) { return p >= 0.5 ? 1.0 : 0.0; }

HardForward ModelBundle::hcbm_forward(const Tensor& x) const {
    if (config_.variant != Variant::HCBM) {
        throw UsageError("hcbm_forward requires an HCBM model");
    }
    const auto e = encode(x, nullptr);
    HardForward out;
    out.c_prob = diff::sigmoid(e.mu);
    std::vector<double> b(out.c_prob.numel());
    const auto p = out.c_prob.values();
    std::transform(p.begin(), p.end(), b.begin(), binarize);
    out.c_binary = Tensor::from(out.c_prob.shape(), std::move(b));
    out.logits = task_head_.forward(out.c_binary);
    return out;
}

Tensor ModelBundle::predict_logits(const Tensor& x) const {
    if (config_.variant == Variant::HCBM) {
        return hcbm_forward(x).logits;
    }
    return task_head_.forward(encode(x, nullptr).mu);
}

namespace {

std::vector<int> as_labels(const std::vector<double>& v) {
    std::vector<int> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<int>(v[i]);
    return out;
}

}  // namespace

LossResult ModelBundle::loss(const Batch& batch, RngStream* rng, int samples) const {
    if (batch.size() == 0) {
        throw UsageError("loss: empty batch");
    }
    if (samples < 1) {
        throw ConfigError("loss: samples must be >= 1");
    }
    const auto& w = config_.weights;
    const std::size_t m = config_.concepts.size();
    const bool has_concepts = config_.variant != Variant::VM && w.beta > 0.0;
    const bool has_kl = config_.variant == Variant::MCBM && w.gamma > 0.0;
    if (has_concepts && batch.concepts.size() != m) {
        throw DimensionError("loss: batch carries " + std::to_string(batch.concepts.size()) +
                             " concepts, model expects " + std::to_string(m));
    }

    const Tensor mu = encoder_.forward(batch.x);
    const bool stochastic = rng != nullptr && w.sigma_x > 0.0;
    const int draws = stochastic ? samples : 1;
    Tensor task;
    std::vector<Tensor> cterms(has_concepts ? m : 0);
    for (int s = 0; s < draws; ++s) {
        const Tensor z = stochastic ? diff::gaussian_reparam_sample(mu, w.sigma_x, *rng) : mu;
        Tensor t;
        if (config_.variant == Variant::HCBM) {
            const Tensor p = diff::sigmoid(diff::detach(z));
            std::vector<double> b(p.numel());
            std::transform(p.values().begin(), p.values().end(), b.begin(), binarize);
            t = diff::cross_entropy(task_head_.forward(Tensor::from(z.shape(), std::move(b))), batch.y);
        } else {
            t = diff::cross_entropy(task_head_.forward(z), batch.y);
        }
        task = s == 0 ? t : task + t;
        for (std::size_t j = 0; j < cterms.size(); ++j) {
            const auto& blk = layout_.blocks[j];
            const Tensor h = concept_head(j, diff::slice_cols(z, blk.offset, blk.dim));
            Tensor c;
            switch (config_.concepts[j].kind) {
                case ConceptKind::Binary:
                    c = diff::binary_cross_entropy_with_logits(h, batch.concepts[j]);
                    break;
                case ConceptKind::Multiclass: c = diff::cross_entropy(h, as_labels(batch.concepts[j])); break;
                case ConceptKind::Continuous: {
                    const Tensor target = Tensor::matrix(batch.size(), 1, batch.concepts[j]);
                    c = diff::scale(diff::mse(h, target), 0.5 / (w.sigma_c * w.sigma_c));
                    break;
                }
            }
            cterms[j] = s == 0 ? c : cterms[j] + c;
        }
    }
    if (draws > 1) {
        const double inv = 1.0 / draws;
        task = diff::scale(task, inv);
        for (auto& c : cterms) c = diff::scale(c, inv);
    }

    LossResult r;
    r.parts.task = task.item();
    Tensor total = task;
    double total_v = r.parts.task;
    if (has_concepts) {
        Tensor csum = cterms[0];
        for (std::size_t j = 1; j < m; ++j) csum = csum + cterms[j];
        for (const auto& c : cterms) r.parts.concept_terms.push_back(c.item());
        total = total + diff::scale(csum, w.beta);
        total_v = total.item();
    }
    if (has_kl) {
        Tensor ksum;
        for (std::size_t j = 0; j < m; ++j) {
            const auto& blk = layout_.blocks[j];
            const Tensor k = diff::kl_diag_gaussians(diff::slice_cols(mu, blk.offset, blk.dim), w.sigma_x,
                                                     representation_mean(j, batch.concepts[j]), w.sigma_zhat);
            r.parts.kl.push_back(k.item());
            ksum = j == 0 ? k : ksum + k;
        }
        total = total + diff::scale(ksum, w.gamma);
        total_v = total.item();
    }
    r.parts.total = total_v;
    r.total = total;
    return r;
}

LossResult ModelBundle::hcbm_task_loss(const Batch& batch) const {
    const auto hf = hcbm_forward(batch.x);
    LossResult r;
    r.total = diff::cross_entropy(hf.logits, batch.y);
    r.parts.task = r.total.item();
    r.parts.total = r.parts.task;
    return r;
}

nlohmann::json ModelBundle::descriptor() const {
    nlohmann::json d;
    d["model"] = to_json(config_);
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : layout_.blocks) {
        blocks.push_back({{"concept", b.concept_index}, {"offset", b.offset}, {"dim", b.dim}});
    }
    d["layout"] = {{"blocks", blocks}, {"total_dim", layout_.total_dim}};
    d["notes"] = notes_;
    d["parameter_count"] = store_.scalar_count();
    return d;
}

ModelBundle build_model(const ModelConfig& config) { return ModelBundle(config); }

}  // namespace mcbm::model
