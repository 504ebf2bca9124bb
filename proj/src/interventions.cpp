#include "mcbm/interventions.hpp"

#include "mcbm/errors.hpp"
#include "mcbm/io.hpp"
#include "mcbm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace mcbm::intervene {

using model::ConceptKind;
using model::ModelBundle;
using model::Variant;

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

std::string to_string(Mechanism m) {
    switch (m) {
        case Mechanism::CbmPercentile: return "cbm_percentile";
        case Mechanism::McbmHead: return "mcbm_head";
        case Mechanism::HcbmBinary: return "hcbm_binary";
    }
    return "?";
}

std::string to_string(Policy p) { return p == Policy::LowestConfidence ? "lowest_confidence" : "random"; }

Policy policy_from_string(const std::string& s) {
    if (s == "lowest_confidence") return Policy::LowestConfidence;
    if (s == "random") return Policy::Random;
    throw ConfigError("unknown intervention policy '" + s + "' (expected lowest_confidence or random)");
}

Mechanism mechanism_for(Variant v) {
    switch (v) {
        case Variant::CBM: return Mechanism::CbmPercentile;
        case Variant::MCBM: return Mechanism::McbmHead;
        case Variant::HCBM: return Mechanism::HcbmBinary;
        case Variant::VM: break;
    }
    throw UsageError("VM has no concept representation to intervene on");
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) {
        throw UsageError("percentile of an empty sample");
    }
    if (q < 0.0 || q > 100.0) {
        throw DomainError("percentile rank must lie in [0, 100]");
    }
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

nlohmann::json PercentileTable::to_json() const {
    auto enc = [](const std::vector<double>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (double x : v) a.push_back(std::isnan(x) ? nlohmann::json() : nlohmann::json(x));
        return a;
    };
    return {{"p5", enc(p5)}, {"p95", enc(p95)}};
}

PercentileTable PercentileTable::from_json(const nlohmann::json& j) {
    auto dec = [](const nlohmann::json& a) {
        std::vector<double> v;
        for (const auto& x : a) v.push_back(x.is_null() ? kNaN : x.get<double>());
        return v;
    };
    try {
        PercentileTable t{dec(j.at("p5")), dec(j.at("p95"))};
        if (t.p5.size() != t.p95.size()) {
            throw LoadError("percentile table columns differ in length");
        }
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("malformed percentile table: ") + e.what());
    }
}

PercentileTable fit_percentile_table(const ModelBundle& model, const data::Dataset& train_split) {
    if (model.variant() != Variant::CBM) {
        throw UsageError("percentile tables apply to CBM models only");
    }
    const auto x = model::make_batch(train_split, {}).x;
    const auto mu = model.encode(x, nullptr).mu;
    PercentileTable t;
    for (std::size_t j = 0; j < model.concepts().size(); ++j) {
        if (model.concepts()[j].kind != ConceptKind::Binary) {
            t.p5.push_back(kNaN);
            t.p95.push_back(kNaN);
            continue;
        }
        const std::size_t col = model.layout().blocks[j].offset;
        std::vector<double> zj(train_split.n);
        for (std::size_t i = 0; i < zj.size(); ++i) zj[i] = mu.at(i, col);
        t.p5.push_back(percentile(zj, 5.0));
        t.p95.push_back(percentile(std::move(zj), 95.0));
    }
    return t;
}

bool intervenable(const ModelBundle& model, std::size_t j) {
    switch (model.variant()) {
        case Variant::CBM: return model.concepts()[j].kind == ConceptKind::Binary;
        case Variant::MCBM:
        case Variant::HCBM: return true;
        case Variant::VM: return false;
    }
    return false;
}

diff::Tensor intervened_representation(const ModelBundle& model, const diff::Tensor& x,
                                       const std::vector<std::vector<char>>& mask,
                                       const model::ConceptValues& values, const PercentileTable* table) {
    const Mechanism mech = mechanism_for(model.variant());
    const std::size_t m = model.concepts().size();
    const std::size_t n = x.rows();
    if (mask.size() != m || values.size() != m) {
        throw DimensionError("intervention mask/values must have one row per concept");
    }
    if (mech == Mechanism::CbmPercentile && table == nullptr) {
        throw UsageError("cbm_percentile interventions need a percentile table");
    }
    diff::Tensor rep = mech == Mechanism::HcbmBinary ? model.hcbm_forward(x).c_binary : model.encode(x, nullptr).mu;
    std::vector<double> v(rep.values().begin(), rep.values().end());
    const std::size_t width = rep.cols();
    for (std::size_t j = 0; j < m; ++j) {
        if (mask[j].size() != n || values[j].size() != n) {
            throw DimensionError("intervention mask/values must have one entry per row");
        }
        const bool any = std::any_of(mask[j].begin(), mask[j].end(), [](char c) { return c != 0; });
        if (!any) continue;
        if (!intervenable(model, j)) {
            throw UsageError("concept '" + model.concepts()[j].name + "' cannot be intervened on with " +
                             to_string(mech));
        }
        const auto& blk = model.layout().blocks[j];
        for (std::size_t i = 0; i < n; ++i) {
            if (!mask[j][i]) continue;
            const double a = values[j][i];
            switch (mech) {
                case Mechanism::CbmPercentile:
                    if (a != 0.0 && a != 1.0) throw DomainError("binary concept value must be 0 or 1");
                    v[i * width + blk.offset] = a == 1.0 ? table->p95.at(j) : table->p5.at(j);
                    break;
                case Mechanism::McbmHead: {
                    const double one[1] = {a};
                    const auto t = model.representation_mean(j, one);
                    for (std::size_t d = 0; d < blk.dim; ++d) v[i * width + blk.offset + d] = t.at(0, d);
                    break;
                }
                case Mechanism::HcbmBinary:
                    if (a != 0.0 && a != 1.0) throw DomainError("binary concept value must be 0 or 1");
                    v[i * width + j] = a;
                    break;
            }
        }
    }
    return diff::Tensor::from(rep.shape(), std::move(v));
}

diff::Tensor intervened_logits(const ModelBundle& model, const diff::Tensor& x,
                               const std::vector<std::vector<char>>& mask, const model::ConceptValues& values,
                               const PercentileTable* table) {
    const auto rep = intervened_representation(model, x, mask, values, table);
    return model.variant() == Variant::HCBM ? model.task_logits_from_binary(rep) : model.task_logits_from_z(rep);
}

diff::Tensor intervene(const ModelBundle& model, const diff::Tensor& x, std::span<const InterventionSpec> specs,
                       const PercentileTable* table) {
    const Mechanism mech = mechanism_for(model.variant());
    const std::size_t m = model.concepts().size();
    const std::size_t n = x.rows();
    std::vector<std::vector<char>> mask(m, std::vector<char>(n, 0));
    model::ConceptValues values(m, std::vector<double>(n, 0.0));
    std::set<std::size_t> seen;
    for (const auto& s : specs) {
        if (s.mechanism != mech) {
            throw UsageError(to_string(s.mechanism) + " does not apply to a " + model::to_string(model.variant()) +
                             " model");
        }
        if (s.concept_index >= m) {
            throw UsageError("intervention on unknown concept " + std::to_string(s.concept_index));
        }
        if (!seen.insert(s.concept_index).second) {
            throw UsageError("concept " + std::to_string(s.concept_index) + " appears twice in one intervention");
        }
        std::fill(mask[s.concept_index].begin(), mask[s.concept_index].end(), 1);
        std::fill(values[s.concept_index].begin(), values[s.concept_index].end(), s.target_value);
    }
    return intervened_logits(model, x, mask, values, table);
}

std::vector<std::vector<double>> concept_confidence(const ModelBundle& model, const diff::Tensor& x) {
    const std::size_t m = model.concepts().size();
    const std::size_t n = x.rows();
    std::vector<std::vector<double>> conf(m, std::vector<double>(n));
    if (model.variant() == Variant::VM) {
        throw UsageError("VM has no concept heads");
    }
    const auto mu = model.encode(x, nullptr).mu;
    const auto& w = model.weights();
    for (std::size_t j = 0; j < m; ++j) {
        const auto& blk = model.layout().blocks[j];
        const auto zj = diff::slice_cols(mu, blk.offset, blk.dim);
        const auto o = model.concept_output(j, zj);
        switch (model.concepts()[j].kind) {
            case ConceptKind::Binary:
                for (std::size_t i = 0; i < n; ++i) conf[j][i] = std::max(o.at(i, 0), 1.0 - o.at(i, 0));
                break;
            case ConceptKind::Multiclass:
                for (std::size_t i = 0; i < n; ++i) {
                    double best = 0.0;
                    for (std::size_t k = 0; k < blk.dim; ++k) best = std::max(best, o.at(i, k));
                    conf[j][i] = best;
                }
                break;
            case ConceptKind::Continuous: {
                // Gaussian agreement between z_j and the representation of
                // the head's own prediction.
                std::vector<double> pred(n);
                for (std::size_t i = 0; i < n; ++i) pred[i] = o.at(i, 0);
                const auto back = model.representation_mean(j, pred);
                for (std::size_t i = 0; i < n; ++i) {
                    double d2 = 0.0;
                    for (std::size_t d = 0; d < blk.dim; ++d) {
                        const double diff = zj.at(i, d) - back.at(i, d);
                        d2 += diff * diff;
                    }
                    conf[j][i] = std::exp(-0.5 * d2 / (w.sigma_zhat * w.sigma_zhat));
                }
                break;
            }
        }
    }
    return conf;
}

std::size_t concepts_for_fraction(double f, std::size_t m) {
    if (f < 0.0 || f > 1.0) {
        throw DomainError("intervention fraction must lie in [0, 1]");
    }
    const double k = std::ceil(f * static_cast<double>(m) - 1e-9);
    return std::min(m, static_cast<std::size_t>(std::max(0.0, k)));
}

std::string InterventionCurve::to_csv() const {
    std::string out = "policy,fraction,mean_error,std_error,n_seeds\n";
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        out += to_string(policy) + "," + io::format_double(fractions[i]) + "," + io::format_double(mean_error[i]) +
               "," + io::format_double(std_error[i]) + "," + std::to_string(n_seeds) + "\n";
    }
    return out;
}

InterventionCurve intervention_curve(const ModelBundle& model, const data::Dataset& test_split, Policy policy,
                                     std::span<const double> fractions, int n_seeds, std::uint64_t seed,
                                     const PercentileTable* table) {
    if (!std::is_sorted(fractions.begin(), fractions.end())) {
        throw ConfigError("intervention fractions must be sorted");
    }
    if (n_seeds < 1) {
        throw ConfigError("intervention curve needs n_seeds >= 1");
    }
    const auto batch = model::make_batch(test_split, model.concepts());
    const std::size_t m = model.concepts().size();
    const std::size_t n = test_split.n;
    std::vector<std::size_t> candidates;
    for (std::size_t j = 0; j < m; ++j) {
        if (intervenable(model, j)) candidates.push_back(j);
    }

    InterventionCurve curve;
    curve.policy = policy;
    curve.fractions.assign(fractions.begin(), fractions.end());
    curve.n_seeds = policy == Policy::LowestConfidence ? 1 : n_seeds;

    // Per-sample ordering of candidate concepts; interventions use prefixes.
    std::vector<std::vector<std::size_t>> order(n);
    std::vector<std::vector<double>> conf;
    if (policy == Policy::LowestConfidence) {
        conf = concept_confidence(model, batch.x);
    }
    RngStream base(seed, "intervene.random");
    for (int s = 0; s < curve.n_seeds; ++s) {
        if (policy == Policy::LowestConfidence) {
            for (std::size_t i = 0; i < n; ++i) {
                order[i] = candidates;
                std::stable_sort(order[i].begin(), order[i].end(),
                                 [&](std::size_t a, std::size_t b) { return conf[a][i] < conf[b][i]; });
            }
        } else {
            RngStream rng = base.substream("seed" + std::to_string(s));
            const auto perm = random_permutation(candidates.size(), rng);
            std::vector<std::size_t> shared(candidates.size());
            for (std::size_t k = 0; k < perm.size(); ++k) shared[k] = candidates[perm[k]];
            std::fill(order.begin(), order.end(), shared);
        }
        std::vector<double> errs;
        for (double f : fractions) {
            const std::size_t k = concepts_for_fraction(f, candidates.size());
            std::vector<std::vector<char>> mask(m, std::vector<char>(n, 0));
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t r = 0; r < k; ++r) mask[order[i][r]][i] = 1;
            }
            const auto logits = intervened_logits(model, batch.x, mask, batch.concepts, table);
            std::size_t wrong = 0;
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t best = 0;
                for (std::size_t c = 1; c < logits.cols(); ++c) best = logits.at(i, c) > logits.at(i, best) ? c : best;
                wrong += static_cast<int>(best) != batch.y[i];
            }
            errs.push_back(static_cast<double>(wrong) / static_cast<double>(n));
        }
        curve.errors.push_back(std::move(errs));
    }
    for (std::size_t f = 0; f < fractions.size(); ++f) {
        double mean = 0.0;
        for (const auto& e : curve.errors) mean += e[f];
        mean /= curve.n_seeds;
        double var = 0.0;
        for (const auto& e : curve.errors) var += (e[f] - mean) * (e[f] - mean);
        curve.mean_error.push_back(mean);
        curve.std_error.push_back(curve.n_seeds > 1 ? std::sqrt(var / (curve.n_seeds - 1)) : 0.0);
    }
    return curve;
}

double sigmoid_inverse(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw DomainError("sigmoid_inverse is undefined at p = " + io::format_double(p) + " (needs 0 < p < 1)");
    }
    return std::log(p / (1.0 - p));
}

namespace {

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace

BayesDemo bayes_posterior_demo(const data::MixturePrior& prior, int c_value, double z_min, double z_max,
                               std::size_t n_points) {
    prior.validate();
    if (c_value != 0 && c_value != 1) {
        throw DomainError("bayes demo: c must be 0 or 1");
    }
    if (n_points < 1000) {
        throw ConfigError("bayes demo: the grid needs at least 1000 points");
    }
    if (!(z_max > z_min)) {
        throw ConfigError("bayes demo: z_max must exceed z_min");
    }
    const double covered = prior.mass(z_min, z_max);
    if (covered < 0.999) {
        throw ConfigError("bayes demo: grid [" + io::format_double(z_min) + ", " + io::format_double(z_max) +
                          "] holds only " + io::format_double(covered) + " of the prior mass; widen the grid");
    }
    BayesDemo d;
    const double h = (z_max - z_min) / static_cast<double>(n_points - 1);
    std::vector<double> u(n_points);
    for (std::size_t i = 0; i < n_points; ++i) {
        const double z = z_min + h * static_cast<double>(i);
        const double p = prior.density(z);
        const double lik = c_value == 1 ? sigmoid(z) : sigmoid(-z);
        d.z.push_back(z);
        d.prior.push_back(p);
        u[i] = lik * p;
    }
    auto trapz = [&](const std::vector<double>& f) {
        double s = 0.0;
        for (std::size_t i = 0; i + 1 < f.size(); ++i) s += 0.5 * h * (f[i] + f[i + 1]);
        return s;
    };
    d.evidence = trapz(u);
    d.posterior.resize(n_points);
    for (std::size_t i = 0; i < n_points; ++i) d.posterior[i] = u[i] / d.evidence;
    d.normalization = trapz(d.posterior);

    // Grid argmax refined by a parabola through its neighbours.
    const auto it = std::max_element(d.posterior.begin(), d.posterior.end());
    const auto k = static_cast<std::size_t>(it - d.posterior.begin());
    d.mode = d.z[k];
    if (k > 0 && k + 1 < n_points) {
        const double a = d.posterior[k - 1], b = d.posterior[k], c = d.posterior[k + 1];
        const double denom = a - 2.0 * b + c;
        if (denom < 0.0) d.mode += 0.5 * h * (a - c) / denom;
    }

    // Cell masses: trapezoid weight of each grid point.
    std::vector<double> cell(n_points);
    for (std::size_t i = 0; i < n_points; ++i) {
        const double wgt = (i == 0 || i + 1 == n_points) ? 0.5 * h : h;
        cell[i] = wgt * d.posterior[i];
        if (d.z[i] > 0.0) d.mass_positive += cell[i];
    }
    d.surrogate = sigmoid_inverse(c_value == 1 ? 0.95 : 0.05);
    d.mode_distance = std::abs(d.mode - d.surrogate);
    const double pos = std::clamp((d.surrogate - z_min) / h, 0.0, static_cast<double>(n_points - 1));
    const auto nearest = static_cast<std::size_t>(std::llround(pos));
    double tv = 0.0;
    for (std::size_t i = 0; i < n_points; ++i) tv += std::abs(cell[i] - (i == nearest ? 1.0 : 0.0));
    d.total_variation = 0.5 * tv;
    return d;
}

std::string BayesDemo::to_csv() const {
    std::string out = "z,prior,posterior\n";
    for (std::size_t i = 0; i < z.size(); ++i) {
        out += io::format_double(z[i]) + "," + io::format_double(prior[i]) + "," + io::format_double(posterior[i]) +
               "\n";
    }
    return out;
}

nlohmann::json BayesDemo::summary() const {
    return {{"evidence", evidence},
            {"normalization", normalization},
            {"mode", mode},
            {"mass_positive", mass_positive},
            {"surrogate", surrogate},
            {"mode_distance", mode_distance},
            {"total_variation", total_variation},
            {"grid_points", z.size()}};
}

}  // namespace mcbm::intervene
