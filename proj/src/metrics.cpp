#include "mcbm/metrics.hpp"

#include "mcbm/errors.hpp"
#include "mcbm/losses.hpp"
#include "mcbm/mlp.hpp"
#include "mcbm/optim.hpp"
#include "mcbm/rng.hpp"
#include "mcbm/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

namespace mcbm::metrics {

using model::ConceptKind;
using model::Variant;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

double entropy_of(std::span<const double> p) {
    double h = 0.0;
    for (double v : p) h -= xlogx(v);
    return h;
}

void check_distribution(std::span<const double> p, const char* what) {
    double s = 0.0;
    for (double v : p) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw DomainError(std::string(what) + " has a negative or non-finite entry");
        }
        s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) {
        throw DomainError(std::string(what) + " does not sum to 1 (sum " + std::to_string(s) + ")");
    }
}

void check_table(const std::vector<std::vector<double>>& t, const char* what) {
    if (t.empty() || t.front().empty()) {
        throw DimensionError(std::string(what) + " is empty");
    }
    for (const auto& row : t) {
        if (row.size() != t.front().size()) {
            throw DimensionError(std::string(what) + " is ragged");
        }
    }
}

void check_conditional(const std::vector<std::vector<double>>& t, const char* what) {
    check_table(t, what);
    for (const auto& row : t) check_distribution(row, what);
}

std::vector<double> flatten(const std::vector<std::vector<double>>& t) {
    std::vector<double> out;
    for (const auto& row : t) out.insert(out.end(), row.begin(), row.end());
    return out;
}

// Standardised copy of the selected rows using moments of `fit_rows`.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> sd;

    Standardizer(const Tensor& f, std::span<const std::size_t> fit_rows) {
        const std::size_t d = f.cols();
        mean.assign(d, 0.0);
        sd.assign(d, 0.0);
        for (std::size_t r : fit_rows)
            for (std::size_t k = 0; k < d; ++k) mean[k] += f.at(r, k);
        for (auto& m : mean) m /= static_cast<double>(fit_rows.size());
        for (std::size_t r : fit_rows)
            for (std::size_t k = 0; k < d; ++k) sd[k] += (f.at(r, k) - mean[k]) * (f.at(r, k) - mean[k]);
        for (auto& s : sd) {
            s = std::sqrt(s / static_cast<double>(fit_rows.size()));
            if (s < 1e-12) s = 1.0;
        }
    }

    Tensor apply(const Tensor& f, std::span<const std::size_t> rows) const {
        const std::size_t d = f.cols();
        std::vector<double> v(rows.size() * d);
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t k = 0; k < d; ++k) v[i * d + k] = (f.at(rows[i], k) - mean[k]) / sd[k];
        return Tensor::matrix(rows.size(), d, std::move(v));
    }
};

std::vector<int> gather(std::span<const int> labels, std::span<const std::size_t> rows) {
    std::vector<int> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = labels[rows[i]];
    return out;
}

Tensor concat_features(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("feature matrices disagree on row count");
    }
    const std::size_t n = a.rows(), da = a.cols(), db = b.cols();
    std::vector<double> v(n * (da + db));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < da; ++k) v[i * (da + db) + k] = a.at(i, k);
        for (std::size_t k = 0; k < db; ++k) v[i * (da + db) + da + k] = b.at(i, k);
    }
    return Tensor::matrix(n, da + db, std::move(v));
}

void probe_split(std::size_t n, double fraction, std::uint64_t seed, std::vector<std::size_t>& train_rows,
                 std::vector<std::size_t>& eval_rows) {
    RngStream rng(seed, "probe.split");
    auto perm = random_permutation(n, rng);
    const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (n_train == 0 || n_train >= n) {
        throw ConfigError("probe split leaves an empty part; need more rows or a different train_fraction");
    }
    train_rows.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    eval_rows.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(eval_rows.begin(), eval_rows.end());
}

Tensor rows_to_tensor(const std::vector<std::vector<double>>& cols, std::size_t n) {
    std::vector<double> v(n * cols.size());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < cols.size(); ++k) v[i * cols.size() + k] = cols[k][i];
    return Tensor::matrix(n, cols.size(), std::move(v));
}

}  // namespace

void ProbeConfig::validate() const {
    if (epochs < 1) throw ConfigError("probe epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("probe learning_rate must be > 0");
    if (batch_size == 0) throw ConfigError("probe batch_size must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("probe train_fraction must lie in (0, 1)");
    }
    for (auto h : hidden_layers) {
        if (h == 0) throw ConfigError("probe hidden layer widths must be >= 1");
    }
}

nlohmann::json to_json(const ProbeConfig& c) {
    return {{"hidden_layers", c.hidden_layers}, {"epochs", c.epochs},
            {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
            {"seed", c.seed},                   {"train_fraction", c.train_fraction}};
}

ProbeFit fit_probe(const Tensor& features, std::span<const int> labels, int n_classes,
                   std::span<const std::size_t> train_rows, std::span<const std::size_t> eval_rows,
                   const ProbeConfig& config) {
    config.validate();
    if (features.rank() != 2 || features.rows() != labels.size()) {
        throw DimensionError("probe features must be [n, d] with one label per row");
    }
    if (train_rows.empty() || eval_rows.empty()) {
        throw UsageError("probe needs non-empty train and eval rows");
    }
    for (int l : labels) {
        if (l < 0 || l >= n_classes) throw DomainError("probe label out of range");
    }
    const Standardizer st(features, train_rows);
    const Tensor xtr = st.apply(features, train_rows);
    const Tensor xev = st.apply(features, eval_rows);
    const auto ytr = gather(labels, train_rows);
    const auto yev = gather(labels, eval_rows);

    std::vector<std::size_t> widths{features.cols()};
    widths.insert(widths.end(), config.hidden_layers.begin(), config.hidden_layers.end());
    widths.push_back(static_cast<std::size_t>(n_classes));
    diff::ParameterStore store;
    const diff::Mlp mlp(store, "probe", widths, config.seed);
    diff::OptimizerConfig oc;
    oc.learning_rate = config.learning_rate;
    diff::Optimizer opt(oc);
    RngStream rng(config.seed, "probe.shuffle");

    const std::size_t n = train_rows.size(), d = features.cols();
    std::vector<std::size_t> order(n);
    for (int e = 0; e < config.epochs; ++e) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t b = std::min(config.batch_size, n - start);
            std::vector<double> xv(b * d);
            std::vector<int> yb(b);
            for (std::size_t i = 0; i < b; ++i) {
                const std::size_t r = order[start + i];
                std::copy_n(xtr.values().begin() + static_cast<std::ptrdiff_t>(r * d), d, xv.begin() + static_cast<std::ptrdiff_t>(i * d));
                yb[i] = ytr[r];
            }
            store.zero_grad();
            const Tensor loss = diff::cross_entropy(mlp.forward(Tensor::matrix(b, d, std::move(xv))), yb);
            diff::backward(loss);
            opt.step(store.all());
        }
    }
    const Tensor logits = mlp.forward(xev);
    ProbeFit fit;
    fit.heldout_nll = diff::cross_entropy(logits, yev).item();
    std::size_t correct = 0;
    const std::size_t k = static_cast<std::size_t>(n_classes);
    for (std::size_t i = 0; i < yev.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c)
            if (logits.at(i, c) > logits.at(i, best)) best = c;
        correct += static_cast<int>(best) == yev[i];
    }
    fit.heldout_accuracy = static_cast<double>(correct) / static_cast<double>(yev.size());
    return fit;
}

double empirical_entropy(std::span<const int> labels) {
    if (labels.empty()) throw UsageError("entropy of an empty sample");
    std::map<int, std::size_t> counts;
    for (int l : labels) ++counts[l];
    double h = 0.0;
    for (const auto& [_, c] : counts) h -= xlogx(static_cast<double>(c) / static_cast<double>(labels.size()));
    return h;
}

UrrResult urr(const Tensor& z, const Tensor& c, std::span<const int> n, const ProbeConfig& config) {
    if (z.rank() != 2 || c.rank() != 2 || z.rows() != n.size() || c.rows() != n.size()) {
        throw DimensionError("urr expects z [n, dz], c [n, dc] and n labels");
    }
    std::vector<std::size_t> tr, ev;
    probe_split(n.size(), config.train_fraction, config.seed, tr, ev);
    UrrResult r;
    r.h_n = empirical_entropy(n);
    if (r.h_n <= 1e-12) {
        throw UndefinedMetricError("URR is undefined: the nuisance takes a single value (H(N) = 0)");
    }
    const int k = *std::max_element(n.begin(), n.end()) + 1;
    r.h_n_given_c = fit_probe(c, n, k, tr, ev, config).heldout_nll;
    r.h_n_given_cz = fit_probe(concat_features(c, z), n, k, tr, ev, config).heldout_nll;
    r.raw = (r.h_n_given_c - r.h_n_given_cz) / r.h_n;
    r.urr = std::clamp(r.raw, 0.0, 1.0);
    return r;
}

double cka(const Tensor& x, const Tensor& y) {
    if (x.rank() != 2 || y.rank() != 2 || x.rows() != y.rows()) {
        throw DimensionError("cka expects two matrices with the same number of rows");
    }
    const std::size_t n = x.rows(), p = x.cols(), q = y.cols();
    auto centred = [n](const Tensor& t) {
        const std::size_t d = t.cols();
        std::vector<double> v(t.values().begin(), t.values().end());
        for (std::size_t k = 0; k < d; ++k) {
            double m = 0.0;
            for (std::size_t i = 0; i < n; ++i) m += v[i * d + k];
            m /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) v[i * d + k] -= m;
        }
        return v;
    };
    const auto xc = centred(x), yc = centred(y);
    auto gram_norm2 = [n](const std::vector<double>& a, std::size_t da, const std::vector<double>& b, std::size_t db) {
        double s = 0.0;
        for (std::size_t i = 0; i < da; ++i)
            for (std::size_t j = 0; j < db; ++j) {
                double dot = 0.0;
                for (std::size_t r = 0; r < n; ++r) dot += a[r * da + i] * b[r * db + j];
                s += dot * dot;
            }
        return s;
    };
    const double xy = gram_norm2(yc, q, xc, p);
    const double xx = std::sqrt(gram_norm2(xc, p, xc, p));
    const double yy = std::sqrt(gram_norm2(yc, q, yc, q));
    if (xx <= 0.0 || yy <= 0.0) {
        throw UndefinedMetricError("CKA is undefined for a constant representation");
    }
    return xy / (xx * yy);
}

std::vector<std::vector<double>> importance_matrix(const Tensor& z, const std::vector<std::vector<int>>& concepts,
                                                   std::uint64_t seed) {
    if (z.rank() != 2) throw DimensionError("importance_matrix expects z [n, d]");
    const std::size_t n = z.rows(), d = z.cols();
    for (const auto& c : concepts) {
        if (c.size() != n) throw DimensionError("concept state vectors must have one entry per row of z");
    }
    std::vector<std::size_t> tr, ev;
    probe_split(n, 0.5, seed, tr, ev);
    std::vector<std::vector<double>> r(d, std::vector<double>(concepts.size(), 0.0));

    for (std::size_t j = 0; j < concepts.size(); ++j) {
        const auto& labels = concepts[j];
        const int k = *std::max_element(labels.begin(), labels.end()) + 1;
        std::vector<double> freq(static_cast<std::size_t>(k), 0.0);
        for (std::size_t i : tr) freq[static_cast<std::size_t>(labels[i])] += 1.0;
        const std::size_t majority = static_cast<std::size_t>(std::max_element(freq.begin(), freq.end()) - freq.begin());
        std::size_t base_hits = 0;
        for (std::size_t i : ev) base_hits += static_cast<std::size_t>(labels[i]) == majority;
        const double base = static_cast<double>(base_hits) / static_cast<double>(ev.size());
        if (base >= 1.0) continue;

        for (std::size_t dim = 0; dim < d; ++dim) {
            double m = 0.0, s = 0.0;
            for (std::size_t i : tr) m += z.at(i, dim);
            m /= static_cast<double>(tr.size());
            for (std::size_t i : tr) s += (z.at(i, dim) - m) * (z.at(i, dim) - m);
            s = std::sqrt(s / static_cast<double>(tr.size()));
            if (s < 1e-12) continue;

            // Full-batch Adam on a one-input softmax regression.
            const auto K = static_cast<std::size_t>(k);
            std::vector<double> w(K, 0.0), b(K, 0.0), mw(K, 0.0), vw(K, 0.0), mb(K, 0.0), vb(K, 0.0);
            std::vector<double> gw(K), gb(K), p(K);
            const double lr = 0.05, b1 = 0.9, b2 = 0.999;
            for (int it = 1; it <= 300; ++it) {
                std::fill(gw.begin(), gw.end(), 0.0);
                std::fill(gb.begin(), gb.end(), 0.0);
                for (std::size_t i : tr) {
                    const double x = (z.at(i, dim) - m) / s;
                    double mx = -1e300;
                    for (std::size_t c = 0; c < K; ++c) mx = std::max(mx, w[c] * x + b[c]);
                    double tot = 0.0;
                    for (std::size_t c = 0; c < K; ++c) tot += p[c] = std::exp(w[c] * x + b[c] - mx);
                    for (std::size_t c = 0; c < K; ++c) {
                        const double g = p[c] / tot - (static_cast<int>(c) == labels[i] ? 1.0 : 0.0);
                        gw[c] += g * x;
                        gb[c] += g;
                    }
                }
                const double c1 = 1.0 - std::pow(b1, it), c2 = 1.0 - std::pow(b2, it);
                for (std::size_t c = 0; c < K; ++c) {
                    gw[c] /= static_cast<double>(tr.size());
                    gb[c] /= static_cast<double>(tr.size());
                    mw[c] = b1 * mw[c] + (1 - b1) * gw[c];
                    vw[c] = b2 * vw[c] + (1 - b2) * gw[c] * gw[c];
                    mb[c] = b1 * mb[c] + (1 - b1) * gb[c];
                    vb[c] = b2 * vb[c] + (1 - b2) * gb[c] * gb[c];
                    w[c] -= lr * (mw[c] / c1) / (std::sqrt(vw[c] / c2) + 1e-8);
                    b[c] -= lr * (mb[c] / c1) / (std::sqrt(vb[c] / c2) + 1e-8);
                }
            }
            std::size_t hits = 0;
            for (std::size_t i : ev) {
                const double x = (z.at(i, dim) - m) / s;
                std::size_t best = 0;
                for (std::size_t c = 1; c < K; ++c)
                    if (w[c] * x + b[c] > w[best] * x + b[best]) best = c;
                hits += static_cast<int>(best) == labels[i];
            }
            const double acc = static_cast<double>(hits) / static_cast<double>(ev.size());
            r[dim][j] = std::max(0.0, (acc - base) / (1.0 - base));
        }
    }
    return r;
}

double disentanglement_from_importance(const std::vector<std::vector<double>>& r) {
    if (r.empty()) throw DimensionError("empty importance matrix");
    const std::size_t m = r.front().size();
    double total = 0.0;
    for (const auto& row : r) {
        if (row.size() != m) throw DimensionError("ragged importance matrix");
        for (double v : row) {
            if (v < 0.0) throw DomainError("importance entries must be non-negative");
            total += v;
        }
    }
    if (total <= 0.0) {
        throw UndefinedMetricError("disentanglement is undefined: no latent dimension predicts any concept");
    }
    if (m < 2) return 1.0;
    double score = 0.0;
    for (const auto& row : r) {
        const double rs = std::accumulate(row.begin(), row.end(), 0.0);
        if (rs <= 0.0) continue;
        double h = 0.0;
        for (double v : row) h -= xlogx(v / rs);
        score += (rs / total) * (1.0 - h / std::log(static_cast<double>(m)));
    }
    return score;
}

double disentanglement(const Tensor& z, const std::vector<std::vector<int>>& concepts, std::uint64_t seed) {
    return disentanglement_from_importance(importance_matrix(z, concepts, seed));
}

Tensor concept_matrix(const std::vector<data::FactorSpec>& factors, const data::Dataset& d) {
    std::vector<std::vector<double>> cols;
    for (std::size_t f = 0; f < factors.size(); ++f) {
        if (factors[f].role != data::FactorRole::Concept) continue;
        switch (factors[f].kind) {
            case data::FactorKind::Binary:
            case data::FactorKind::Continuous: cols.push_back(d.factor_values[f]); break;
            case data::FactorKind::Multiclass:
                for (int k = 0; k < factors[f].classes; ++k) {
                    std::vector<double> col(d.n);
                    for (std::size_t i = 0; i < d.n; ++i) col[i] = d.state(f, i) == k ? 1.0 : 0.0;
                    cols.push_back(std::move(col));
                }
                break;
        }
    }
    if (cols.empty()) throw UsageError("dataset has no concept factors");
    return rows_to_tensor(cols, d.n);
}

std::vector<std::vector<int>> concept_states(const data::Dataset& d) {
    std::vector<std::vector<int>> out;
    for (std::size_t f = 0; f < d.factors.size(); ++f) {
        if (d.factors[f].role != data::FactorRole::Concept) continue;
        std::vector<int> s(d.n);
        for (std::size_t i = 0; i < d.n; ++i) s[i] = d.state(f, i);
        out.push_back(std::move(s));
    }
    return out;
}

// ---- calibration ---------------------------------------------------------

std::string CalibrationReport::to_csv() const {
    std::string out = "x1,x2,argmax,top1,top2,sum_p\n";
    char buf[160];
    for (const auto& p : points) {
        std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%d,%.10g,%.10g,%.10g\n", p.x1, p.x2, p.argmax, p.top1, p.top2,
                      p.sum_p);
        out += buf;
    }
    return out;
}

nlohmann::json CalibrationReport::summary() const {
    auto num = [](double v) { return std::isnan(v) ? nlohmann::json() : nlohmann::json(v); };
    return {{"n_points", points.size()},
            {"frac_sum_off", frac_sum_off},
            {"max_sum_dev", max_sum_dev},
            {"frac_top2_above_0_9", frac_top2_above_0_9},
            {"frac_top2_above_0_5", frac_top2_above_0_5},
            {"frac_top2_above_0_3", frac_top2_above_0_3},
            {"majority_prediction_rate", majority_prediction_rate},
            {"majority_true_rate", num(majority_true_rate)}};
}

CalibrationReport calibration_report(const model::ModelBundle& model, const Tensor& points,
                                     std::span<const int> labels, int majority_class) {
    if (points.rank() != 2 || points.cols() != model.config().input_dim) {
        throw DimensionError("calibration points must be [n, input_dim]");
    }
    if (!labels.empty() && labels.size() != points.rows()) {
        throw DimensionError("calibration labels must have one entry per point");
    }
    const auto mu = model.encode(points, nullptr).mu;
    const auto& specs = model.concepts();
    const std::size_t n = points.rows();
    std::vector<std::vector<double>> probs(n);

    const bool single_multiclass = specs.size() == 1 && specs[0].kind == ConceptKind::Multiclass;
    if (single_multiclass) {
        const auto& blk = model.layout().blocks[0];
        const Tensor p = model.concept_output(0, diff::slice_cols(mu, blk.offset, blk.dim));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < blk.dim; ++k) probs[i].push_back(p.at(i, k));
    } else {
        for (std::size_t j = 0; j < specs.size(); ++j) {
            if (specs[j].kind != ConceptKind::Binary) {
                throw UsageError("calibration needs one multiclass concept or a set of one-vs-rest binary concepts");
            }
            const auto& blk = model.layout().blocks[j];
            const Tensor p = model.concept_output(j, diff::slice_cols(mu, blk.offset, blk.dim));
            for (std::size_t i = 0; i < n; ++i) probs[i].push_back(p.at(i));
        }
    }

    CalibrationReport rep;
    std::size_t off = 0, t9 = 0, t5 = 0, t3 = 0, maj_pred = 0, maj_true = 0;
    for (std::size_t i = 0; i < n; ++i) {
        CalibrationPoint cp;
        cp.x1 = points.at(i, 0);
        cp.x2 = points.cols() > 1 ? points.at(i, 1) : 0.0;
        auto sorted = probs[i];
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        cp.argmax = static_cast<int>(std::max_element(probs[i].begin(), probs[i].end()) - probs[i].begin());
        cp.top1 = sorted[0];
        cp.top2 = sorted.size() > 1 ? sorted[1] : 0.0;
        cp.sum_p = std::accumulate(probs[i].begin(), probs[i].end(), 0.0);
        const double dev = std::abs(cp.sum_p - 1.0);
        rep.max_sum_dev = std::max(rep.max_sum_dev, dev);
        off += dev > 0.2;
        t9 += cp.top2 > 0.9;
        t5 += cp.top2 > 0.5;
        t3 += cp.top2 > 0.3;
        maj_pred += cp.argmax == majority_class;
        if (!labels.empty()) maj_true += labels[i] == majority_class;
        rep.points.push_back(cp);
    }
    const double dn = static_cast<double>(std::max<std::size_t>(n, 1));
    rep.frac_sum_off = static_cast<double>(off) / dn;
    rep.frac_top2_above_0_9 = static_cast<double>(t9) / dn;
    rep.frac_top2_above_0_5 = static_cast<double>(t5) / dn;
    rep.frac_top2_above_0_3 = static_cast<double>(t3) / dn;
    rep.majority_prediction_rate = static_cast<double>(maj_pred) / dn;
    rep.majority_true_rate = labels.empty() ? kNaN : static_cast<double>(maj_true) / dn;
    return rep;
}

Tensor grid_points(double lo, double hi, std::size_t n) {
    if (n < 2 || !(hi > lo)) throw ConfigError("grid needs n >= 2 and hi > lo");
    std::vector<double> v;
    v.reserve(n * n * 2);
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
            v.push_back(lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(n - 1));
            v.push_back(lo + (hi - lo) * static_cast<double>(a) / static_cast<double>(n - 1));
        }
    return Tensor::matrix(n * n, 2, std::move(v));
}

std::vector<char> boundary_band(const Tensor& query, const Tensor& reference, std::span<const int> ref_labels,
                                std::size_t k) {
    if (query.rank() != 2 || reference.rank() != 2 || query.cols() != reference.cols() ||
        ref_labels.size() != reference.rows()) {
        throw DimensionError("boundary_band: mismatched query/reference shapes");
    }
    if (k == 0 || k > reference.rows()) throw ConfigError("boundary_band: k must lie in [1, reference rows]");
    const std::size_t d = query.cols();
    std::vector<char> out(query.rows(), 0);
    std::vector<std::pair<double, int>> dist(reference.rows());
    for (std::size_t q = 0; q < query.rows(); ++q) {
        for (std::size_t r = 0; r < reference.rows(); ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = query.at(q, c) - reference.at(r, c);
                s += diff * diff;
            }
            dist[r] = {s, ref_labels[r]};
        }
        std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
        std::set<int> seen;
        for (std::size_t i = 0; i < k; ++i) seen.insert(dist[i].second);
        out[q] = seen.size() >= 2;
    }
    return out;
}

// ---- information-theory oracles ------------------------------------------

DiscreteInfo discrete_mi_oracle(const std::vector<std::vector<double>>& joint) {
    check_table(joint, "joint table");
    const auto flat = flatten(joint);
    check_distribution(flat, "joint table");
    const std::size_t A = joint.size(), B = joint.front().size();
    std::vector<double> pa(A, 0.0), pb(B, 0.0);
    for (std::size_t a = 0; a < A; ++a)
        for (std::size_t b = 0; b < B; ++b) {
            pa[a] += joint[a][b];
            pb[b] += joint[a][b];
        }
    DiscreteInfo info;
    info.h_a = entropy_of(pa);
    info.h_b = entropy_of(pb);
    const double h_ab = entropy_of(flat);
    info.h_a_given_b = h_ab - info.h_b;
    info.mutual_information = info.h_a + info.h_b - h_ab;
    return info;
}

BoundCheck variational_lower_bound_check(const std::vector<std::vector<double>>& joint_xy,
                                         const std::vector<std::vector<double>>& encoder,
                                         const std::vector<std::vector<double>>& decoder) {
    check_table(joint_xy, "joint p(x, y)");
    check_distribution(flatten(joint_xy), "joint p(x, y)");
    check_conditional(encoder, "encoder p(z|x)");
    check_conditional(decoder, "decoder q(y|z)");
    const std::size_t X = joint_xy.size(), Y = joint_xy.front().size(), Z = encoder.front().size();
    if (encoder.size() != X || decoder.size() != Z || decoder.front().size() != Y) {
        throw DimensionError("variational bound: table shapes disagree");
    }
    std::vector<std::vector<double>> pzy(Z, std::vector<double>(Y, 0.0));
    for (std::size_t x = 0; x < X; ++x)
        for (std::size_t y = 0; y < Y; ++y)
            for (std::size_t z = 0; z < Z; ++z) pzy[z][y] += joint_xy[x][y] * encoder[x][z];

    std::vector<double> py(Y, 0.0);
    for (std::size_t z = 0; z < Z; ++z)
        for (std::size_t y = 0; y < Y; ++y) py[y] += pzy[z][y];
    double expected_log_q = 0.0;
    for (std::size_t z = 0; z < Z; ++z)
        for (std::size_t y = 0; y < Y; ++y)
            if (pzy[z][y] > 0.0) expected_log_q += pzy[z][y] * std::log(decoder[z][y]);

    BoundCheck b;
    b.lhs = expected_log_q + entropy_of(py);
    b.rhs = discrete_mi_oracle(pzy).mutual_information;
    b.gap = b.rhs - b.lhs;
    return b;
}

BoundCheck variational_upper_bound_check(const std::vector<std::vector<double>>& joint_xc,
                                         const std::vector<std::vector<double>>& encoder,
                                         const std::vector<std::vector<double>>& prior) {
    check_table(joint_xc, "joint p(x, c)");
    check_distribution(flatten(joint_xc), "joint p(x, c)");
    check_conditional(encoder, "encoder p(z|x)");
    check_conditional(prior, "prior q(z|c)");
    const std::size_t X = joint_xc.size(), C = joint_xc.front().size(), Z = encoder.front().size();
    if (encoder.size() != X || prior.size() != C || prior.front().size() != Z) {
        throw DimensionError("variational bound: table shapes disagree");
    }
    std::vector<double> pc(C, 0.0);
    std::vector<std::vector<double>> pzc(C, std::vector<double>(Z, 0.0));
    for (std::size_t x = 0; x < X; ++x)
        for (std::size_t c = 0; c < C; ++c) {
            pc[c] += joint_xc[x][c];
            for (std::size_t z = 0; z < Z; ++z) pzc[c][z] += joint_xc[x][c] * encoder[x][z];
        }
    for (std::size_t c = 0; c < C; ++c)
        if (pc[c] > 0.0)
            for (auto& v : pzc[c]) v /= pc[c];

    auto kl = [Z](const std::vector<double>& p, const std::vector<double>& q) {
        double s = 0.0;
        for (std::size_t z = 0; z < Z; ++z) {
            if (p[z] <= 0.0) continue;
            if (q[z] <= 0.0) return std::numeric_limits<double>::infinity();
            s += p[z] * std::log(p[z] / q[z]);
        }
        return s;
    };
    BoundCheck b;
    for (std::size_t x = 0; x < X; ++x)
        for (std::size_t c = 0; c < C; ++c) {
            if (joint_xc[x][c] <= 0.0) continue;
            b.lhs += joint_xc[x][c] * kl(encoder[x], prior[c]);
            b.rhs += joint_xc[x][c] * kl(encoder[x], pzc[c]);
        }
    b.gap = b.lhs - b.rhs;
    return b;
}

std::vector<double> discretized_gaussian(std::span<const double> grid, double mean, double sd) {
    if (grid.empty()) throw DimensionError("empty grid");
    if (!(sd > 0.0)) throw DomainError("sd must be > 0");
    std::vector<double> w(grid.size());
    double s = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double u = (grid[i] - mean) / sd;
        s += w[i] = std::exp(-0.5 * u * u);
    }
    if (s <= 0.0) throw DomainError("gaussian has no mass on the grid");
    for (auto& v : w) v /= s;
    return w;
}

std::vector<std::vector<double>> exact_decoder(const std::vector<std::vector<double>>& joint_xy,
                                               const std::vector<std::vector<double>>& encoder) {
    check_table(joint_xy, "joint p(x, y)");
    check_conditional(encoder, "encoder p(z|x)");
    const std::size_t X = joint_xy.size(), Y = joint_xy.front().size(), Z = encoder.front().size();
    std::vector<std::vector<double>> q(Z, std::vector<double>(Y, 0.0));
    for (std::size_t x = 0; x < X; ++x)
        for (std::size_t y = 0; y < Y; ++y)
            for (std::size_t z = 0; z < Z; ++z) q[z][y] += joint_xy[x][y] * encoder[x][z];
    for (auto& row : q) {
        const double s = std::accumulate(row.begin(), row.end(), 0.0);
        for (auto& v : row) v = s > 0.0 ? v / s : 1.0 / static_cast<double>(Y);
    }
    return q;
}

double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw DimensionError("spearman needs two equal-length samples of size >= 2");
    }
    auto ranks = [](std::span<const double> v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
        std::vector<double> r(v.size());
        for (std::size_t s = 0; s < idx.size();) {
            std::size_t e = s;
            while (e + 1 < idx.size() && v[idx[e + 1]] == v[idx[s]]) ++e;
            const double avg = 0.5 * static_cast<double>(s + e) + 1.0;
            for (std::size_t t = s; t <= e; ++t) r[idx[t]] = avg;
            s = e + 1;
        }
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) {
        throw UndefinedMetricError("spearman correlation is undefined for a constant sample");
    }
    return sab / std::sqrt(saa * sbb);
}

// ---- report ----------------------------------------------------------------

nlohmann::json MetricReport::to_json() const {
    auto num = [](double v) { return std::isnan(v) ? nlohmann::json() : nlohmann::json(v); };
    nlohmann::json leak = nlohmann::json::array();
    for (std::size_t i = 0; i < urr.size(); ++i) {
        leak.push_back({{"nuisance", nuisance_names[i]},
                        {"urr", urr[i].urr},
                        {"raw", urr[i].raw},
                        {"h_n", urr[i].h_n},
                        {"h_n_given_c", urr[i].h_n_given_c},
                        {"h_n_given_cz", urr[i].h_n_given_cz},
                        {"h_n_bits", urr[i].h_n / std::log(2.0)}});
    }
    nlohmann::json cacc = nlohmann::json::array();
    for (double v : concept_accuracy) cacc.push_back(num(v));
    return {{"model", model},
            {"urr", leak},
            {"mean_urr", mean_urr},
            {"cka", cka},
            {"disentanglement", disentanglement},
            {"task_accuracy", task_accuracy},
            {"concept_accuracy", cacc},
            {"mean_concept_accuracy", num(mean_concept_accuracy)}};
}

MetricReport evaluate_metrics(const model::ModelBundle& model, const data::Dataset& split,
                              const MetricsConfig& config) {
    split.validate();
    const auto x = Tensor::matrix(split.n, split.input_dim, split.x);
    const auto mu = model.encode(x, nullptr).mu;
    Tensor z = mu;
    if (config.sample_latent && model.variant() == Variant::MCBM) {
        RngStream rng(config.seed, "metrics.latent");
        z = model.encode(x, &rng).z;
    }
    const Tensor c = concept_matrix(split.factors, split);

    MetricReport rep;
    rep.model = model::to_string(model.variant());
    ProbeConfig probe = config.probe;
    for (std::size_t f = 0; f < split.factors.size(); ++f) {
        if (split.factors[f].role == data::FactorRole::Concept) continue;
        std::vector<int> n(split.n);
        for (std::size_t i = 0; i < split.n; ++i) n[i] = split.state(f, i);
        probe.seed = config.probe.seed + f;
        rep.nuisance_names.push_back(split.factors[f].name);
        rep.urr.push_back(urr(z, c, n, probe));
    }
    if (!rep.urr.empty()) {
        for (const auto& u : rep.urr) rep.mean_urr += u.urr;
        rep.mean_urr /= static_cast<double>(rep.urr.size());
    }
    rep.cka = cka(mu, c);
    rep.disentanglement = disentanglement(mu, concept_states(split), config.seed);
    const auto ev = train::evaluate(model, split);
    rep.task_accuracy = ev.task_accuracy;
    rep.concept_accuracy = ev.concept_accuracy;
    rep.mean_concept_accuracy = ev.mean_concept_accuracy;
    return rep;
}

}  // namespace mcbm::metrics
