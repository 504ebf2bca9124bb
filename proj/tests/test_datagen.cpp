#include "mcbm/datagen.hpp"
#include "mcbm/errors.hpp"
#include "mcbm/losses.hpp"
#include "mcbm/mlp.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

using namespace mcbm;
using namespace mcbm::data;

namespace {

// Small softmax-regression/MLP probe trained full-batch with Adam; used as
// an external oracle for "is y predictable from these features".
double probe_accuracy(const std::vector<std::vector<double>>& feats, const std::vector<int>& y, int n_classes,
                      std::size_t hidden, int epochs) {
    using namespace mcbm::diff;
    const std::size_t n = y.size(), d = feats.front().size();
    const std::size_t n_train = n * 7 / 10;
    std::vector<double> xtr, xte;
    for (std::size_t i = 0; i < n; ++i) {
        (i < n_train ? xtr : xte).insert((i < n_train ? xtr : xte).end(), feats[i].begin(), feats[i].end());
    }
    const std::vector<int> ytr(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(n_train));
    ParameterStore store;
    std::vector<std::size_t> widths{d};
    if (hidden > 0) widths.push_back(hidden);
    widths.push_back(static_cast<std::size_t>(n_classes));
    Mlp net(store, "probe", widths, 3);
    Optimizer opt({OptimizerKind::Adam, 0.01});
    const auto X = Tensor::matrix(n_train, d, xtr);
    for (int e = 0; e < epochs; ++e) {
        store.zero_grad();
        backward(cross_entropy(net.forward(X), ytr));
        opt.step(store.all());
    }
    const auto out = net.forward(Tensor::matrix(n - n_train, d, xte));
    std::size_t hit = 0;
    for (std::size_t i = 0; i < n - n_train; ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < static_cast<std::size_t>(n_classes); ++k) {
            if (out.at(i, k) > out.at(i, best)) best = k;
        }
        hit += static_cast<int>(best) == y[n_train + i];
    }
    return static_cast<double>(hit) / static_cast<double>(n - n_train);
}

std::vector<double> one_hot_states(const Dataset& d, const std::vector<int>& factors, std::size_t i) {
    std::vector<double> f;
    for (int idx : factors) {
        const int card = d.factors[idx].cardinality();
        const int s = d.state(static_cast<std::size_t>(idx), i);
        for (int k = 0; k < card; ++k) f.push_back(k == s ? 1.0 : 0.0);
    }
    return f;
}

}  // namespace

TEST(FactorDataset, RegenerationIsBitIdentical) {
    auto cfg = default_factor_config();
    cfg.n_samples = 300;
    const auto a = make_factor_dataset(cfg, 5), b = make_factor_dataset(cfg, 5);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.y, b.y);
    EXPECT_EQ(a.factor_values, b.factor_values);
    const auto c = make_factor_dataset(cfg, 6);
    EXPECT_NE(a.x, c.x);
}

TEST(FactorDataset, ShapesAndRanges) {
    auto cfg = default_factor_config();
    cfg.n_samples = 500;
    const auto d = make_factor_dataset(cfg, 1);
    d.validate();
    EXPECT_EQ(d.n, 500u);
    EXPECT_EQ(d.input_dim, 32u);
    for (std::size_t f = 0; f < d.factors.size(); ++f) {
        for (double v : d.factor_values[f]) {
            if (d.factors[f].kind == FactorKind::Continuous) {
                EXPECT_GE(v, -1.0);
                EXPECT_LE(v, 1.0);
            } else {
                EXPECT_GE(v, 0.0);
                EXPECT_LT(v, d.factors[f].cardinality());
            }
        }
    }
}

TEST(FactorDataset, InvalidConfigsAreRejected) {
    auto cfg = default_factor_config();
    cfg.n_samples = 0;
    EXPECT_THROW(make_factor_dataset(cfg, 1), ConfigError);
    cfg = default_factor_config();
    for (auto& f : cfg.factors) f.role = FactorRole::FreeNuisance;
    EXPECT_THROW(make_factor_dataset(cfg, 1), ConfigError);
    cfg = default_factor_config();
    cfg.input_dim = 4;
    EXPECT_THROW(make_factor_dataset(cfg, 1), ConfigError);
    cfg = default_factor_config();
    cfg.factors[1].classes = 1;
    EXPECT_THROW(make_factor_dataset(cfg, 1), ConfigError);
}

TEST(FactorDataset, LabelIgnoresFreeNuisance) {
    auto cfg = default_factor_config();
    cfg.n_samples = 2000;
    const auto d = make_factor_dataset(cfg, 2);
    const auto table = build_label_table(cfg);
    // y is a function of the (c, n_y) states only: the same cell never
    // shows two labels whatever the free nuisance does.
    std::map<std::size_t, int> seen;
    for (std::size_t i = 0; i < d.n; ++i) {
        std::vector<int> states;
        for (int f : table.factor_indices) states.push_back(d.state(static_cast<std::size_t>(f), i));
        const auto cell = table.cell(states);
        auto [it, inserted] = seen.emplace(cell, d.y[i]);
        EXPECT_EQ(it->second, d.y[i]);
    }
    for (int f : table.factor_indices) {
        EXPECT_NE(d.factors[static_cast<std::size_t>(f)].role, FactorRole::FreeNuisance);
    }
}

TEST(LabelTable, SurjectiveAndTaskNuisanceMatters) {
    const auto cfg = default_factor_config();
    const auto table = build_label_table(cfg);
    std::set<int> labels(table.labels.begin(), table.labels.end());
    EXPECT_EQ(labels.size(), static_cast<std::size_t>(cfg.n_classes));
    const double bayes = c_only_bayes_accuracy(cfg, table);
    EXPECT_LT(bayes, 1.0);
    EXPECT_GT(bayes, 1.0 / cfg.n_classes);
}

TEST(LabelTable, NoTaskNuisanceMeansConceptsDetermineLabel) {
    auto cfg = default_factor_config();
    cfg.factors.erase(cfg.factors.begin() + 3);
    EXPECT_DOUBLE_EQ(c_only_bayes_accuracy(cfg, build_label_table(cfg)), 1.0);
}

TEST(LabelTable, BayesAccuracyByBruteForce) {
    // Independent enumeration over the full state product.
    const auto cfg = default_factor_config();
    const auto t = build_label_table(cfg);
    std::map<std::vector<int>, std::map<int, int>> votes;
    const std::size_t cells = t.cell_count();
    for (std::size_t idx = 0; idx < cells; ++idx) {
        std::vector<int> states(t.cardinalities.size());
        std::size_t rem = idx;
        for (std::size_t k = states.size(); k-- > 0;) {
            states[k] = static_cast<int>(rem % static_cast<std::size_t>(t.cardinalities[k]));
            rem /= static_cast<std::size_t>(t.cardinalities[k]);
        }
        const std::vector<int> c(states.begin(), states.begin() + 3);
        ++votes[c][t.label(states)];
    }
    double acc = 0.0;
    for (const auto& [c, m] : votes) {
        int best = 0, total = 0;
        for (const auto& [lbl, cnt] : m) {
            best = std::max(best, cnt);
            total += cnt;
        }
        acc += static_cast<double>(best) / total;
    }
    acc /= static_cast<double>(votes.size());
    EXPECT_NEAR(acc, c_only_bayes_accuracy(cfg, t), 1e-15);
}

TEST(FactorDataset, ProbeFromConceptsAloneWhenNoTaskNuisance) {
    auto cfg = default_factor_config();
    cfg.factors.erase(cfg.factors.begin() + 3);
    cfg.n_samples = 3000;
    const auto d = make_factor_dataset(cfg, 4);
    const auto concepts = d.indices_with_role(FactorRole::Concept);
    std::vector<std::vector<double>> feats;
    for (std::size_t i = 0; i < d.n; ++i) feats.push_back(one_hot_states(d, concepts, i));
    EXPECT_GE(probe_accuracy(feats, d.y, d.n_classes, 32, 400), 0.99);
}

TEST(FactorDataset, TaskNuisanceAddsPredictiveInformation) {
    auto cfg = default_factor_config();
    cfg.n_samples = 4000;
    const auto d = make_factor_dataset(cfg, 4);
    auto concepts = d.indices_with_role(FactorRole::Concept);
    auto both = concepts;
    for (int f : d.indices_with_role(FactorRole::TaskNuisance)) both.push_back(f);
    std::vector<std::vector<double>> fc, fb;
    for (std::size_t i = 0; i < d.n; ++i) {
        fc.push_back(one_hot_states(d, concepts, i));
        fb.push_back(one_hot_states(d, both, i));
    }
    const double acc_c = probe_accuracy(fc, d.y, d.n_classes, 32, 400);
    const double acc_b = probe_accuracy(fb, d.y, d.n_classes, 64, 600);
    EXPECT_GE(acc_b - acc_c, 0.05);
}

TEST(Spiral, NoiselessPointsLieOnArms) {
    const std::vector<int> counts{50, 20, 20, 20};
    const auto d = make_spiral_dataset(counts, 0.0, 3);
    for (std::size_t i = 0; i < d.n; ++i) {
        const double x = d.x[2 * i], y = d.x[2 * i + 1];
        const double t = std::hypot(x, y);
        const auto p = spiral_arm_point(d.y[i], t);
        EXPECT_NEAR(p[0], x, 1e-12);
        EXPECT_NEAR(p[1], y, 1e-12);
    }
}

TEST(Spiral, ClassCountsMatchExactly) {
    const std::vector<int> counts{2000, 200, 200, 200};
    const auto d = make_spiral_dataset(counts, 0.02, 3);
    std::vector<int> got(4);
    for (int y : d.y) ++got[static_cast<std::size_t>(y)];
    EXPECT_EQ(got, counts);
    EXPECT_EQ(d.factor_values[0].size(), d.n);
}

TEST(Spiral, ProbeSeparatesBalancedArms) {
    const std::vector<int> counts{100, 100, 100, 100};
    auto d = make_spiral_dataset(counts, 0.01, 8);
    // Interleave so the probe's 70/30 split sees every class.
    std::vector<std::size_t> order(d.n);
    for (std::size_t i = 0; i < d.n; ++i) order[i] = (i % 4) * 100 + i / 4;
    d = d.subset(order, SplitTag::Full);
    std::vector<std::vector<double>> feats;
    for (std::size_t i = 0; i < d.n; ++i) feats.push_back({d.x[2 * i], d.x[2 * i + 1]});
    using namespace mcbm::diff;
    const std::size_t n_train = d.n * 7 / 10;
    ParameterStore store;
    Mlp net(store, "probe", {2, 64, 64, 4}, 1);
    Optimizer opt({OptimizerKind::Adam, 0.01});
    std::vector<double> xtr(d.x.begin(), d.x.begin() + static_cast<std::ptrdiff_t>(2 * n_train));
    const std::vector<int> ytr(d.y.begin(), d.y.begin() + static_cast<std::ptrdiff_t>(n_train));
    const auto X = Tensor::matrix(n_train, 2, xtr);
    for (int e = 0; e < 2000; ++e) {
        store.zero_grad();
        backward(cross_entropy(net.forward(X), ytr));
        opt.step(store.all());
    }
    std::vector<double> xte(d.x.begin() + static_cast<std::ptrdiff_t>(2 * n_train), d.x.end());
    const auto out = net.forward(Tensor::matrix(d.n - n_train, 2, xte));
    std::size_t hit = 0;
    for (std::size_t i = 0; i < d.n - n_train; ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < 4; ++k) best = out.at(i, k) > out.at(i, best) ? k : best;
        hit += static_cast<int>(best) == d.y[n_train + i];
    }
    EXPECT_GE(static_cast<double>(hit) / static_cast<double>(d.n - n_train), 0.97);
}

TEST(Spiral, InvalidCountsRejected) {
    const std::vector<int> bad{10, 0, 10, 10};
    EXPECT_THROW(make_spiral_dataset(bad, 0.0, 1), ConfigError);
}

TEST(BimodalPrior, SingleComponentCollapse) {
    MixturePrior p{{1.0, 0.0}, {0.0, 5.0}, {1.0, 1.0}};
    const auto s = make_bimodal_prior(p, 10000, 3);
    double m = 0.0;
    for (double v : s) m += v;
    EXPECT_NEAR(m / 1e4, 0.0, 0.05);
}

TEST(BimodalPrior, SymmetricMomentsMatchMixtureFormula) {
    MixturePrior p;
    const auto s = make_bimodal_prior(p, 100000, 4);
    double m = 0.0, m2 = 0.0;
    for (double v : s) {
        m += v;
        m2 += v * v;
    }
    m /= static_cast<double>(s.size());
    const double var = m2 / static_cast<double>(s.size()) - m * m;
    EXPECT_NEAR(m, 0.0, 0.05);
    EXPECT_NEAR(var, 10.0, 0.3);
}

TEST(BimodalPrior, InvalidMixtureRejected) {
    MixturePrior p{{0.7, 0.7}, {0, 1}, {1, 1}};
    EXPECT_THROW(make_bimodal_prior(p, 10, 1), ConfigError);
    MixturePrior q{{0.5, 0.5}, {0, 1}, {1, 0}};
    EXPECT_THROW(make_bimodal_prior(q, 10, 1), ConfigError);
}

TEST(BimodalPrior, DensityAndMassAgree) {
    MixturePrior p;
    double acc = 0.0;
    const double h = 1e-3;
    for (double z = -10.0; z < 10.0; z += h) acc += h * p.density(z + h / 2);
    EXPECT_NEAR(acc, p.mass(-10.0, 10.0), 1e-8);
    EXPECT_NEAR(p.mass(-1e3, 1e3), 1.0, 1e-14);
}

TEST(Split, FullTrainIsInput) {
    auto cfg = default_factor_config();
    cfg.n_samples = 200;
    const auto d = make_factor_dataset(cfg, 3);
    const auto s = split(d, {1.0, 0.0, 0.0}, 9);
    EXPECT_EQ(s.train.x, d.x);
    EXPECT_EQ(s.train.y, d.y);
    EXPECT_EQ(s.val.n, 0u);
    EXPECT_EQ(s.test.n, 0u);
}

TEST(Split, SizesAndStratification) {
    auto cfg = default_factor_config();
    cfg.n_samples = 1000;
    const auto d = make_factor_dataset(cfg, 3);
    const std::array<double, 3> ratios{0.8, 0.1, 0.1};
    const auto s = split(d, ratios, 9);
    EXPECT_EQ(s.train.n, 800u);
    EXPECT_EQ(s.val.n, 100u);
    EXPECT_EQ(s.test.n, 100u);
    std::map<int, int> total;
    for (int y : d.y) ++total[y];
    const Dataset* parts[3] = {&s.train, &s.val, &s.test};
    for (int k = 0; k < 3; ++k) {
        std::map<int, int> got;
        for (int y : parts[k]->y) ++got[y];
        for (const auto& [label, cnt] : total) {
            EXPECT_LE(std::abs(got[label] - ratios[k] * cnt), 1.0);
        }
    }
}

TEST(Split, DisjointAndCovering) {
    auto cfg = default_factor_config();
    cfg.n_samples = 333;
    const auto d = make_factor_dataset(cfg, 3);
    const auto s = split(d, {0.6, 0.1, 0.3}, 2);
    // The first coordinate of x is continuous, so it identifies each sample.
    std::multiset<double> all, parts;
    for (std::size_t i = 0; i < d.n; ++i) all.insert(d.x[i * d.input_dim]);
    for (const Dataset* p : {&s.train, &s.val, &s.test}) {
        for (std::size_t i = 0; i < p->n; ++i) parts.insert(p->x[i * p->input_dim]);
    }
    EXPECT_EQ(all, parts);
    EXPECT_EQ(s.train.split, SplitTag::Train);
}

TEST(Split, EmptyClassInSplitWarns) {
    const std::vector<int> counts{50, 1, 50, 50};
    const auto d = make_spiral_dataset(counts, 0.0, 1);
    const auto s = split(d, {0.8, 0.1, 0.1}, 1);
    EXPECT_FALSE(s.warnings.empty());
}

TEST(Split, BadRatiosRejected) {
    auto cfg = default_factor_config();
    cfg.n_samples = 10;
    const auto d = make_factor_dataset(cfg, 1);
    EXPECT_THROW(split(d, {0.5, 0.1, 0.1}, 1), ConfigError);
    EXPECT_THROW(split(d, {1.2, -0.1, -0.1}, 1), ConfigError);
}
