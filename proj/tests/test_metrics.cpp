#include "mcbm/datagen.hpp"
#include "mcbm/errors.hpp"
#include "mcbm/metrics.hpp"
#include "mcbm/models.hpp"
#include "mcbm/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace mcbm;
using namespace mcbm::metrics;
using diff::Tensor;

namespace {

using Table = std::vector<std::vector<double>>;

Table random_conditional(std::size_t rows, std::size_t cols, RngStream& rng) {
    Table t(rows, std::vector<double>(cols));
    for (auto& r : t) {
        double s = 0.0;
        for (auto& v : r) s += v = rng.uniform() + 1e-3;
        for (auto& v : r) v /= s;
    }
    return t;
}

Table random_joint(std::size_t rows, std::size_t cols, RngStream& rng) {
    Table t(rows, std::vector<double>(cols));
    double s = 0.0;
    for (auto& r : t)
        for (auto& v : r) s += v = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
    if (s == 0.0) t[0][0] = s = 1.0;
    for (auto& r : t)
        for (auto& v : r) v /= s;
    return t;
}

// Centred-Gram-matrix form of linear CKA, HSIC(K, L) / sqrt(HSIC(K, K) HSIC(L, L))
// with K = X Xᵀ, L = Y Yᵀ and the n×n centring matrix spelled out.
double cka_by_gram(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y) {
    const std::size_t n = x.size();
    auto gram = [n](const std::vector<std::vector<double>>& a) {
        std::vector<std::vector<double>> g(n, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t k = 0; k < a[i].size(); ++k) g[i][j] += a[i][k] * a[j][k];
        return g;
    };
    auto centre = [n](std::vector<std::vector<double>> g) {
        std::vector<double> rm(n, 0.0), cm(n, 0.0);
        double all = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                rm[i] += g[i][j] / n;
                cm[j] += g[i][j] / n;
                all += g[i][j] / (n * n);
            }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) g[i][j] = g[i][j] - rm[i] - cm[j] + all;
        return g;
    };
    const auto k = centre(gram(x)), l = centre(gram(y));
    auto hsic = [n](const auto& a, const auto& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) s += a[i][j] * b[i][j];
        return s;
    };
    return hsic(k, l) / std::sqrt(hsic(k, k) * hsic(l, l));
}

Tensor to_tensor(const std::vector<std::vector<double>>& rows) {
    std::vector<double> v;
    for (const auto& r : rows) v.insert(v.end(), r.begin(), r.end());
    return Tensor::matrix(rows.size(), rows.front().size(), v);
}

}  // namespace

TEST(Entropy, UniformAndDegenerate) {
    EXPECT_NEAR(empirical_entropy(std::vector<int>{0, 1, 2, 3, 0, 1, 2, 3}), std::log(4.0), 1e-15);
    EXPECT_EQ(empirical_entropy(std::vector<int>{5, 5, 5}), 0.0);
    EXPECT_THROW(empirical_entropy(std::vector<int>{}), UsageError);
}

TEST(DiscreteMi, KnownTable) {
    // Σ p log p/(pa pb) = 0.8 ln 1.6 + 0.2 ln 0.4
    const auto info = discrete_mi_oracle({{0.4, 0.1}, {0.1, 0.4}});
    EXPECT_NEAR(info.mutual_information, 0.8 * std::log(1.6) + 0.2 * std::log(0.4), 1e-15);
    EXPECT_NEAR(info.mutual_information, 0.19274, 1e-5);
    EXPECT_NEAR(info.h_a, std::log(2.0), 1e-15);
    EXPECT_NEAR(info.h_a_given_b, std::log(2.0) - info.mutual_information, 1e-15);
}

TEST(DiscreteMi, IndependentTableHasZeroInformation) {
    const auto info = discrete_mi_oracle({{0.06, 0.14}, {0.24, 0.56}});
    EXPECT_NEAR(info.mutual_information, 0.0, 1e-15);
}

TEST(DiscreteMi, InvalidTablesThrow) {
    EXPECT_THROW(discrete_mi_oracle({{0.6, -0.1}, {0.25, 0.25}}), DomainError);
    EXPECT_THROW(discrete_mi_oracle({{0.5, 0.1}, {0.1, 0.1}}), DomainError);
    EXPECT_THROW(discrete_mi_oracle({{0.5, 0.5}, {0.0}}), DimensionError);
}

TEST(VariationalBounds, LowerBoundHoldsOnRandomJoints) {
    RngStream rng(11, "bounds");
    for (int t = 0; t < 100; ++t) {
        const std::size_t X = 2 + rng.below(5), Y = 2 + rng.below(4), Z = 2 + rng.below(6);
        const auto joint = random_joint(X, Y, rng);
        const auto enc = random_conditional(X, Z, rng);
        const auto dec = random_conditional(Z, Y, rng);
        EXPECT_GE(variational_lower_bound_check(joint, enc, dec).gap, -1e-12);
    }
}

TEST(VariationalBounds, LowerBoundIsTightForExactDecoder) {
    RngStream rng(12, "bounds");
    const auto joint = random_joint(4, 3, rng);
    const auto enc = random_conditional(4, 5, rng);
    const auto b = variational_lower_bound_check(joint, enc, exact_decoder(joint, enc));
    EXPECT_NEAR(b.gap, 0.0, 1e-12);
}

TEST(VariationalBounds, UpperBoundHoldsOnDiscretisedGaussians) {
    RngStream rng(13, "bounds");
    std::vector<double> grid(41);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = -5.0 + 0.25 * static_cast<double>(i);
    for (int t = 0; t < 100; ++t) {
        const std::size_t X = 2 + rng.below(5), C = 2 + rng.below(3);
        const auto joint = random_joint(X, C, rng);
        Table enc, prior;
        for (std::size_t x = 0; x < X; ++x) enc.push_back(discretized_gaussian(grid, rng.uniform(-3, 3), rng.uniform(0.3, 1.5)));
        for (std::size_t c = 0; c < C; ++c) prior.push_back(discretized_gaussian(grid, rng.uniform(-3, 3), rng.uniform(0.3, 1.5)));
        const auto b = variational_upper_bound_check(joint, enc, prior);
        EXPECT_GE(b.gap, -1e-12);
        EXPECT_GE(b.rhs, -1e-12);
    }
}

TEST(VariationalBounds, UpperBoundIsTightForExactPrior) {
    // Deterministic x -> c mapping: p(z|c) is the encoder row itself.
    RngStream rng(14, "bounds");
    const Table joint{{0.3, 0.0}, {0.0, 0.7}};
    const auto enc = random_conditional(2, 6, rng);
    const auto b = variational_upper_bound_check(joint, enc, enc);
    EXPECT_NEAR(b.lhs, 0.0, 1e-15);
    EXPECT_NEAR(b.gap, 0.0, 1e-15);
}

TEST(VariationalBounds, ShapeMismatchThrows) {
    EXPECT_THROW(variational_lower_bound_check({{0.5, 0.5}}, {{1.0}}, {{0.5, 0.5}, {0.5, 0.5}}), DimensionError);
    EXPECT_THROW(variational_lower_bound_check({{0.5, 0.5}}, {{0.5, 0.6}}, {{0.5, 0.5}, {0.5, 0.5}}), DomainError);
}

TEST(Cka, MatchesGramMatrixFormula) {
    RngStream rng(3, "cka");
    std::vector<std::vector<double>> x(30, std::vector<double>(4)), y(30, std::vector<double>(3));
    for (std::size_t i = 0; i < 30; ++i) {
        for (auto& v : x[i]) v = rng.normal();
        y[i][0] = x[i][0] + 0.5 * rng.normal();
        y[i][1] = rng.normal();
        y[i][2] = x[i][1] * x[i][2];
    }
    EXPECT_NEAR(cka(to_tensor(x), to_tensor(y)), cka_by_gram(x, y), 1e-12);
}

TEST(Cka, InvariantToRotationAndScale) {
    RngStream rng(4, "cka");
    std::vector<std::vector<double>> x(50, std::vector<double>(2)), xr(50, std::vector<double>(2));
    const double a = 0.7;
    for (std::size_t i = 0; i < 50; ++i) {
        x[i] = {rng.normal(), rng.normal() * 2.0};
        xr[i] = {3.0 * (std::cos(a) * x[i][0] - std::sin(a) * x[i][1]) + 5.0,
                 3.0 * (std::sin(a) * x[i][0] + std::cos(a) * x[i][1]) - 1.0};
    }
    EXPECT_NEAR(cka(to_tensor(x), to_tensor(xr)), 1.0, 1e-12);
    EXPECT_NEAR(cka(to_tensor(x), to_tensor(x)), 1.0, 1e-12);
}

TEST(Cka, ConstantRepresentationIsUndefined) {
    const auto x = Tensor::matrix(3, 1, {1.0, 1.0, 1.0});
    const auto y = Tensor::matrix(3, 1, {1.0, 2.0, 3.0});
    EXPECT_THROW(cka(x, y), UndefinedMetricError);
}

TEST(Disentanglement, ImportanceMatrixScores) {
    EXPECT_NEAR(disentanglement_from_importance({{1.0, 0.0}, {0.0, 0.5}}), 1.0, 1e-15);
    EXPECT_NEAR(disentanglement_from_importance({{0.4, 0.4}, {0.2, 0.2}}), 0.0, 1e-15);
    // One dimension pure, one maximally mixed with half the total weight.
    EXPECT_NEAR(disentanglement_from_importance({{1.0, 0.0}, {0.5, 0.5}}), 0.5, 1e-15);
    EXPECT_THROW(disentanglement_from_importance({{0.0, 0.0}}), UndefinedMetricError);
}

TEST(Disentanglement, OneHotConceptCodesScoreHigh) {
    RngStream rng(5, "dis");
    const std::size_t n = 2000;
    std::vector<std::vector<int>> c(2, std::vector<int>(n));
    std::vector<double> z;
    for (std::size_t i = 0; i < n; ++i) {
        c[0][i] = static_cast<int>(rng.below(2));
        c[1][i] = static_cast<int>(rng.below(3));
        z.push_back(c[0][i]);
        for (int k = 0; k < 3; ++k) z.push_back(c[1][i] == k ? 1.0 : 0.0);
    }
    EXPECT_GE(disentanglement(Tensor::matrix(n, 4, z), c, 1), 0.95);
}

TEST(Disentanglement, MixedCoordinatesScoreLow) {
    RngStream rng(6, "dis");
    const std::size_t n = 2000;
    std::vector<std::vector<int>> c(2, std::vector<int>(n));
    std::vector<double> z;
    for (std::size_t i = 0; i < n; ++i) {
        c[0][i] = static_cast<int>(rng.below(2));
        c[1][i] = static_cast<int>(rng.below(2));
        z.push_back(c[0][i] + c[1][i] + 0.01 * rng.normal());
        z.push_back(c[0][i] + c[1][i] + 0.01 * rng.normal());
    }
    EXPECT_LE(disentanglement(Tensor::matrix(n, 2, z), c, 1), 0.2);
}

TEST(Probe, LearnsSeparableLabels) {
    RngStream rng(7, "probe");
    const std::size_t n = 600;
    std::vector<double> f;
    std::vector<int> y;
    for (std::size_t i = 0; i < n; ++i) {
        const int k = static_cast<int>(rng.below(3));
        y.push_back(k);
        f.push_back(3.0 * k + 0.1 * rng.normal());
        f.push_back(rng.normal());
    }
    std::vector<std::size_t> tr(n / 2), ev(n / 2);
    std::iota(tr.begin(), tr.end(), std::size_t{0});
    std::iota(ev.begin(), ev.end(), n / 2);
    const auto fit = fit_probe(Tensor::matrix(n, 2, f), y, 3, tr, ev, ProbeConfig{});
    EXPECT_GE(fit.heldout_accuracy, 0.98);
    EXPECT_LT(fit.heldout_nll, 0.5 * std::log(3.0));
}

TEST(Probe, InvalidConfigThrows) {
    ProbeConfig c;
    c.train_fraction = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = ProbeConfig{};
    c.epochs = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

class UrrTest : public ::testing::Test {
protected:
    void SetUp() override {
        RngStream rng(8, "urr");
        for (std::size_t i = 0; i < n; ++i) {
            const int ci = static_cast<int>(rng.below(2));
            const int ni = static_cast<int>(rng.below(4));
            c.push_back(ci);
            nuis.push_back(ni);
            noise.push_back(rng.normal());
        }
    }
    std::size_t n = 2000;
    std::vector<double> c;
    std::vector<int> nuis;
    std::vector<double> noise;
};

TEST_F(UrrTest, CopyOfConceptsCarriesNoExtraInformation) {
    const auto ct = Tensor::matrix(n, 1, c);
    const auto r = urr(ct, ct, nuis, ProbeConfig{});
    EXPECT_LT(r.urr, 0.02);
    EXPECT_NEAR(r.h_n, std::log(4.0), 0.01);
}

TEST_F(UrrTest, VerbatimNuisanceIsRecovered) {
    std::vector<double> z;
    for (std::size_t i = 0; i < n; ++i) {
        z.push_back(noise[i]);
        z.push_back(nuis[i]);
    }
    const auto r = urr(Tensor::matrix(n, 2, z), Tensor::matrix(n, 1, c), nuis, ProbeConfig{});
    EXPECT_GT(r.urr, 0.9);
    EXPECT_LE(r.urr, 1.0);
}

TEST_F(UrrTest, ConstantNuisanceIsUndefined) {
    const std::vector<int> flat(n, 2);
    const auto ct = Tensor::matrix(n, 1, c);
    EXPECT_THROW(urr(ct, ct, flat, ProbeConfig{}), UndefinedMetricError);
}

TEST_F(UrrTest, DeterministicForFixedSeed) {
    const auto zt = Tensor::matrix(n, 1, noise);
    const auto ct = Tensor::matrix(n, 1, c);
    const auto a = urr(zt, ct, nuis, ProbeConfig{});
    const auto b = urr(zt, ct, nuis, ProbeConfig{});
    EXPECT_EQ(a.raw, b.raw);
    EXPECT_GE(a.urr, 0.0);
}

TEST(Spearman, KnownValues) {
    const std::vector<double> a{1, 2, 3, 4, 5};
    EXPECT_NEAR(spearman(a, std::vector<double>{2, 4, 6, 8, 100}), 1.0, 1e-15);
    EXPECT_NEAR(spearman(a, std::vector<double>{5, 4, 3, 2, 1}), -1.0, 1e-15);
    // Ranks of b with ties: {1, 2.5, 2.5, 4}; Pearson on ranks by hand.
    const std::vector<double> x{1, 2, 3, 4}, b{10, 20, 20, 30};
    const double expected = 4.5 / std::sqrt(5.0 * 4.5);
    EXPECT_NEAR(spearman(x, b), expected, 1e-15);
    EXPECT_THROW(spearman(x, std::vector<double>{1, 1, 1, 1}), UndefinedMetricError);
    EXPECT_THROW(spearman(x, std::vector<double>{1, 2}), DimensionError);
}

TEST(Calibration, SoftmaxSumsToOneAndSigmoidsNeedNot) {
    const std::vector<int> counts{60, 20, 20, 20};
    const auto d = data::make_spiral_dataset(counts, 0.05, 1);
    const auto specs = model::concept_specs_from_factors(d.factors);
    const auto grid = grid_points(-1.1, 1.1, 15);
    ASSERT_EQ(grid.rows(), 225u);

    auto mc = model::ModelConfig::for_variant(model::Variant::MCBM, specs, 2, 4);
    const auto mcbm = model::build_model(mc);
    const auto rep = calibration_report(mcbm, grid);
    EXPECT_LE(rep.max_sum_dev, 1e-12);
    EXPECT_EQ(rep.frac_top2_above_0_5, 0.0);

    auto cc = model::ModelConfig::for_variant(model::Variant::CBM, specs, 2, 4);
    const auto cbm = model::build_model(cc);
    const auto rc = calibration_report(cbm, grid);
    ASSERT_EQ(rc.points.size(), 225u);
    for (const auto& p : rc.points) {
        EXPECT_GE(p.top1, p.top2);
        EXPECT_GT(p.sum_p, 0.0);
        EXPECT_LT(p.sum_p, 4.0);
    }
    EXPECT_TRUE(std::isnan(rc.majority_true_rate));
    EXPECT_NE(rc.to_csv().find("x1,x2,argmax,top1,top2,sum_p\n"), std::string::npos);
}

TEST(Calibration, WrongInputWidthThrows) {
    const auto specs = model::concept_specs_from_factors(data::make_spiral_dataset(std::vector<int>{5, 5, 5, 5}, 0.0, 1).factors);
    const auto m = model::build_model(model::ModelConfig::for_variant(model::Variant::MCBM, specs, 2, 4));
    EXPECT_THROW(calibration_report(m, Tensor::matrix(1, 3, {0, 0, 0})), DimensionError);
}

TEST(BoundaryBand, MarksMixedNeighbourhoods) {
    // Two clusters of labels on a line; the query between them sees both.
    const auto ref = Tensor::matrix(6, 1, {0.0, 0.1, 0.2, 1.0, 1.1, 1.2});
    const std::vector<int> labels{0, 0, 0, 1, 1, 1};
    const auto q = Tensor::matrix(3, 1, {-0.5, 0.6, 1.7});
    const auto band = boundary_band(q, ref, labels, 4);
    EXPECT_EQ(band, (std::vector<char>{1, 1, 1}));
    const auto tight = boundary_band(q, ref, labels, 2);
    EXPECT_EQ(tight, (std::vector<char>{0, 1, 0}));
    EXPECT_THROW(boundary_band(q, ref, labels, 0), ConfigError);
}

TEST(EvaluateMetrics, ReportShapeOnFactorData) {
    auto cfg = data::default_factor_config();
    cfg.n_samples = 400;
    const auto d = data::make_factor_dataset(cfg, 1);
    const auto specs = model::concept_specs_from_factors(cfg.factors);
    auto mc = model::ModelConfig::for_variant(model::Variant::MCBM, specs, d.input_dim, d.n_classes);
    const auto m = model::build_model(mc);
    MetricsConfig config;
    config.probe.epochs = 2;
    const auto rep = evaluate_metrics(m, d, config);
    ASSERT_EQ(rep.urr.size(), 2u);
    EXPECT_EQ(rep.nuisance_names[0], "n_task");
    EXPECT_GE(rep.cka, 0.0);
    EXPECT_LE(rep.cka, 1.0 + 1e-12);
    EXPECT_GE(rep.disentanglement, 0.0);
    EXPECT_LE(rep.disentanglement, 1.0 + 1e-12);
    const auto j = rep.to_json();
    EXPECT_EQ(j.at("model"), "MCBM");
    EXPECT_EQ(j.at("urr").size(), 2u);
    const auto again = evaluate_metrics(m, d, config);
    EXPECT_EQ(again.to_json().dump(), j.dump());
}
