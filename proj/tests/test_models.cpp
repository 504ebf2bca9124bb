#include "mcbm/datagen.hpp"
#include "mcbm/errors.hpp"
#include "mcbm/gradcheck.hpp"
#include "mcbm/models.hpp"
#include "mcbm/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace mcbm;
using namespace mcbm::model;
using diff::Tensor;

namespace {

data::Dataset small_factor_data(std::size_t n, std::uint64_t seed) {
    auto cfg = data::default_factor_config();
    cfg.n_samples = static_cast<int>(n);
    return data::make_factor_dataset(cfg, seed);
}

ModelConfig config_for(Variant v, const data::Dataset& d, std::uint64_t seed = 1) {
    auto mc = ModelConfig::for_variant(v, concept_specs_from_factors(d.factors), d.input_dim, d.n_classes);
    mc.seed = seed;
    return mc;
}

std::vector<std::size_t> first_rows(std::size_t n) {
    std::vector<std::size_t> r(n);
    std::iota(r.begin(), r.end(), std::size_t{0});
    return r;
}

}  // namespace

TEST(ConceptSpecs, ReadFromFactors) {
    const auto specs = concept_specs_from_factors(data::default_factor_config().factors);
    ASSERT_EQ(specs.size(), 3u);
    EXPECT_EQ(specs[0].kind, ConceptKind::Binary);
    EXPECT_EQ(specs[1].kind, ConceptKind::Multiclass);
    EXPECT_EQ(specs[1].block_dim(), 4u);
    EXPECT_EQ(specs[2].kind, ConceptKind::Continuous);
    EXPECT_EQ(specs[2].block_dim(), 1u);
}

TEST(ConceptSpecs, OneVsRestExpansion) {
    const auto specs = concept_specs_from_factors(data::default_factor_config().factors);
    std::vector<std::string> notes;
    const auto cbm = expand_one_vs_rest(specs, false, &notes);
    ASSERT_EQ(cbm.size(), 6u);
    EXPECT_EQ(cbm[1].name, "c_multiclass=0");
    EXPECT_EQ(cbm[4].positive_state, 3);
    EXPECT_EQ(cbm[5].kind, ConceptKind::Continuous);
    EXPECT_EQ(notes.size(), 1u);
    const auto hard = expand_one_vs_rest(specs, true);
    ASSERT_EQ(hard.size(), 7u);
    for (const auto& s : hard) EXPECT_EQ(s.kind, ConceptKind::Binary);
}

TEST(LatentLayout, BlocksAreContiguous) {
    const auto layout = LatentLayout::from_specs(concept_specs_from_factors(data::default_factor_config().factors));
    ASSERT_EQ(layout.blocks.size(), 3u);
    EXPECT_EQ(layout.blocks[1].offset, 1u);
    EXPECT_EQ(layout.blocks[2].offset, 5u);
    EXPECT_EQ(layout.total_dim, 6u);
}

TEST(RepresentationTarget, PerKindRule) {
    ConceptSpec b{"b", ConceptKind::Binary};
    EXPECT_EQ(representation_target(b, 1.0, 3.0), std::vector<double>{3.0});
    EXPECT_EQ(representation_target(b, 0.0, 3.0), std::vector<double>{-3.0});
    ConceptSpec m{"m", ConceptKind::Multiclass, 4};
    EXPECT_EQ(representation_target(m, 2.0, 3.0), (std::vector<double>{0.0, 0.0, 3.0, 0.0}));
    ConceptSpec c{"c", ConceptKind::Continuous};
    EXPECT_DOUBLE_EQ(representation_target(c, -0.25, 3.0)[0], -0.75);
    EXPECT_THROW(representation_target(m, 4.0, 3.0), DomainError);
    EXPECT_THROW(representation_target(b, 0.5, 3.0), DomainError);
}

TEST(ModelConfig, VariantDefaults) {
    const auto d = small_factor_data(40, 1);
    const auto vm = config_for(Variant::VM, d);
    EXPECT_EQ(vm.weights.beta, 0.0);
    EXPECT_EQ(vm.weights.gamma, 0.0);
    EXPECT_EQ(vm.weights.sigma_x, 0.0);
    const auto cbm = config_for(Variant::CBM, d);
    EXPECT_EQ(cbm.weights.beta, 1.0);
    EXPECT_EQ(cbm.weights.gamma, 0.0);
    const auto mcbm = config_for(Variant::MCBM, d);
    EXPECT_EQ(mcbm.weights.sigma_x, 1.0);
    EXPECT_EQ(mcbm.weights.gamma, 1.0);
    const auto hcbm = config_for(Variant::HCBM, d);
    EXPECT_EQ(hcbm.concepts.size(), 7u);
}

TEST(ModelConfig, InvalidCombinationsThrow) {
    const auto d = small_factor_data(40, 1);
    auto cbm = config_for(Variant::CBM, d);
    cbm.weights.gamma = 1.0;
    EXPECT_THROW(cbm.validate(), ConfigError);
    auto mcbm = config_for(Variant::MCBM, d);
    mcbm.weights.sigma_x = 0.0;
    EXPECT_THROW(mcbm.validate(), ConfigError);
    auto vm = config_for(Variant::VM, d);
    vm.weights.beta = 0.5;
    EXPECT_THROW(vm.validate(), ConfigError);
    auto hcbm = config_for(Variant::HCBM, d);
    hcbm.concepts = concept_specs_from_factors(d.factors);
    EXPECT_THROW(hcbm.validate(), ConfigError);
}

TEST(ModelConfig, JsonRoundTrip) {
    const auto d = small_factor_data(40, 1);
    auto mc = config_for(Variant::MCBM, d, 9);
    mc.weights.gamma = 30.0;
    const auto back = model_config_from_json(to_json(mc));
    EXPECT_EQ(to_json(back).dump(), to_json(mc).dump());
    EXPECT_EQ(back.weights.gamma, 30.0);
}

TEST(ModelBundle, CbmRecordsExpansionNotes) {
    const auto d = small_factor_data(40, 1);
    const auto m = build_model(config_for(Variant::CBM, d));
    EXPECT_EQ(m.concepts().size(), 6u);
    EXPECT_FALSE(m.notes().empty());
    EXPECT_EQ(m.descriptor().at("notes").size(), m.notes().size());
}

TEST(ModelBundle, CloneIsDeepAndEquivalent) {
    const auto d = small_factor_data(20, 1);
    auto m = build_model(config_for(Variant::MCBM, d));
    auto c = m.clone();
    const auto x = make_batch(d, m.concepts()).x;
    const auto a = m.predict_logits(x), b = c.predict_logits(x);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i));
    c.store().all()[0].tensor.mutable_values()[0] += 1.0;
    EXPECT_NE(m.store().all()[0].tensor.at(0), c.store().all()[0].tensor.at(0));
}

TEST(ModelBundle, SameSeedSameParameters) {
    const auto d = small_factor_data(20, 1);
    const auto a = build_model(config_for(Variant::MCBM, d, 4));
    const auto b = build_model(config_for(Variant::MCBM, d, 4));
    const auto c = build_model(config_for(Variant::MCBM, d, 5));
    ASSERT_EQ(a.store().all().size(), b.store().all().size());
    for (std::size_t p = 0; p < a.store().all().size(); ++p) {
        const auto va = a.store().all()[p].tensor.values(), vb = b.store().all()[p].tensor.values();
        EXPECT_TRUE(std::equal(va.begin(), va.end(), vb.begin()));
    }
    EXPECT_NE(a.store().all()[0].tensor.at(0), c.store().all()[0].tensor.at(0));
}

TEST(Loss, ComponentsAddUp) {
    const auto d = small_factor_data(64, 2);
    auto mc = config_for(Variant::MCBM, d);
    mc.weights.beta = 0.7;
    mc.weights.gamma = 2.5;
    const auto m = build_model(mc);
    const auto batch = make_batch(d, m.concepts());
    RngStream rng(1, "noise");
    const auto r = m.loss(batch, &rng);
    double expect = r.parts.task;
    for (double v : r.parts.concept_terms) expect += 0.7 * v;
    for (double v : r.parts.kl) expect += 2.5 * v;
    EXPECT_NEAR(r.total.item(), expect, 1e-12);
    EXPECT_NEAR(r.parts.total, expect, 1e-12);
}

TEST(Loss, KlIsHalfSquaredDistanceToTargets) {
    const auto d = small_factor_data(50, 3);
    const auto m = build_model(config_for(Variant::MCBM, d));
    const auto batch = make_batch(d, m.concepts());
    RngStream rng(1, "noise");
    const auto r = m.loss(batch, &rng);
    const auto mu = m.encode(batch.x, nullptr).mu;
    for (std::size_t j = 0; j < m.concepts().size(); ++j) {
        const auto& blk = m.layout().blocks[j];
        double s = 0.0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto t = representation_target(m.concepts()[j], batch.concepts[j][i], 3.0);
            for (std::size_t k = 0; k < blk.dim; ++k) {
                const double diff = mu.at(i, blk.offset + k) - t[k];
                s += 0.5 * diff * diff;
            }
        }
        EXPECT_NEAR(r.parts.kl[j], s / static_cast<double>(batch.size()), 1e-10) << "concept " << j;
    }
}

TEST(Loss, VanillaHasOnlyTaskTerm) {
    const auto d = small_factor_data(30, 3);
    const auto m = build_model(config_for(Variant::VM, d));
    const auto batch = make_batch(d, m.concepts());
    const auto r = m.loss(batch, nullptr);
    EXPECT_NEAR(r.total.item(), r.parts.task, 1e-15);
}

TEST(Loss, AnalyticGradientMatchesFiniteDifferences) {
    const auto d = small_factor_data(8, 4);
    for (auto v : {Variant::VM, Variant::CBM, Variant::MCBM}) {
        auto mc = config_for(v, d, 2);
        mc.encoder_hidden = {5};
        mc.task_hidden = {4};
        auto m = build_model(mc);
        const auto batch = make_batch(d, m.concepts());
        auto loss_fn = [&] {
            RngStream rng(3, "gradcheck");
            return m.loss(batch, &rng).total;
        };
        const auto res = diff::grad_check_parameters(loss_fn, m.store().all());
        EXPECT_LT(res.max_relative_error, 1e-4) << to_string(v);
    }
}

TEST(Hcbm, BinarizeTiesGoToOne) {
    EXPECT_EQ(binarize(0.5), 1.0);
    EXPECT_EQ(binarize(0.4999999), 0.0);
    EXPECT_EQ(binarize(1.0), 1.0);
}

TEST(Hcbm, ForwardThresholdsSigmoidOfLogits) {
    const auto d = small_factor_data(20, 5);
    const auto m = build_model(config_for(Variant::HCBM, d));
    const auto x = make_batch(d, m.concepts()).x;
    const auto hf = m.hcbm_forward(x);
    const auto mu = m.encode(x, nullptr).mu;
    for (std::size_t i = 0; i < hf.c_prob.numel(); ++i) {
        EXPECT_NEAR(hf.c_prob.at(i), 1.0 / (1.0 + std::exp(-mu.at(i))), 1e-15);
        EXPECT_EQ(hf.c_binary.at(i), binarize(hf.c_prob.at(i)));
    }
    EXPECT_THROW(m.task_logits_from_z(mu), UsageError);
}

TEST(Hcbm, StagesPartitionParameters) {
    const auto d = small_factor_data(20, 5);
    const auto m = build_model(config_for(Variant::HCBM, d));
    const auto s0 = m.stage_parameters(0), s1 = m.stage_parameters(1);
    EXPECT_EQ(s0.size() + s1.size(), m.store().all().size());
    for (const auto& p : s1) EXPECT_EQ(p.name.rfind("task_head", 0), 0u);
    for (const auto& p : s0) EXPECT_NE(p.name.rfind("task_head", 0), 0u);
}

TEST(Batch, ConceptValuesPerKind) {
    const auto d = small_factor_data(30, 6);
    const auto specs = expand_one_vs_rest(concept_specs_from_factors(d.factors), false);
    const auto rows = first_rows(30);
    const auto vals = concept_values(specs, d, rows);
    for (std::size_t i = 0; i < 30; ++i) {
        EXPECT_EQ(vals[0][i], d.factor_values[0][i]);
        double hot = 0.0;
        for (std::size_t k = 1; k <= 4; ++k) hot += vals[k][i];
        EXPECT_EQ(hot, 1.0);
        EXPECT_EQ(vals[1 + static_cast<std::size_t>(d.state(1, i))][i], 1.0);
        EXPECT_EQ(vals[5][i], d.factor_values[2][i]);
    }
}
