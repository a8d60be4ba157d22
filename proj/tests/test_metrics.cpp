#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace bregsparse;
using bregsparse::test::random_vector;
using bregsparse::test::store_of;
using bregsparse::test::tensor;

TEST(LayerwiseReport, Examples) {
    const auto rep = layerwise_report(store_of({0, 1, 0, 0}), 3);
    ASSERT_EQ(rep.per_tensor.size(), 1u);
    EXPECT_DOUBLE_EQ(rep.per_tensor[0].sparsity, 0.75);
    EXPECT_EQ(rep.per_tensor[0].n_params, 4u);
    EXPECT_EQ(rep.step, 3u);

    ParamStore s;
    s.add(tensor("a", {0, 0}));
    s.add(tensor("b", {0, 1}));
    EXPECT_DOUBLE_EQ(layerwise_report(s, 0).global, 0.75);
}

TEST(LayerwiseReport, ClassifierAndBackboneAggregates) {
    ParamStore s;
    s.add(tensor("a", {0, 0, 0, 1}));
    s.add(tensor("bias", {0, 0}, false));
    auto head = tensor("head", {1, 0});
    head.role = kClassifierRole;
    s.add(head);
    const auto rep = layerwise_report(s, 0);
    EXPECT_DOUBLE_EQ(rep.classifier, 0.5);
    EXPECT_DOUBLE_EQ(rep.backbone, 0.75);
    EXPECT_EQ(rep.per_tensor.size(), 2u);
}

TEST(LayerwiseReport, MatchesFlatScan) {
    Rng rng(2);
    std::bernoulli_distribution zero(0.6), reg(0.7), cls(0.3);
    for (int trial = 0; trial < 100; ++trial) {
        ParamStore s;
        for (int t = 0; t < 5; ++t) {
            auto v = random_vector(1 + static_cast<std::size_t>(trial + 3 * t) % 30, rng);
            for (auto& x : v)
                if (zero(rng)) x = 0.0;
            auto pt = tensor("t" + std::to_string(t), v, t == 0 || reg(rng));
            if (cls(rng)) pt.role = kClassifierRole;
            s.add(pt);
        }
        std::size_t z = 0, n = 0, cz = 0, cn = 0;
        for (const auto& t : s.tensors()) {
            if (!t.regularized) continue;
            for (double v : t.values) {
                n += 1;
                z += v == 0.0;
                if (t.role == kClassifierRole) {
                    cn += 1;
                    cz += v == 0.0;
                }
            }
        }
        const auto rep = layerwise_report(s, 0);
        EXPECT_EQ(rep.global, static_cast<double>(z) / static_cast<double>(n));
        EXPECT_EQ(rep.global, sparsity(s));
        EXPECT_EQ(rep.classifier, cn ? static_cast<double>(cz) / static_cast<double>(cn) : 0.0);
        if (n > cn) {
            EXPECT_EQ(rep.backbone, static_cast<double>(z - cz) / static_cast<double>(n - cn));
        }
        for (const auto& t : rep.per_tensor) {
            EXPECT_GE(t.sparsity, 0.0);
            EXPECT_LE(t.sparsity, 1.0);
        }
    }
}

TEST(LayerwiseReport, JsonRoundTrip) {
    ParamStore s;
    s.add(tensor("a", {0, 2, 0}));
    auto head = tensor("head", {1, 0});
    head.role = kClassifierRole;
    s.add(head);
    const auto rep = layerwise_report(s, 17);
    const auto j = to_json(rep);
    for (const char* key : {"step", "global", "per_tensor", "classifier", "backbone"}) EXPECT_TRUE(j.contains(key));
    const auto back = sparsity_report_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(back.step, 17u);
    EXPECT_EQ(back.global, rep.global);
    EXPECT_EQ(back.per_tensor[1].name, "head");
    EXPECT_EQ(back.classifier, rep.classifier);
}

TEST(FrobeniusNorm, Examples) {
    EXPECT_DOUBLE_EQ(frobenius_norm(store_of({3, 4})), 5.0);
    EXPECT_EQ(frobenius_norm(store_of({0, 0, 0})), 0.0);
    ParamStore s;
    s.add(tensor("w", {3, 4}));
    s.add(tensor("b", {12}, false));
    EXPECT_DOUBLE_EQ(frobenius_norm(s, Scope::All), 13.0);
    EXPECT_DOUBLE_EQ(frobenius_norm(s, Scope::RegularizedOnly), 5.0);
}

TEST(FrobeniusNorm, MatchesCompensatedSum) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        ParamStore s;
        s.add(tensor("a", random_vector(5000, rng, -10.0, 10.0)));
        s.add(tensor("b", random_vector(3000, rng, -1e-3, 1e-3)));
        // two passes: scale by the max magnitude, then Kahan-sum the squares
        double mx = 0.0;
        for (const auto& t : s.tensors())
            for (double v : t.values) mx = std::max(mx, std::abs(v));
        double sum = 0.0, comp = 0.0;
        for (const auto& t : s.tensors())
            for (double v : t.values) {
                const double y = (v / mx) * (v / mx) - comp;
                const double next = sum + y;
                comp = (next - sum) - y;
                sum = next;
            }
        const double ref = mx * std::sqrt(sum);
        EXPECT_NEAR(frobenius_norm(s), ref, 1e-12 * ref);
    }
}

TEST(BregmanDivergence, Examples) {
    const std::vector<double> theta{0.5, 0.0, -1.0};
    const auto p = init_subgradient(theta, 0.3);
    EXPECT_EQ(bregman_divergence_en(theta, theta, p, 0.3), 0.0);
    const std::vector<double> other{1.0, 2.0, -3.0};
    EXPECT_DOUBLE_EQ(bregman_divergence_en(other, theta, theta, 0.0), 0.5 * (0.25 + 4.0 + 4.0));
}

TEST(BregmanDivergence, RejectsInvalidSubgradient) {
    try {
        bregman_divergence_en(std::vector<double>{1.0}, std::vector<double>{0.0}, std::vector<double>{0.5}, 0.1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotASubgradient);
    }
}

TEST(BregmanDivergenceProperties, NonnegativeAndMatchesDirectFormula) {
    Rng rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0), lam_dist(0.0, 2.0);
    for (int trial = 0; trial < 500; ++trial) {
        const double lam = lam_dist(rng);
        auto ref = random_vector(9, rng);
        std::vector<double> p(9);
        for (std::size_t i = 0; i < 9; ++i) {
            if (i % 3 == 0) ref[i] = 0.0;
            p[i] = ref[i] != 0.0 ? ref[i] + lam * sign(ref[i]) : lam * u(rng);
        }
        const auto theta = random_vector(9, rng);
        const double d = bregman_divergence_en(theta, ref, p, lam);
        EXPECT_GE(d, -1e-12);
        // per coordinate: 1/2 (t - r)^2 + lam (|t| - q t) with q = (p - r)/lam the l1 subgradient part
        double direct = 0.0;
        for (std::size_t i = 0; i < 9; ++i) {
            direct += 0.5 * (theta[i] - ref[i]) * (theta[i] - ref[i]);
            direct += lam * std::abs(theta[i]) - (p[i] - ref[i]) * theta[i];
        }
        EXPECT_NEAR(d, direct, 1e-12 * (1.0 + std::abs(direct)));
    }
}

TEST(Lemma1Check, StationaryStepHasZeroResidual) {
    const std::vector<double> th{0.5, 0.0};
    const auto r = lemma1_check(1.25, 1.25, th, th, 0.1, 3.0, 0.2, 0.2, 4);
    EXPECT_EQ(r.residual, 0.0);
    EXPECT_FALSE(r.violation);
    EXPECT_EQ(r.k, 4u);
}

TEST(Lemma1Check, ScalarHandComputation) {
    // L(t) = (t - 2)^2, smoothness 2, tau = 0.2; theta 0 -> 0.75 (p: 0.05 -> 0.85, lam 0.1)
    const double prev = 4.0, next = 1.5625;
    const std::vector<double> a{0.0}, b{0.75};
    const auto fixed = lemma1_check(prev, next, a, b, 0.2, 2.0, 0.1, 0.1);
    EXPECT_DOUBLE_EQ(fixed.lhs, 1.5625 + 4.0 * 0.5625);
    EXPECT_DOUBLE_EQ(fixed.residual, 0.1875);
    const auto moved = lemma1_check(prev, next, a, b, 0.2, 2.0, 0.1, 0.08);
    EXPECT_NEAR(moved.residual, 0.1875 - 0.1 * 0.75, 1e-15);
    EXPECT_FALSE(moved.violation);
    const auto bad = lemma1_check(1.0, 2.0, a, a, 0.2, 2.0, 0.1, 0.1);
    EXPECT_TRUE(bad.violation);
}

TEST(Lemma1Check, RejectsNonFiniteInput) {
    const std::vector<double> a{0.0};
    EXPECT_THROW(lemma1_check(NAN, 1.0, a, a, 0.1, 1.0, 0.1, 0.1), Error);
    EXPECT_THROW(lemma1_check(1.0, 1.0, a, a, 0.1, INFINITY, 0.1, 0.1), Error);
    EXPECT_THROW(lemma1_check(1.0, 1.0, a, std::vector<double>{NAN}, 0.1, 1.0, 0.1, 0.1), Error);
}

TEST(SupportF1, Examples) {
    const std::vector<double> a{0, 1, 1, 1, 0}, b{0, 0, 1, 1, 1}, c{1, 0, 0, 0, 1};
    EXPECT_EQ(support_f1(a, a), 1.0);
    EXPECT_EQ(support_f1(a, c), 0.0);
    EXPECT_DOUBLE_EQ(support_f1(b, a), 2.0 / 3.0);
    const std::vector<double> z(5, 0.0);
    EXPECT_EQ(support_f1(z, z), 1.0);
    EXPECT_EQ(support_f1(z, a), 0.0);
}
