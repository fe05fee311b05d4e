#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "camu/conv_bound.hpp"
#include "camu/rng.hpp"
#include "oracles.hpp"

using namespace camu;

namespace {

ConvergenceParams unit_params() {
    ConvergenceParams p;
    p.mu = 1.0;
    p.lipschitz = 1.0;
    p.delta = 1.0;
    p.delta_c = {1.0};
    p.lr = 0.5;
    p.gc = {1.0};
    p.gkc = {{1.0}};
    p.n_per_cluster = {1};
    p.powers = {0.5};
    p.h_norms = {std::sqrt(4e-4)};
    p.sigma_n = 0.01;
    return p;
}

std::vector<double> random_simplex(Rng& rng, std::size_t n) {
    std::vector<double> w(n);
    double s = 0.0;
    for (auto& v : w) s += (v = 0.1 + rng.uniform());
    for (auto& v : w) v /= s;
    return w;
}

ConvergenceParams random_params(Rng& rng, std::size_t clusters) {
    ConvergenceParams p;
    p.mu = rng.uniform(0.01, 0.5);
    p.lipschitz = p.mu + rng.uniform(0.0, 5.0);
    p.delta = 1.0 + rng.uniform(0.0, 2.0);
    p.gc = random_simplex(rng, clusters);
    for (std::size_t c = 0; c < clusters; ++c) {
        p.delta_c.push_back(1.0 + rng.uniform(0.0, 2.0));
        p.gkc.push_back(random_simplex(rng, 1 + rng.below(5)));
        p.n_per_cluster.push_back(1 + static_cast<int>(rng.below(4)));
        p.powers.push_back(rng.uniform(0.05, 1.0));
        p.h_norms.push_back(rng.uniform(1e-3, 1e-1));
    }
    p.sigma_n = rng.uniform(1e-4, 1e-2);
    p.lr = rng.uniform(0.0, 1.2) * lr_max(p);
    return p;
}

double dense_top_eigenvalue(const LabeledDataset& d, bool with_bias) {
    const auto cols = static_cast<Eigen::Index>(d.feature_dim + (with_bias ? 1 : 0));
    Eigen::MatrixXd x(static_cast<Eigen::Index>(d.size()), cols);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto r = d.row(i);
        for (std::size_t j = 0; j < d.feature_dim; ++j)
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r[j];
        if (with_bias) x(static_cast<Eigen::Index>(i), cols - 1) = 1.0;
    }
    const Eigen::MatrixXd m = x.transpose() * x / (2.0 * static_cast<double>(d.size()));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    return es.eigenvalues().maxCoeff();
}

}  // namespace

TEST(AFactor, HandExample) {
    EXPECT_NEAR(a_factor(unit_params()), 0.25, 1e-15);
    auto p = unit_params();
    p.lr = 0.0;
    EXPECT_EQ(a_factor(p), 1.0);
}

TEST(AFactor, MorePassesLowerAWhenBracketNegative) {
    auto p = unit_params();
    p.lr = 0.2;
    const double a1 = a_factor(p);
    p.n_per_cluster = {2};
    EXPECT_LT(a_factor(p), a1);
}

TEST(AFactor, SplitSumsToAMinusOne) {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const auto p = random_params(rng, 1 + rng.below(5));
        std::vector<bool> sel;
        for (std::size_t c = 0; c < p.clusters(); ++c) sel.push_back(rng.below(2) == 1);
        const auto s = a_factor_split(p, sel);
        EXPECT_NEAR(s.below_threshold + s.above_threshold, a_factor(p) - 1.0, 1e-12);
    }
}

TEST(LrMax, Examples) {
    auto p = unit_params();
    EXPECT_DOUBLE_EQ(lr_max(p), 2.0);
    p.delta = 2.0;
    EXPECT_DOUBLE_EQ(lr_max(p), 1.0);
}

TEST(LrMax, BisectionBoundary) {
    auto p = unit_params();
    const double m = lr_max(p);
    p.lr = m * (1.0 - 1e-9);
    EXPECT_LT(a_factor(p), 1.0);
    p.lr = m * (1.0 + 1e-9);
    EXPECT_GE(a_factor(p), 1.0);
}

TEST(LrMax, SingleClusterEquivalenceGrid) {
    Rng rng(17);
    int exceptions = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const auto p = random_params(rng, 1);
        if (p.lr == 0.0) continue;
        exceptions += (a_factor(p) < 1.0) != (p.lr < lr_max(p)) ? 1 : 0;
    }
    EXPECT_EQ(exceptions, 0);
}

TEST(Gap, Examples) {
    const auto p = unit_params();
    EXPECT_NEAR(noise_sum(p), 1.0, 1e-12);
    EXPECT_NEAR(gap(p, std::nullopt), 1.0 / 0.75, 1e-12);
    EXPECT_NEAR(gap(p, 1), noise_sum(p), 1e-15);
    EXPECT_NEAR(gap(p, std::nullopt, GapForm::half_l), 0.5 / 0.75, 1e-12);
    auto quiet = p;
    quiet.sigma_n = 0.0;
    EXPECT_EQ(gap(quiet, std::nullopt), 0.0);
    EXPECT_EQ(gap(quiet, 7), 0.0);
    auto slow = p;
    slow.lr = 3.0;
    EXPECT_THROW(gap(slow, std::nullopt), NonConvergentError);
    EXPECT_NO_THROW(gap(slow, 5));
}

TEST(Gap, MonotoneInPowerAndNoise) {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        auto p = random_params(rng, 3);
        p.lr = 0.5 * lr_max(p);
        if (a_factor(p) <= 0.0 || a_factor(p) >= 1.0) continue;
        const double g0 = gap(p, std::nullopt);
        for (std::size_t c = 0; c < 3; ++c) {
            auto q = p;
            q.powers[c] *= 1.1;
            EXPECT_LT(gap(q, std::nullopt), g0);
        }
        auto q = p;
        q.sigma_n *= 1.1;
        EXPECT_GT(gap(q, std::nullopt), g0);
    }
}

TEST(BoundCurve, Examples) {
    const auto p = unit_params();
    const auto b = bound_curve(p, 1.0, 2);
    ASSERT_EQ(b.size(), 2u);
    EXPECT_NEAR(b[1], 1.3125, 1e-12);
    EXPECT_NEAR(b[0], 0.25 + 1.0, 1e-12);
    auto quiet = p;
    quiet.sigma_n = 0.0;
    const auto d = bound_curve(quiet, 2.0, 4);
    for (int t = 0; t < 4; ++t) EXPECT_NEAR(d[static_cast<std::size_t>(t)], 2.0 * std::pow(0.25, t + 1), 1e-15);
    std::ostringstream csv;
    write_bound_csv(csv, b, 1.0);
    EXPECT_EQ(csv.str().rfind("round,bound\n0,1\n", 0), 0u);
}

TEST(Corollary, Examples) {
    ConvergenceParams p = unit_params();
    p.gc = {0.5, 0.5};
    p.gkc = {{1.0}, {1.0}};
    p.delta_c = {1.0, 1.0};
    p.n_per_cluster = {1, 1};
    p.powers = {0.5, 0.5};
    p.h_norms = {0.02, 0.02};
    p.lr = 1e-3;
    EXPECT_EQ(corollary_check(p), (std::vector<bool>{true, true}));
    p.delta = 2.0;
    EXPECT_EQ(corollary_check(p), (std::vector<bool>{false, false}));
    p.delta = 1.0;
    p.lr = 3.0;
    EXPECT_EQ(corollary_check(p), (std::vector<bool>{false, false}));
}

TEST(Report, FlagsAndJson) {
    auto p = unit_params();
    auto r = bound_report(p, 10);
    EXPECT_TRUE(r.converges);
    ASSERT_TRUE(r.gap_infinite.has_value());
    EXPECT_NEAR(*r.gap_infinite, 1.0 / 0.75, 1e-12);
    nlohmann::json j = r;
    EXPECT_EQ(j["converges"], true);
    p.lr = 1.0;
    r = bound_report(p, 10);
    EXPECT_TRUE(r.over_aggressive);
    EXPECT_FALSE(r.converges);
    EXPECT_FALSE(r.gap_infinite.has_value());
    nlohmann::json k = r;
    EXPECT_EQ(k["gap_infinite"], "inf");
}

TEST(Params, Validation) {
    auto p = unit_params();
    p.gc = {0.9};
    EXPECT_THROW(a_factor(p), std::invalid_argument);
    p = unit_params();
    p.delta = 0.5;
    EXPECT_THROW(a_factor(p), std::invalid_argument);
    p = unit_params();
    p.mu = 2.0;
    EXPECT_THROW(a_factor(p), std::invalid_argument);
}

TEST(Smoothness, IdentityFeatures) {
    const std::size_t n = 6;
    LabeledDataset d;
    d.feature_dim = n;
    d.label_count = 2;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) d.features.push_back(i == j ? 1.0 : 0.0);
        d.labels.push_back(static_cast<int>(i % 2));
    }
    const ConvexModelSpec spec{n, 2, 0.1};
    const auto e = estimate_mu_l(spec, d, CurvatureInput::features_only);
    EXPECT_DOUBLE_EQ(e.mu, 0.1);
    EXPECT_NEAR(e.lipschitz, 0.1 + 0.5 / static_cast<double>(n), 1e-6);
}

TEST(Smoothness, ZeroFeatures) {
    LabeledDataset d;
    d.feature_dim = 3;
    d.label_count = 2;
    d.features.assign(12, 0.0);
    d.labels = {0, 1, 0, 1};
    const ConvexModelSpec spec{3, 2, 0.2};
    const auto e = estimate_mu_l(spec, d, CurvatureInput::features_only);
    EXPECT_DOUBLE_EQ(e.mu, 0.2);
    EXPECT_DOUBLE_EQ(e.lipschitz, 0.2);
    EXPECT_THROW(estimate_mu_l(ConvexModelSpec{3, 2, 0.0}, d), std::invalid_argument);
}

TEST(Smoothness, MatchesDenseEigensolver) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        BlobSpec b;
        b.label_count = 3;
        b.feature_dim = 2 + seed % 19;
        b.samples = 150;
        const auto d = make_gaussian_blobs(b, seed, seed + 100);
        const ConvexModelSpec spec{b.feature_dim, 3, 0.05};
        for (bool bias : {true, false}) {
            const auto e = estimate_mu_l(spec, d, bias ? CurvatureInput::with_bias : CurvatureInput::features_only);
            const double exact = 0.05 + dense_top_eigenvalue(d, bias);
            EXPECT_NEAR(e.lipschitz / exact, 1.0, 0.01) << "seed " << seed << " bias " << bias;
        }
    }
}

TEST(Dissimilarity, Examples) {
    const std::vector<double> g{1.0, -2.0};
    const std::vector<std::vector<double>> same{g, g, g};
    const std::vector<double> w3{0.2, 0.3, 0.5};
    EXPECT_DOUBLE_EQ(*estimate_dissimilarity(g, same, w3), 1.0);

    const std::vector<double> global{1.0};
    const std::vector<std::vector<double>> units{{2.0}, {0.0}};
    const std::vector<double> half{0.5, 0.5};
    EXPECT_NEAR(*estimate_dissimilarity(global, units, half), std::sqrt(2.0), 1e-15);

    const std::vector<double> global3{3.0};
    const std::vector<std::vector<double>> units3{{6.0}, {0.0}};
    EXPECT_NEAR(*estimate_dissimilarity(global3, units3, half), std::sqrt(2.0), 1e-15);

    const std::vector<double> zero{0.0};
    EXPECT_FALSE(estimate_dissimilarity(zero, units, half).has_value());
}

TEST(WeightedObjective, GradientAndOptimum) {
    BlobSpec b;
    b.label_count = 3;
    b.feature_dim = 4;
    b.samples = 90;
    const auto d = make_gaussian_blobs(b, 2, 3);
    WeightedObjective f;
    f.data = &d;
    f.spec = {4, 3, 0.1};
    f.partitions = partition_devices(d, LabelLimitedScheme{1}, 3, 1);
    f.device_weights = {0.5, 0.3, 0.2};

    Rng rng(5);
    ModelParams w = f.spec.zeros();
    for (auto& v : w.values) v = rng.normal(0.0, 0.3);
    std::vector<double> g(w.size());
    f.gradient(w, g);
    const auto fd = oracle::numeric_gradient([&](const std::vector<double>& x) { return f.value(ModelParams{x}); },
                                             w.values, 1e-5);
    EXPECT_LT(oracle::relative_error(g, fd), 1e-6);

    const auto dg = f.device_gradients(w);
    std::vector<double> mix(w.size(), 0.0);
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t p = 0; p < w.size(); ++p) mix[p] += f.device_weights[k] * dg[k][p];
    EXPECT_LT(oracle::relative_error(mix, g), 1e-12);

    const auto sm = estimate_mu_l(f.spec, d);
    const auto opt = reference_optimum(f, sm.lipschitz, 3000);
    f.gradient(opt.w, g);
    double norm = 0.0;
    for (double v : g) norm += v * v;
    EXPECT_LT(std::sqrt(norm), 1e-8);
    EXPECT_LE(opt.value, f.value(w));
}
