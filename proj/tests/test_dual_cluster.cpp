#include <gtest/gtest.h>

#include <cmath>

#include "camu/dual_cluster.hpp"
#include "camu/rng.hpp"
#include "oracles.hpp"

using namespace camu;

namespace {

SimilarityMatrix points_similarity(const std::vector<std::pair<double, double>>& pts) {
    SimilarityMatrix s;
    s.n = pts.size();
    s.s.assign(s.n * s.n, 0.0);
    for (std::size_t i = 0; i < s.n; ++i)
        for (std::size_t k = 0; k < s.n; ++k) {
            if (i == k) continue;
            const double dx = pts[i].first - pts[k].first, dy = pts[i].second - pts[k].second;
            s.at(i, k) = -(dx * dx + dy * dy);
        }
    const double med = median_off_diagonal(s);
    for (std::size_t i = 0; i < s.n; ++i) s.at(i, i) = med;
    return s;
}

InfoMatrix info_rows(const std::vector<std::vector<double>>& rows) {
    InfoMatrix xi;
    xi.devices = rows.size();
    xi.labels = rows.front().size();
    for (const auto& r : rows) xi.xi.insert(xi.xi.end(), r.begin(), r.end());
    return xi;
}

}  // namespace

TEST(CommSimilarity, LiteralExample) {
    SnrMatrix g;
    g.n = 2;
    g.gamma = {1.0, 2.0, 2.0, 1.0};
    const std::vector<double> pref{-1.0, -1.0};
    const auto s = comm_similarity(g, pref);
    EXPECT_EQ(s.s, (std::vector<double>{-1, -4, -4, -1}));
}

TEST(CommSimilarity, ZeroSnrAndSymmetry) {
    SnrMatrix g;
    g.n = 3;
    g.gamma.assign(9, 0.0);
    const std::vector<double> pref{-1.0};
    for (auto form : {CommSimilarityForm::literal, CommSimilarityForm::snr_difference}) {
        const auto s = comm_similarity(g, pref, form);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t k = 0; k < 3; ++k)
                if (i != k) EXPECT_EQ(s.at(i, k), 0.0);
    }
    g.gamma = {3, 1, 2, 1, 5, 4, 2, 4, 7};
    for (auto form : {CommSimilarityForm::literal, CommSimilarityForm::snr_difference}) {
        const auto s = comm_similarity(g, {}, form);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(s.at(i, k), s.at(k, i));
    }
}

TEST(DataSimilarity, Examples) {
    const std::vector<int> both{0, 1};
    auto s = data_similarity(info_rows({{0.3, 0.1}, {0.3, 0.1}}), both, -5.0);
    EXPECT_EQ(s.at(0, 1), 0.0);
    s = data_similarity(info_rows({{0, 1}, {0, 0}}), both, -5.0);
    EXPECT_DOUBLE_EQ(s.at(0, 1), -1.0);
    EXPECT_DOUBLE_EQ(s.at(0, 0), -5.0);
    EXPECT_THROW(data_similarity(info_rows({{0, 1}}), std::vector<int>{}, -1.0), std::invalid_argument);
}

TEST(DataSimilarity, SwapPermutes) {
    const auto xi = info_rows({{0.1, 0.4}, {0.5, 0.0}, {0.2, 0.2}});
    const std::vector<int> a{0, 1, 2}, b{1, 0, 2};
    const auto sa = data_similarity(xi, a, std::nullopt), sb = data_similarity(xi, b, std::nullopt);
    EXPECT_EQ(sa.at(0, 2), sb.at(1, 2));
    EXPECT_EQ(sa.at(1, 2), sb.at(0, 2));
    EXPECT_EQ(sa.at(0, 1), sb.at(1, 0));
}

TEST(Ap, SinglePoint) {
    SimilarityMatrix s;
    s.n = 1;
    s.s = {-1.0};
    const auto r = ap_cluster(s);
    EXPECT_EQ(r.assignment.exemplar_of, std::vector<int>{0});
}

TEST(Ap, TwoIdenticalPoints) {
    SimilarityMatrix s;
    s.n = 2;
    s.s = {-1.0, 0.0, 0.0, -1.0};
    const auto r = ap_cluster(s);
    ASSERT_EQ(r.assignment.clusters.size(), 1u);
    EXPECT_EQ(r.assignment.exemplar_of[0], r.assignment.exemplar_of[1]);
}

TEST(Ap, DominantPreferencesGiveSingletons) {
    auto s = points_similarity({{0, 0}, {1, 0}, {0, 1}, {5, 5}});
    for (std::size_t i = 0; i < 4; ++i) s.at(i, i) = 100.0;
    const auto r = ap_cluster(s);
    EXPECT_EQ(r.assignment.clusters.size(), 4u);
}

TEST(Ap, SeparatedBlobs) {
    const auto s = points_similarity({{0, 0}, {0.2, 0.1}, {0.1, 0.3}, {10, 10}, {10.2, 9.9}, {9.8, 10.1}});
    const auto r = ap_cluster(s);
    ASSERT_EQ(r.assignment.clusters.size(), 2u);
    EXPECT_EQ(r.assignment.exemplar_of[0], r.assignment.exemplar_of[2]);
    EXPECT_EQ(r.assignment.exemplar_of[3], r.assignment.exemplar_of[5]);
    EXPECT_NE(r.assignment.exemplar_of[0], r.assignment.exemplar_of[3]);
}

TEST(Ap, NonConvergenceEscalatesDamping) {
    const auto s = points_similarity({{0, 0}, {1, 0}, {4, 1}, {5, 3}, {9, 9}});
    ApConfig cfg;
    cfg.max_iter = 10;
    cfg.stable_window = 10;
    const auto r = ap_cluster(s, cfg);
    EXPECT_FALSE(r.converged);
    EXPECT_DOUBLE_EQ(r.damping, kMaxDamping);
    EXPECT_EQ(r.iterations, 60);
    r.assignment.check();
}

TEST(Ap, InvariantToCommonShift) {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.below(9);
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < n; ++i) pts.emplace_back(rng.uniform(0, 10), rng.uniform(0, 10));
        const auto s = points_similarity(pts);
        auto shifted = s;
        const double c = rng.uniform(-50, 50);
        for (auto& v : shifted.s) v += c;
        EXPECT_EQ(ap_cluster(s).assignment.exemplar_of, ap_cluster(shifted).assignment.exemplar_of);
    }
}

TEST(Ap, UniformMatrixIsOneCluster) {
    SimilarityMatrix s;
    s.n = 4;
    s.s.assign(16, -2.0);
    const auto r = ap_cluster(s);
    EXPECT_EQ(r.assignment.clusters.size(), 1u);
}

TEST(Ap, RejectsBadConfig) {
    SimilarityMatrix s;
    s.n = 2;
    s.s = {-1, 0, 0, -1};
    EXPECT_THROW(ap_cluster(s, ApConfig{0.4, 100, 10}), std::invalid_argument);
    EXPECT_THROW(ap_cluster(s, ApConfig{0.5, 5, 10}), std::invalid_argument);
}

TEST(Ap, MostlyMatchesExhaustiveSearch) {
    Rng rng(21);
    int matches = 0;
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 3 + rng.below(6);
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < n; ++i) pts.emplace_back(rng.uniform(0, 10), rng.uniform(0, 10));
        const auto s = points_similarity(pts);
        const auto ap = ap_cluster(s);
        const auto best = oracle::exhaustive_exemplars(s);
        const double net = net_similarity(s, ap.assignment);
        EXPECT_LE(net, best.net_similarity + 1e-9);
        if (best.net_similarity - net <= 1e-9 * std::max(1.0, std::fabs(best.net_similarity))) ++matches;
    }
    EXPECT_GE(matches, 36);
}

TEST(NetSimilarity, CountsPreferencesAndMembers) {
    const auto s = points_similarity({{0, 0}, {1, 0}, {3, 0}});
    ClusterAssignment a;
    a.exemplar_of = {0, 0, 2};
    a.rebuild_clusters();
    EXPECT_DOUBLE_EQ(net_similarity(s, a), s.at(0, 0) + s.at(1, 0) + s.at(2, 2));
}

TEST(Stragglers, TieGoesToLowerLeader) {
    Geometry g;
    g.device_positions = {{-1, 0, 0}, {1, 0, 0}, {0, 0, 0}};
    ClusterAssignment a;
    a.exemplar_of = {0, 1, -1};
    a.rebuild_clusters();
    const std::vector<int> lone{2};
    const auto r = assign_stragglers(lone, a, g);
    EXPECT_EQ(r.exemplar_of[2], 0);
}

TEST(Stragglers, ArgMinDistance) {
    Geometry g;
    g.device_positions = {{5, 0, 0}, {3, 0, 0}, {9, 0, 0}, {0, 0, 0}, {9, 0, 0}};
    ClusterAssignment a;
    a.exemplar_of = {0, 1, 2, -1, -1};
    a.rebuild_clusters();
    const std::vector<int> lone{3, 4};
    const auto r = assign_stragglers(lone, a, g);
    EXPECT_EQ(r.exemplar_of[3], 1);
    EXPECT_EQ(r.exemplar_of[4], 2);
    r.check();
}

TEST(DualSegment, SingleDevice) {
    SnrMatrix g;
    g.n = 1;
    g.gamma = {1.0};
    Geometry geo;
    geo.device_positions = {{0, 0, 0}};
    const auto r = dual_segment_cluster(g, info_rows({{0.1, 0.2}}), geo, ClusteringConfig{});
    ASSERT_EQ(r.final.clusters.size(), 1u);
    EXPECT_EQ(r.final.clusters[0].leader, 0);
}

TEST(DualSegment, IdenticalDataKeepsPrimaryClusters) {
    SnrMatrix g;
    g.n = 6;
    g.gamma.assign(36, 0.0);
    const double snrs[6] = {10, 10.5, 9.5, 40, 41, 39};
    for (std::size_t i = 0; i < 6; ++i) g.gamma[i * 6 + i] = snrs[i];
    Geometry geo;
    for (std::size_t i = 0; i < 6; ++i) geo.device_positions.push_back({static_cast<double>(i), 0, 0});
    const auto xi = info_rows(std::vector<std::vector<double>>(6, {0.05, 0.05}));
    const auto r = dual_segment_cluster(g, xi, geo, ClusteringConfig{});
    ASSERT_EQ(r.primary.clusters.size(), 2u);
    EXPECT_EQ(r.final.clusters.size(), r.primary.clusters.size());
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(r.final.clusters[c].members, r.primary.clusters[c].members);
}

TEST(DualSegment, TwoRegionsTwoShardTypes) {
    const int K = 30;
    auto geo = two_region_layout(K, 7);
    const auto ch = build_channels(geo, ChannelParams{}, 8);
    const std::vector<double> pw(K, 0.5);
    const auto gamma = snr_matrix(ch, pw, 3.98e-15);
    // Even devices hold labels {0,1}, odd devices labels {2,3}, of a 4-label set.
    LabeledDataset data;
    data.feature_dim = 1;
    data.label_count = 4;
    std::vector<DevicePartition> parts(K);
    for (int k = 0; k < K; ++k) {
        parts[static_cast<std::size_t>(k)].device_id = k;
        for (int j = 0; j < 20; ++j) {
            parts[static_cast<std::size_t>(k)].sample_indices.push_back(data.labels.size());
            data.labels.push_back((k % 2) * 2 + j % 2);
            data.features.push_back(0.0);
        }
    }
    const auto xi = info_matrix(parts, data);
    const auto r = dual_segment_cluster(gamma, xi, geo, ClusteringConfig{});
    ASSERT_GE(r.final.clusters.size(), 2u);
    double population = 0.0, within = 0.0;
    int pop_pairs = 0, within_pairs = 0;
    for (int a = 0; a < K; ++a)
        for (int b = a + 1; b < K; ++b) {
            const double w = wasserstein_1d(label_pmf(parts[static_cast<std::size_t>(a)].sample_indices, data),
                                            label_pmf(parts[static_cast<std::size_t>(b)].sample_indices, data));
            population += w;
            ++pop_pairs;
            if (r.final.exemplar_of[static_cast<std::size_t>(a)] == r.final.exemplar_of[static_cast<std::size_t>(b)]) {
                within += w;
                ++within_pairs;
            }
        }
    ASSERT_GT(within_pairs, 0);
    EXPECT_LT(within / within_pairs, population / pop_pairs);
}

TEST(Assignment, CheckRejectsBrokenPartition) {
    ClusterAssignment a;
    a.exemplar_of = {0, 0, 1};
    a.rebuild_clusters();
    EXPECT_THROW(a.check(), std::logic_error);
}

TEST(Singletons, OnePerDevice) {
    const auto a = singleton_clusters(4);
    ASSERT_EQ(a.clusters.size(), 4u);
    for (int i = 0; i < 4; ++i) EXPECT_EQ(a.exemplar_of[static_cast<std::size_t>(i)], i);
}
