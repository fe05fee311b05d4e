#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "camu/experiment.hpp"
#include "camu/plots.hpp"

using namespace camu;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
    auto cfg = preset("desk");
    cfg.devices = 10;
    cfg.dataset.blobs.samples = 500;
    cfg.dataset.blobs.feature_dim = 6;
    cfg.dataset.blobs.label_count = 4;
    cfg.dataset.test_samples = 200;
    cfg.training.rounds = 6;
    cfg.bound.reference_steps = 200;
    cfg.optimizer.ppo.episodes = 3;
    cfg.optimizer.ppo.trajectories = 2;
    cfg.optimizer.ppo.steps_per_episode = 3;
    cfg.optimizer.ppo.hidden = 8;
    cfg.optimizer.random_search_samples = 10;
    return cfg;
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("camu_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST(Config, HashIgnoresKeyOrderAndFormatting) {
    const auto a = nlohmann::json::parse(R"({"seed": 3, "training": {"lr": 0.1, "rounds": 7}})");
    const auto b = nlohmann::json::parse(R"({"training": {"rounds": 7,   "lr": 0.10}, "seed": 3})");
    EXPECT_EQ(config_hash(config_from_json(a)), config_hash(config_from_json(b)));
}

TEST(Config, HashTracksMeaningfulFields) {
    const auto base = tiny_config();
    const auto h = config_hash(base);
    EXPECT_EQ(h.size(), 64u);
    EXPECT_EQ(config_hash(config_from_json(config_to_json(base))), h);
    auto c = base;
    c.training.lr *= 2;
    EXPECT_NE(config_hash(c), h);
    c = base;
    c.seed += 1;
    EXPECT_NE(config_hash(c), h);
    c = base;
    c.clustering.ap.refine = false;
    EXPECT_NE(config_hash(c), h);
    c = base;
    c.uplink.sigma_n = base.sigma_n();
    EXPECT_EQ(config_hash(c), h);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"trainig": {}})")), ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"training": {"lr": "fast"}})")), ConfigError);
    auto c = tiny_config();
    c.training.batch_fraction = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_config();
    c.dataset.source = "idx";
    c.dataset.train_images = "/nonexistent/images";
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(preset("laptop"), ConfigError);
}

TEST(Config, Presets) {
    const auto paper = preset("paper");
    EXPECT_EQ(paper.devices, 30);
    EXPECT_EQ(paper.bs_antennas, 15);
    EXPECT_DOUBLE_EQ(paper.channel.noise_power_w, 1e-4);
    EXPECT_DOUBLE_EQ(paper.training.lr, 0.5e-3);
    EXPECT_DOUBLE_EQ(paper.training.batch_fraction, 0.2);
    const auto desk = preset("desk");
    EXPECT_LT(desk.channel.noise_power_w, paper.channel.noise_power_w);
    EXPECT_NO_THROW(desk.validate());
}

TEST(Scenario, NamesAndErrors) {
    EXPECT_EQ(scenario_names().size(), 8u);
    const auto [base, thr] = parse_scenario_name("config3_camu(5000)");
    EXPECT_EQ(base, "config3_camu");
    ASSERT_TRUE(thr.has_value());
    EXPECT_DOUBLE_EQ(*thr, 5000.0);
    EXPECT_EQ(parse_scenario_name("config3_camu:1e4").second.value(), 1e4);
    try {
        parse_scenario_name("config9_magic");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("benchmark2_capacity_multi"), std::string::npos);
    }
    EXPECT_THROW(parse_scenario_name("config1_cluster(5)"), ConfigError);
    EXPECT_THROW(run_scenario(tiny_config(), "nope"), ConfigError);
}

TEST(Scenario, Config3SweepsThresholdsMonotonically) {
    const auto b = run_scenario(tiny_config(), "config3_camu");
    ASSERT_EQ(b.runs.size(), 3u);
    int prev = 1 << 30;
    for (const auto& r : b.runs) {
        const int multi = r.summary.at("multi_round_clusters").get<int>();
        EXPECT_LE(multi, prev);
        prev = multi;
        const auto gate = r.summary.at("gate").get<std::vector<bool>>();
        for (std::size_t c = 0; c < gate.size(); ++c)
            if (!gate[c])
                for (const auto& p : r.history.executed_passes) EXPECT_EQ(p[c], 1);
    }
}

TEST(Scenario, FedAvgMatchesCentralizedOnIid) {
    auto cfg = tiny_config();
    cfg.partition.non_iid_fraction = 0.0;
    cfg.uplink.sigma_n = 0.0;
    cfg.training.rounds = 30;
    cfg.bound.enabled = false;
    const auto env = build_environment(cfg, 5);
    const auto runs = run_scenario_seed(cfg, "benchmark1_fedavg", 5);
    ASSERT_EQ(runs.size(), 1u);

    TrainingSetup central;
    central.train = &env.train;
    central.test = &env.test;
    central.model = ConvexModelSpec{env.train.feature_dim, env.train.label_count, cfg.training.l2_reg};
    DevicePartition all{0, {}};
    for (const auto& p : env.partitions) all.sample_indices.insert(all.sample_indices.end(), p.sample_indices.begin(),
                                                                   p.sample_indices.end());
    central.partitions = {all};
    central.clusters.exemplar_of = {0};
    central.clusters.rebuild_clusters();
    central.cluster_weights = {1.0};
    central.member_weights = {{1.0}};
    central.passes = {1};
    central.powers = {1.0};
    central.h_norms = {1.0};
    central.lr = cfg.training.lr;
    central.batch_fraction = cfg.training.batch_fraction;
    central.rounds = cfg.training.rounds;
    central.seed = 9;
    const auto ref = run_training(central);
    EXPECT_NEAR(runs[0].history.final_accuracy(), ref.final_accuracy(), 0.01);
}

TEST(Bundle, RoundTripCompareAndRegenerate) {
    auto cfg = tiny_config();
    cfg.repeats = 2;
    auto a = run_scenario(cfg, "benchmark1_fedavg");
    auto b = run_scenario(cfg, "config1_cluster");
    auto c = run_scenario(cfg, "benchmark2_capacity_multi");
    const auto da = scratch("a"), db = scratch("b"), dc = scratch("c");
    write_bundle(a, da);
    write_bundle(b, db);
    write_bundle(c, dc);

    const auto ra = read_bundle(da);
    ASSERT_EQ(ra.runs.size(), 2u);
    auto named = cfg;
    named.scenario = "benchmark1_fedavg";
    EXPECT_EQ(ra.manifest.config_hash, config_hash(named));

    const auto self = compare_bundles(ra, ra);
    EXPECT_EQ(self.pairs, 2);
    EXPECT_EQ(self.ties, 2);
    EXPECT_EQ(self.mean_accuracy_delta, 0.0);
    EXPECT_EQ(self.mean_loss_delta, 0.0);

    const auto rows = compare_runs({ra, read_bundle(db), read_bundle(dc)});
    EXPECT_EQ(rows.size(), 3u);
    std::ostringstream csv;
    write_comparison_csv(csv, rows);
    const auto text = csv.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
    EXPECT_FALSE(comparison_table(rows).empty());

    auto other = cfg;
    other.devices = 12;
    auto d = run_scenario(other, "benchmark1_fedavg");
    const auto dd = scratch("d");
    write_bundle(d, dd);
    EXPECT_THROW(compare_runs({ra, read_bundle(dd)}), ConfigError);

    const auto regen_cfg = config_from_json(ra.manifest.config);
    EXPECT_EQ(config_hash(regen_cfg), ra.manifest.config_hash);
    auto again = run_scenario(regen_cfg, "benchmark1_fedavg");
    const auto dr = scratch("regen");
    write_bundle(again, dr);
    for (const auto& f : ra.manifest.outputs)
        if (f.size() > 4 && f.substr(f.size() - 4) == ".csv") EXPECT_EQ(slurp(da / f), slurp(dr / f)) << f;
    EXPECT_EQ(slurp(da / "summary.json"), slurp(dr / "summary.json"));

    for (const auto& p : {da, db, dc, dd, dr}) fs::remove_all(p);
}

TEST(Bundle, OptimizerScenarioReportsAllocation) {
    auto b = run_scenario(tiny_config(), "config5_ppo_joint");
    ASSERT_EQ(b.runs.size(), 1u);
    const auto& s = b.runs[0].summary;
    const auto& alloc = s.at("allocation");
    EXPECT_LE(s.at("power_sum_sq").get<double>(), alloc.at("p_max").get<double>() * (1 + 1e-12));
    EXPECT_TRUE(alloc.contains("uniform"));
    EXPECT_TRUE(alloc.contains("random_search"));
    EXPECT_EQ(alloc.at("episode_rewards").size(), 3u);
}

TEST(Plots, EmptyHistoryWritesNothing) {
    Bundle b;
    RunOutput r;
    r.scenario = "config1_cluster";
    b.runs.push_back(r);
    const auto dir = scratch("plots_empty");
    EXPECT_THROW(emit_plots(b, dir), std::invalid_argument);
    EXPECT_FALSE(fs::exists(dir));
    EXPECT_THROW(render_svg(LineChart{}), std::invalid_argument);
}

TEST(Plots, BoundOverlayAndAxisSpan) {
    auto cfg = tiny_config();
    cfg.training.rounds = 50;
    auto b = run_scenario(cfg, "config4_single_round");
    const auto dir = scratch("plots");
    const auto files = emit_plots(b, dir);
    ASSERT_EQ(files.size(), 3u);
    const auto bound_svg = slurp(files[2]);
    EXPECT_NE(bound_svg.find("bound"), std::string::npos);
    EXPECT_NE(bound_svg.find("measured gap"), std::string::npos);
    EXPECT_NE(slurp(files[0]).find(">50<"), std::string::npos);
    fs::remove_all(dir);
}

TEST(BoundCheck, SmallScenarioIsSound) {
    BoundCheckConfig cfg;
    cfg.noise_seeds = 3;
    cfg.rounds = 20;
    cfg.reference_steps = 2000;
    const auto r = bound_soundness(cfg, 1);
    EXPECT_EQ(r.bound.size(), 21u);
    EXPECT_EQ(r.measured.size(), 21u);
    EXPECT_TRUE(r.report.converges);
    EXPECT_TRUE(r.sound) << r.violations << " violations";
}

TEST(SignTest, Values) {
    EXPECT_DOUBLE_EQ(sign_test_p_value(0, 0), 1.0);
    EXPECT_NEAR(sign_test_p_value(8, 2), 0.109375, 1e-12);
    EXPECT_NEAR(sign_test_p_value(10, 0), 2.0 / 1024.0, 1e-12);
}
