// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "camu/conv_bound.hpp"
#include "camu/dual_cluster.hpp"
#include "camu/experiment.hpp"
#include "camu/fed_camu.hpp"
#include "camu/hetero_data.hpp"
#include "camu/ppo_alloc.hpp"
#include "camu/rng.hpp"
#include "oracles.hpp"

using namespace camu;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
    bool pass = false;
    std::string detail;
};

LabelPMF random_pmf(Rng& rng, std::size_t labels) {
    LabelPMF p;
    p.mass.assign(labels, 0.0);
    const std::size_t atoms = 1 + rng.below(std::min<std::size_t>(5, labels));
    double total = 0.0;
    for (std::size_t a = 0; a < atoms; ++a) {
        const double w = rng.uniform(0.05, 1.0);
        p.mass[rng.below(labels)] += w;
        total += w;
    }
    for (auto& m : p.mass) m /= total;
    return p;
}

Verdict wasserstein_oracle() {
    const auto t0 = Clock::now();
    Rng rng(101);
    double worst = 0.0;
    for (int i = 0; i < 500; ++i) {
        const std::size_t labels = 2 + rng.below(9);
        const auto a = random_pmf(rng, labels), b = random_pmf(rng, labels);
        const double lp = oracle::transport_lp(a.mass, b.mass, oracle::index_cost(labels));
        worst = std::max(worst, std::fabs(wasserstein_1d(a, b) - lp));
    }
    const double secs = since(t0);
    char buf[160];
    std::snprintf(buf, sizeof buf, "500 pairs, max |W - LP| = %.3g, %.2f s", worst, secs);
    return {worst <= 1e-9 && secs < 10.0, buf};
}

Verdict ap_oracle() {
    Rng rng(202);
    int matches = 0, raw_matches = 0;
    double worst_gap = 0.0;
    std::ostringstream log;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(7);
        SimilarityMatrix s;
        s.n = n;
        s.s.assign(n * n, 0.0);
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < n; ++i) pts.emplace_back(rng.uniform(0, 10), rng.uniform(0, 10));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < n; ++k) {
                if (i == k) continue;
                const double dx = pts[i].first - pts[k].first, dy = pts[i].second - pts[k].second;
                s.at(i, k) = -(dx * dx + dy * dy);
            }
        const double med = median_off_diagonal(s);
        for (std::size_t i = 0; i < n; ++i) s.at(i, i) = med;

        const auto ap = ap_cluster(s);
        const auto best = oracle::exhaustive_exemplars(s);
        const double net = net_similarity(s, ap.assignment);
        const double scale = std::max(1.0, std::fabs(best.net_similarity));
        ApConfig raw_cfg;
        raw_cfg.refine = false;
        raw_matches += best.net_similarity - net_similarity(s, ap_cluster(s, raw_cfg).assignment) <= 1e-9 * scale;
        if (best.net_similarity - net <= 1e-9 * scale) {
            ++matches;
            continue;
        }
        const double gap = (best.net_similarity - net) / std::fabs(best.net_similarity);
        worst_gap = std::max(worst_gap, gap);
        char buf[200];
        std::snprintf(buf, sizeof buf, "    mismatch trial %d n=%zu: ap %.6g exhaustive %.6g gap %.2f%%\n", trial, n, net,
                      best.net_similarity, 100.0 * gap);
        log << buf;
    }
    std::printf("%s", log.str().c_str());
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d/100 optimal, worst mismatch gap %.2f%% (without exemplar refinement %d/100)",
                  matches, 100.0 * worst_gap, raw_matches);
    return {matches >= 90 && worst_gap <= 0.05, buf};
}

Verdict gradient_check() {
    const auto t0 = Clock::now();
    BlobSpec b;
    const auto data = make_gaussian_blobs(b, 5, 6);
    const ConvexModelSpec spec{b.feature_dim, b.label_count, 0.01};
    Rng rng(303);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
        ModelParams m = spec.zeros();
        for (auto& v : m.values) v = rng.normal(0.0, 0.5);
        DevicePartition p{0, {}};
        const std::size_t count = 1 + rng.below(8);
        for (std::size_t j = 0; j < count; ++j) p.sample_indices.push_back(rng.below(data.size()));
        const auto g = local_gradient(spec, m, p, data, 1.0, 0);
        const auto fd = oracle::numeric_gradient(
            [&](const std::vector<double>& x) { return softmax_loss(spec, ModelParams{x}, data, p.sample_indices); },
            m.values, 1e-5);
        worst = std::max(worst, oracle::relative_error(g, fd));
    }
    const double secs = since(t0);
    char buf[160];
    std::snprintf(buf, sizeof buf, "50 points, max relative error %.3g, %.2f s", worst, secs);
    return {worst <= 1e-5 && secs < 5.0, buf};
}

Verdict bound_soundness_check() {
    const auto t0 = Clock::now();
    BoundCheckConfig cfg;
    int sound = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto r = bound_soundness(cfg, seed);
        sound += r.sound ? 1 : 0;
        double worst_ratio = 0.0;
        for (std::size_t t = 1; t < r.bound.size(); ++t)
            worst_ratio = std::max(worst_ratio, r.measured[t] / r.bound[t]);
        std::printf("    seed %2llu: A=%.6f violations=%d max measured/bound=%.4f (%.1f s)\n",
                    static_cast<unsigned long long>(seed), r.report.a_factor, r.violations, worst_ratio, r.seconds);
    }
    const double secs = since(t0);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d/20 scenario seeds sound for t <= 50, %.1f s", sound, secs);
    return {sound >= 19 && secs < 600.0, buf};
}

Verdict lr_condition() {
    Rng rng(505);
    int exceptions = 0;
    for (int i = 0; i < 100; ++i) {
        ConvergenceParams p;
        p.mu = rng.uniform(0.01, 1.0);
        p.lipschitz = p.mu * (1.0 + rng.uniform(0.0, 20.0));
        p.delta = 1.0 + rng.uniform(0.0, 3.0);
        p.delta_c = {1.0 + rng.uniform(0.0, 3.0)};
        p.gc = {1.0};
        const std::size_t k = 1 + rng.below(8);
        std::vector<double> w(k);
        double s = 0.0;
        for (auto& v : w) s += (v = rng.uniform(0.05, 1.0));
        for (auto& v : w) v /= s;
        p.gkc = {w};
        p.n_per_cluster = {1 + static_cast<int>(rng.below(5))};
        p.powers = {rng.uniform(0.05, 1.0)};
        p.h_norms = {rng.uniform(1e-3, 1e-1)};
        p.sigma_n = 1e-3;
        p.lr = rng.uniform(1e-6, 2.0) * lr_max(p);
        exceptions += (a_factor(p) < 1.0) != (p.lr < lr_max(p)) ? 1 : 0;
    }
    return {exceptions == 0, std::to_string(exceptions) + " exceptions in 100 parameterizations"};
}

/// Trend experiments share runs through this cache.
class Runs {
public:
    explicit Runs(ExperimentConfig base) : base_(std::move(base)) {}

    const RunOutput& get(const std::string& scenario, double mix, std::uint64_t seed,
                         std::optional<double> threshold = std::nullopt) {
        std::ostringstream key;
        key << scenario << '|' << mix << '|' << seed << '|' << (threshold ? *threshold : -1.0);
        auto it = cache_.find(key.str());
        if (it == cache_.end()) {
            auto cfg = base_;
            cfg.partition.non_iid_fraction = mix;
            auto runs = run_scenario_seed(cfg, scenario, seed, threshold);
            it = cache_.emplace(key.str(), std::move(runs.front())).first;
        }
        return it->second;
    }

    const ExperimentConfig& base() const { return base_; }

private:
    ExperimentConfig base_;
    std::map<std::string, RunOutput> cache_;
};

Verdict camu_trend(Runs& runs) {
    const auto& thresholds = runs.base().camu.thresholds;
    int wins = 0;
    bool monotone = true;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const double a = runs.get("config3_camu", 1.0, seed, thresholds.front()).history.final_accuracy();
        const double b = runs.get("benchmark2_capacity_multi", 1.0, seed).history.final_accuracy();
        wins += a >= b ? 1 : 0;
        std::vector<int> multi;
        for (double t : thresholds)
            multi.push_back(runs.get("config3_camu", 1.0, seed, t).summary.at("multi_round_clusters").get<int>());
        for (std::size_t i = 1; i < multi.size(); ++i) monotone &= multi[i] <= multi[i - 1];
        std::printf("    seed %2llu: config3 %.4f benchmark2 %.4f multi-round clusters", static_cast<unsigned long long>(seed),
                    a, b);
        for (int m : multi) std::printf(" %d", m);
        std::printf("\n");
    }
    return {wins >= 8 && monotone,
            "config3 >= benchmark2 on " + std::to_string(wins) + "/10 seeds; threshold monotonicity " +
                (monotone ? "holds" : "violated")};
}

Verdict clustering_trend(Runs& runs) {
    bool pass = true;
    std::string detail;
    for (double mix : {0.5, 0.75, 1.0}) {
        int wins = 0;
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            const double a = runs.get("config1_cluster", mix, seed).history.final_accuracy();
            const double b = runs.get("benchmark1_fedavg", mix, seed).history.final_accuracy();
            wins += a >= b ? 1 : 0;
            std::printf("    mix %.2f seed %2llu: config1 %.4f benchmark1 %.4f\n", mix,
                        static_cast<unsigned long long>(seed), a, b);
        }
        pass &= wins >= 8;
        char buf[64];
        std::snprintf(buf, sizeof buf, "%smix %.0f%%: %d/10", detail.empty() ? "" : "; ", 100 * mix, wins);
        detail += buf;
    }
    return {pass, "config1 >= benchmark1 " + detail};
}

double gap_of(const nlohmann::json& action) {
    const auto& g = action.at("gap");
    return g.is_number() ? g.get<double>() : std::numeric_limits<double>::infinity();
}

Verdict optimizer_efficacy(Runs& runs) {
    int acc_wins = 0, rs_wins = 0;
    bool gap_ok = true, time_ok = true;
    double slowest = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto& r = runs.get("config5_ppo_joint", 1.0, seed);
        const auto& alloc = r.summary.at("allocation");
        const double chosen = gap_of(alloc.at("chosen"));
        const double uniform = gap_of(alloc.at("uniform"));
        const double random = gap_of(alloc.at("random_search"));
        const bool feasible = alloc.at("feasible").get<bool>();
        const double secs = r.summary.at("timing").at("optimizer_wall_seconds").get<double>();
        slowest = std::max(slowest, secs);
        gap_ok &= feasible && chosen <= uniform;
        time_ok &= secs < 300.0;
        rs_wins += feasible && chosen < random ? 1 : 0;
        const double a = r.history.final_accuracy();
        const double b = runs.get("benchmark2_capacity_multi", 1.0, seed).history.final_accuracy();
        acc_wins += a >= b ? 1 : 0;
        std::printf("    seed %2llu: gap ppo %.6g uniform %.6g random %.6g; accuracy config5 %.4f benchmark2 %.4f; %.1f s\n",
                    static_cast<unsigned long long>(seed), chosen, uniform, random, a, b, secs);
    }
    char buf[240];
    std::snprintf(buf, sizeof buf,
                  "GAP <= uniform on all seeds: %s; accuracy >= benchmark2 %d/10; beats random search %d/10; "
                  "slowest optimizer %.1f s",
                  gap_ok ? "yes" : "no", acc_wins, rs_wins, slowest);
    return {gap_ok && acc_wins >= 7 && rs_wins >= 8 && time_ok, buf};
}

Verdict energy_accounting(Runs& runs) {
    bool pass = true;
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto& r = runs.get("config5_ppo_joint", 1.0, seed);
        auto cfg = runs.base();
        cfg.partition.non_iid_fraction = 1.0;
        const auto env = build_environment(cfg, seed);
        const auto plan = plan_clusters(env, cfg, Grouping::dual_cluster);
        const auto em = energy_model(env, cfg, plan);
        const auto& chosen = r.summary.at("allocation").at("chosen");
        AllocationAction a;
        a.powers = chosen.at("powers").get<std::vector<double>>();
        a.extra_updates = chosen.at("extra_updates").get<std::vector<int>>();
        std::vector<double> gains;
        for (double h : plan.h_norms) gains.push_back(h * h);
        const double e = energy_per_round(a, gains, cfg.channel.noise_power_w, em, plan.members);
        const double p_max = r.summary.at("allocation").at("p_max").get<double>();
        pass &= a.power_sum_sq() <= p_max * (1.0 + 1e-12);
        double cumulative = 0.0;
        for (std::size_t t = 1; t < r.history.rounds.size(); ++t) {
            worst = std::max(worst, std::fabs(r.history.rounds[t].energy_j - e));
            cumulative += r.history.rounds[t].energy_j;
        }
        const double e_total = r.summary.at("allocation").at("e_total_j").get<double>();
        const double overshoot = std::max(0.0, e - e_total);
        pass &= r.summary.at("allocation").at("energy_overshoot_j").get<double>() == overshoot;
        pass &= r.summary.at("cumulative_energy_j").get<double>() == cumulative;
        std::printf("    seed %2llu: sum p^2 %.4f <= %.4f, energy/round %.6g J, budget %.6g J, overshoot %.3g J\n",
                    static_cast<unsigned long long>(seed), a.power_sum_sq(), p_max, e, e_total, overshoot);
    }
    pass &= worst <= 1e-9;
    char buf[160];
    std::snprintf(buf, sizeof buf, "power and energy accounting checked on 10 runs, max per-round mismatch %.3g J", worst);
    return {pass, buf};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Verdict determinism(const ExperimentConfig& base) {
    const auto root = fs::temp_directory_path() / "camu_acceptance_determinism";
    fs::remove_all(root);
    int files = 0, mismatches = 0;
    for (const auto& name : scenario_names()) {
        auto cfg = base;
        cfg.seed = 3;
        auto bundle = run_scenario(cfg, name);
        const auto first = root / name / "first";
        write_bundle(bundle, first);

        std::ifstream min(first / "manifest.json");
        nlohmann::json mj;
        min >> mj;
        const auto manifest = manifest_from_json(mj);
        const auto regen = config_from_json(manifest.config);
        if (config_hash(regen) != manifest.config_hash) ++mismatches;
        auto again = run_scenario(regen, regen.scenario);
        const auto second = root / name / "second";
        write_bundle(again, second);
        for (const auto& f : manifest.outputs) {
            if (f.size() < 4 || f.substr(f.size() - 4) != ".csv") continue;
            ++files;
            if (slurp(first / f) != slurp(second / f)) {
                ++mismatches;
                std::printf("    %s/%s differs\n", name.c_str(), f.c_str());
            }
        }
    }
    fs::remove_all(root);
    return {mismatches == 0 && files > 0,
            std::to_string(files) + " CSV files over " + std::to_string(scenario_names().size()) +
                " scenarios regenerated from manifests, " + std::to_string(mismatches) + " mismatches"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CAMU acceptance suite"};
    std::vector<int> only;
    std::string preset_name = "desk";
    app.add_option("--only", only, "Run only these criteria (1-10)");
    app.add_option("--preset", preset_name, "Configuration preset for the trend criteria");
    CLI11_PARSE(app, argc, argv);

    auto base = preset(preset_name);
    auto trend = base;
    trend.bound.enabled = false;
    Runs runs(trend);

    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"Wasserstein vs transport LP", wasserstein_oracle},
        {"affinity propagation vs exhaustive search", ap_oracle},
        {"gradient vs finite differences", gradient_check},
        {"bound soundness", bound_soundness_check},
        {"learning-rate condition", lr_condition},
        {"CAMU trend", [&] { return camu_trend(runs); }},
        {"clustering benefit trend", [&] { return clustering_trend(runs); }},
        {"optimizer efficacy", [&] { return optimizer_efficacy(runs); }},
        {"energy accounting", [&] { return energy_accounting(runs); }},
        {"determinism from manifests", [&] { return determinism(base); }},
    };

    int failed = 0;
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        std::printf("criterion %d: %s\n", id, criteria[i].first.c_str());
        std::fflush(stdout);
        const auto c0 = Clock::now();
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        failed += v.pass ? 0 : 1;
        std::printf("%s criterion %d (%s): %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                    v.detail.c_str(), since(c0));
        std::fflush(stdout);
    }
    std::printf("%d criteria failed, total %.1f s\n", failed, since(t0));
    return failed == 0 ? 0 : 1;
}
