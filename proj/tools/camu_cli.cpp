#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "camu/experiment.hpp"
#include "camu/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode {
    kOk = 0,
    kFailure = 1,
    kConfigError = 2,
    kDiverged = 3,
    kInfeasible = 4,
};

struct CommonOptions {
    std::string config;
    std::string preset = "desk";
    std::optional<std::uint64_t> seed;
    std::optional<int> repeats;
    std::string out = "out";
};

void add_common(CLI::App* app, CommonOptions& o, bool with_repeats = false) {
    app->add_option("--config", o.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    app->add_option("--preset", o.preset, "Preset used when no config is given (desk, paper)");
    app->add_option("--seed", o.seed, "Master seed override");
    if (with_repeats) app->add_option("--repeats", o.repeats, "Number of consecutive seeds");
    app->add_option("--out", o.out, "Output directory");
}

camu::ExperimentConfig load(const CommonOptions& o) {
    camu::ExperimentConfig cfg = o.config.empty() ? camu::preset(o.preset) : camu::load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.repeats) cfg.repeats = *o.repeats;
    cfg.validate();
    return cfg;
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

int finish_bundle(camu::Bundle& bundle, const fs::path& out, bool plots) {
    const auto files = camu::write_bundle(bundle, out);
    if (plots) {
        try {
            camu::emit_plots(bundle, out);
        } catch (const std::exception& e) {
            std::cerr << "warning: plots skipped: " << e.what() << '\n';
        }
    }
    bool diverged = false;
    for (const auto& run : bundle.runs) {
        std::printf("%-40s seed=%-6llu acc=%.4f loss=%.4f energy/round=%.4g J\n",
                    (run.scenario + (run.variant.empty() ? "" : " " + run.variant)).c_str(),
                    static_cast<unsigned long long>(run.seed), run.history.final_accuracy(),
                    run.history.final_loss(), run.summary.value("energy_per_round_j", 0.0));
        if (run.history.diverged) {
            std::cerr << run.stem() << ": " << run.history.diagnostic << '\n';
            diverged = true;
        }
        if (run.summary.contains("allocation") && !run.summary["allocation"]["feasible"].get<bool>()) {
            std::cerr << run.stem() << ": no feasible allocation found\n";
            return kInfeasible;
        }
    }
    std::printf("wrote %zu files to %s (config %s)\n", files.size(), out.string().c_str(),
                bundle.manifest.config_hash.substr(0, 12).c_str());
    return diverged ? kDiverged : kOk;
}

int cmd_cluster(const CommonOptions& o) {
    const auto cfg = load(o);
    const auto env = camu::build_environment(cfg, cfg.seed);
    const auto plan = camu::plan_clusters(env, cfg, camu::Grouping::dual_cluster);
    fs::create_directories(o.out);
    std::vector<int> leaders;
    std::vector<double> wass, logc;
    for (const auto& c : plan.clusters.clusters) leaders.push_back(c.leader);
    for (const auto& p : plan.profiles) {
        wass.push_back(p.wasserstein_to_global);
        logc.push_back(p.log_contribution);
    }
    std::vector<std::vector<int>> primary;
    for (const auto& c : plan.dual->primary.clusters) primary.push_back(c.members);
    write_json(fs::path(o.out) / "clusters.json",
               json{{"seed", cfg.seed},
                    {"leaders", leaders},
                    {"members", plan.members},
                    {"primary_members", primary},
                    {"stragglers", plan.dual->stragglers},
                    {"primary_iterations", plan.dual->primary_iterations},
                    {"secondary_iterations", plan.dual->secondary_iterations},
                    {"degenerate", plan.dual->degenerate},
                    {"cluster_weights", plan.gc},
                    {"wasserstein", wass},
                    {"log_contribution", logc},
                    {"capacities", plan.capacities}});
    std::ofstream ch(fs::path(o.out) / "channels.csv");
    camu::write_channels_csv(ch, env.channels);
    std::printf("%zu primary clusters, %zu final clusters, %zu stragglers\n", primary.size(), plan.size(),
                plan.dual->stragglers.size());
    for (std::size_t c = 0; c < plan.size(); ++c)
        std::printf("  cluster %zu leader %d size %zu G_c=%.4f W=%.4f\n", c, leaders[c], plan.members[c].size(),
                    plan.gc[c], wass[c]);
    return kOk;
}

int cmd_scenario(const CommonOptions& o, const std::string& name, const std::string& manifest, bool plots) {
    camu::ExperimentConfig cfg;
    std::string scenario = name;
    if (!manifest.empty()) {
        std::ifstream in(manifest);
        if (!in) throw camu::ConfigError("cannot open manifest " + manifest);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw camu::ConfigError(std::string("manifest is not valid JSON: ") + e.what());
        }
        const auto m = camu::manifest_from_json(j);
        cfg = camu::config_from_json(m.config);
        if (camu::config_hash(cfg) != m.config_hash)
            throw camu::ConfigError("manifest config does not match its recorded hash");
        if (scenario.empty()) scenario = cfg.scenario;
    } else {
        cfg = load(o);
        if (scenario.empty()) scenario = cfg.scenario;
    }
    auto bundle = camu::run_scenario(cfg, scenario);
    return finish_bundle(bundle, o.out, plots);
}

int cmd_bound(const CommonOptions& o, camu::BoundCheckConfig bc, int scenarios) {
    const std::uint64_t seed = o.seed.value_or(1);
    fs::create_directories(o.out);
    std::ofstream csv(fs::path(o.out) / "bound_check.csv");
    csv << "seed,round,bound,measured_gap\n";
    json runs = json::array();
    int sound = 0;
    for (int s = 0; s < scenarios; ++s) {
        const auto r = camu::bound_soundness(bc, seed + static_cast<std::uint64_t>(s));
        sound += r.sound ? 1 : 0;
        char buf[128];
        for (std::size_t t = 0; t < r.bound.size(); ++t) {
            std::snprintf(buf, sizeof buf, "%llu,%zu,%.17g,%.17g\n", static_cast<unsigned long long>(r.seed), t,
                          r.bound[t], r.measured[t]);
            csv << buf;
        }
        json rep;
        camu::to_json(rep, r.report);
        runs.push_back(json{{"seed", r.seed},
                            {"sound", r.sound},
                            {"violations", r.violations},
                            {"mu", r.params.mu},
                            {"lipschitz", r.params.lipschitz},
                            {"delta", r.params.delta},
                            {"delta_c", r.params.delta_c},
                            {"report", rep}});
        std::printf("seed %-4llu A=%.6f delta=%.3f violations=%d %s\n", static_cast<unsigned long long>(r.seed),
                    r.report.a_factor, r.params.delta, r.violations, r.sound ? "sound" : "VIOLATED");
    }
    write_json(fs::path(o.out) / "bound_check.json",
               json{{"scenarios", scenarios}, {"sound", sound}, {"runs", runs}});
    std::printf("bound held on %d/%d scenario seeds\n", sound, scenarios);
    return kOk;
}

int cmd_optimize(const CommonOptions& o, bool fixed_power) {
    const auto cfg = load(o);
    const auto env = camu::build_environment(cfg, cfg.seed);
    const auto plan = camu::plan_clusters(env, cfg, camu::Grouping::dual_cluster);
    const auto prob = camu::allocation_problem(env, cfg, plan, fixed_power);
    const auto res = camu::optimize(prob, cfg.optimizer.ppo, camu::derive_seed(cfg.seed, {9}));
    const auto uniform = camu::uniform_allocation(prob);
    const auto ueval = camu::evaluate(prob, uniform);
    fs::create_directories(o.out);
    {
        std::ofstream lc(fs::path(o.out) / "learning_curve.csv");
        lc << "episode,mean_reward,mean_ratio,clip_fraction,critic_loss\n";
        for (std::size_t e = 0; e < res.episode_rewards.size(); ++e) {
            const auto& d = res.diagnostics[e];
            char buf[160];
            std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", e, res.episode_rewards[e], d.mean_ratio,
                          d.clip_fraction, d.critic_loss);
            lc << buf;
        }
    }
    auto gap_json = [](const camu::Evaluation& e) { return e.gap ? json(*e.gap) : json("inf"); };
    const auto cx = camu::complexity_report(cfg.optimizer.ppo, res.nets.param_count(), prob.clusters(),
                                            res.wall_seconds);
    write_json(fs::path(o.out) / "allocation.json",
               json{{"powers", res.best.powers},
                    {"extra_updates", res.best.extra_updates},
                    {"gap", gap_json(res.best_eval)},
                    {"energy_j", res.best_eval.energy},
                    {"feasible", res.feasible},
                    {"uniform_gap", gap_json(ueval)},
                    {"uniform_energy_j", ueval.energy},
                    {"e_total_j", prob.energy.e_total_j},
                    {"p_max", prob.energy.p_max},
                    {"mask", prob.mask},
                    {"evaluations", res.evaluations},
                    {"complexity",
                     {{"weights", cx.weights},
                      {"per_iteration", cx.per_iteration},
                      {"total", cx.total},
                      {"wall_seconds", cx.wall_seconds}}}});
    camu::save_checkpoint((fs::path(o.out) / "policy.bin").string(), res.nets);
    std::printf("gap %.6g (uniform %.6g), energy %.6g J of %.6g J, %ld evaluations in %.2f s\n",
                res.best_eval.objective(), ueval.objective(), res.best_eval.energy, prob.energy.e_total_j,
                res.evaluations, res.wall_seconds);
    return res.feasible ? kOk : kInfeasible;
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& out) {
    std::vector<camu::Bundle> bundles;
    for (const auto& d : dirs) bundles.push_back(camu::read_bundle(d));
    const auto rows = camu::compare_runs(bundles);
    std::cout << camu::comparison_table(rows);
    if (!out.empty()) {
        fs::create_directories(out);
        std::ofstream csv(fs::path(out) / "comparison.csv");
        camu::write_comparison_csv(csv, rows);
    }
    return kOk;
}

int cmd_plots(const std::string& dir) {
    const auto bundle = camu::read_bundle(dir);
    const auto files = camu::emit_plots(bundle, dir);
    std::printf("wrote %zu plots to %s\n", files.size(), dir.c_str());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cluster-aware wireless federated learning simulator"};
    app.require_subcommand(1);

    CommonOptions common;
    bool plots = true;

    auto* cluster = app.add_subcommand("cluster", "Cluster devices and report the result");
    add_common(cluster, common);

    auto* train = app.add_subcommand("train", "Run the scenario named in the config");
    add_common(train, common, true);
    train->add_flag("!--no-plots", plots, "Skip SVG plots");

    std::string scenario_name, manifest;
    auto* scenario = app.add_subcommand("scenario", "Run a named scenario");
    scenario->add_option("name", scenario_name, "Scenario name, e.g. config3_camu or config3_camu:5000");
    scenario->add_option("--manifest", manifest, "Regenerate from a run manifest")->check(CLI::ExistingFile);
    add_common(scenario, common, true);
    scenario->add_flag("!--no-plots", plots, "Skip SVG plots");

    camu::BoundCheckConfig bound_cfg;
    int bound_scenarios = 20;
    auto* bound = app.add_subcommand("bound", "Check the convergence bound on the reference scenario");
    bound->add_option("--seed", common.seed, "First scenario seed");
    bound->add_option("--out", common.out, "Output directory");
    bound->add_option("--scenarios", bound_scenarios, "Scenario seeds")->check(CLI::PositiveNumber);
    bound->add_option("--noise-seeds", bound_cfg.noise_seeds, "Noise seeds per scenario")->check(CLI::PositiveNumber);
    bound->add_option("--rounds", bound_cfg.rounds, "Global rounds")->check(CLI::PositiveNumber);
    bound->add_option("--lr", bound_cfg.lr, "Learning rate");
    bound->add_option("--reference-steps", bound_cfg.reference_steps, "Steps for the reference optimum");

    bool fixed_power = false;
    auto* optimize = app.add_subcommand("optimize", "Jointly allocate transmit power and local updates");
    add_common(optimize, common);
    optimize->add_flag("--fixed-power", fixed_power, "Optimize update counts only");

    std::vector<std::string> compare_dirs;
    std::string compare_out;
    auto* compare = app.add_subcommand("compare", "Paired comparison of output bundles");
    compare->add_option("bundles", compare_dirs, "Bundle directories")->required()->expected(2, -1);
    compare->add_option("--out", compare_out, "Directory for comparison.csv");

    std::string plot_dir;
    auto* plot = app.add_subcommand("plots", "Render SVG plots for a bundle");
    plot->add_option("bundle", plot_dir, "Bundle directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*cluster) return cmd_cluster(common);
        if (*train) return cmd_scenario(common, "", "", plots);
        if (*scenario) return cmd_scenario(common, scenario_name, manifest, plots);
        if (*bound) return cmd_bound(common, bound_cfg, bound_scenarios);
        if (*optimize) return cmd_optimize(common, fixed_power);
        if (*compare) return cmd_compare(compare_dirs, compare_out);
        if (*plot) return cmd_plots(plot_dir);
    } catch (const camu::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const camu::NonConvergentError& e) {
        std::cerr << "non-convergent: " << e.what() << '\n';
        return kDiverged;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kFailure;
}
