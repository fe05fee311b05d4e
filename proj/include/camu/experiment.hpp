#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "camu/conv_bound.hpp"
#include "camu/dual_cluster.hpp"
#include "camu/fed_camu.hpp"
#include "camu/hetero_data.hpp"
#include "camu/ppo_alloc.hpp"
#include "camu/radio_channel.hpp"
#include "json.hpp"

namespace camu {

/// Invalid or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DatasetConfig {
    std::string source = "synthetic";  // synthetic | idx
    BlobSpec blobs;
    std::size_t test_samples = 2000;
    std::string train_images, train_labels, test_images, test_labels;
    std::size_t max_samples = 0;
};

struct PartitionConfig {
    /// Fraction of devices holding label-limited data; 0 is IID, 1 is all Non-IID.
    double non_iid_fraction = 1.0;
    int labels_per_device = 2;
};

struct CamuConfig {
    /// Thresholds in the paper's contribution units.
    std::vector<double> thresholds{0.5e4, 1.0e4, 1.5e4};
    /// contribution_range: map [0, paper_range] affinely (in log space) onto the
    /// scenario's [min, max] cluster contribution; absolute: compare directly.
    std::string threshold_mode = "contribution_range";
    double paper_range = 2.0e4;
    int max_extra = 8;
};

struct TrainingConfig {
    double lr = 0.5e-3;
    double batch_fraction = 0.2;
    double l2_reg = 0.01;
    int rounds = 50;
    bool end_only_aggregation = false;
};

struct UplinkConfig {
    /// Unset: sqrt(channel noise power).
    std::optional<double> sigma_n;
    double leader_power_w = 0.5;
};

struct EnergyConfig {
    double bandwidth_hz = 1e6;
    double compute_power_w = 0.1;
    double cycles_lo = 1e4, cycles_hi = 1e5;
    double hz_lo = 1e9, hz_hi = 3e9;
    double bits_per_param = 32.0;
    /// Unset: C * leader_power^2, so equal leader powers are exactly feasible.
    std::optional<double> p_max;
    /// Unset: the per-round energy of the capacity-driven baseline.
    std::optional<double> e_total_j;
    double p_cap = 1.0;
};

struct OptimizerConfig {
    PpoConfig ppo;
    int random_search_samples = 200;
};

struct BoundConfig {
    bool enabled = true;
    int reference_steps = 2000;
};

struct ExperimentConfig {
    std::string scenario = "config1_cluster";
    std::uint64_t seed = 1;
    int repeats = 1;
    int devices = 30;
    Vec3 bs_position{-50.0, 0.0, 10.0};
    int bs_antennas = 15;
    ChannelParams channel;
    double clustering_power_w = 0.5;
    DatasetConfig dataset;
    PartitionConfig partition;
    ClusteringConfig clustering;
    CamuConfig camu;
    TrainingConfig training;
    UplinkConfig uplink;
    EnergyConfig energy;
    OptimizerConfig optimizer;
    BoundConfig bound;

    double sigma_n() const;
    void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);
/// SHA-256 (hex) of the canonical JSON form.
std::string config_hash(const ExperimentConfig& cfg);

/// Named presets: "paper" (the published setup verbatim) and "desk" (the
/// laptop-scale defaults used by the shipped scenarios).
ExperimentConfig preset(const std::string& name);
std::vector<std::string> preset_names();

const std::vector<std::string>& scenario_names();

/// Everything derived from the configuration and one seed before training.
struct Environment {
    std::uint64_t seed = 0;
    LabeledDataset train;
    LabeledDataset test;
    Geometry geometry;
    ChannelState channels;
    std::vector<DevicePartition> partitions;
    ComputeProfile compute;
};

Environment build_environment(const ExperimentConfig& cfg, std::uint64_t seed);

enum class Grouping {
    dual_cluster,           // two-stage affinity propagation, Wasserstein G_c
    singleton_wasserstein,  // one device per cluster, Wasserstein G_c
    singleton_size,         // one device per cluster, size-proportional weights
};

struct ClusterPlan {
    ClusterAssignment clusters;
    std::vector<ClusterDataProfile> profiles;
    std::vector<double> gc;
    std::vector<std::vector<double>> gkc;
    std::vector<double> h_norms;
    std::vector<int> capacities;
    std::vector<std::vector<int>> members;
    std::optional<DualClusterResult> dual;

    std::size_t size() const { return clusters.clusters.size(); }
};

ClusterPlan plan_clusters(const Environment& env, const ExperimentConfig& cfg, Grouping grouping);

/// Log-space threshold for a paper-unit threshold under the configured mode.
double scaled_log_threshold(const ExperimentConfig& cfg, const ClusterPlan& plan, double paper_threshold);

EnergyModel energy_model(const Environment& env, const ExperimentConfig& cfg, const ClusterPlan& plan);

TrainingSetup training_setup(const Environment& env, const ExperimentConfig& cfg, const ClusterPlan& plan,
                             std::vector<int> passes, std::vector<double> powers, std::uint64_t seed);

struct BoundTrace {
    std::vector<double> curve;     // t = 1..T
    std::vector<double> measured;  // F(w^t) - F*, t = 0..T
    double f0_gap = 0.0;
    BoundReport report;
};

struct RunOutput {
    std::string scenario;
    std::string variant;
    std::uint64_t seed = 0;
    TrainingHistory history;
    nlohmann::json summary;
    std::optional<BoundTrace> bound;

    std::string stem() const;
};

/// Builds the joint power/update allocation problem on a clustered plan.
/// `fixed_power` pins every power to the leader power and opens every gate.
AllocationProblem allocation_problem(const Environment& env, const ExperimentConfig& cfg, const ClusterPlan& plan,
                                     bool fixed_power);

/// Runs one scenario for one seed. `variant_threshold` selects a single
/// config3 threshold; otherwise config3 sweeps all thresholds.
std::vector<RunOutput> run_scenario_seed(const ExperimentConfig& cfg, const std::string& scenario, std::uint64_t seed,
                                         std::optional<double> variant_threshold = std::nullopt);

struct RunManifest {
    std::string config_hash;
    std::string version;
    nlohmann::json config;
    std::vector<std::string> outputs;
    double wall_seconds = 0.0;
    nlohmann::json seeds;
};

nlohmann::json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

struct Bundle {
    std::string scenario;
    std::vector<RunOutput> runs;
    RunManifest manifest;
};

/// Parses "config3_camu(5000)" / "config3_camu:5000" into a scenario and threshold.
std::pair<std::string, std::optional<double>> parse_scenario_name(const std::string& name);

Bundle run_scenario(const ExperimentConfig& cfg, const std::string& name);
/// Writes history/bound CSVs, summary.json and manifest.json; returns the written paths.
std::vector<std::filesystem::path> write_bundle(Bundle& bundle, const std::filesystem::path& dir);
Bundle read_bundle(const std::filesystem::path& dir);

struct Comparison {
    std::string a, b;
    int pairs = 0;
    double mean_accuracy_delta = 0.0;
    double mean_loss_delta = 0.0;
    int wins = 0, losses = 0, ties = 0;
    double sign_test_p = 1.0;
    std::vector<std::uint64_t> seeds;
    std::vector<double> accuracy_deltas;
    std::vector<double> loss_deltas;
};

/// Two-sided exact binomial sign test on wins vs losses (ties dropped).
double sign_test_p_value(int wins, int losses);

/// Paired by (variant, seed); throws ConfigError if the bundles do not share a protocol.
Comparison compare_bundles(const Bundle& a, const Bundle& b);
std::vector<Comparison> compare_runs(const std::vector<Bundle>& bundles);
void write_comparison_csv(std::ostream& out, const std::vector<Comparison>& rows);
std::string comparison_table(const std::vector<Comparison>& rows);

/// The strongly convex reference scenario for checking the bound empirically:
/// fixed contiguous clusters over label-limited devices, full-batch local steps.
struct BoundCheckConfig {
    int devices = 12;
    int clusters = 3;
    int labels = 5;
    std::size_t feature_dim = 10;
    std::size_t samples = 600;
    double separation = 3.0;
    int labels_per_device = 2;
    double l2_reg = 0.1;
    double lr = 0.05;
    double batch_fraction = 1.0;
    std::vector<int> passes{1, 2, 3};
    double power_w = 0.5;
    double noise_power_w = 3.98e-15;
    int rounds = 50;
    int noise_seeds = 20;
    int reference_steps = 10000;
};

struct BoundCheckResult {
    std::uint64_t seed = 0;
    std::vector<double> bound;     // t = 0..T, bound[0] = F0 gap
    std::vector<double> measured;  // mean over noise seeds of F(w^t) - F*, t = 0..T
    int violations = 0;            // rounds with measured > bound
    bool sound = false;
    ConvergenceParams params;
    BoundReport report;
    double seconds = 0.0;
};

BoundCheckResult bound_soundness(const BoundCheckConfig& cfg, std::uint64_t seed);

/// Loss/accuracy and bound-overlay SVGs for every run. Throws before writing
/// anything if a history is empty.
std::vector<std::filesystem::path> emit_plots(const Bundle& bundle, const std::filesystem::path& dir);

}  // namespace camu
