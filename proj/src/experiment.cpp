#include "camu/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "camu/plots.hpp"
#include "camu/rng.hpp"

namespace camu {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "camu 1.0.0";

// Per-stage seed tags.
enum : std::uint64_t {
    kCenters = 1,
    kTrainSamples = 2,
    kTestSamples = 3,
    kPartition = 4,
    kGeometry = 5,
    kChannel = 6,
    kCompute = 7,
    kTraining = 8,
    kOptimizer = 9,
    kRandomSearch = 10,
};

/// Reads fields of one JSON object and rejects keys nobody asked for.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
    }
    ~Section() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key)) throw ConfigError("unknown key " + path_ + "." + key);
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    template <typename T>
    void read(const std::string& key, T& out) {
        if (!has(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(path_ + "." + key + ": " + e.what());
        }
    }

    void read_optional(const std::string& key, std::optional<double>& out) {
        if (!has(key)) return;
        const auto& v = j_.at(key);
        if (v.is_null()) {
            out.reset();
        } else if (v.is_number()) {
            out = v.get<double>();
        } else {
            throw ConfigError(path_ + "." + key + " must be a number or null");
        }
    }

    Section sub(const std::string& key) {
        seen_.insert(key);
        static const json empty = json::object();
        return Section(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string fading_name(Fading f) { return f == Fading::rayleigh ? "rayleigh" : "none"; }

Fading parse_fading(const std::string& s) {
    if (s == "none") return Fading::none;
    if (s == "rayleigh") return Fading::rayleigh;
    throw ConfigError("channel.fading must be 'none' or 'rayleigh'");
}

std::string comm_form_name(CommSimilarityForm f) {
    return f == CommSimilarityForm::literal ? "literal" : "snr_difference";
}

CommSimilarityForm parse_comm_form(const std::string& s) {
    if (s == "literal") return CommSimilarityForm::literal;
    if (s == "snr_difference") return CommSimilarityForm::snr_difference;
    throw ConfigError("clustering.comm_form must be 'literal' or 'snr_difference'");
}

std::string format_threshold(double t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", t);
    return buf;
}

std::vector<std::size_t> all_indices(const std::vector<DevicePartition>& parts) {
    std::vector<std::size_t> all;
    for (const auto& p : parts) all.insert(all.end(), p.sample_indices.begin(), p.sample_indices.end());
    return all;
}

}  // namespace

double ExperimentConfig::sigma_n() const {
    return uplink.sigma_n ? *uplink.sigma_n : std::sqrt(channel.noise_power_w);
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    parse_scenario_name(scenario);
    if (repeats < 1) fail("repeats must be at least 1");
    if (devices < 1) fail("devices must be at least 1");
    if (bs_antennas < 1) fail("bs_antennas must be at least 1");
    try {
        channel.validate();
    } catch (const std::invalid_argument& e) {
        fail(std::string("channel: ") + e.what());
    }
    if (!(clustering_power_w > 0.0)) fail("clustering.device_power_w must be positive");
    if (dataset.source == "idx") {
        for (const auto* p : {&dataset.train_images, &dataset.train_labels, &dataset.test_images, &dataset.test_labels})
            if (p->empty() || !fs::exists(*p)) fail("dataset file not found: '" + *p + "'");
    } else if (dataset.source == "synthetic") {
        if (dataset.blobs.label_count < 2 || dataset.blobs.feature_dim < 1 || dataset.blobs.samples < 1)
            fail("synthetic dataset needs at least 2 labels, 1 feature and 1 sample");
        if (dataset.test_samples < 1) fail("dataset.test_samples must be positive");
    } else {
        fail("dataset.source must be 'synthetic' or 'idx'");
    }
    if (!(partition.non_iid_fraction >= 0.0 && partition.non_iid_fraction <= 1.0))
        fail("partition.non_iid_fraction must lie in [0, 1]");
    if (partition.labels_per_device < 1) fail("partition.labels_per_device must be positive");
    if (camu.thresholds.empty()) fail("camu.thresholds must not be empty");
    if (camu.threshold_mode != "contribution_range" && camu.threshold_mode != "absolute")
        fail("camu.threshold_mode must be 'contribution_range' or 'absolute'");
    if (!(camu.paper_range > 0.0)) fail("camu.paper_range must be positive");
    if (camu.max_extra < 0) fail("camu.max_extra must be nonnegative");
    if (!(training.lr > 0.0)) fail("training.lr must be positive");
    if (!(training.batch_fraction > 0.0 && training.batch_fraction <= 1.0))
        fail("training.batch_fraction must lie in (0, 1]");
    if (!(training.l2_reg > 0.0)) fail("training.l2_reg must be positive");
    if (training.rounds < 1) fail("training.rounds must be positive");
    if (!(sigma_n() >= 0.0)) fail("uplink.sigma_n must be nonnegative");
    if (!(uplink.leader_power_w > 0.0)) fail("uplink.leader_power_w must be positive");
    if (!(energy.bandwidth_hz > 0.0) || !(energy.compute_power_w > 0.0) || !(energy.bits_per_param > 0.0))
        fail("energy parameters must be positive");
    if (!(energy.cycles_lo > 0.0 && energy.cycles_lo <= energy.cycles_hi && energy.hz_lo > 0.0 &&
          energy.hz_lo <= energy.hz_hi))
        fail("energy compute ranges must be positive and ordered");
    if (energy.p_max && !(*energy.p_max > 0.0)) fail("energy.p_max must be positive");
    if (energy.e_total_j && !(*energy.e_total_j > 0.0)) fail("energy.e_total_j must be positive");
    if (!(energy.p_cap > 0.0)) fail("energy.p_cap must be positive");
    try {
        optimizer.ppo.validate();
    } catch (const std::invalid_argument& e) {
        fail(std::string("optimizer: ") + e.what());
    }
    if (optimizer.random_search_samples < 1) fail("optimizer.random_search_samples must be positive");
    if (bound.reference_steps < 1) fail("bound.reference_steps must be positive");
}

ExperimentConfig preset(const std::string& name) {
    ExperimentConfig cfg;
    if (name == "paper") return cfg;
    if (name == "desk") {
        cfg.channel.noise_power_w = 3.98e-15;  // -174 dBm/Hz over 1 MHz
        cfg.training.lr = 0.2;
        return cfg;
    }
    throw ConfigError("unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() { return {"desk", "paper"}; }

ExperimentConfig config_from_json(const json& j) {
    Section root(j, "config");
    ExperimentConfig cfg;
    if (root.has("preset")) cfg = preset(j.at("preset").get<std::string>());
    root.read("scenario", cfg.scenario);
    if (!root.has("seed")) throw ConfigError("config.seed is mandatory");
    root.read("seed", cfg.seed);
    root.read("repeats", cfg.repeats);
    root.read("devices", cfg.devices);
    {
        auto g = root.sub("geometry");
        if (g.has("bs_position")) {
            std::vector<double> p;
            g.read("bs_position", p);
            if (p.size() != 3) throw ConfigError("geometry.bs_position needs three coordinates");
            cfg.bs_position = {p[0], p[1], p[2]};
        }
        g.read("bs_antennas", cfg.bs_antennas);
    }
    {
        auto c = root.sub("channel");
        c.read("bs_gain_dbi", cfg.channel.bs_gain_dbi);
        c.read("device_gain_dbi", cfg.channel.device_gain_dbi);
        c.read("carrier_hz", cfg.channel.carrier_hz);
        c.read("pathloss_exp", cfg.channel.pathloss_exp);
        c.read("noise_power_w", cfg.channel.noise_power_w);
        if (c.has("fading")) {
            std::string f;
            c.read("fading", f);
            cfg.channel.fading = parse_fading(f);
        }
    }
    {
        auto c = root.sub("clustering");
        c.read("device_power_w", cfg.clustering_power_w);
        if (c.has("comm_form")) {
            std::string f;
            c.read("comm_form", f);
            cfg.clustering.comm_form = parse_comm_form(f);
        }
        c.read_optional("comm_preference", cfg.clustering.comm_preference);
        c.read_optional("data_preference", cfg.clustering.data_preference);
        c.read("negate_data_similarity", cfg.clustering.negate_data_similarity);
        c.read("damping", cfg.clustering.ap.damping);
        c.read("max_iter", cfg.clustering.ap.max_iter);
        c.read("stable_window", cfg.clustering.ap.stable_window);
        c.read("refine", cfg.clustering.ap.refine);
    }
    {
        auto d = root.sub("dataset");
        d.read("source", cfg.dataset.source);
        d.read("labels", cfg.dataset.blobs.label_count);
        d.read("feature_dim", cfg.dataset.blobs.feature_dim);
        d.read("samples", cfg.dataset.blobs.samples);
        d.read("separation", cfg.dataset.blobs.separation);
        d.read("noise_std", cfg.dataset.blobs.noise_std);
        d.read("test_samples", cfg.dataset.test_samples);
        d.read("train_images", cfg.dataset.train_images);
        d.read("train_labels", cfg.dataset.train_labels);
        d.read("test_images", cfg.dataset.test_images);
        d.read("test_labels", cfg.dataset.test_labels);
        d.read("max_samples", cfg.dataset.max_samples);
    }
    {
        auto p = root.sub("partition");
        p.read("non_iid_fraction", cfg.partition.non_iid_fraction);
        p.read("labels_per_device", cfg.partition.labels_per_device);
    }
    {
        auto c = root.sub("camu");
        c.read("thresholds", cfg.camu.thresholds);
        c.read("threshold_mode", cfg.camu.threshold_mode);
        c.read("paper_range", cfg.camu.paper_range);
        c.read("max_extra", cfg.camu.max_extra);
    }
    {
        auto t = root.sub("training");
        t.read("lr", cfg.training.lr);
        t.read("batch_fraction", cfg.training.batch_fraction);
        t.read("l2_reg", cfg.training.l2_reg);
        t.read("rounds", cfg.training.rounds);
        t.read("end_only_aggregation", cfg.training.end_only_aggregation);
    }
    {
        auto u = root.sub("uplink");
        u.read_optional("sigma_n", cfg.uplink.sigma_n);
        u.read("leader_power_w", cfg.uplink.leader_power_w);
    }
    {
        auto e = root.sub("energy");
        e.read("bandwidth_hz", cfg.energy.bandwidth_hz);
        e.read("compute_power_w", cfg.energy.compute_power_w);
        e.read("cycles_lo", cfg.energy.cycles_lo);
        e.read("cycles_hi", cfg.energy.cycles_hi);
        e.read("hz_lo", cfg.energy.hz_lo);
        e.read("hz_hi", cfg.energy.hz_hi);
        e.read("bits_per_param", cfg.energy.bits_per_param);
        e.read_optional("p_max", cfg.energy.p_max);
        e.read_optional("e_total_j", cfg.energy.e_total_j);
        e.read("p_cap", cfg.energy.p_cap);
    }
    {
        auto o = root.sub("optimizer");
        auto& p = cfg.optimizer.ppo;
        o.read("clip_eps", p.clip_eps);
        o.read("discount", p.discount);
        o.read("penalty_alpha", p.penalty_alpha);
        o.read("epochs_per_update", p.epochs_per_update);
        o.read("trajectories", p.trajectories);
        o.read("episodes", p.episodes);
        o.read("steps_per_episode", p.steps_per_episode);
        o.read("actor_lr", p.actor_lr);
        o.read("critic_lr", p.critic_lr);
        o.read("hidden", p.hidden);
        o.read("init_log_std", p.init_log_std);
        o.read("normalize_advantages", p.normalize_advantages);
        o.read("minibatch", p.minibatch);
        o.read("random_search_samples", cfg.optimizer.random_search_samples);
    }
    {
        auto b = root.sub("bound");
        b.read("enabled", cfg.bound.enabled);
        b.read("reference_steps", cfg.bound.reference_steps);
    }
    cfg.validate();
    return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
    const auto& p = cfg.optimizer.ppo;
    return json{
        {"scenario", cfg.scenario},
        {"seed", cfg.seed},
        {"repeats", cfg.repeats},
        {"devices", cfg.devices},
        {"geometry",
         {{"bs_position", {cfg.bs_position.x, cfg.bs_position.y, cfg.bs_position.z}},
          {"bs_antennas", cfg.bs_antennas}}},
        {"channel",
         {{"bs_gain_dbi", cfg.channel.bs_gain_dbi},
          {"device_gain_dbi", cfg.channel.device_gain_dbi},
          {"carrier_hz", cfg.channel.carrier_hz},
          {"pathloss_exp", cfg.channel.pathloss_exp},
          {"noise_power_w", cfg.channel.noise_power_w},
          {"fading", fading_name(cfg.channel.fading)}}},
        {"clustering",
         {{"device_power_w", cfg.clustering_power_w},
          {"comm_form", comm_form_name(cfg.clustering.comm_form)},
          {"comm_preference", optional_json(cfg.clustering.comm_preference)},
          {"data_preference", optional_json(cfg.clustering.data_preference)},
          {"negate_data_similarity", cfg.clustering.negate_data_similarity},
          {"damping", cfg.clustering.ap.damping},
          {"max_iter", cfg.clustering.ap.max_iter},
          {"stable_window", cfg.clustering.ap.stable_window},
          {"refine", cfg.clustering.ap.refine}}},
        {"dataset",
         {{"source", cfg.dataset.source},
          {"labels", cfg.dataset.blobs.label_count},
          {"feature_dim", cfg.dataset.blobs.feature_dim},
          {"samples", cfg.dataset.blobs.samples},
          {"separation", cfg.dataset.blobs.separation},
          {"noise_std", cfg.dataset.blobs.noise_std},
          {"test_samples", cfg.dataset.test_samples},
          {"train_images", cfg.dataset.train_images},
          {"train_labels", cfg.dataset.train_labels},
          {"test_images", cfg.dataset.test_images},
          {"test_labels", cfg.dataset.test_labels},
          {"max_samples", cfg.dataset.max_samples}}},
        {"partition",
         {{"non_iid_fraction", cfg.partition.non_iid_fraction},
          {"labels_per_device", cfg.partition.labels_per_device}}},
        {"camu",
         {{"thresholds", cfg.camu.thresholds},
          {"threshold_mode", cfg.camu.threshold_mode},
          {"paper_range", cfg.camu.paper_range},
          {"max_extra", cfg.camu.max_extra}}},
        {"training",
         {{"lr", cfg.training.lr},
          {"batch_fraction", cfg.training.batch_fraction},
          {"l2_reg", cfg.training.l2_reg},
          {"rounds", cfg.training.rounds},
          {"end_only_aggregation", cfg.training.end_only_aggregation}}},
        {"uplink", {{"sigma_n", cfg.sigma_n()}, {"leader_power_w", cfg.uplink.leader_power_w}}},
        {"energy",
         {{"bandwidth_hz", cfg.energy.bandwidth_hz},
          {"compute_power_w", cfg.energy.compute_power_w},
          {"cycles_lo", cfg.energy.cycles_lo},
          {"cycles_hi", cfg.energy.cycles_hi},
          {"hz_lo", cfg.energy.hz_lo},
          {"hz_hi", cfg.energy.hz_hi},
          {"bits_per_param", cfg.energy.bits_per_param},
          {"p_max", optional_json(cfg.energy.p_max)},
          {"e_total_j", optional_json(cfg.energy.e_total_j)},
          {"p_cap", cfg.energy.p_cap}}},
        {"optimizer",
         {{"clip_eps", p.clip_eps},
          {"discount", p.discount},
          {"penalty_alpha", p.penalty_alpha},
          {"epochs_per_update", p.epochs_per_update},
          {"trajectories", p.trajectories},
          {"episodes", p.episodes},
          {"steps_per_episode", p.steps_per_episode},
          {"actor_lr", p.actor_lr},
          {"critic_lr", p.critic_lr},
          {"hidden", p.hidden},
          {"init_log_std", p.init_log_std},
          {"normalize_advantages", p.normalize_advantages},
          {"minibatch", p.minibatch},
          {"random_search_samples", cfg.optimizer.random_search_samples}}},
        {"bound", {{"enabled", cfg.bound.enabled}, {"reference_steps", cfg.bound.reference_steps}}},
    };
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string bytes = config_to_json(cfg).dump();
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 digest failed");
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        hex += buf;
    }
    return hex;
}

const std::vector<std::string>& scenario_names() {
    static const std::vector<std::string> names{
        "config1_cluster",       "config2_wasserstein_only", "benchmark1_fedavg",
        "config3_camu",          "config4_single_round",     "benchmark2_capacity_multi",
        "benchmark3_iters_only", "config5_ppo_joint",
    };
    return names;
}

std::pair<std::string, std::optional<double>> parse_scenario_name(const std::string& name) {
    std::string base = name;
    std::optional<double> threshold;
    std::string arg;
    if (const auto open = name.find('('); open != std::string::npos && name.back() == ')') {
        base = name.substr(0, open);
        arg = name.substr(open + 1, name.size() - open - 2);
    } else if (const auto colon = name.find(':'); colon != std::string::npos) {
        base = name.substr(0, colon);
        arg = name.substr(colon + 1);
    }
    const auto& names = scenario_names();
    if (std::find(names.begin(), names.end(), base) == names.end()) {
        std::string list;
        for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
        throw ConfigError("unknown scenario '" + name + "'; valid names: " + list);
    }
    if (!arg.empty()) {
        if (base != "config3_camu") throw ConfigError("only config3_camu takes a threshold argument");
        try {
            std::size_t used = 0;
            threshold = std::stod(arg, &used);
            if (used != arg.size()) throw std::invalid_argument(arg);
        } catch (const std::exception&) {
            throw ConfigError("bad threshold in scenario name '" + name + "'");
        }
    }
    return {base, threshold};
}

Environment build_environment(const ExperimentConfig& cfg, std::uint64_t seed) {
    Environment env;
    env.seed = seed;
    if (cfg.dataset.source == "idx") {
        env.train = read_idx(cfg.dataset.train_images, cfg.dataset.train_labels, cfg.dataset.max_samples);
        env.test = read_idx(cfg.dataset.test_images, cfg.dataset.test_labels, cfg.dataset.max_samples);
        env.test.label_count = env.train.label_count = std::max(env.train.label_count, env.test.label_count);
    } else {
        const auto centers = derive_seed(seed, {kCenters});
        env.train = make_gaussian_blobs(cfg.dataset.blobs, centers, derive_seed(seed, {kTrainSamples}));
        BlobSpec test_spec = cfg.dataset.blobs;
        test_spec.samples = cfg.dataset.test_samples;
        env.test = make_gaussian_blobs(test_spec, centers, derive_seed(seed, {kTestSamples}));
    }
    const int K = cfg.devices;
    const int non_iid = static_cast<int>(std::lround(cfg.partition.non_iid_fraction * K));
    PartitionScheme scheme = IidScheme{};
    if (non_iid == K)
        scheme = LabelLimitedScheme{cfg.partition.labels_per_device};
    else if (non_iid > 0)
        scheme = MixedScheme{K - non_iid, non_iid, cfg.partition.labels_per_device};
    env.partitions = partition_devices(env.train, scheme, K, derive_seed(seed, {kPartition}));
    env.geometry = two_region_layout(K, derive_seed(seed, {kGeometry}), cfg.bs_antennas);
    env.geometry.bs_position = cfg.bs_position;
    env.channels = build_channels(env.geometry, cfg.channel, derive_seed(seed, {kChannel}));
    env.compute = random_compute_profile(static_cast<std::size_t>(K), derive_seed(seed, {kCompute}),
                                         cfg.energy.cycles_lo, cfg.energy.cycles_hi, cfg.energy.hz_lo,
                                         cfg.energy.hz_hi);
    return env;
}

ClusterPlan plan_clusters(const Environment& env, const ExperimentConfig& cfg, Grouping grouping) {
    ClusterPlan plan;
    const std::size_t K = env.partitions.size();
    if (grouping == Grouping::dual_cluster) {
        const std::vector<double> powers(K, cfg.clustering_power_w);
        const auto gamma = snr_matrix(env.channels, powers, cfg.channel.noise_power_w);
        const auto xi = info_matrix(env.partitions, env.train);
        plan.dual = dual_segment_cluster(gamma, xi, env.geometry, cfg.clustering);
        plan.clusters = plan.dual->final;
    } else {
        plan.clusters = singleton_clusters(K);
    }
    for (const auto& c : plan.clusters.clusters) plan.members.push_back(c.members);
    plan.profiles = cluster_profiles(plan.members, env.partitions, env.train);
    if (grouping == Grouping::singleton_size) {
        plan.gc = intra_weights_gk(env.partitions);
    } else {
        plan.gc = cluster_weight_gc(plan.profiles);
    }
    for (const auto& c : plan.clusters.clusters) {
        std::vector<DevicePartition> parts;
        for (int k : c.members) parts.push_back(env.partitions[static_cast<std::size_t>(k)]);
        plan.gkc.push_back(intra_weights_gk(parts));
        plan.h_norms.push_back(std::sqrt(env.channels.bs_gain(static_cast<std::size_t>(c.leader))));
    }
    plan.capacities = cluster_capacities(plan.clusters, env.partitions, env.compute, cfg.training.batch_fraction,
                                         cfg.camu.max_extra);
    return plan;
}

double scaled_log_threshold(const ExperimentConfig& cfg, const ClusterPlan& plan, double paper_threshold) {
    if (cfg.camu.threshold_mode == "absolute")
        return paper_threshold > 0.0 ? std::log(paper_threshold) : -std::numeric_limits<double>::infinity();
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& p : plan.profiles) {
        lo = std::min(lo, p.log_contribution);
        hi = std::max(hi, p.log_contribution);
    }
    return lo + paper_threshold / cfg.camu.paper_range * (hi - lo);
}

EnergyModel energy_model(const Environment& env, const ExperimentConfig& cfg, const ClusterPlan& plan) {
    EnergyModel e;
    e.bandwidth_hz.assign(plan.size(), cfg.energy.bandwidth_hz);
    const ConvexModelSpec spec{env.train.feature_dim, env.train.label_count, cfg.training.l2_reg};
    e.model_bits = cfg.energy.bits_per_param * static_cast<double>(spec.param_count());
    e.cycles_per_sample = env.compute.cycles_per_sample;
    e.cpu_hz = env.compute.cpu_hz;
    e.compute_power_w = cfg.energy.compute_power_w;
    e.p_max = cfg.energy.p_max ? *cfg.energy.p_max
                               : static_cast<double>(plan.size()) * cfg.uplink.leader_power_w * cfg.uplink.leader_power_w;
    e.e_total_j = cfg.energy.e_total_j ? *cfg.energy.e_total_j : 1.0;
    return e;
}

TrainingSetup training_setup(const Environment& env, const ExperimentConfig& cfg, const ClusterPlan& plan,
                             std::vector<int> passes, std::vector<double> powers, std::uint64_t seed) {
    TrainingSetup s;
    s.train = &env.train;
    s.test = &env.test;
    s.model = ConvexModelSpec{env.train.feature_dim, env.train.label_count, cfg.training.l2_reg};
    s.partitions = env.partitions;
    s.clusters = plan.clusters;
    s.cluster_weights = plan.gc;
    s.member_weights = plan.gkc;
    s.passes = std::move(passes);
    s.powers = std::move(powers);
    s.h_norms = plan.h_norms;
    s.sigma_n = cfg.sigma_n();
    s.lr = cfg.training.lr;
    s.batch_fraction = cfg.training.batch_fraction;
    s.rounds = cfg.training.rounds;
    s.seed = seed;
    s.end_only_aggregation = cfg.training.end_only_aggregation;
    return s;
}

std::string RunOutput::stem() const {
    return scenario + (variant.empty() ? "" : "_" + variant) + "_seed" + std::to_string(seed);
}

namespace {

std::vector<double> leader_gains(const ClusterPlan& plan) {
    std::vector<double> g;
    for (double h : plan.h_norms) g.push_back(h * h);
    return g;
}

AllocationAction action_of(const std::vector<double>& powers, const std::vector<int>& passes) {
    AllocationAction a;
    a.powers = powers;
    for (int n : passes) a.extra_updates.push_back(n - 1);
    return a;
}

std::vector<int> capacity_passes(const ClusterPlan& plan) {
    std::vector<int> p;
    for (int c : plan.capacities) p.push_back(1 + c);
    return p;
}

/// Trains, measures the bound trace, and packs the summary.
RunOutput train_and_report(const Environment& env, const ExperimentConfig& cfg, const ClusterPlan& plan,
                           const std::string& scenario, const std::string& variant, std::vector<int> passes,
                           std::vector<double> powers, const std::vector<bool>& gate) {
    const auto energy = energy_model(env, cfg, plan);
    const auto action = action_of(powers, passes);
    const double e_round = energy_per_round(action, leader_gains(plan), cfg.channel.noise_power_w, energy, plan.members);

    auto setup = training_setup(env, cfg, plan, passes, powers, derive_seed(env.seed, {kTraining}));
    setup.energy_per_round_j = e_round;
    std::vector<ModelParams> starts;
    if (cfg.bound.enabled) setup.on_round_start = [&](int, const ModelParams& w) { starts.push_back(w); };

    RunOutput out;
    out.scenario = scenario;
    out.variant = variant;
    out.seed = env.seed;
    out.history = run_training(setup);

    double cumulative = 0.0;
    for (const auto& r : out.history.rounds) cumulative += r.energy_j;
    int multi = 0;
    for (int n : passes) multi += n > 1 ? 1 : 0;
    std::vector<double> log_contrib, wass;
    for (const auto& p : plan.profiles) {
        log_contrib.push_back(p.log_contribution);
        wass.push_back(p.wasserstein_to_global);
    }
    std::vector<int> leaders;
    for (const auto& c : plan.clusters.clusters) leaders.push_back(c.leader);

    out.summary = json{
        {"scenario", scenario},
        {"variant", variant},
        {"seed", env.seed},
        {"clusters", plan.size()},
        {"leaders", leaders},
        {"members", plan.members},
        {"cluster_weights", plan.gc},
        {"wasserstein", wass},
        {"log_contribution", log_contrib},
        {"capacities", plan.capacities},
        {"gate", gate},
        {"passes", passes},
        {"multi_round_clusters", multi},
        {"powers", powers},
        {"power_sum_sq", action.power_sum_sq()},
        {"energy_per_round_j", e_round},
        {"cumulative_energy_j", cumulative},
        {"rounds", static_cast<int>(out.history.rounds.size()) - 1},
        {"final_accuracy", out.history.final_accuracy()},
        {"final_loss", out.history.final_loss()},
        {"diverged", out.history.diverged},
        {"diagnostic", out.history.diagnostic},
    };

    if (cfg.bound.enabled && !out.history.diverged) {
        starts.push_back(out.history.final_model);
        WeightedObjective f;
        f.data = &env.train;
        f.spec = setup.model;
        f.partitions = env.partitions;
        f.device_weights = effective_device_weights(setup);
        const auto smooth = estimate_mu_l(setup.model, env.train, all_indices(env.partitions));
        DissimilarityTracker tracker(setup);
        for (std::size_t t = 0; t + 1 < starts.size(); ++t) tracker.observe(starts[t]);
        const auto ref = reference_optimum(f, smooth.lipschitz, cfg.bound.reference_steps);
        BoundTrace trace;
        for (const auto& w : starts) trace.measured.push_back(f.value(w) - ref.value);
        trace.f0_gap = std::max(0.0, trace.measured.front());
        const auto params = convergence_params(setup, smooth, tracker.delta(), tracker.delta_c());
        trace.report = bound_report(params, cfg.training.rounds, gate);
        trace.curve = bound_curve(params, trace.f0_gap, cfg.training.rounds);
        json report;
        to_json(report, trace.report);
        out.summary["bound"] = report;
        out.summary["bound"]["mu"] = smooth.mu;
        out.summary["bound"]["lipschitz"] = smooth.lipschitz;
        out.summary["bound"]["delta"] = tracker.delta();
        out.summary["bound"]["delta_c"] = tracker.delta_c();
        out.summary["bound"]["reference_value"] = ref.value;
        out.bound = std::move(trace);
    }
    return out;
}

json action_json(const AllocationAction& a, const Evaluation& e) {
    return json{
        {"powers", a.powers},
        {"extra_updates", a.extra_updates},
        {"power_sum_sq", a.power_sum_sq()},
        {"a_factor", e.a_factor},
        {"gap", e.gap ? json(*e.gap) : json("inf")},
        {"energy_j", e.energy},
        {"feasible", e.feasible},
    };
}

}  // namespace

AllocationProblem allocation_problem(const Environment& env, const ExperimentConfig& cfg, const ClusterPlan& plan,
                                     bool fixed_power) {
    const std::size_t C = plan.size();
    const double p0 = cfg.uplink.leader_power_w;
    AllocationProblem prob;
    prob.energy = energy_model(env, cfg, plan);
    prob.leader_gain = leader_gains(plan);
    prob.noise_w = cfg.channel.noise_power_w;
    prob.members = plan.members;
    prob.n_cap = cfg.camu.max_extra;
    prob.baseline_extra = plan.capacities;

    // The capacity-driven baseline: equal leader power, every cluster at capacity.
    const auto baseline_passes = capacity_passes(plan);
    const auto baseline = action_of(std::vector<double>(C, p0), baseline_passes);
    if (!cfg.energy.e_total_j)
        prob.energy.e_total_j = energy_per_round(baseline, prob.leader_gain, prob.noise_w, prob.energy, prob.members);

    if (fixed_power) {
        prob.p_cap = p0;
        prob.p_min = p0;
        prob.mask.assign(C, true);
        prob.energy.p_max = std::max(prob.energy.p_max, static_cast<double>(C) * p0 * p0);
    } else {
        prob.p_cap = cfg.energy.p_cap;
        prob.p_min = 0.0;
        std::vector<double> logc;
        for (const auto& p : plan.profiles) logc.push_back(p.log_contribution);
        const double thr = scaled_log_threshold(cfg, plan, cfg.camu.thresholds.front());
        prob.mask = camu_schedule(logc, thr, plan.capacities).mask();
    }

    // Bound constants measured along the baseline trajectory.
    auto setup = training_setup(env, cfg, plan, baseline_passes, std::vector<double>(C, p0),
                                derive_seed(env.seed, {kTraining}));
    DissimilarityTracker tracker(setup);
    setup.on_round_start = [&](int, const ModelParams& w) { tracker.observe(w); };
    run_training(setup);
    const auto smooth = estimate_mu_l(setup.model, env.train, all_indices(env.partitions));
    prob.base = convergence_params(setup, smooth, tracker.delta(), tracker.delta_c());
    prob.validate();
    return prob;
}

std::vector<RunOutput> run_scenario_seed(const ExperimentConfig& cfg, const std::string& scenario, std::uint64_t seed,
                                         std::optional<double> variant_threshold) {
    const auto env = build_environment(cfg, seed);
    const double p0 = cfg.uplink.leader_power_w;
    std::vector<RunOutput> runs;

    auto uniform_run = [&](Grouping g, bool capacity) {
        const auto plan = plan_clusters(env, cfg, g);
        const std::size_t C = plan.size();
        auto passes = capacity ? capacity_passes(plan) : std::vector<int>(C, 1);
        runs.push_back(train_and_report(env, cfg, plan, scenario, "", passes, std::vector<double>(C, p0),
                                        std::vector<bool>(C, capacity)));
    };

    if (scenario == "config1_cluster" || scenario == "config4_single_round") {
        uniform_run(Grouping::dual_cluster, false);
    } else if (scenario == "config2_wasserstein_only") {
        uniform_run(Grouping::singleton_wasserstein, false);
    } else if (scenario == "benchmark1_fedavg") {
        uniform_run(Grouping::singleton_size, false);
    } else if (scenario == "benchmark2_capacity_multi") {
        uniform_run(Grouping::dual_cluster, true);
    } else if (scenario == "config3_camu") {
        const auto plan = plan_clusters(env, cfg, Grouping::dual_cluster);
        std::vector<double> logc;
        for (const auto& p : plan.profiles) logc.push_back(p.log_contribution);
        const auto thresholds = variant_threshold ? std::vector<double>{*variant_threshold} : cfg.camu.thresholds;
        for (double t : thresholds) {
            const double thr = scaled_log_threshold(cfg, plan, t);
            const auto sched = camu_schedule(logc, thr, plan.capacities);
            auto run = train_and_report(env, cfg, plan, scenario, "theta" + format_threshold(t), sched.passes(),
                                        std::vector<double>(plan.size(), p0), sched.mask());
            run.summary["threshold"] = t;
            run.summary["log_threshold"] = thr;
            runs.push_back(std::move(run));
        }
    } else if (scenario == "config5_ppo_joint" || scenario == "benchmark3_iters_only") {
        const bool fixed = scenario == "benchmark3_iters_only";
        const auto plan = plan_clusters(env, cfg, Grouping::dual_cluster);
        const auto prob = allocation_problem(env, cfg, plan, fixed);
        const auto res = optimize(prob, cfg.optimizer.ppo, derive_seed(seed, {kOptimizer}));
        const auto uniform = uniform_allocation(prob);
        const auto uniform_eval = evaluate(prob, uniform);
        const auto rs = random_search(prob, cfg.optimizer.random_search_samples, derive_seed(seed, {kRandomSearch}));
        auto run = train_and_report(env, cfg, plan, scenario, "", res.best.passes(), res.best.powers, prob.mask);
        const auto cx = complexity_report(cfg.optimizer.ppo, res.nets.param_count(), plan.size(), res.wall_seconds);
        const double e_round = run.summary["energy_per_round_j"].get<double>();
        const double overshoot = std::max(0.0, e_round - prob.energy.e_total_j);
        run.summary["allocation"] = json{
            {"chosen", action_json(res.best, res.best_eval)},
            {"feasible", res.feasible},
            {"uniform", action_json(uniform, uniform_eval)},
            {"random_search", action_json(rs.best, rs.best_eval)},
            {"random_search_feasible", rs.feasible},
            {"e_total_j", prob.energy.e_total_j},
            {"p_max", prob.energy.p_max},
            {"energy_overshoot_j", overshoot},
            {"penalty", cfg.optimizer.ppo.penalty_alpha * overshoot},
            {"evaluations", res.evaluations},
            {"episode_rewards", res.episode_rewards},
            {"complexity",
             {{"weights", cx.weights}, {"per_iteration", cx.per_iteration}, {"total", cx.total}}},
        };
        run.summary["timing"] = json{{"optimizer_wall_seconds", res.wall_seconds}};
        runs.push_back(std::move(run));
    } else {
        throw ConfigError("unknown scenario '" + scenario + "'");
    }
    return runs;
}

json manifest_to_json(const RunManifest& m) {
    return json{{"config_hash", m.config_hash}, {"version", m.version}, {"config", m.config},
                {"outputs", m.outputs},         {"wall_seconds", m.wall_seconds}, {"seeds", m.seeds}};
}

RunManifest manifest_from_json(const json& j) {
    RunManifest m;
    try {
        m.config_hash = j.at("config_hash").get<std::string>();
        m.version = j.value("version", "");
        m.config = j.at("config");
        m.outputs = j.value("outputs", std::vector<std::string>{});
        m.wall_seconds = j.value("wall_seconds", 0.0);
        m.seeds = j.value("seeds", json::object());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed manifest: ") + e.what());
    }
    return m;
}

Bundle run_scenario(const ExperimentConfig& cfg_in, const std::string& name) {
    ExperimentConfig cfg = cfg_in;
    cfg.scenario = name;
    cfg.validate();
    const auto [base, threshold] = parse_scenario_name(name);
    const auto t0 = std::chrono::steady_clock::now();
    Bundle b;
    b.scenario = base;
    json seeds = json::array();
    for (int r = 0; r < cfg.repeats; ++r) {
        const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(r);
        auto runs = run_scenario_seed(cfg, base, seed, threshold);
        for (auto& run : runs) b.runs.push_back(std::move(run));
        seeds.push_back(json{{"seed", seed},
                             {"training", derive_seed(seed, {kTraining})},
                             {"partition", derive_seed(seed, {kPartition})},
                             {"geometry", derive_seed(seed, {kGeometry})},
                             {"channel", derive_seed(seed, {kChannel})},
                             {"compute", derive_seed(seed, {kCompute})},
                             {"optimizer", derive_seed(seed, {kOptimizer})}});
    }
    b.manifest.config = config_to_json(cfg);
    b.manifest.config_hash = config_hash(cfg);
    b.manifest.version = kVersion;
    b.manifest.seeds = seeds;
    b.manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return b;
}

namespace {

void write_bound_trace_csv(std::ostream& out, const BoundTrace& tr) {
    out << "round,bound,measured_gap\n";
    char buf[96];
    for (std::size_t t = 0; t < tr.measured.size(); ++t) {
        const double bound = t == 0 ? tr.f0_gap : tr.curve[t - 1];
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", t, bound, tr.measured[t]);
        out << buf;
    }
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

TrainingHistory read_history_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    TrainingHistory h;
    std::string line;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("# seed=", 0) == 0) {
            h.seed = std::stoull(line.substr(7));
            continue;
        }
        if (!header) {
            if (line.rfind("round,loss,accuracy", 0) != 0)
                throw std::runtime_error(path.string() + ": missing history columns");
            header = true;
            continue;
        }
        const auto f = split(line, ',');
        if (f.size() != 5) throw std::runtime_error(path.string() + ": malformed history row");
        RoundRecord r;
        r.round = std::stoi(f[0]);
        r.loss = std::stod(f[1]);
        r.accuracy = std::stod(f[2]);
        r.energy_j = std::stod(f[3]);
        if (!f[4].empty())
            for (const auto& p : split(f[4], '|')) r.passes.push_back(std::stoi(p));
        h.rounds.push_back(std::move(r));
    }
    if (!header) throw std::runtime_error(path.string() + ": missing history columns");
    return h;
}

std::optional<BoundTrace> read_bound_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    BoundTrace tr;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 3) throw std::runtime_error(path.string() + ": malformed bound row");
        const double bound = std::stod(f[1]);
        if (std::stoi(f[0]) == 0)
            tr.f0_gap = bound;
        else
            tr.curve.push_back(bound);
        tr.measured.push_back(std::stod(f[2]));
    }
    return tr;
}

}  // namespace

std::vector<fs::path> write_bundle(Bundle& bundle, const fs::path& dir) {
    fs::create_directories(dir);
    std::vector<fs::path> written;
    json summaries = json::array();
    bundle.manifest.outputs.clear();
    for (const auto& run : bundle.runs) {
        const auto hist = dir / (run.stem() + "_history.csv");
        {
            std::ofstream out(hist, std::ios::binary);
            write_history_csv(out, run.history);
        }
        written.push_back(hist);
        if (run.bound) {
            const auto bpath = dir / (run.stem() + "_bound.csv");
            std::ofstream out(bpath, std::ios::binary);
            write_bound_trace_csv(out, *run.bound);
            written.push_back(bpath);
        }
        summaries.push_back(run.summary);
    }
    const auto spath = dir / "summary.json";
    {
        std::ofstream out(spath, std::ios::binary);
        out << summaries.dump(2) << '\n';
    }
    written.push_back(spath);
    for (const auto& p : written) bundle.manifest.outputs.push_back(p.filename().string());
    const auto mpath = dir / "manifest.json";
    {
        std::ofstream out(mpath, std::ios::binary);
        out << manifest_to_json(bundle.manifest).dump(2) << '\n';
    }
    written.push_back(mpath);
    return written;
}

Bundle read_bundle(const fs::path& dir) {
    std::ifstream min(dir / "manifest.json");
    if (!min) throw ConfigError("no manifest.json in " + dir.string());
    std::ifstream sin(dir / "summary.json");
    if (!sin) throw ConfigError("no summary.json in " + dir.string());
    Bundle b;
    json mj, sj;
    try {
        min >> mj;
        sin >> sj;
    } catch (const json::exception& e) {
        throw ConfigError("unreadable bundle in " + dir.string() + ": " + e.what());
    }
    b.manifest = manifest_from_json(mj);
    b.scenario = parse_scenario_name(b.manifest.config.at("scenario").get<std::string>()).first;
    for (const auto& s : sj) {
        RunOutput run;
        run.scenario = s.at("scenario").get<std::string>();
        run.variant = s.at("variant").get<std::string>();
        run.seed = s.at("seed").get<std::uint64_t>();
        run.summary = s;
        run.history = read_history_csv(dir / (run.stem() + "_history.csv"));
        run.history.seed = run.seed;
        run.bound = read_bound_csv(dir / (run.stem() + "_bound.csv"));
        b.runs.push_back(std::move(run));
    }
    return b;
}

double sign_test_p_value(int wins, int losses) {
    const int n = wins + losses;
    if (n == 0) return 1.0;
    const int k = std::min(wins, losses);
    double tail = 0.0;
    for (int i = 0; i <= k; ++i) tail += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) -
                                                  n * std::log(2.0));
    return std::min(1.0, 2.0 * tail);
}

namespace {

json protocol_of(const RunManifest& m) {
    const auto& c = m.config;
    return json{{"dataset", c.at("dataset")}, {"partition", c.at("partition")}, {"devices", c.at("devices")},
                {"seed", c.at("seed")},       {"repeats", c.at("repeats")}};
}

std::string label_of(const RunOutput& r) { return r.scenario + (r.variant.empty() ? "" : "_" + r.variant); }

}  // namespace

Comparison compare_bundles(const Bundle& a, const Bundle& b) {
    auto rows = compare_runs({a, b});
    if (rows.size() != 1) throw ConfigError("bundles hold several variants; use compare_runs for the full matrix");
    return rows.front();
}

std::vector<Comparison> compare_runs(const std::vector<Bundle>& bundles) {
    if (bundles.size() < 2) throw ConfigError("comparison needs at least two bundles");
    for (std::size_t i = 1; i < bundles.size(); ++i)
        if (protocol_of(bundles[i].manifest) != protocol_of(bundles[0].manifest))
            throw ConfigError("bundles differ in dataset, partition, device count or seed protocol");

    std::vector<Comparison> rows;
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        for (std::size_t j = i + 1; j < bundles.size(); ++j) {
            // Group runs by label, keyed by seed.
            std::map<std::string, std::map<std::uint64_t, const RunOutput*>> ga, gb;
            for (const auto& r : bundles[i].runs) ga[label_of(r)][r.seed] = &r;
            for (const auto& r : bundles[j].runs) gb[label_of(r)][r.seed] = &r;
            for (const auto& [la, ra] : ga) {
                for (const auto& [lb, rb] : gb) {
                    Comparison c;
                    c.a = la;
                    c.b = lb;
                    for (const auto& [seed, run_a] : ra) {
                        const auto it = rb.find(seed);
                        if (it == rb.end()) throw ConfigError("seed " + std::to_string(seed) + " missing from " + lb);
                        const double da = run_a->history.final_accuracy() - it->second->history.final_accuracy();
                        const double dl = run_a->history.final_loss() - it->second->history.final_loss();
                        c.seeds.push_back(seed);
                        c.accuracy_deltas.push_back(da);
                        c.loss_deltas.push_back(dl);
                        (da > 0.0 ? c.wins : da < 0.0 ? c.losses : c.ties) += 1;
                    }
                    c.pairs = static_cast<int>(c.seeds.size());
                    if (c.pairs > 0) {
                        for (std::size_t k = 0; k < c.seeds.size(); ++k) {
                            c.mean_accuracy_delta += c.accuracy_deltas[k];
                            c.mean_loss_delta += c.loss_deltas[k];
                        }
                        c.mean_accuracy_delta /= c.pairs;
                        c.mean_loss_delta /= c.pairs;
                    }
                    c.sign_test_p = sign_test_p_value(c.wins, c.losses);
                    rows.push_back(std::move(c));
                }
            }
        }
    }
    return rows;
}

void write_comparison_csv(std::ostream& out, const std::vector<Comparison>& rows) {
    out << "a,b,pairs,mean_accuracy_delta,mean_loss_delta,wins,losses,ties,sign_test_p\n";
    char buf[256];
    for (const auto& c : rows) {
        std::snprintf(buf, sizeof buf, ",%d,%.17g,%.17g,%d,%d,%d,%.17g\n", c.pairs, c.mean_accuracy_delta,
                      c.mean_loss_delta, c.wins, c.losses, c.ties, c.sign_test_p);
        out << c.a << ',' << c.b << buf;
    }
}

std::string comparison_table(const std::vector<Comparison>& rows) {
    std::ostringstream o;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-36s %-36s %5s %10s %10s %9s %8s\n", "A", "B", "pairs", "dAcc", "dLoss",
                  "W/L/T", "p");
    o << buf;
    for (const auto& c : rows) {
        char wlt[32];
        std::snprintf(wlt, sizeof wlt, "%d/%d/%d", c.wins, c.losses, c.ties);
        std::snprintf(buf, sizeof buf, "%-36s %-36s %5d %+10.4f %+10.4f %9s %8.4f\n", c.a.c_str(), c.b.c_str(),
                      c.pairs, c.mean_accuracy_delta, c.mean_loss_delta, wlt, c.sign_test_p);
        o << buf;
    }
    return o.str();
}

BoundCheckResult bound_soundness(const BoundCheckConfig& cfg, std::uint64_t seed) {
    if (cfg.clusters < 1 || cfg.devices < cfg.clusters) throw ConfigError("bound check needs devices >= clusters >= 1");
    if (static_cast<int>(cfg.passes.size()) != cfg.clusters) throw ConfigError("bound check needs one pass count per cluster");
    const auto t0 = std::chrono::steady_clock::now();
    BoundCheckResult res;
    res.seed = seed;

    BlobSpec spec;
    spec.label_count = cfg.labels;
    spec.feature_dim = cfg.feature_dim;
    spec.samples = cfg.samples;
    spec.separation = cfg.separation;
    const auto data = make_gaussian_blobs(spec, derive_seed(seed, {kCenters}), derive_seed(seed, {kTrainSamples}));
    const auto parts = partition_devices(data, LabelLimitedScheme{cfg.labels_per_device}, cfg.devices,
                                         derive_seed(seed, {kPartition}));
    const auto geometry = two_region_layout(cfg.devices, derive_seed(seed, {kGeometry}));
    ChannelParams ch;
    ch.noise_power_w = cfg.noise_power_w;
    const auto channels = build_channels(geometry, ch, derive_seed(seed, {kChannel}));

    ClusterAssignment assign;
    assign.exemplar_of.resize(static_cast<std::size_t>(cfg.devices));
    const int per = cfg.devices / cfg.clusters;
    for (int k = 0; k < cfg.devices; ++k) {
        const int c = std::min(k / per, cfg.clusters - 1);
        assign.exemplar_of[static_cast<std::size_t>(k)] = c * per;
    }
    assign.rebuild_clusters();

    ClusterPlan plan;
    plan.clusters = assign;
    for (const auto& c : assign.clusters) plan.members.push_back(c.members);
    plan.profiles = cluster_profiles(plan.members, parts, data);
    plan.gc = cluster_weight_gc(plan.profiles);
    for (const auto& c : assign.clusters) {
        std::vector<DevicePartition> ps;
        for (int k : c.members) ps.push_back(parts[static_cast<std::size_t>(k)]);
        plan.gkc.push_back(intra_weights_gk(ps));
        plan.h_norms.push_back(std::sqrt(channels.bs_gain(static_cast<std::size_t>(c.leader))));
    }

    TrainingSetup setup;
    setup.train = &data;
    setup.model = ConvexModelSpec{cfg.feature_dim, cfg.labels, cfg.l2_reg};
    setup.partitions = parts;
    setup.clusters = assign;
    setup.cluster_weights = plan.gc;
    setup.member_weights = plan.gkc;
    setup.passes = cfg.passes;
    setup.powers.assign(plan.size(), cfg.power_w);
    setup.h_norms = plan.h_norms;
    setup.sigma_n = std::sqrt(cfg.noise_power_w);
    setup.lr = cfg.lr;
    setup.batch_fraction = cfg.batch_fraction;
    setup.rounds = cfg.rounds;

    WeightedObjective f;
    f.data = &data;
    f.spec = setup.model;
    f.partitions = parts;
    f.device_weights = effective_device_weights(setup);
    const auto smooth = estimate_mu_l(setup.model, data, all_indices(parts));
    const auto ref = reference_optimum(f, smooth.lipschitz, cfg.reference_steps);

    DissimilarityTracker tracker(setup);
    res.measured.assign(static_cast<std::size_t>(cfg.rounds) + 1, 0.0);
    for (int n = 0; n < cfg.noise_seeds; ++n) {
        setup.seed = derive_seed(seed, {kTraining, static_cast<std::uint64_t>(n)});
        std::vector<double> trace;
        setup.on_round_start = [&](int, const ModelParams& w) {
            tracker.observe(w);
            trace.push_back(f.value(w) - ref.value);
        };
        const auto hist = run_training(setup);
        if (hist.diverged) throw std::runtime_error("bound check training diverged: " + hist.diagnostic);
        trace.push_back(f.value(hist.final_model) - ref.value);
        for (std::size_t t = 0; t < trace.size(); ++t) res.measured[t] += trace[t] / cfg.noise_seeds;
    }

    res.params = convergence_params(setup, smooth, tracker.delta(), tracker.delta_c());
    res.report = bound_report(res.params, cfg.rounds);
    const double f0 = std::max(0.0, res.measured.front());
    res.bound.push_back(f0);
    for (double b : bound_curve(res.params, f0, cfg.rounds)) res.bound.push_back(b);
    for (std::size_t t = 1; t < res.bound.size(); ++t) res.violations += res.measured[t] > res.bound[t] ? 1 : 0;
    res.sound = res.violations == 0;
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

std::vector<fs::path> emit_plots(const Bundle& bundle, const fs::path& dir) {
    std::vector<std::pair<fs::path, LineChart>> charts;
    for (const auto& run : bundle.runs) {
        if (run.history.rounds.empty()) throw std::invalid_argument("run " + run.stem() + " has an empty history");
        PlotSeries loss{"loss", {}, {}}, acc{"accuracy", {}, {}};
        for (const auto& r : run.history.rounds) {
            loss.x.push_back(r.round);
            loss.y.push_back(r.loss);
            acc.x.push_back(r.round);
            acc.y.push_back(r.accuracy);
        }
        charts.push_back({dir / (run.stem() + "_loss.svg"), LineChart{run.stem() + " loss", "round", "loss", {loss}}});
        charts.push_back(
            {dir / (run.stem() + "_accuracy.svg"), LineChart{run.stem() + " accuracy", "round", "accuracy", {acc}}});
        if (run.bound) {
            PlotSeries bound{"bound", {}, {}}, measured{"measured gap", {}, {}};
            for (std::size_t t = 0; t < run.bound->measured.size(); ++t) {
                bound.x.push_back(static_cast<double>(t));
                bound.y.push_back(t == 0 ? run.bound->f0_gap : run.bound->curve.at(t - 1));
                measured.x.push_back(static_cast<double>(t));
                measured.y.push_back(run.bound->measured[t]);
            }
            charts.push_back({dir / (run.stem() + "_bound.svg"),
                              LineChart{run.stem() + " bound", "round", "F(w) - F*", {bound, measured}}});
        }
    }
    std::vector<std::string> docs;
    for (const auto& [path, chart] : charts) docs.push_back(render_svg(chart));
    fs::create_directories(dir);
    std::vector<fs::path> written;
    for (std::size_t i = 0; i < charts.size(); ++i) {
        std::ofstream out(charts[i].first);
        if (!out) throw std::runtime_error("cannot write " + charts[i].first.string());
        out << docs[i];
        written.push_back(charts[i].first);
    }
    return written;
}

}  // namespace camu
