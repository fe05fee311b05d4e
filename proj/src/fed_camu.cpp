#include "camu/fed_camu.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "camu/rng.hpp"

namespace camu {

bool ModelParams::finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

namespace {

void check_spec(const ConvexModelSpec& spec, const ModelParams& model, const LabeledDataset& data) {
    if (model.size() != spec.param_count())
        throw std::invalid_argument("model size does not match the model spec");
    if (data.feature_dim != spec.feature_dim || data.label_count != spec.label_count)
        throw std::invalid_argument("dataset shape does not match the model spec");
}

/// Logits -> probabilities in place; returns log-sum-exp.
double softmax_inplace(std::span<double> z) {
    const double top = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) {
        v = std::exp(v - top);
        sum += v;
    }
    for (auto& v : z) v /= sum;
    return top + std::log(sum);
}

void logits(const ConvexModelSpec& spec, const ModelParams& model, std::span<const double> x,
            std::span<double> z) {
    const std::size_t d = spec.feature_dim;
    const auto L = static_cast<std::size_t>(spec.label_count);
    const double* w = model.values.data();
    const double* b = w + L * d;
    for (std::size_t c = 0; c < L; ++c) {
        double s = b[c];
        const double* wc = w + c * d;
        for (std::size_t j = 0; j < d; ++j) s += wc[j] * x[j];
        z[c] = s;
    }
}

double squared_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

}  // namespace

double softmax_loss(const ConvexModelSpec& spec, const ModelParams& model,
                    const LabeledDataset& data, std::span<const std::size_t> indices) {
    check_spec(spec, model, data);
    if (indices.empty()) throw std::invalid_argument("softmax_loss over an empty sample set");
    std::vector<double> z(static_cast<std::size_t>(spec.label_count));
    double total = 0.0;
    for (auto i : indices) {
        logits(spec, model, data.row(i), z);
        const double top = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - top);
        total += top + std::log(sum) - z[static_cast<std::size_t>(data.labels[i])];
    }
    return total / static_cast<double>(indices.size()) + 0.5 * spec.l2_reg * squared_norm(model.values);
}

void softmax_gradient(const ConvexModelSpec& spec, const ModelParams& model,
                      const LabeledDataset& data, std::span<const std::size_t> indices,
                      std::span<double> grad) {
    check_spec(spec, model, data);
    if (indices.empty()) throw std::invalid_argument("softmax_gradient over an empty sample set");
    if (grad.size() != spec.param_count()) throw std::invalid_argument("gradient buffer has wrong size");
    const std::size_t d = spec.feature_dim;
    const auto L = static_cast<std::size_t>(spec.label_count);
    std::fill(grad.begin(), grad.end(), 0.0);
    std::vector<double> z(L);
    double* gw = grad.data();
    double* gb = gw + L * d;
    for (auto i : indices) {
        const auto x = data.row(i);
        logits(spec, model, x, z);
        softmax_inplace(z);
        z[static_cast<std::size_t>(data.labels[i])] -= 1.0;
        for (std::size_t c = 0; c < L; ++c) {
            const double e = z[c];
            gb[c] += e;
            double* gwc = gw + c * d;
            for (std::size_t j = 0; j < d; ++j) gwc[j] += e * x[j];
        }
    }
    const double inv = 1.0 / static_cast<double>(indices.size());
    for (std::size_t p = 0; p < grad.size(); ++p) grad[p] = grad[p] * inv + spec.l2_reg * model.values[p];
}

double accuracy(const ConvexModelSpec& spec, const ModelParams& model, const LabeledDataset& data) {
    check_spec(spec, model, data);
    std::vector<double> z(static_cast<std::size_t>(spec.label_count));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        logits(spec, model, data.row(i), z);
        const auto arg = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
        hits += arg == data.labels[i] ? 1 : 0;
    }
    return data.size() == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(data.size());
}

std::vector<std::size_t> sample_batch(const DevicePartition& partition, double batch_fraction,
                                      std::uint64_t seed) {
    if (!(batch_fraction > 0.0 && batch_fraction <= 1.0))
        throw std::invalid_argument("batch fraction must lie in (0, 1]");
    const auto& idx = partition.sample_indices;
    if (idx.empty()) throw std::invalid_argument("device partition is empty");
    if (batch_fraction == 1.0) return idx;
    auto b = static_cast<std::size_t>(std::llround(batch_fraction * static_cast<double>(idx.size())));
    b = std::clamp<std::size_t>(b, 1, idx.size());
    std::vector<std::size_t> pool = idx;
    Rng rng(seed);
    for (std::size_t i = 0; i < b; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(b);
    return pool;
}

std::vector<double> local_gradient(const ConvexModelSpec& spec, const ModelParams& model,
                                   const DevicePartition& partition, const LabeledDataset& data,
                                   double batch_fraction, std::uint64_t seed) {
    const auto batch = sample_batch(partition, batch_fraction, seed);
    std::vector<double> g(spec.param_count());
    softmax_gradient(spec, model, data, batch, g);
    return g;
}

ModelParams sgd_steps(ModelParams w, double lr, int steps, const GradientOracle& grad) {
    if (steps < 1) throw std::invalid_argument("local update needs at least one step");
    std::vector<double> g(w.size());
    for (int s = 0; s < steps; ++s) {
        grad(w, s, g);
        for (std::size_t p = 0; p < w.size(); ++p) w.values[p] -= lr * g[p];
    }
    return w;
}

ModelParams local_update(const ConvexModelSpec& spec, const ModelParams& model,
                         const DevicePartition& partition, const LabeledDataset& data, double lr,
                         int steps, double batch_fraction, std::uint64_t seed) {
    if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be nonnegative");
    return sgd_steps(model, lr, steps, [&](const ModelParams& w, int step, std::span<double> g) {
        const auto batch =
            sample_batch(partition, batch_fraction, derive_seed(seed, {static_cast<std::uint64_t>(step)}));
        softmax_gradient(spec, w, data, batch, g);
    });
}

std::vector<int> CamuSchedule::passes() const {
    std::vector<int> out;
    for (const auto& e : per_cluster) out.push_back(e.passes);
    return out;
}

std::vector<bool> CamuSchedule::mask() const {
    std::vector<bool> out;
    for (const auto& e : per_cluster) out.push_back(e.selected);
    return out;
}

int CamuSchedule::multi_round_clusters() const {
    int n = 0;
    for (const auto& e : per_cluster) n += e.passes > 1 ? 1 : 0;
    return n;
}

CamuSchedule camu_schedule(std::span<const double> contributions, double threshold,
                           std::span<const int> capacities) {
    if (contributions.size() != capacities.size())
        throw std::invalid_argument("camu_schedule needs one capacity per cluster");
    CamuSchedule s;
    for (std::size_t c = 0; c < contributions.size(); ++c) {
        if (capacities[c] < 0) throw std::invalid_argument("cluster capacity must be nonnegative");
        CamuSchedule::Entry e;
        e.cluster_id = static_cast<int>(c);
        e.selected = contributions[c] >= threshold;
        e.extra = capacities[c];
        e.passes = 1 + (e.selected ? capacities[c] : 0);
        s.per_cluster.push_back(e);
    }
    return s;
}

ComputeProfile random_compute_profile(std::size_t devices, std::uint64_t seed, double cycles_lo,
                                      double cycles_hi, double hz_lo, double hz_hi) {
    ComputeProfile p;
    Rng rng(seed);
    for (std::size_t k = 0; k < devices; ++k) {
        p.cycles_per_sample.push_back(rng.uniform(cycles_lo, cycles_hi));
        p.cpu_hz.push_back(rng.uniform(hz_lo, hz_hi));
    }
    return p;
}

std::vector<int> cluster_capacities(const ClusterAssignment& clusters,
                                    const std::vector<DevicePartition>& partitions,
                                    const ComputeProfile& compute, double batch_fraction,
                                    int max_extra) {
    std::vector<double> pass_time;
    for (const auto& c : clusters.clusters) {
        double slowest = 0.0;
        for (int k : c.members) {
            const auto ku = static_cast<std::size_t>(k);
            const double batch = std::max(
                1.0, std::round(batch_fraction * static_cast<double>(partitions.at(ku).sample_indices.size())));
            slowest = std::max(slowest, compute.cycles_per_sample.at(ku) * batch / compute.cpu_hz.at(ku));
        }
        pass_time.push_back(slowest);
    }
    const double deadline = pass_time.empty() ? 0.0 : *std::max_element(pass_time.begin(), pass_time.end());
    std::vector<int> cap;
    for (double t : pass_time) {
        const double fits = t > 0.0 ? std::floor(deadline / t * (1.0 + 1e-12)) : 1.0;
        cap.push_back(std::clamp(static_cast<int>(fits) - 1, 0, std::max(0, max_extra)));
    }
    return cap;
}

ModelParams weighted_average(std::span<const ModelParams> models, std::span<const double> weights) {
    if (models.empty()) throw std::invalid_argument("aggregation over no models");
    if (models.size() != weights.size()) throw std::invalid_argument("one weight per model required");
    const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (std::abs(wsum - 1.0) > 1e-9) throw std::invalid_argument("aggregation weights must sum to 1");
    const std::size_t q = models.front().size();
    ModelParams out{std::vector<double>(q, 0.0)};
    for (std::size_t m = 0; m < models.size(); ++m) {
        if (models[m].size() != q) throw std::invalid_argument("aggregated models differ in shape");
        const double w = weights[m];
        for (std::size_t p = 0; p < q; ++p) out.values[p] += w * models[m].values[p];
    }
    return out;
}

ModelParams intra_aggregate(std::span<const ModelParams> models, std::span<const double> weights) {
    return weighted_average(models, weights);
}

ModelParams global_aggregate(std::span<const ModelParams> models, std::span<const double> weights) {
    return weighted_average(models, weights);
}

double uplink_noise_std(double power, double h_norm, double sigma_n) {
    if (sigma_n == 0.0) return 0.0;
    if (!(power > 0.0) || !(h_norm > 0.0))
        throw std::invalid_argument("uplink needs positive power and channel norm");
    return sigma_n / (power * h_norm);
}

ModelParams uplink_transmit(ModelParams model, double power, double h_norm, double sigma_n,
                            std::uint64_t seed) {
    const double sd = uplink_noise_std(power, h_norm, sigma_n);
    if (sd == 0.0) return model;
    Rng rng(seed);
    for (auto& v : model.values) v += sd * rng.normal();
    return model;
}

void TrainingSetup::validate() const {
    if (train == nullptr) throw std::invalid_argument("training setup has no dataset");
    const std::size_t C = clusters.clusters.size();
    if (C == 0) throw std::invalid_argument("training setup has no clusters");
    if (cluster_weights.size() != C || member_weights.size() != C || passes.size() != C ||
        powers.size() != C || h_norms.size() != C)
        throw std::invalid_argument("per-cluster vectors must match the cluster count");
    for (std::size_t c = 0; c < C; ++c) {
        if (member_weights[c].size() != clusters.clusters[c].members.size())
            throw std::invalid_argument("member weights must match cluster membership");
        if (passes[c] < 1) throw std::invalid_argument("every cluster needs at least one pass");
    }
    if (partitions.size() != clusters.size())
        throw std::invalid_argument("cluster assignment does not cover the partitions");
    if (rounds < 0) throw std::invalid_argument("negative round count");
    if (initial.size() != 0 && initial.size() != model.param_count())
        throw std::invalid_argument("initial model has the wrong size");
}

double global_loss(const ConvexModelSpec& spec, const ModelParams& model, const LabeledDataset& data,
                   const std::vector<DevicePartition>& partitions) {
    std::vector<std::size_t> all;
    for (const auto& p : partitions) all.insert(all.end(), p.sample_indices.begin(), p.sample_indices.end());
    return softmax_loss(spec, model, data, all);
}

TrainingHistory run_training(const TrainingSetup& setup) {
    setup.validate();
    const auto& spec = setup.model;
    const auto& data = *setup.train;
    const auto& eval = setup.test != nullptr ? *setup.test : data;
    const std::size_t C = setup.clusters.clusters.size();

    std::vector<std::size_t> all;
    for (const auto& p : setup.partitions)
        all.insert(all.end(), p.sample_indices.begin(), p.sample_indices.end());

    TrainingHistory hist;
    hist.seed = setup.seed;
    ModelParams w = setup.initial.size() != 0 ? setup.initial : spec.zeros();

    auto record = [&](int t, double energy, const std::vector<int>& passes) {
        RoundRecord r;
        r.round = t;
        r.loss = softmax_loss(spec, w, data, all);
        r.accuracy = accuracy(spec, w, eval);
        r.energy_j = energy;
        r.passes = passes;
        hist.rounds.push_back(std::move(r));
        return std::isfinite(hist.rounds.back().loss);
    };
    record(0, 0.0, std::vector<int>(C, 0));

    std::vector<ModelParams> cluster_models(C);
    for (int t = 0; t < setup.rounds; ++t) {
        if (setup.on_round_start) setup.on_round_start(t, w);
        const auto tu = static_cast<std::uint64_t>(t);
        for (std::size_t c = 0; c < C; ++c) {
            const auto& cl = setup.clusters.clusters[c];
            const int passes = setup.passes[c];
            std::vector<ModelParams> member_models(cl.members.size(), w);
            ModelParams wc = w;
            for (int n = 0; n < passes; ++n) {
                for (std::size_t m = 0; m < cl.members.size(); ++m) {
                    const auto dev = static_cast<std::size_t>(cl.members[m]);
                    const ModelParams& start = setup.end_only_aggregation ? member_models[m] : wc;
                    member_models[m] = local_update(
                        spec, start, setup.partitions[dev], data, setup.lr, 1, setup.batch_fraction,
                        derive_seed(setup.seed, {1, tu, c, static_cast<std::uint64_t>(n), dev}));
                }
                if (!setup.end_only_aggregation || n + 1 == passes)
                    wc = intra_aggregate(member_models, setup.member_weights[c]);
            }
            cluster_models[c] = uplink_transmit(std::move(wc), setup.powers[c], setup.h_norms[c],
                                                setup.sigma_n, derive_seed(setup.seed, {2, tu, c}));
        }
        w = global_aggregate(cluster_models, setup.cluster_weights);
        hist.executed_passes.push_back(setup.passes);
        if (!w.finite() || !record(t + 1, setup.energy_per_round_j, setup.passes)) {
            hist.diverged = true;
            hist.diagnostic = "non-finite model or loss after round " + std::to_string(t + 1);
            break;
        }
    }
    hist.final_model = w;
    return hist;
}

void write_history_csv(std::ostream& out, const TrainingHistory& history) {
    out << "# seed=" << history.seed << '\n';
    out << "round,loss,accuracy,energy_j,passes\n";
    char buf[160];
    for (const auto& r : history.rounds) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,", r.round, r.loss, r.accuracy, r.energy_j);
        out << buf;
        for (std::size_t c = 0; c < r.passes.size(); ++c) out << (c ? "|" : "") << r.passes[c];
        out << '\n';
    }
}

}  // namespace camu
