#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "camu/dual_cluster.hpp"
#include "camu/hetero_data.hpp"

namespace camu {

struct ModelParams {
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    bool finite() const;
};

/// Multinomial logistic regression with bias and L2 penalty on every
/// parameter. Layout: weights (label_count x feature_dim, row-major), then biases.
struct ConvexModelSpec {
    std::size_t feature_dim = 0;
    int label_count = 0;
    double l2_reg = 0.0;

    std::size_t param_count() const {
        return static_cast<std::size_t>(label_count) * (feature_dim + 1);
    }
    ModelParams zeros() const { return {std::vector<double>(param_count(), 0.0)}; }
};

/// Mean cross-entropy over `indices` plus (l2_reg / 2) ||w||^2.
double softmax_loss(const ConvexModelSpec& spec, const ModelParams& model,
                    const LabeledDataset& data, std::span<const std::size_t> indices);
/// Gradient of softmax_loss, written into `grad` (size param_count()).
void softmax_gradient(const ConvexModelSpec& spec, const ModelParams& model,
                      const LabeledDataset& data, std::span<const std::size_t> indices,
                      std::span<double> grad);
/// Fraction of samples whose arg-max logit equals the label.
double accuracy(const ConvexModelSpec& spec, const ModelParams& model, const LabeledDataset& data);

/// Mini-batch of round(batch_fraction * |D_k|) samples (at least one) drawn
/// without replacement. batch_fraction == 1 returns the whole partition.
std::vector<std::size_t> sample_batch(const DevicePartition& partition, double batch_fraction,
                                      std::uint64_t seed);

std::vector<double> local_gradient(const ConvexModelSpec& spec, const ModelParams& model,
                                   const DevicePartition& partition, const LabeledDataset& data,
                                   double batch_fraction, std::uint64_t seed);

using GradientOracle = std::function<void(const ModelParams&, int step, std::span<double>)>;

/// `steps` plain SGD steps w <- w - lr * g(w, step).
ModelParams sgd_steps(ModelParams w, double lr, int steps, const GradientOracle& grad);

ModelParams local_update(const ConvexModelSpec& spec, const ModelParams& model,
                         const DevicePartition& partition, const LabeledDataset& data, double lr,
                         int steps, double batch_fraction, std::uint64_t seed);

struct CamuSchedule {
    struct Entry {
        int cluster_id = 0;
        bool selected = false;  // S_c
        int extra = 0;          // n_c
        int passes = 1;         // N_c = 1 + S_c n_c
    };
    std::vector<Entry> per_cluster;

    std::vector<int> passes() const;
    std::vector<bool> mask() const;
    int multi_round_clusters() const;
};

/// S_c = [contribution_c >= threshold]; N_c = 1 + S_c * capacity_c.
CamuSchedule camu_schedule(std::span<const double> contributions, double threshold,
                           std::span<const int> capacities);

/// Per-device compute characteristics: l_k cycles per sample and f_k in Hz.
struct ComputeProfile {
    std::vector<double> cycles_per_sample;
    std::vector<double> cpu_hz;
};

ComputeProfile random_compute_profile(std::size_t devices, std::uint64_t seed,
                                      double cycles_lo = 1e4, double cycles_hi = 1e5,
                                      double hz_lo = 1e9, double hz_hi = 3e9);

/// Extra passes each cluster fits before the slowest cluster finishes one pass.
/// A cluster's pass time is its slowest member's mini-batch step time.
std::vector<int> cluster_capacities(const ClusterAssignment& clusters,
                                    const std::vector<DevicePartition>& partitions,
                                    const ComputeProfile& compute, double batch_fraction,
                                    int max_extra);

/// Weighted coordinate-wise average. Weights must sum to 1 within 1e-9.
ModelParams weighted_average(std::span<const ModelParams> models, std::span<const double> weights);
ModelParams intra_aggregate(std::span<const ModelParams> models, std::span<const double> weights);
ModelParams global_aggregate(std::span<const ModelParams> models, std::span<const double> weights);

/// Standard deviation of the per-coordinate uplink error.
double uplink_noise_std(double power, double h_norm, double sigma_n);
/// Adds zero-mean Gaussian error with std sigma_n / (power * h_norm) to every coordinate.
ModelParams uplink_transmit(ModelParams model, double power, double h_norm, double sigma_n,
                            std::uint64_t seed);

struct TrainingSetup {
    const LabeledDataset* train = nullptr;
    /// Accuracy is measured here; falls back to `train` when null.
    const LabeledDataset* test = nullptr;
    ConvexModelSpec model;
    std::vector<DevicePartition> partitions;
    ClusterAssignment clusters;
    std::vector<double> cluster_weights;              // G_c, indexed like clusters.clusters
    std::vector<std::vector<double>> member_weights;  // G_{k,c}, aligned with members
    std::vector<int> passes;                          // N_c
    std::vector<double> powers;                       // leader transmit power p_c
    std::vector<double> h_norms;                      // ||h_c|| of each leader
    double sigma_n = 0.0;
    double lr = 0.5e-3;
    double batch_fraction = 0.2;
    int rounds = 50;
    std::uint64_t seed = 0;
    /// Members keep their own models across passes and aggregate once at the end.
    bool end_only_aggregation = false;
    /// Charged to every round in the history.
    double energy_per_round_j = 0.0;
    ModelParams initial;
    /// Called with the global model at the start of every round, before training.
    std::function<void(int, const ModelParams&)> on_round_start;

    void validate() const;
};

struct RoundRecord {
    int round = 0;
    double loss = 0.0;
    double accuracy = 0.0;
    double energy_j = 0.0;
    std::vector<int> passes;
};

struct TrainingHistory {
    std::uint64_t seed = 0;
    std::vector<RoundRecord> rounds;  // round 0 is the initial model
    ModelParams final_model;
    bool diverged = false;
    std::string diagnostic;
    /// Passes actually executed by each cluster in each round.
    std::vector<std::vector<int>> executed_passes;

    double final_accuracy() const { return rounds.empty() ? 0.0 : rounds.back().accuracy; }
    double final_loss() const { return rounds.empty() ? 0.0 : rounds.back().loss; }
};

/// Global objective F(w): sample-weighted mean of the device objectives.
double global_loss(const ConvexModelSpec& spec, const ModelParams& model, const LabeledDataset& data,
                   const std::vector<DevicePartition>& partitions);

TrainingHistory run_training(const TrainingSetup& setup);

void write_history_csv(std::ostream& out, const TrainingHistory& history);

}  // namespace camu
