#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace camu {

/// Samples stored row-major: sample i occupies features[i*feature_dim, (i+1)*feature_dim).
struct LabeledDataset {
    std::size_t feature_dim = 0;
    int label_count = 0;
    std::vector<double> features;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::span<const double> row(std::size_t i) const {
        return {features.data() + i * feature_dim, feature_dim};
    }
    /// Throws std::invalid_argument when the dataset breaks its invariants.
    void validate() const;
};

struct BlobSpec {
    int label_count = 10;
    std::size_t feature_dim = 20;
    std::size_t samples = 6000;
    /// Norm of each class centre.
    double separation = 3.0;
    double noise_std = 1.0;
};

/// Gaussian blobs with labels assigned round-robin, so every class holds
/// floor(samples / label_count) or one more sample. Class centres depend only on
/// `center_seed`; draws depend on `sample_seed`, which lets a held-out test set
/// share the centres of its training set.
LabeledDataset make_gaussian_blobs(const BlobSpec& spec, std::uint64_t center_seed,
                                   std::uint64_t sample_seed);

/// Reads an IDX image file (magic 0x00000803) and label file (magic 0x00000801).
/// Pixels are scaled to [0, 1]. `max_samples == 0` reads everything.
LabeledDataset read_idx(const std::string& images_path, const std::string& labels_path,
                        std::size_t max_samples = 0);

struct DevicePartition {
    int device_id = 0;
    std::vector<std::size_t> sample_indices;
};

struct IidScheme {};
struct LabelLimitedScheme {
    int labels_per_device = 2;
};
struct MixedScheme {
    int iid_devices = 0;
    int non_iid_devices = 0;
    int labels_per_device = 2;
};
using PartitionScheme = std::variant<IidScheme, LabelLimitedScheme, MixedScheme>;

/// Splits the dataset over `devices` devices. Each device gets floor(N/K) samples
/// (IID-only partitions deal the remainder too). Label-limited devices draw an
/// equal share from exactly `labels_per_device` consecutive labels.
std::vector<DevicePartition> partition_devices(const LabeledDataset& dataset,
                                               const PartitionScheme& scheme, int devices,
                                               std::uint64_t seed);

struct LabelPMF {
    std::vector<double> mass;
};

LabelPMF label_pmf(std::span<const std::size_t> indices, const LabeledDataset& dataset);
LabelPMF global_pmf(const LabeledDataset& dataset);

enum class GroundMetric { index_distance, discrete };

/// 1-D optimal transport between label PMFs. With index distance this is the
/// closed form sum_i |CDF_a(i) - CDF_b(i)|; the discrete metric gives total variation.
double wasserstein_1d(const LabelPMF& a, const LabelPMF& b,
                      GroundMetric metric = GroundMetric::index_distance);

/// W_c below this value is clamped before entering exp(1/W_c).
inline constexpr double kWassersteinFloor = 1e-3;

struct ClusterDataProfile {
    int cluster_id = 0;
    std::size_t sample_count = 0;
    LabelPMF pmf;
    double wasserstein_to_global = 0.0;
    /// |D_c| * exp(1/W_c); may be +inf for near-global clusters.
    double contribution = 0.0;
    /// log(|D_c|) + 1/W_c, always finite.
    double log_contribution = 0.0;
};

double contribution(const ClusterDataProfile& profile);
double log_contribution(const ClusterDataProfile& profile);

/// Builds one profile per cluster from member device partitions.
std::vector<ClusterDataProfile> cluster_profiles(
    const std::vector<std::vector<int>>& cluster_members,
    const std::vector<DevicePartition>& partitions, const LabeledDataset& dataset,
    GroundMetric metric = GroundMetric::index_distance);

/// Softmax aggregation weights |D_c| e^{1/W_c} / sum, evaluated in log space.
std::vector<double> cluster_weight_gc(const std::vector<ClusterDataProfile>& profiles);

/// Size-proportional weights |D_k| / sum |D_k|.
std::vector<double> intra_weights_gk(const std::vector<DevicePartition>& partitions);

struct InfoMatrix {
    std::size_t devices = 0;
    std::size_t labels = 0;
    std::vector<double> xi;

    double at(std::size_t k, std::size_t label) const { return xi[k * labels + label]; }
    std::span<const double> row(std::size_t k) const { return {xi.data() + k * labels, labels}; }
};

/// Xi[k][l] = (C_k^l / D) log(D C_k^l / (D_k C^l)), with 0 log 0 = 0.
InfoMatrix info_matrix(const std::vector<DevicePartition>& partitions,
                       const LabeledDataset& dataset);

}  // namespace camu
