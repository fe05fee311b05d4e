#include "camu/hetero_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "camu/rng.hpp"

namespace camu {

void LabeledDataset::validate() const {
    if (labels.empty()) throw std::invalid_argument("dataset is empty");
    if (label_count < 1) throw std::invalid_argument("dataset needs at least one label");
    if (feature_dim == 0) throw std::invalid_argument("dataset feature dimension is zero");
    if (features.size() != labels.size() * feature_dim)
        throw std::invalid_argument("feature buffer does not match sample count");
    for (int y : labels)
        if (y < 0 || y >= label_count) throw std::invalid_argument("label out of range");
}

LabeledDataset make_gaussian_blobs(const BlobSpec& spec, std::uint64_t center_seed,
                                   std::uint64_t sample_seed) {
    if (spec.label_count < 1 || spec.feature_dim == 0 || spec.samples == 0)
        throw std::invalid_argument("blob spec must have labels, dimensions and samples");
    Rng crng(center_seed);
    std::vector<double> centers(static_cast<std::size_t>(spec.label_count) * spec.feature_dim);
    for (int c = 0; c < spec.label_count; ++c) {
        double norm = 0.0;
        auto* mu = centers.data() + static_cast<std::size_t>(c) * spec.feature_dim;
        for (std::size_t j = 0; j < spec.feature_dim; ++j) {
            mu[j] = crng.normal();
            norm += mu[j] * mu[j];
        }
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < spec.feature_dim; ++j) mu[j] *= spec.separation / norm;
    }

    LabeledDataset ds;
    ds.feature_dim = spec.feature_dim;
    ds.label_count = spec.label_count;
    ds.labels.resize(spec.samples);
    ds.features.resize(spec.samples * spec.feature_dim);
    Rng srng(sample_seed);
    for (std::size_t i = 0; i < spec.samples; ++i) {
        const int y = static_cast<int>(i % static_cast<std::size_t>(spec.label_count));
        ds.labels[i] = y;
        const auto* mu = centers.data() + static_cast<std::size_t>(y) * spec.feature_dim;
        for (std::size_t j = 0; j < spec.feature_dim; ++j)
            ds.features[i * spec.feature_dim + j] = mu[j] + spec.noise_std * srng.normal();
    }
    return ds;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("truncated IDX header in " + path);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
           std::uint32_t{b[3]};
}

}  // namespace

LabeledDataset read_idx(const std::string& images_path, const std::string& labels_path,
                        std::size_t max_samples) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("cannot open IDX image file " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("cannot open IDX label file " + labels_path);

    if (read_be32(img, images_path) != 0x00000803)
        throw std::runtime_error("bad IDX image magic in " + images_path);
    const std::uint32_t n_img = read_be32(img, images_path);
    const std::uint32_t rows = read_be32(img, images_path);
    const std::uint32_t cols = read_be32(img, images_path);
    if (read_be32(lab, labels_path) != 0x00000801)
        throw std::runtime_error("bad IDX label magic in " + labels_path);
    const std::uint32_t n_lab = read_be32(lab, labels_path);
    if (n_img != n_lab) throw std::runtime_error("IDX image and label counts differ");

    std::size_t n = n_img;
    if (max_samples > 0) n = std::min(n, max_samples);
    const std::size_t dim = std::size_t{rows} * cols;

    LabeledDataset ds;
    ds.feature_dim = dim;
    ds.labels.resize(n);
    ds.features.resize(n * dim);
    std::vector<unsigned char> buf(dim);
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim)))
            throw std::runtime_error("truncated IDX image data in " + images_path);
        for (std::size_t j = 0; j < dim; ++j) ds.features[i * dim + j] = buf[j] / 255.0;
        char y = 0;
        if (!lab.read(&y, 1)) throw std::runtime_error("truncated IDX label data in " + labels_path);
        ds.labels[i] = static_cast<unsigned char>(y);
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.label_count = std::max(10, max_label + 1);
    ds.validate();
    return ds;
}

std::vector<DevicePartition> partition_devices(const LabeledDataset& dataset,
                                               const PartitionScheme& scheme, int devices,
                                               std::uint64_t seed) {
    dataset.validate();
    if (devices < 1) throw std::invalid_argument("need at least one device");
    const std::size_t n = dataset.size();
    const auto k_total = static_cast<std::size_t>(devices);
    if (k_total > n) throw std::invalid_argument("more devices than samples");

    int non_iid = 0;
    int m = 2;
    if (std::holds_alternative<IidScheme>(scheme)) {
        non_iid = 0;
    } else if (const auto* ll = std::get_if<LabelLimitedScheme>(&scheme)) {
        non_iid = devices;
        m = ll->labels_per_device;
    } else {
        const auto& mx = std::get<MixedScheme>(scheme);
        if (mx.iid_devices < 0 || mx.non_iid_devices < 0 ||
            mx.iid_devices + mx.non_iid_devices != devices)
            throw std::invalid_argument("mixed scheme counts must sum to the device count");
        non_iid = mx.non_iid_devices;
        m = mx.labels_per_device;
    }
    if (non_iid > 0 && (m < 1 || m > dataset.label_count))
        throw std::invalid_argument("labels per device must lie in [1, label_count]");

    Rng rng(seed);
    // Which device ids hold Non-IID data.
    std::vector<int> order(k_total);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    std::vector<bool> is_non_iid(k_total, false);
    for (int j = 0; j < non_iid; ++j) is_non_iid[static_cast<std::size_t>(order[j])] = true;

    const auto L = static_cast<std::size_t>(dataset.label_count);
    std::vector<std::vector<std::size_t>> pools(L);
    for (std::size_t i = 0; i < n; ++i) pools[static_cast<std::size_t>(dataset.labels[i])].push_back(i);
    for (auto& p : pools) rng.shuffle(p.begin(), p.end());

    std::vector<DevicePartition> parts(k_total);
    for (std::size_t k = 0; k < k_total; ++k) parts[k].device_id = static_cast<int>(k);

    const std::size_t per_device = n / k_total;
    std::vector<bool> used(n, false);

    // Non-IID devices first, in device-id order; the j-th one starts at label (j*m) mod L.
    int j = 0;
    for (std::size_t k = 0; k < k_total; ++k) {
        if (!is_non_iid[k]) continue;
        const auto mm = static_cast<std::size_t>(m);
        const std::size_t start = (static_cast<std::size_t>(j) * mm) % L;
        for (std::size_t r = 0; r < mm; ++r) {
            const std::size_t label = (start + r) % L;
            std::size_t quota = per_device / mm + (r < per_device % mm ? 1 : 0);
            auto& pool = pools[label];
            while (quota > 0 && !pool.empty()) {
                const std::size_t idx = pool.back();
                pool.pop_back();
                parts[k].sample_indices.push_back(idx);
                used[idx] = true;
                --quota;
            }
        }
        ++j;
    }

    // IID devices deal from whatever remains, uniformly at random.
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i)
        if (!used[i]) rest.push_back(i);
    rng.shuffle(rest.begin(), rest.end());
    std::size_t cursor = 0;
    std::size_t iid_seen = 0;
    for (std::size_t k = 0; k < k_total; ++k) {
        if (is_non_iid[k]) continue;
        std::size_t take = per_device;
        // Pure IID partitions deal every sample so that K = 1 covers the dataset.
        if (non_iid == 0 && iid_seen < n % k_total) ++take;
        take = std::min(take, rest.size() - cursor);
        parts[k].sample_indices.assign(rest.begin() + static_cast<std::ptrdiff_t>(cursor),
                                       rest.begin() + static_cast<std::ptrdiff_t>(cursor + take));
        cursor += take;
        ++iid_seen;
    }

    for (auto& p : parts) {
        if (p.sample_indices.empty())
            throw std::invalid_argument("partition left device " + std::to_string(p.device_id) +
                                        " without samples");
        std::sort(p.sample_indices.begin(), p.sample_indices.end());
    }
    return parts;
}

LabelPMF label_pmf(std::span<const std::size_t> indices, const LabeledDataset& dataset) {
    if (indices.empty()) throw std::invalid_argument("label_pmf of an empty index set");
    LabelPMF pmf;
    pmf.mass.assign(static_cast<std::size_t>(dataset.label_count), 0.0);
    for (auto i : indices) {
        if (i >= dataset.size()) throw std::out_of_range("sample index out of range");
        pmf.mass[static_cast<std::size_t>(dataset.labels[i])] += 1.0;
    }
    const double total = static_cast<double>(indices.size());
    for (auto& v : pmf.mass) v /= total;
    return pmf;
}

LabelPMF global_pmf(const LabeledDataset& dataset) {
    std::vector<std::size_t> all(dataset.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return label_pmf(all, dataset);
}

double wasserstein_1d(const LabelPMF& a, const LabelPMF& b, GroundMetric metric) {
    if (a.mass.size() != b.mass.size())
        throw std::invalid_argument("wasserstein_1d: PMF lengths differ");
    double w = 0.0;
    if (metric == GroundMetric::discrete) {
        for (std::size_t i = 0; i < a.mass.size(); ++i) w += std::abs(a.mass[i] - b.mass[i]);
        return 0.5 * w;
    }
    double ca = 0.0;
    double cb = 0.0;
    // The last CDF difference is zero for valid PMFs.
    for (std::size_t i = 0; i + 1 < a.mass.size(); ++i) {
        ca += a.mass[i];
        cb += b.mass[i];
        w += std::abs(ca - cb);
    }
    return w;
}

double log_contribution(const ClusterDataProfile& profile) {
    if (profile.sample_count == 0) throw std::invalid_argument("cluster has no samples");
    const double w = std::max(profile.wasserstein_to_global, kWassersteinFloor);
    return std::log(static_cast<double>(profile.sample_count)) + 1.0 / w;
}

double contribution(const ClusterDataProfile& profile) {
    return std::exp(log_contribution(profile));
}

std::vector<ClusterDataProfile> cluster_profiles(
    const std::vector<std::vector<int>>& cluster_members,
    const std::vector<DevicePartition>& partitions, const LabeledDataset& dataset,
    GroundMetric metric) {
    // Global PMF over the samples actually held by devices.
    std::vector<std::size_t> held;
    for (const auto& p : partitions)
        held.insert(held.end(), p.sample_indices.begin(), p.sample_indices.end());
    const LabelPMF global = label_pmf(held, dataset);

    std::vector<ClusterDataProfile> out;
    out.reserve(cluster_members.size());
    for (std::size_t c = 0; c < cluster_members.size(); ++c) {
        std::vector<std::size_t> idx;
        for (int k : cluster_members[c]) {
            const auto& s = partitions.at(static_cast<std::size_t>(k)).sample_indices;
            idx.insert(idx.end(), s.begin(), s.end());
        }
        ClusterDataProfile prof;
        prof.cluster_id = static_cast<int>(c);
        prof.sample_count = idx.size();
        prof.pmf = label_pmf(idx, dataset);
        prof.wasserstein_to_global = wasserstein_1d(prof.pmf, global, metric);
        prof.log_contribution = log_contribution(prof);
        prof.contribution = std::exp(prof.log_contribution);
        out.push_back(std::move(prof));
    }
    return out;
}

std::vector<double> cluster_weight_gc(const std::vector<ClusterDataProfile>& profiles) {
    if (profiles.empty()) throw std::invalid_argument("cluster_weight_gc: no clusters");
    std::vector<double> logw(profiles.size());
    for (std::size_t c = 0; c < profiles.size(); ++c) logw[c] = log_contribution(profiles[c]);
    const double top = *std::max_element(logw.begin(), logw.end());
    double sum = 0.0;
    for (auto& v : logw) {
        v = std::exp(v - top);
        sum += v;
    }
    for (auto& v : logw) v /= sum;
    return logw;
}

std::vector<double> intra_weights_gk(const std::vector<DevicePartition>& partitions) {
    if (partitions.empty()) throw std::invalid_argument("intra_weights_gk: no devices");
    std::vector<double> w(partitions.size());
    double total = 0.0;
    for (std::size_t k = 0; k < partitions.size(); ++k) {
        w[k] = static_cast<double>(partitions[k].sample_indices.size());
        total += w[k];
    }
    if (total <= 0.0) throw std::invalid_argument("intra_weights_gk: devices hold no samples");
    for (auto& v : w) v /= total;
    return w;
}

InfoMatrix info_matrix(const std::vector<DevicePartition>& partitions,
                       const LabeledDataset& dataset) {
    if (partitions.empty()) throw std::invalid_argument("info_matrix: no devices");
    const auto L = static_cast<std::size_t>(dataset.label_count);
    const std::size_t K = partitions.size();
    std::vector<double> counts(K * L, 0.0);
    std::vector<double> dk(K, 0.0);
    std::vector<double> cl(L, 0.0);
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        for (auto i : partitions[k].sample_indices) {
            const auto y = static_cast<std::size_t>(dataset.labels.at(i));
            counts[k * L + y] += 1.0;
            cl[y] += 1.0;
        }
        dk[k] = static_cast<double>(partitions[k].sample_indices.size());
        total += dk[k];
    }
    InfoMatrix m;
    m.devices = K;
    m.labels = L;
    m.xi.assign(K * L, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t y = 0; y < L; ++y) {
            const double c = counts[k * L + y];
            if (c == 0.0) continue;
            m.xi[k * L + y] = (c / total) * std::log(total * c / (dk[k] * cl[y]));
        }
    }
    return m;
}

}  // namespace camu
