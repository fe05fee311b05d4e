#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "camu/hetero_data.hpp"
#include "camu/radio_channel.hpp"

namespace camu {

/// Square similarity matrix; the diagonal holds the preferences.
struct SimilarityMatrix {
    std::size_t n = 0;
    std::vector<double> s;

    double at(std::size_t i, std::size_t k) const { return s[i * n + k]; }
    double& at(std::size_t i, std::size_t k) { return s[i * n + k]; }
    std::vector<double> preference() const;
};

/// Median of the off-diagonal entries (0 when n == 1).
double median_off_diagonal(const SimilarityMatrix& m);

enum class CommSimilarityForm {
    /// s[i][k] = -gamma_ik^2, the literal device-to-device form.
    literal,
    /// s[i][k] = -(gamma_i - gamma_k)^2 on device-to-BS SNRs.
    snr_difference,
};

/// Off-diagonal similarities from the SNR matrix. An empty `preference`
/// selects the median off-diagonal similarity for every device.
SimilarityMatrix comm_similarity(const SnrMatrix& gamma, std::span<const double> preference,
                                 CommSimilarityForm form = CommSimilarityForm::literal);

/// s[i][k] = -(sum_l (Xi[i][l] - Xi[k][l])^2)^2 over `subset`, or the
/// unsigned form when `negate` is false. `preference` empty selects the median.
SimilarityMatrix data_similarity(const InfoMatrix& xi, std::span<const int> subset,
                                 std::optional<double> preference, bool negate = true);

struct ClusterAssignment {
    struct Cluster {
        int leader = 0;
        std::vector<int> members;  // sorted, includes the leader
    };
    /// exemplar_of[i] is the leader of device i's cluster.
    std::vector<int> exemplar_of;
    std::vector<Cluster> clusters;

    std::size_t size() const { return exemplar_of.size(); }
    /// Rebuilds `clusters` from `exemplar_of`, ordered by leader index.
    void rebuild_clusters();
    /// Throws std::logic_error if the clusters do not partition the devices.
    void check() const;
};

struct ApConfig {
    double damping = 0.5;
    int max_iter = 500;
    int stable_window = 10;
    /// Move each exemplar to its cluster's most central member and reassign.
    bool refine = true;
};

struct ApResult {
    ClusterAssignment assignment;
    /// Points whose row maximum pointed at a non-exemplar column. They are
    /// attached to their most similar exemplar in `assignment`.
    std::vector<int> stragglers;
    int iterations = 0;
    int stable_rounds = 0;
    /// Damping of the pass that produced the result.
    double damping = 0.5;
    bool converged = false;
    /// No diagonal maximum emerged; the highest-preference point became the sole exemplar.
    bool degenerate = false;
};

inline constexpr double kMaxDamping = 0.95;

/// Affinity propagation with damped responsibility/availability updates. A point is
/// an exemplar when the maximum of its row of R + A lies on the diagonal; other points
/// join the exemplar in their arg-max column (or the most similar exemplar if that
/// column is not one). Stops once the decisions hold for `stable_window` iterations.
/// With `refine`, each exemplar then moves to its cluster's most central member.
/// A pass that oscillates past `max_iter` is repeated with damping raised in steps
/// of 0.1 up to kMaxDamping. A matrix with all entries equal is one cluster.
ApResult ap_cluster(const SimilarityMatrix& s, const ApConfig& cfg = {});

/// Net similarity of an assignment: sum of exemplar preferences plus member similarities.
double net_similarity(const SimilarityMatrix& s, const ClusterAssignment& a);

struct ClusteringConfig {
    CommSimilarityForm comm_form = CommSimilarityForm::snr_difference;
    /// Scalar overrides; unset means median of off-diagonal similarities.
    std::optional<double> comm_preference;
    std::optional<double> data_preference;
    bool negate_data_similarity = true;
    ApConfig ap;
};

struct DualClusterResult {
    ClusterAssignment primary;
    ClusterAssignment final;
    /// Devices placed by geometric proximity after the secondary stage.
    std::vector<int> stragglers;
    int primary_iterations = 0;
    int secondary_iterations = 0;
    bool degenerate = false;
};

/// Primary AP on communication similarity, secondary AP on data similarity
/// inside each primary cluster; unresolved devices go to the nearest leader.
DualClusterResult dual_segment_cluster(const SnrMatrix& gamma, const InfoMatrix& xi,
                                       const Geometry& geometry, const ClusteringConfig& cfg);

/// Each unassigned device joins the cluster whose leader is nearest; ties go
/// to the lower leader index.
ClusterAssignment assign_stragglers(std::span<const int> unassigned, ClusterAssignment clusters,
                                    const Geometry& geometry);

/// Every device its own cluster (used by the unclustered baselines).
ClusterAssignment singleton_clusters(std::size_t n);

}  // namespace camu
