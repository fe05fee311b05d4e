#pragma once

#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "camu/fed_camu.hpp"
#include "camu/hetero_data.hpp"
#include "json.hpp"

namespace camu {

/// Every constant of the hierarchical convergence bound.
struct ConvergenceParams {
    double mu = 1.0;
    double lipschitz = 1.0;
    double delta = 1.0;
    std::vector<double> delta_c;
    double lr = 0.0;
    std::vector<double> gc;
    std::vector<std::vector<double>> gkc;
    std::vector<int> n_per_cluster;
    std::vector<double> powers;
    std::vector<double> h_norms;
    double sigma_n = 0.0;

    std::size_t clusters() const { return gc.size(); }
    void validate() const;
};

/// Thrown when a steady-state quantity is requested for A >= 1.
class NonConvergentError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A = 1 + sum_c N_c (mu L lr^2 delta^2 G_c^2 delta_c^2 sum_k G_kc^2 - 2 mu lr delta G_c delta_c sum_k G_kc).
double a_factor(const ConvergenceParams& p);

/// The per-cluster terms of A - 1 split by the CAMU gate.
struct RateSplit {
    double below_threshold = 0.0;  // clusters with S_c = 0
    double above_threshold = 0.0;  // clusters with S_c = 1
};
RateSplit a_factor_split(const ConvergenceParams& p, const std::vector<bool>& selected);

/// min_c 2 sum_k G_kc / (L delta G_c delta_c sum_k G_kc^2).
double lr_max(const ConvergenceParams& p);

/// sum_c G_c^2 sigma_n^2 / (p_c^2 ||h_c||^2).
double noise_sum(const ConvergenceParams& p);

enum class GapForm {
    theorem,   // as stated in the theorem
    half_l,    // with the L/2 factor that the derivation carries
};

/// (1 - A^T)/(1 - A) * noise; `rounds` empty means T -> infinity.
double gap(const ConvergenceParams& p, std::optional<int> rounds, GapForm form = GapForm::theorem);

/// B(t) = A^t F0 + (1 - A^t)/(1 - A) * noise for t = 1..rounds.
std::vector<double> bound_curve(const ConvergenceParams& p, double f0_gap, int rounds,
                                GapForm form = GapForm::theorem);

/// Per cluster: delta G_c < 1 < 2 lr delta_c sum G_kc / (L lr^2 delta_c^2 sum G_kc^2).
std::vector<bool> corollary_check(const ConvergenceParams& p);

struct BoundReport {
    double a_factor = 1.0;
    double rate_below = 0.0;
    double rate_above = 0.0;
    std::optional<double> gap_infinite;
    std::optional<double> gap_infinite_half_l;
    double gap_at_t = 0.0;
    double gap_at_t_half_l = 0.0;
    int rounds = 0;
    double lr_max = 0.0;
    bool converges = false;
    /// A <= 0: step size too aggressive for the bound to say anything.
    bool over_aggressive = false;
    bool corollary_ok = false;
    std::vector<bool> corollary_per_cluster;
};

BoundReport bound_report(const ConvergenceParams& p, int rounds,
                         const std::vector<bool>& selected = {});
void to_json(nlohmann::json& j, const BoundReport& r);
void write_bound_csv(std::ostream& out, const std::vector<double>& curve, double f0_gap);

enum class CurvatureInput {
    /// Features augmented with the constant bias input.
    with_bias,
    /// Raw features only.
    features_only,
};

struct SmoothnessEstimate {
    double mu = 0.0;
    double lipschitz = 0.0;
    int iterations = 0;
};

/// mu = l2_reg; L = l2_reg + top eigenvalue of (1/(2n)) X^T X by power iteration
/// (relative tolerance 1e-6). 1/2 bounds the softmax cross-entropy curvature.
SmoothnessEstimate estimate_mu_l(const ConvexModelSpec& spec, const LabeledDataset& data,
                                 std::span<const std::size_t> indices,
                                 CurvatureInput input = CurvatureInput::with_bias);
SmoothnessEstimate estimate_mu_l(const ConvexModelSpec& spec, const LabeledDataset& data,
                                 CurvatureInput input = CurvatureInput::with_bias);

/// sqrt(sum_u w_u ||g_u||^2 / ||g||^2), floored at 1. Empty when the global
/// gradient norm is below `tolerance` (stationary point).
std::optional<double> estimate_dissimilarity(std::span<const double> global_grad,
                                             const std::vector<std::vector<double>>& unit_grads,
                                             std::span<const double> weights,
                                             double tolerance = 1e-12);

/// F(w) = sum_k omega_k F_k(w), with omega_k = G_c G_kc.
struct WeightedObjective {
    const LabeledDataset* data = nullptr;
    ConvexModelSpec spec;
    std::vector<DevicePartition> partitions;
    std::vector<double> device_weights;

    double value(const ModelParams& w) const;
    void gradient(const ModelParams& w, std::span<double> g) const;
    /// Exact per-device gradients.
    std::vector<std::vector<double>> device_gradients(const ModelParams& w) const;
};

/// Device weights omega_k = G_c * G_kc from a training setup.
std::vector<double> effective_device_weights(const TrainingSetup& setup);

struct ReferenceOptimum {
    ModelParams w;
    double value = 0.0;
};

/// Full-batch gradient descent at lr = 1/L for `steps` steps from zero.
ReferenceOptimum reference_optimum(const WeightedObjective& f, double lipschitz, int steps = 10000);

/// Running maximum of the inter- and intra-cluster dissimilarity over visited models.
class DissimilarityTracker {
public:
    explicit DissimilarityTracker(const TrainingSetup& setup);

    /// Measures delta and delta_c at `w` with exact device gradients.
    void observe(const ModelParams& w);

    double delta() const { return delta_; }
    const std::vector<double>& delta_c() const { return delta_c_; }
    int samples() const { return samples_; }
    int stationary_skips() const { return skipped_; }

private:
    const TrainingSetup* setup_;
    double delta_ = 1.0;
    std::vector<double> delta_c_;
    int samples_ = 0;
    int skipped_ = 0;
};

/// Bound constants for a training setup with measured smoothness and dissimilarity.
ConvergenceParams convergence_params(const TrainingSetup& setup, const SmoothnessEstimate& smooth,
                                     double delta, const std::vector<double>& delta_c);

}  // namespace camu
