#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "camu/conv_bound.hpp"

namespace camu {

struct EnergyModel {
    std::vector<double> bandwidth_hz;       // B_c per cluster
    double model_bits = 0.0;                // q
    std::vector<double> cycles_per_sample;  // l_k per device
    std::vector<double> cpu_hz;             // f_k per device
    double compute_power_w = 0.1;           // p_cmp
    double e_total_j = 0.0;
    double p_max = 0.0;
};

struct AllocationAction {
    std::vector<double> powers;     // p_c
    std::vector<int> extra_updates; // n_c

    std::vector<int> passes() const;
    double power_sum_sq() const;
};

/// p q / (B log2(1 + gamma)); infinite when gamma == 0.
double transmission_energy(double power, double bits, double bandwidth, double snr);
/// passes * sum_{k in members} l_k q / f_k * p_cmp.
double compute_energy(int passes, std::span<const int> members, const EnergyModel& energy);

/// sum_c [p_c q / (B_c log2(1 + gamma_c)) + N_c sum_{k in c} l_k q / f_k p_cmp]
/// with gamma_c = p_c * leader_gain_c / noise_w and N_c = 1 + n_c.
double energy_per_round(const AllocationAction& action, std::span<const double> leader_gain, double noise_w,
                        const EnergyModel& energy, const std::vector<std::vector<int>>& members);

/// Maps a raw policy output (C powers then C counts) onto the feasible set.
/// p_c = p_min + (p_cap - p_min) * sigmoid(raw), rescaled to satisfy sum p^2 <= P_max;
/// n_c = min(n_cap, round(softplus(raw))) and 0 where the CAMU gate is closed.
AllocationAction project_action(std::span<const double> raw, const std::vector<bool>& mask, double p_cap,
                                double p_min, int n_cap, double p_max);

/// -min(gap, gap_cap) - alpha * max(0, energy - e_total); a missing gap (A >= 1) scores as gap_cap.
double reward(std::optional<double> gap, double energy, double alpha, double e_total, double gap_cap);

/// r + discount * v_next - v_s.
double advantage(double r, double v_s, double v_next, double discount);

struct PpoConfig {
    double clip_eps = 0.2;
    double discount = 0.95;
    double penalty_alpha = 10.0;
    int epochs_per_update = 4;
    int trajectories = 8;
    int episodes = 60;
    int steps_per_episode = 10;
    double actor_lr = 3e-3;
    double critic_lr = 3e-3;
    int hidden = 64;
    double init_log_std = -0.5;
    bool normalize_advantages = true;
    int minibatch = 0;  // 0: whole batch

    void validate() const;
};

/// Fully connected network with tanh hidden layers and a linear output layer.
class Mlp {
public:
    Mlp() = default;
    Mlp(std::vector<std::size_t> sizes, std::uint64_t seed);

    std::size_t input_size() const { return sizes_.front(); }
    std::size_t output_size() const { return sizes_.back(); }
    std::size_t param_count() const { return params_.size(); }
    const std::vector<std::size_t>& sizes() const { return sizes_; }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    struct Cache {
        std::vector<std::vector<double>> activations;  // input, hidden..., output
    };
    std::vector<double> forward(std::span<const double> x, Cache* cache = nullptr) const;
    /// Accumulates d(output . dout)/d(params) into `grad`.
    void backward(const Cache& cache, std::span<const double> dout, std::span<double> grad) const;

private:
    std::vector<std::size_t> sizes_;
    std::vector<double> params_;
};

struct PolicyValueNets {
    Mlp actor;                    // state -> action means
    std::vector<double> log_std;  // state-independent, one per action dimension
    Mlp critic;                   // state -> value

    static constexpr double kLogStdMin = -5.0;
    static constexpr double kLogStdMax = 2.0;

    PolicyValueNets() = default;
    PolicyValueNets(std::size_t state_dim, std::size_t action_dim, int hidden, double init_log_std,
                    std::uint64_t seed);

    double clamped_log_std(std::size_t i) const;
    double log_prob(std::span<const double> state, std::span<const double> action) const;
    double value(std::span<const double> state) const;
    std::size_t param_count() const;
    bool finite() const;
};

/// Actor parameters followed by log-std entries.
std::vector<double> actor_parameters(const PolicyValueNets& nets);

struct Transition {
    std::vector<double> state;
    std::vector<double> raw_action;
    double log_prob_old = 0.0;
    double reward = 0.0;
    std::vector<double> next_state;
};

/// Gradient (with respect to actor_parameters) of the mean clipped surrogate
/// E[min(r A, clip(r, 1 - eps, 1 + eps) A)].
std::vector<double> surrogate_gradient(const PolicyValueNets& nets, std::span<const Transition> batch,
                                       std::span<const double> advantages, double clip_eps);

struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<double> m, v;
    long t = 0;

    /// Descent step: params -= lr * m_hat / (sqrt(v_hat) + eps).
    void step(std::span<double> params, std::span<const double> grad);
};

struct UpdateDiagnostics {
    double mean_ratio = 1.0;
    double clip_fraction = 0.0;
    double actor_objective = 0.0;
    double critic_loss = 0.0;
    bool aborted = false;
};

struct PpoTrainer {
    PolicyValueNets nets;
    PpoConfig cfg;
    Adam actor_opt;
    Adam critic_opt;
    std::uint64_t shuffle_seed = 0;
    long updates = 0;

    PpoTrainer(PolicyValueNets n, const PpoConfig& c, std::uint64_t seed = 0);
    UpdateDiagnostics update(std::span<const Transition> batch);
};

/// The static allocation environment: an action is scored by the steady-state
/// bound gap and its per-round energy.
struct AllocationProblem {
    ConvergenceParams base;            // n_per_cluster and powers are overwritten per action
    std::vector<double> leader_gain;   // ||h_c||^2
    double noise_w = 1.0;
    EnergyModel energy;
    std::vector<std::vector<int>> members;
    std::vector<bool> mask;            // CAMU gate S_c
    double p_cap = 1.0;
    double p_min = 0.0;
    int n_cap = 8;
    /// n_c of the uniform-power baseline allocation.
    std::vector<int> baseline_extra;

    std::size_t clusters() const { return base.clusters(); }
    void validate() const;
};

struct Evaluation {
    double a_factor = 1.0;
    std::optional<double> gap;  // empty when A >= 1
    double energy = 0.0;
    bool feasible = false;

    /// Gap used for ranking; +inf when non-convergent.
    double objective() const;
};

Evaluation evaluate(const AllocationProblem& problem, const AllocationAction& action);

/// Equal powers sqrt(P_max / C) (capped at p_cap) with the baseline update counts.
AllocationAction uniform_allocation(const AllocationProblem& problem);

std::vector<double> rl_state(const AllocationProblem& problem, const AllocationAction& action,
                             const Evaluation& eval, double gap_scale);

struct OptimizeResult {
    AllocationAction best;
    Evaluation best_eval;
    bool feasible = false;
    std::vector<double> episode_rewards;  // mean environment reward per episode
    std::vector<UpdateDiagnostics> diagnostics;
    long evaluations = 0;
    double wall_seconds = 0.0;
    PolicyValueNets nets;
};

OptimizeResult optimize(const AllocationProblem& problem, const PpoConfig& cfg, std::uint64_t seed);

/// Best of `samples` uniformly drawn raw actions.
OptimizeResult random_search(const AllocationProblem& problem, int samples, std::uint64_t seed);

struct ComplexityReport {
    std::size_t weights = 0;
    double per_iteration = 0.0;  // W + C + K N W
    double total = 0.0;          // E T_RL (W + C + K N W)
    double wall_seconds = 0.0;
};

ComplexityReport complexity_report(const PpoConfig& cfg, std::size_t weights, std::size_t clusters,
                                   double wall_seconds = 0.0);

void save_checkpoint(const std::string& path, const PolicyValueNets& nets);
PolicyValueNets load_checkpoint(const std::string& path);

}  // namespace camu
