#include "camu/ppo_alloc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "camu/rng.hpp"

namespace camu {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

std::vector<int> AllocationAction::passes() const {
    std::vector<int> out;
    for (int n : extra_updates) out.push_back(1 + n);
    return out;
}

double AllocationAction::power_sum_sq() const {
    double s = 0.0;
    for (double p : powers) s += p * p;
    return s;
}

double transmission_energy(double power, double bits, double bandwidth, double snr) {
    if (!(bandwidth > 0.0)) throw std::invalid_argument("bandwidth must be positive");
    if (!(snr > 0.0)) return std::numeric_limits<double>::infinity();
    return power * bits / (bandwidth * std::log2(1.0 + snr));
}

double compute_energy(int passes, std::span<const int> members, const EnergyModel& energy) {
    double per_pass = 0.0;
    for (int k : members) {
        const auto ku = static_cast<std::size_t>(k);
        per_pass += energy.cycles_per_sample.at(ku) * energy.model_bits / energy.cpu_hz.at(ku);
    }
    return static_cast<double>(passes) * per_pass * energy.compute_power_w;
}

double energy_per_round(const AllocationAction& action, std::span<const double> leader_gain, double noise_w,
                        const EnergyModel& energy, const std::vector<std::vector<int>>& members) {
    const std::size_t C = action.powers.size();
    if (action.extra_updates.size() != C || leader_gain.size() != C || energy.bandwidth_hz.size() != C ||
        members.size() != C)
        throw std::invalid_argument("energy_per_round needs one entry per cluster");
    if (!(noise_w > 0.0)) throw std::invalid_argument("noise power must be positive");
    double total = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        const double snr = action.powers[c] * leader_gain[c] / noise_w;
        total += transmission_energy(action.powers[c], energy.model_bits, energy.bandwidth_hz[c], snr);
        total += compute_energy(1 + action.extra_updates[c], members[c], energy);
    }
    return total;
}

AllocationAction project_action(std::span<const double> raw, const std::vector<bool>& mask, double p_cap,
                                double p_min, int n_cap, double p_max) {
    const std::size_t C = mask.size();
    if (raw.size() != 2 * C) throw std::invalid_argument("raw action must hold 2C entries");
    AllocationAction a;
    for (std::size_t c = 0; c < C; ++c) {
        const double r = std::isfinite(raw[c]) ? raw[c] : 0.0;
        a.powers.push_back(p_min + (p_cap - p_min) * sigmoid(r));
    }
    const double s = a.power_sum_sq();
    if (s > p_max) {
        const double k = std::sqrt(p_max / s);
        for (auto& p : a.powers) p *= k;
    }
    for (std::size_t c = 0; c < C; ++c) {
        const double r = std::isfinite(raw[C + c]) ? raw[C + c] : 0.0;
        const double n = std::min(static_cast<double>(n_cap), std::round(softplus(r)));
        a.extra_updates.push_back(mask[c] ? static_cast<int>(n) : 0);
    }
    return a;
}

double reward(std::optional<double> gap, double energy, double alpha, double e_total, double gap_cap) {
    const double g = gap ? std::min(*gap, gap_cap) : gap_cap;
    return -g - alpha * std::max(0.0, energy - e_total);
}

double advantage(double r, double v_s, double v_next, double discount) { return r + discount * v_next - v_s; }

void PpoConfig::validate() const {
    if (!(clip_eps > 0.0)) throw std::invalid_argument("clip epsilon must be positive");
    if (!(discount >= 0.0 && discount < 1.0)) throw std::invalid_argument("discount must lie in [0, 1)");
    if (!(penalty_alpha >= 0.0)) throw std::invalid_argument("penalty alpha must be nonnegative");
    if (epochs_per_update < 0 || trajectories < 1 || episodes < 1 || steps_per_episode < 1)
        throw std::invalid_argument("PPO loop sizes must be positive");
    if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw std::invalid_argument("learning rates must be positive");
    if (hidden < 1) throw std::invalid_argument("hidden width must be positive");
    if (minibatch < 0) throw std::invalid_argument("minibatch size must be nonnegative");
}

Mlp::Mlp(std::vector<std::size_t> sizes, std::uint64_t seed) : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw std::invalid_argument("an MLP needs input and output sizes");
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        const std::size_t in = sizes_[l], out = sizes_[l + 1];
        const double a = std::sqrt(6.0 / static_cast<double>(in + out));
        for (std::size_t i = 0; i < in * out; ++i) params_.push_back(rng.uniform(-a, a));
        params_.insert(params_.end(), out, 0.0);
    }
}

std::vector<double> Mlp::forward(std::span<const double> x, Cache* cache) const {
    if (x.size() != input_size()) throw std::invalid_argument("MLP input has the wrong size");
    std::vector<double> a(x.begin(), x.end());
    if (cache) {
        cache->activations.clear();
        cache->activations.push_back(a);
    }
    std::size_t off = 0;
    const std::size_t layers = sizes_.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t in = sizes_[l], out = sizes_[l + 1];
        const double* W = params_.data() + off;
        const double* b = W + in * out;
        std::vector<double> z(out);
        for (std::size_t o = 0; o < out; ++o) {
            double s = b[o];
            for (std::size_t i = 0; i < in; ++i) s += W[o * in + i] * a[i];
            z[o] = l + 1 < layers ? std::tanh(s) : s;
        }
        a = std::move(z);
        if (cache) cache->activations.push_back(a);
        off += in * out + out;
    }
    return a;
}

void Mlp::backward(const Cache& cache, std::span<const double> dout, std::span<double> grad) const {
    if (grad.size() != params_.size()) throw std::invalid_argument("gradient buffer has the wrong size");
    const std::size_t layers = sizes_.size() - 1;
    std::vector<std::size_t> offsets(layers);
    std::size_t off = 0;
    for (std::size_t l = 0; l < layers; ++l) {
        offsets[l] = off;
        off += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
    }
    std::vector<double> delta(dout.begin(), dout.end());
    for (std::size_t l = layers; l-- > 0;) {
        const std::size_t in = sizes_[l], out = sizes_[l + 1];
        const auto& a_in = cache.activations[l];
        double* gW = grad.data() + offsets[l];
        double* gb = gW + in * out;
        const double* W = params_.data() + offsets[l];
        for (std::size_t o = 0; o < out; ++o) {
            gb[o] += delta[o];
            for (std::size_t i = 0; i < in; ++i) gW[o * in + i] += delta[o] * a_in[i];
        }
        if (l == 0) break;
        std::vector<double> prev(in, 0.0);
        for (std::size_t o = 0; o < out; ++o)
            for (std::size_t i = 0; i < in; ++i) prev[i] += W[o * in + i] * delta[o];
        for (std::size_t i = 0; i < in; ++i) prev[i] *= 1.0 - a_in[i] * a_in[i];
        delta = std::move(prev);
    }
}

PolicyValueNets::PolicyValueNets(std::size_t state_dim, std::size_t action_dim, int hidden,
                                 double init_log_std, std::uint64_t seed)
    : actor({state_dim, static_cast<std::size_t>(hidden), static_cast<std::size_t>(hidden), action_dim},
            derive_seed(seed, {1})),
      log_std(action_dim, init_log_std),
      critic({state_dim, static_cast<std::size_t>(hidden), static_cast<std::size_t>(hidden), 1},
             derive_seed(seed, {2})) {}

double PolicyValueNets::clamped_log_std(std::size_t i) const {
    return std::clamp(log_std[i], kLogStdMin, kLogStdMax);
}

double PolicyValueNets::log_prob(std::span<const double> state, std::span<const double> action) const {
    const auto mean = actor.forward(state);
    double lp = 0.0;
    for (std::size_t i = 0; i < mean.size(); ++i) {
        const double ls = clamped_log_std(i);
        const double z = (action[i] - mean[i]) * std::exp(-ls);
        lp += -0.5 * z * z - ls - 0.5 * kLog2Pi;
    }
    return lp;
}

double PolicyValueNets::value(std::span<const double> state) const { return critic.forward(state)[0]; }

std::size_t PolicyValueNets::param_count() const {
    return actor.param_count() + log_std.size() + critic.param_count();
}

bool PolicyValueNets::finite() const {
    return all_finite(actor.params()) && all_finite(log_std) && all_finite(critic.params());
}

std::vector<double> actor_parameters(const PolicyValueNets& nets) {
    std::vector<double> out = nets.actor.params();
    out.insert(out.end(), nets.log_std.begin(), nets.log_std.end());
    return out;
}

std::vector<double> surrogate_gradient(const PolicyValueNets& nets, std::span<const Transition> batch,
                                       std::span<const double> advantages, double clip_eps) {
    if (batch.size() != advantages.size()) throw std::invalid_argument("one advantage per transition required");
    const std::size_t wa = nets.actor.param_count();
    const std::size_t dim = nets.log_std.size();
    std::vector<double> grad(wa + dim, 0.0);
    if (batch.empty()) return grad;
    std::span<double> g_actor(grad.data(), wa);
    std::vector<double> dmean(dim);
    Mlp::Cache cache;
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const auto& tr = batch[n];
        const auto mean = nets.actor.forward(tr.state, &cache);
        double lp = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            const double ls = nets.clamped_log_std(i);
            const double z = (tr.raw_action[i] - mean[i]) * std::exp(-ls);
            lp += -0.5 * z * z - ls - 0.5 * kLog2Pi;
        }
        const double ratio = std::exp(lp - tr.log_prob_old);
        const double A = advantages[n];
        const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * A;
        if (ratio * A > clipped) continue;  // the clipped branch is constant in theta
        const double coef = A * ratio / static_cast<double>(batch.size());
        if (coef == 0.0) continue;
        for (std::size_t i = 0; i < dim; ++i) {
            const double ls = nets.clamped_log_std(i);
            const double inv_var = std::exp(-2.0 * ls);
            const double diff = tr.raw_action[i] - mean[i];
            dmean[i] = coef * diff * inv_var;
            const bool inside = nets.log_std[i] > PolicyValueNets::kLogStdMin &&
                                nets.log_std[i] < PolicyValueNets::kLogStdMax;
            if (inside) grad[wa + i] += coef * (diff * diff * inv_var - 1.0);
        }
        nets.actor.backward(cache, dmean, g_actor);
    }
    return grad;
}

void Adam::step(std::span<double> params, std::span<const double> grad) {
    if (params.size() != grad.size()) throw std::invalid_argument("Adam parameter/gradient size mismatch");
    if (m.size() != params.size()) {
        m.assign(params.size(), 0.0);
        v.assign(params.size(), 0.0);
        t = 0;
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
}

PpoTrainer::PpoTrainer(PolicyValueNets n, const PpoConfig& c, std::uint64_t seed)
    : nets(std::move(n)), cfg(c), shuffle_seed(seed) {
    cfg.validate();
    actor_opt.lr = cfg.actor_lr;
    critic_opt.lr = cfg.critic_lr;
}

UpdateDiagnostics PpoTrainer::update(std::span<const Transition> batch) {
    if (batch.empty()) throw std::invalid_argument("PPO update on an empty batch");
    UpdateDiagnostics diag;
    const PolicyValueNets saved = nets;
    const Adam saved_actor = actor_opt, saved_critic = critic_opt;
    const std::size_t N = batch.size();

    std::vector<double> adv(N);
    for (std::size_t n = 0; n < N; ++n)
        adv[n] = advantage(batch[n].reward, nets.value(batch[n].state), nets.value(batch[n].next_state),
                           cfg.discount);
    if (cfg.normalize_advantages && N > 1) {
        const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(N);
        double var = 0.0;
        for (double a : adv) var += (a - mean) * (a - mean);
        const double sd = std::sqrt(var / static_cast<double>(N));
        if (sd > 1e-12)
            for (auto& a : adv) a = (a - mean) / sd;
    }

    const std::size_t mb = cfg.minibatch > 0 ? std::min<std::size_t>(static_cast<std::size_t>(cfg.minibatch), N) : N;
    Rng rng(derive_seed(shuffle_seed, {static_cast<std::uint64_t>(updates++)}));
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t wa = nets.actor.param_count();
    const std::size_t dim = nets.log_std.size();
    Mlp::Cache cache;

    bool ok = true;
    for (int epoch = 0; epoch < cfg.epochs_per_update && ok; ++epoch) {
        std::vector<double> targets(N);
        for (std::size_t n = 0; n < N; ++n)
            targets[n] = batch[n].reward + cfg.discount * nets.value(batch[n].next_state);
        rng.shuffle(order.begin(), order.end());
        for (std::size_t start = 0; start < N && ok; start += mb) {
            const std::size_t end = std::min(N, start + mb);
            std::vector<Transition> sub;
            std::vector<double> sub_adv, sub_targets;
            for (std::size_t i = start; i < end; ++i) {
                sub.push_back(batch[order[i]]);
                sub_adv.push_back(adv[order[i]]);
                sub_targets.push_back(targets[order[i]]);
            }
            auto g = surrogate_gradient(nets, sub, sub_adv, cfg.clip_eps);
            for (auto& x : g) x = -x;  // ascent on the surrogate
            auto theta = actor_parameters(nets);
            actor_opt.step(theta, g);
            std::copy(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(wa), nets.actor.params().begin());
            std::copy(theta.begin() + static_cast<std::ptrdiff_t>(wa), theta.end(), nets.log_std.begin());
            for (std::size_t i = 0; i < dim; ++i)
                nets.log_std[i] = std::clamp(nets.log_std[i], PolicyValueNets::kLogStdMin, PolicyValueNets::kLogStdMax);

            std::vector<double> gc(nets.critic.param_count(), 0.0);
            for (std::size_t i = 0; i < sub.size(); ++i) {
                const double v = nets.critic.forward(sub[i].state, &cache)[0];
                const double d = 2.0 * (v - sub_targets[i]) / static_cast<double>(sub.size());
                nets.critic.backward(cache, std::span<const double>(&d, 1), gc);
            }
            critic_opt.step(nets.critic.params(), gc);
            ok = nets.finite() && all_finite(g) && all_finite(gc);
        }
    }

    if (ok) {
        double ratio_sum = 0.0, obj = 0.0, closs = 0.0;
        int clipped = 0;
        for (std::size_t n = 0; n < N; ++n) {
            const double r = std::exp(nets.log_prob(batch[n].state, batch[n].raw_action) - batch[n].log_prob_old);
            ratio_sum += r;
            clipped += std::abs(r - 1.0) > cfg.clip_eps ? 1 : 0;
            obj += std::min(r * adv[n], std::clamp(r, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv[n]);
            const double y = batch[n].reward + cfg.discount * nets.value(batch[n].next_state);
            const double e = nets.value(batch[n].state) - y;
            closs += e * e;
        }
        const double inv = 1.0 / static_cast<double>(N);
        diag.mean_ratio = ratio_sum * inv;
        diag.clip_fraction = clipped * inv;
        diag.actor_objective = obj * inv;
        diag.critic_loss = closs * inv;
        ok = std::isfinite(diag.actor_objective) && std::isfinite(diag.critic_loss);
    }
    if (!ok) {
        nets = saved;
        actor_opt = saved_actor;
        critic_opt = saved_critic;
        diag = UpdateDiagnostics{};
        diag.aborted = true;
    }
    return diag;
}

void AllocationProblem::validate() const {
    base.validate();
    const std::size_t C = clusters();
    if (leader_gain.size() != C || members.size() != C || mask.size() != C || baseline_extra.size() != C ||
        energy.bandwidth_hz.size() != C)
        throw std::invalid_argument("allocation problem vectors must have one entry per cluster");
    if (!(noise_w > 0.0)) throw std::invalid_argument("noise power must be positive");
    if (!(p_cap > 0.0) || !(p_min >= 0.0) || p_min > p_cap) throw std::invalid_argument("need 0 <= p_min <= p_cap");
    if (n_cap < 0) throw std::invalid_argument("n_cap must be nonnegative");
    if (!(energy.p_max > 0.0) || !(energy.e_total_j > 0.0) || !(energy.model_bits > 0.0))
        throw std::invalid_argument("energy model budgets must be positive");
}

double Evaluation::objective() const { return gap ? *gap : std::numeric_limits<double>::infinity(); }

Evaluation evaluate(const AllocationProblem& problem, const AllocationAction& action) {
    ConvergenceParams p = problem.base;
    p.n_per_cluster = action.passes();
    p.powers = action.powers;
    Evaluation e;
    e.a_factor = a_factor(p);
    if (e.a_factor < 1.0) e.gap = gap(p, std::nullopt);
    e.energy = energy_per_round(action, problem.leader_gain, problem.noise_w, problem.energy, problem.members);
    const auto& em = problem.energy;
    e.feasible = e.energy <= em.e_total_j * (1.0 + 1e-12) && action.power_sum_sq() <= em.p_max * (1.0 + 1e-12);
    return e;
}

AllocationAction uniform_allocation(const AllocationProblem& problem) {
    const std::size_t C = problem.clusters();
    AllocationAction a;
    const double p = std::min(problem.p_cap, std::sqrt(problem.energy.p_max / static_cast<double>(C)));
    a.powers.assign(C, p);
    for (std::size_t c = 0; c < C; ++c)
        a.extra_updates.push_back(problem.mask[c] ? std::min(problem.baseline_extra[c], problem.n_cap) : 0);
    return a;
}

std::vector<double> rl_state(const AllocationProblem& problem, const AllocationAction& action,
                             const Evaluation& eval, double gap_scale) {
    std::vector<double> s;
    for (double p : action.powers) s.push_back(p / problem.p_cap);
    const double ncap = std::max(1, problem.n_cap);
    for (int n : action.extra_updates) s.push_back(static_cast<double>(n) / ncap);
    s.push_back(eval.gap ? std::min(*eval.gap / gap_scale, 10.0) : 10.0);
    s.push_back(eval.energy / problem.energy.e_total_j);
    return s;
}

namespace {

/// Keeps the best feasible action, or the least-violating one when nothing is feasible.
struct BestTracker {
    OptimizeResult* out;
    double best_overshoot = std::numeric_limits<double>::infinity();

    void offer(const AllocationAction& a, const Evaluation& e, double e_total) {
        if (e.feasible) {
            if (!out->feasible || e.objective() < out->best_eval.objective()) {
                out->feasible = true;
                out->best = a;
                out->best_eval = e;
            }
        } else if (!out->feasible) {
            const double over = std::max(0.0, e.energy - e_total);
            if (over < best_overshoot ||
                (over == best_overshoot && e.objective() < out->best_eval.objective())) {
                best_overshoot = over;
                out->best = a;
                out->best_eval = e;
            }
        }
    }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

OptimizeResult optimize(const AllocationProblem& problem, const PpoConfig& cfg, std::uint64_t seed) {
    problem.validate();
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t C = problem.clusters();
    const auto& em = problem.energy;

    const auto baseline = uniform_allocation(problem);
    const auto base_eval = evaluate(problem, baseline);
    const double gap_scale = base_eval.gap && *base_eval.gap > 0.0 ? *base_eval.gap : 1.0;
    const double gap_cap = 1e3;  // in units of gap_scale
    const auto s0 = rl_state(problem, baseline, base_eval, gap_scale);

    PpoTrainer trainer(PolicyValueNets(s0.size(), 2 * C, cfg.hidden, cfg.init_log_std, derive_seed(seed, {1})), cfg,
                       derive_seed(seed, {3}));
    Rng rng(derive_seed(seed, {2}));

    OptimizeResult res;
    BestTracker best{&res};
    std::vector<double> raw(2 * C);
    for (int ep = 0; ep < cfg.episodes; ++ep) {
        std::vector<Transition> batch;
        double reward_sum = 0.0;
        for (int n = 0; n < cfg.trajectories; ++n) {
            auto s = s0;
            for (int t = 0; t < cfg.steps_per_episode; ++t) {
                const auto mean = trainer.nets.actor.forward(s);
                for (std::size_t i = 0; i < raw.size(); ++i)
                    raw[i] = mean[i] + std::exp(trainer.nets.clamped_log_std(i)) * rng.normal();
                const double lp = trainer.nets.log_prob(s, raw);
                const auto action = project_action(raw, problem.mask, problem.p_cap, problem.p_min, problem.n_cap,
                                                   em.p_max);
                const auto ev = evaluate(problem, action);
                ++res.evaluations;
                best.offer(action, ev, em.e_total_j);
                std::optional<double> g;
                if (ev.gap) g = *ev.gap / gap_scale;
                const double r = reward(g, ev.energy / em.e_total_j, cfg.penalty_alpha, 1.0, gap_cap);
                reward_sum += r;
                auto next = rl_state(problem, action, ev, gap_scale);
                batch.push_back(Transition{s, raw, lp, r, next});
                s = std::move(next);
            }
        }
        res.episode_rewards.push_back(reward_sum / static_cast<double>(batch.size()));
        res.diagnostics.push_back(trainer.update(batch));
    }
    res.nets = trainer.nets;
    res.wall_seconds = seconds_since(t0);
    return res;
}

OptimizeResult random_search(const AllocationProblem& problem, int samples, std::uint64_t seed) {
    problem.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t C = problem.clusters();
    Rng rng(seed);
    OptimizeResult res;
    BestTracker best{&res};
    std::vector<double> raw(2 * C);
    for (int s = 0; s < samples; ++s) {
        for (std::size_t c = 0; c < C; ++c) raw[c] = rng.uniform(-4.0, 4.0);
        for (std::size_t c = 0; c < C; ++c) raw[C + c] = rng.uniform(-4.0, problem.n_cap + 1.0);
        const auto action = project_action(raw, problem.mask, problem.p_cap, problem.p_min, problem.n_cap,
                                           problem.energy.p_max);
        best.offer(action, evaluate(problem, action), problem.energy.e_total_j);
        ++res.evaluations;
    }
    res.wall_seconds = seconds_since(t0);
    return res;
}

ComplexityReport complexity_report(const PpoConfig& cfg, std::size_t weights, std::size_t clusters,
                                   double wall_seconds) {
    ComplexityReport r;
    r.weights = weights;
    const double W = static_cast<double>(weights);
    r.per_iteration = W + static_cast<double>(clusters) +
                      static_cast<double>(cfg.epochs_per_update) * cfg.trajectories * W;
    r.total = static_cast<double>(cfg.episodes) * cfg.steps_per_episode * r.per_iteration;
    r.wall_seconds = wall_seconds;
    return r;
}

namespace {

constexpr char kMagic[8] = {'C', 'A', 'M', 'U', 'P', 'P', 'O', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw std::runtime_error("truncated checkpoint");
    return v;
}

void put_doubles(std::ofstream& out, const std::vector<double>& v) {
    put<std::uint64_t>(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> get_doubles(std::ifstream& in) {
    const auto n = get<std::uint64_t>(in);
    if (n > (1ULL << 28)) throw std::runtime_error("implausible checkpoint length");
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint");
    return v;
}

void put_sizes(std::ofstream& out, const std::vector<std::size_t>& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    for (auto x : s) put<std::uint64_t>(out, x);
}

std::vector<std::size_t> get_sizes(std::ifstream& in) {
    const auto n = get<std::uint32_t>(in);
    if (n < 2 || n > 64) throw std::runtime_error("implausible layer count in checkpoint");
    std::vector<std::size_t> s;
    for (std::uint32_t i = 0; i < n; ++i) s.push_back(get<std::uint64_t>(in));
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const PolicyValueNets& nets) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    out.write(kMagic, sizeof kMagic);
    put(out, kCheckpointVersion);
    put_sizes(out, nets.actor.sizes());
    put_doubles(out, nets.actor.params());
    put_doubles(out, nets.log_std);
    put_sizes(out, nets.critic.sizes());
    put_doubles(out, nets.critic.params());
    if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

PolicyValueNets load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw std::runtime_error("not a policy checkpoint");
    const auto version = get<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    PolicyValueNets nets;
    nets.actor = Mlp(get_sizes(in), 0);
    auto ap = get_doubles(in);
    if (ap.size() != nets.actor.param_count()) throw std::runtime_error("actor parameter count mismatch");
    nets.actor.params() = std::move(ap);
    nets.log_std = get_doubles(in);
    if (nets.log_std.size() != nets.actor.output_size()) throw std::runtime_error("log-std size mismatch");
    nets.critic = Mlp(get_sizes(in), 0);
    auto cp = get_doubles(in);
    if (cp.size() != nets.critic.param_count()) throw std::runtime_error("critic parameter count mismatch");
    nets.critic.params() = std::move(cp);
    return nets;
}

}  // namespace camu
