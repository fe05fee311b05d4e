#include "camu/conv_bound.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "camu/rng.hpp"

namespace camu {

namespace {

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

double sum_sq(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

double sq_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

/// The per-cluster term of A - 1.
double rate_term(const ConvergenceParams& p, std::size_t c) {
    const double g = p.gc[c];
    const double dc = p.delta_c[c];
    const double s1 = sum(p.gkc[c]);
    const double s2 = sum_sq(p.gkc[c]);
    const double quad = p.mu * p.lipschitz * p.lr * p.lr * p.delta * p.delta * g * g * dc * dc * s2;
    const double lin = 2.0 * p.mu * p.lr * p.delta * g * dc * s1;
    return static_cast<double>(p.n_per_cluster[c]) * (quad - lin);
}

/// (1 - A^T) / (1 - A), continuous at A = 1.
double geometric_sum(double a, int t) {
    if (t <= 0) return 0.0;
    if (std::abs(1.0 - a) < 1e-15) return static_cast<double>(t);
    return (1.0 - std::pow(a, t)) / (1.0 - a);
}

double form_scale(const ConvergenceParams& p, GapForm form) {
    return form == GapForm::half_l ? 0.5 * p.lipschitz : 1.0;
}

}  // namespace

void ConvergenceParams::validate() const {
    const std::size_t C = gc.size();
    if (C == 0) throw std::invalid_argument("convergence params need at least one cluster");
    if (delta_c.size() != C || gkc.size() != C || n_per_cluster.size() != C || powers.size() != C ||
        h_norms.size() != C)
        throw std::invalid_argument("per-cluster convergence vectors must have equal length");
    if (!(mu > 0.0) || !(lipschitz > 0.0) || mu > lipschitz * (1.0 + 1e-12))
        throw std::invalid_argument("need 0 < mu <= L");
    if (!(delta >= 1.0)) throw std::invalid_argument("delta must be at least 1");
    if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be nonnegative");
    if (!(sigma_n >= 0.0)) throw std::invalid_argument("sigma_n must be nonnegative");
    if (std::abs(sum(gc) - 1.0) > 1e-9) throw std::invalid_argument("cluster weights must sum to 1");
    for (std::size_t c = 0; c < C; ++c) {
        if (!(delta_c[c] >= 1.0)) throw std::invalid_argument("delta_c must be at least 1");
        if (gkc[c].empty() || std::abs(sum(gkc[c]) - 1.0) > 1e-9)
            throw std::invalid_argument("member weights must sum to 1 in every cluster");
        if (n_per_cluster[c] < 1) throw std::invalid_argument("N_c must be positive");
        if (!(powers[c] > 0.0) || !(h_norms[c] > 0.0))
            throw std::invalid_argument("powers and channel norms must be positive");
    }
}

double a_factor(const ConvergenceParams& p) {
    p.validate();
    double a = 1.0;
    for (std::size_t c = 0; c < p.clusters(); ++c) a += rate_term(p, c);
    return a;
}

RateSplit a_factor_split(const ConvergenceParams& p, const std::vector<bool>& selected) {
    p.validate();
    if (selected.size() != p.clusters()) throw std::invalid_argument("one gate flag per cluster required");
    RateSplit s;
    for (std::size_t c = 0; c < p.clusters(); ++c)
        (selected[c] ? s.above_threshold : s.below_threshold) += rate_term(p, c);
    return s;
}

double lr_max(const ConvergenceParams& p) {
    p.validate();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < p.clusters(); ++c) {
        const double denom = p.lipschitz * p.delta * p.gc[c] * p.delta_c[c] * sum_sq(p.gkc[c]);
        if (denom > 0.0) best = std::min(best, 2.0 * sum(p.gkc[c]) / denom);
    }
    return best;
}

double noise_sum(const ConvergenceParams& p) {
    p.validate();
    double s = 0.0;
    for (std::size_t c = 0; c < p.clusters(); ++c) {
        const double ph = p.powers[c] * p.h_norms[c];
        s += p.gc[c] * p.gc[c] * p.sigma_n * p.sigma_n / (ph * ph);
    }
    return s;
}

double gap(const ConvergenceParams& p, std::optional<int> rounds, GapForm form) {
    const double a = a_factor(p);
    const double noise = noise_sum(p) * form_scale(p, form);
    if (!rounds) {
        if (a >= 1.0) throw NonConvergentError("A >= 1: the steady-state gap does not exist");
        return noise / (1.0 - a);
    }
    if (*rounds < 0) throw std::invalid_argument("negative round count");
    return geometric_sum(a, *rounds) * noise;
}

std::vector<double> bound_curve(const ConvergenceParams& p, double f0_gap, int rounds, GapForm form) {
    if (!(f0_gap >= 0.0)) throw std::invalid_argument("initial gap must be nonnegative");
    if (rounds < 0) throw std::invalid_argument("negative round count");
    const double a = a_factor(p);
    const double noise = noise_sum(p) * form_scale(p, form);
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(rounds));
    for (int t = 1; t <= rounds; ++t) out.push_back(std::pow(a, t) * f0_gap + geometric_sum(a, t) * noise);
    return out;
}

std::vector<bool> corollary_check(const ConvergenceParams& p) {
    p.validate();
    std::vector<bool> ok;
    for (std::size_t c = 0; c < p.clusters(); ++c) {
        const double dc = p.delta_c[c];
        const double s1 = sum(p.gkc[c]);
        const double s2 = sum_sq(p.gkc[c]);
        const double den = p.lipschitz * p.lr * p.lr * dc * dc * s2;
        const double ratio = den > 0.0 ? 2.0 * p.lr * dc * s1 / den : std::numeric_limits<double>::infinity();
        ok.push_back(p.delta * p.gc[c] < 1.0 && 1.0 < ratio && p.lr > 0.0);
    }
    return ok;
}

BoundReport bound_report(const ConvergenceParams& p, int rounds, const std::vector<bool>& selected) {
    BoundReport r;
    r.a_factor = a_factor(p);
    const auto split = a_factor_split(p, selected.empty() ? std::vector<bool>(p.clusters(), false) : selected);
    r.rate_below = split.below_threshold;
    r.rate_above = split.above_threshold;
    r.rounds = rounds;
    r.gap_at_t = gap(p, rounds, GapForm::theorem);
    r.gap_at_t_half_l = gap(p, rounds, GapForm::half_l);
    r.lr_max = lr_max(p);
    r.over_aggressive = r.a_factor <= 0.0;
    r.converges = r.a_factor > 0.0 && r.a_factor < 1.0;
    if (r.converges) {
        r.gap_infinite = gap(p, std::nullopt, GapForm::theorem);
        r.gap_infinite_half_l = gap(p, std::nullopt, GapForm::half_l);
    }
    r.corollary_per_cluster = corollary_check(p);
    r.corollary_ok = std::all_of(r.corollary_per_cluster.begin(), r.corollary_per_cluster.end(),
                                 [](bool b) { return b; });
    return r;
}

void to_json(nlohmann::json& j, const BoundReport& r) {
    auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::json(*v) : nlohmann::json("inf");
    };
    j = nlohmann::json{
        {"a_factor", r.a_factor},
        {"rate_below_threshold", r.rate_below},
        {"rate_above_threshold", r.rate_above},
        {"gap_infinite", opt(r.gap_infinite)},
        {"gap_infinite_half_l", opt(r.gap_infinite_half_l)},
        {"gap_at_t", r.gap_at_t},
        {"gap_at_t_half_l", r.gap_at_t_half_l},
        {"rounds", r.rounds},
        {"lr_max", r.lr_max},
        {"converges", r.converges},
        {"over_aggressive", r.over_aggressive},
        {"corollary_ok", r.corollary_ok},
        {"corollary_per_cluster", r.corollary_per_cluster},
    };
}

void write_bound_csv(std::ostream& out, const std::vector<double>& curve, double f0_gap) {
    out << "round,bound\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "0,%.17g\n", f0_gap);
    out << buf;
    for (std::size_t t = 0; t < curve.size(); ++t) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", t + 1, curve[t]);
        out << buf;
    }
}

SmoothnessEstimate estimate_mu_l(const ConvexModelSpec& spec, const LabeledDataset& data,
                                 std::span<const std::size_t> indices, CurvatureInput input) {
    if (!(spec.l2_reg > 0.0)) throw std::invalid_argument("smoothness estimate needs l2_reg > 0");
    if (data.feature_dim != spec.feature_dim) throw std::invalid_argument("dataset shape does not match");
    if (indices.empty()) throw std::invalid_argument("smoothness estimate over an empty sample set");
    const bool bias = input == CurvatureInput::with_bias;
    const std::size_t d = spec.feature_dim;
    const std::size_t dim = d + (bias ? 1 : 0);
    const double scale = 0.5 / static_cast<double>(indices.size());

    auto apply = [&](const std::vector<double>& v, std::vector<double>& out) {
        std::fill(out.begin(), out.end(), 0.0);
        for (auto i : indices) {
            const auto x = data.row(i);
            double dot = bias ? v[d] : 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += x[j] * v[j];
            for (std::size_t j = 0; j < d; ++j) out[j] += dot * x[j];
            if (bias) out[d] += dot;
        }
        for (auto& o : out) o *= scale;
    };

    SmoothnessEstimate est;
    est.mu = spec.l2_reg;
    est.lipschitz = spec.l2_reg;
    std::vector<double> v(dim), mv(dim);
    Rng rng(0x5EED5EEDULL);
    for (auto& x : v) x = 1.0 + 0.1 * rng.normal();
    double norm = std::sqrt(sq_norm(v));
    for (auto& x : v) x /= norm;

    double lambda = 0.0;
    constexpr int kMaxIter = 10000;
    for (int it = 1; it <= kMaxIter; ++it) {
        apply(v, mv);
        const double rq = std::inner_product(v.begin(), v.end(), mv.begin(), 0.0);
        norm = std::sqrt(sq_norm(mv));
        est.iterations = it;
        if (norm == 0.0) {
            lambda = 0.0;
            break;
        }
        const bool done = it > 1 && std::abs(rq - lambda) <= 1e-6 * std::abs(rq);
        lambda = rq;
        for (std::size_t j = 0; j < dim; ++j) v[j] = mv[j] / norm;
        if (done) break;
    }
    est.lipschitz = spec.l2_reg + std::max(0.0, lambda);
    return est;
}

SmoothnessEstimate estimate_mu_l(const ConvexModelSpec& spec, const LabeledDataset& data,
                                 CurvatureInput input) {
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return estimate_mu_l(spec, data, all, input);
}

std::optional<double> estimate_dissimilarity(std::span<const double> global_grad,
                                             const std::vector<std::vector<double>>& unit_grads,
                                             std::span<const double> weights, double tolerance) {
    if (unit_grads.size() != weights.size()) throw std::invalid_argument("one weight per unit required");
    const double g2 = sq_norm(global_grad);
    if (std::sqrt(g2) <= tolerance) return std::nullopt;
    double e = 0.0;
    for (std::size_t u = 0; u < unit_grads.size(); ++u) {
        if (unit_grads[u].size() != global_grad.size())
            throw std::invalid_argument("unit gradient has the wrong size");
        e += weights[u] * sq_norm(unit_grads[u]);
    }
    return std::max(1.0, std::sqrt(e / g2));
}

double WeightedObjective::value(const ModelParams& w) const {
    double f = 0.0;
    for (std::size_t k = 0; k < partitions.size(); ++k)
        if (device_weights[k] != 0.0)
            f += device_weights[k] * softmax_loss(spec, w, *data, partitions[k].sample_indices);
    return f;
}

void WeightedObjective::gradient(const ModelParams& w, std::span<double> g) const {
    std::fill(g.begin(), g.end(), 0.0);
    std::vector<double> gk(spec.param_count());
    for (std::size_t k = 0; k < partitions.size(); ++k) {
        if (device_weights[k] == 0.0) continue;
        softmax_gradient(spec, w, *data, partitions[k].sample_indices, gk);
        for (std::size_t p = 0; p < g.size(); ++p) g[p] += device_weights[k] * gk[p];
    }
}

std::vector<std::vector<double>> WeightedObjective::device_gradients(const ModelParams& w) const {
    std::vector<std::vector<double>> out(partitions.size(), std::vector<double>(spec.param_count()));
    for (std::size_t k = 0; k < partitions.size(); ++k)
        softmax_gradient(spec, w, *data, partitions[k].sample_indices, out[k]);
    return out;
}

std::vector<double> effective_device_weights(const TrainingSetup& setup) {
    setup.validate();
    std::vector<double> omega(setup.partitions.size(), 0.0);
    for (std::size_t c = 0; c < setup.clusters.clusters.size(); ++c) {
        const auto& members = setup.clusters.clusters[c].members;
        for (std::size_t m = 0; m < members.size(); ++m)
            omega[static_cast<std::size_t>(members[m])] += setup.cluster_weights[c] * setup.member_weights[c][m];
    }
    return omega;
}

ReferenceOptimum reference_optimum(const WeightedObjective& f, double lipschitz, int steps) {
    if (!(lipschitz > 0.0)) throw std::invalid_argument("reference optimum needs L > 0");
    ReferenceOptimum r;
    r.w = f.spec.zeros();
    std::vector<double> g(r.w.size());
    const double lr = 1.0 / lipschitz;
    for (int s = 0; s < steps; ++s) {
        f.gradient(r.w, g);
        for (std::size_t p = 0; p < g.size(); ++p) r.w.values[p] -= lr * g[p];
    }
    r.value = f.value(r.w);
    return r;
}

DissimilarityTracker::DissimilarityTracker(const TrainingSetup& setup)
    : setup_(&setup), delta_c_(setup.clusters.clusters.size(), 1.0) {
    setup.validate();
}

void DissimilarityTracker::observe(const ModelParams& w) {
    const auto& s = *setup_;
    const auto q = s.model.param_count();
    const std::size_t C = s.clusters.clusters.size();
    std::vector<std::vector<double>> cluster_grads(C, std::vector<double>(q, 0.0));
    std::vector<double> global(q, 0.0);
    std::vector<double> gk(q);
    std::vector<std::optional<double>> intra(C);
    for (std::size_t c = 0; c < C; ++c) {
        const auto& members = s.clusters.clusters[c].members;
        std::vector<std::vector<double>> member_grads;
        for (std::size_t m = 0; m < members.size(); ++m) {
            softmax_gradient(s.model, w, *s.train, s.partitions[static_cast<std::size_t>(members[m])].sample_indices,
                             gk);
            for (std::size_t p = 0; p < q; ++p) cluster_grads[c][p] += s.member_weights[c][m] * gk[p];
            member_grads.push_back(gk);
        }
        for (std::size_t p = 0; p < q; ++p) global[p] += s.cluster_weights[c] * cluster_grads[c][p];
        intra[c] = estimate_dissimilarity(cluster_grads[c], member_grads, s.member_weights[c]);
    }
    const auto inter = estimate_dissimilarity(global, cluster_grads, s.cluster_weights);
    if (!inter) {
        ++skipped_;
        return;
    }
    ++samples_;
    delta_ = std::max(delta_, *inter);
    for (std::size_t c = 0; c < C; ++c)
        if (intra[c]) delta_c_[c] = std::max(delta_c_[c], *intra[c]);
}

ConvergenceParams convergence_params(const TrainingSetup& setup, const SmoothnessEstimate& smooth,
                                     double delta, const std::vector<double>& delta_c) {
    ConvergenceParams p;
    p.mu = smooth.mu;
    p.lipschitz = smooth.lipschitz;
    p.delta = delta;
    p.delta_c = delta_c;
    p.lr = setup.lr;
    p.gc = setup.cluster_weights;
    p.gkc = setup.member_weights;
    p.n_per_cluster = setup.passes;
    p.powers = setup.powers;
    p.h_norms = setup.h_norms;
    p.sigma_n = setup.sigma_n;
    p.validate();
    return p;
}

}  // namespace camu
