#include "camu/dual_cluster.hpp"

#include "camu/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace camu {

std::vector<double> SimilarityMatrix::preference() const {
    std::vector<double> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = at(i, i);
    return p;
}

double median_off_diagonal(const SimilarityMatrix& m) {
    std::vector<double> v;
    v.reserve(m.n * (m.n > 0 ? m.n - 1 : 0));
    for (std::size_t i = 0; i < m.n; ++i)
        for (std::size_t k = 0; k < m.n; ++k)
            if (i != k) v.push_back(m.at(i, k));
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

namespace {

void fill_preference(SimilarityMatrix& m, std::span<const double> preference) {
    if (preference.empty()) {
        const double med = median_off_diagonal(m);
        for (std::size_t i = 0; i < m.n; ++i) m.at(i, i) = med;
        return;
    }
    if (preference.size() == 1) {
        for (std::size_t i = 0; i < m.n; ++i) m.at(i, i) = preference[0];
        return;
    }
    if (preference.size() != m.n) throw std::invalid_argument("one preference per point required");
    for (std::size_t i = 0; i < m.n; ++i) m.at(i, i) = preference[i];
}

}  // namespace

SimilarityMatrix comm_similarity(const SnrMatrix& gamma, std::span<const double> preference,
                                 CommSimilarityForm form) {
    SimilarityMatrix m;
    m.n = gamma.n;
    m.s.assign(m.n * m.n, 0.0);
    for (std::size_t i = 0; i < m.n; ++i) {
        for (std::size_t k = 0; k < m.n; ++k) {
            if (i == k) continue;
            if (form == CommSimilarityForm::literal) {
                const double g = gamma.at(i, k);
                m.at(i, k) = -g * g;
            } else {
                const double d = gamma.at(i, i) - gamma.at(k, k);
                m.at(i, k) = -d * d;
            }
        }
    }
    fill_preference(m, preference);
    return m;
}

SimilarityMatrix data_similarity(const InfoMatrix& xi, std::span<const int> subset,
                                 std::optional<double> preference, bool negate) {
    if (subset.empty()) throw std::invalid_argument("data_similarity needs at least one device");
    SimilarityMatrix m;
    m.n = subset.size();
    m.s.assign(m.n * m.n, 0.0);
    for (std::size_t a = 0; a < m.n; ++a) {
        const auto ra = xi.row(static_cast<std::size_t>(subset[a]));
        for (std::size_t b = 0; b < m.n; ++b) {
            if (a == b) continue;
            const auto rb = xi.row(static_cast<std::size_t>(subset[b]));
            double sq = 0.0;
            for (std::size_t l = 0; l < xi.labels; ++l) sq += (ra[l] - rb[l]) * (ra[l] - rb[l]);
            m.at(a, b) = negate ? -(sq * sq) : sq * sq;
        }
    }
    if (preference) {
        const double p = *preference;
        fill_preference(m, std::span<const double>(&p, 1));
    } else {
        fill_preference(m, {});
    }
    return m;
}

void ClusterAssignment::rebuild_clusters() {
    std::map<int, std::vector<int>> groups;
    for (std::size_t i = 0; i < exemplar_of.size(); ++i)
        if (exemplar_of[i] >= 0) groups[exemplar_of[i]].push_back(static_cast<int>(i));
    clusters.clear();
    for (auto& [leader, members] : groups) clusters.push_back({leader, std::move(members)});
}

void ClusterAssignment::check() const {
    std::vector<int> seen(exemplar_of.size(), 0);
    for (const auto& c : clusters) {
        if (std::find(c.members.begin(), c.members.end(), c.leader) == c.members.end())
            throw std::logic_error("cluster leader is not one of its members");
        for (int m : c.members) {
            if (m < 0 || static_cast<std::size_t>(m) >= seen.size())
                throw std::logic_error("cluster member out of range");
            ++seen[static_cast<std::size_t>(m)];
            if (exemplar_of[static_cast<std::size_t>(m)] != c.leader)
                throw std::logic_error("exemplar_of disagrees with cluster list");
        }
    }
    for (int s : seen)
        if (s != 1) throw std::logic_error("clusters do not partition the devices");
}

namespace {

ApResult ap_pass(const SimilarityMatrix& s, const ApConfig& cfg) {
    const std::size_t n = s.n;
    ApResult res;
    const auto [lo, hi] = std::minmax_element(s.s.begin(), s.s.end());
    if (n == 1 || *lo == *hi) {
        // Every configuration has the same net similarity; keep the points together.
        res.assignment.exemplar_of.assign(n, 0);
        res.assignment.rebuild_clusters();
        res.converged = true;
        return res;
    }

    const double lam = cfg.damping;
    // Deterministic perturbation far below the similarity spread breaks exact symmetries.
    std::vector<double> sp(s.s);
    Rng jitter(derive_seed(0x61705f6a69747465ULL, {n}));
    const double scale = 1e-10 * (*hi - *lo);
    for (auto& v : sp) v += scale * jitter.uniform();

    std::vector<double> R(n * n, 0.0);
    std::vector<double> A(n * n, 0.0);
    std::vector<int> choice(n, -1);
    std::vector<int> prev;

    auto decide = [&]() {
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double bv = R[i * n] + A[i * n];
            for (std::size_t k = 1; k < n; ++k) {
                const double v = R[i * n + k] + A[i * n + k];
                if (v > bv) {
                    bv = v;
                    best = k;
                }
            }
            choice[i] = static_cast<int>(best);
        }
    };

    for (int it = 1; it <= cfg.max_iter; ++it) {
        res.iterations = it;
        for (std::size_t i = 0; i < n; ++i) {
            double first = -std::numeric_limits<double>::infinity();
            double second = first;
            std::size_t arg = 0;
            for (std::size_t k = 0; k < n; ++k) {
                const double v = A[i * n + k] + sp[i * n + k];
                if (v > first) {
                    second = first;
                    first = v;
                    arg = k;
                } else if (v > second) {
                    second = v;
                }
            }
            for (std::size_t k = 0; k < n; ++k) {
                const double fresh = sp[i * n + k] - (k == arg ? second : first);
                R[i * n + k] = lam * R[i * n + k] + (1.0 - lam) * fresh;
            }
        }
        for (std::size_t k = 0; k < n; ++k) {
            double pos = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (i != k) pos += std::max(0.0, R[i * n + k]);
            for (std::size_t i = 0; i < n; ++i) {
                double fresh;
                if (i == k) {
                    fresh = pos;
                } else {
                    fresh = std::min(0.0, R[k * n + k] + pos - std::max(0.0, R[i * n + k]));
                }
                A[i * n + k] = lam * A[i * n + k] + (1.0 - lam) * fresh;
            }
        }

        decide();
        if (choice == prev) {
            ++res.stable_rounds;
        } else {
            res.stable_rounds = 0;
            prev = choice;
        }
        bool any_exemplar = false;
        for (std::size_t i = 0; i < n; ++i) any_exemplar |= choice[i] == static_cast<int>(i);
        if (any_exemplar && res.stable_rounds >= cfg.stable_window) {
            res.converged = true;
            break;
        }
    }

    std::vector<int> exemplars;
    for (std::size_t i = 0; i < n; ++i)
        if (choice[i] == static_cast<int>(i)) exemplars.push_back(static_cast<int>(i));

    auto& ex = res.assignment.exemplar_of;
    ex.assign(n, -1);
    if (exemplars.empty()) {
        res.degenerate = true;
        std::size_t top = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (s.at(i, i) > s.at(top, top)) top = i;
        ex.assign(n, static_cast<int>(top));
        res.assignment.rebuild_clusters();
        return res;
    }

    auto is_exemplar = [&](int k) { return std::binary_search(exemplars.begin(), exemplars.end(), k); };
    auto nearest = [&](std::size_t i) {
        int best = exemplars.front();
        for (int e : exemplars)
            if (s.at(i, static_cast<std::size_t>(e)) > s.at(i, static_cast<std::size_t>(best))) best = e;
        return best;
    };
    for (std::size_t i = 0; i < n; ++i) {
        if (is_exemplar(static_cast<int>(i))) {
            ex[i] = static_cast<int>(i);
        } else if (is_exemplar(choice[i])) {
            ex[i] = choice[i];
        } else {
            res.stragglers.push_back(static_cast<int>(i));
            ex[i] = nearest(i);
        }
    }
    res.assignment.rebuild_clusters();
    if (!cfg.refine) return res;

    // Steepest-ascent local search over exemplar sets: swap, add or drop one exemplar while net similarity improves.
    auto score = [&](const std::vector<int>& set) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (std::find(set.begin(), set.end(), static_cast<int>(i)) != set.end()) {
                total += s.at(i, i);
                continue;
            }
            double best = -std::numeric_limits<double>::infinity();
            for (int e : set) best = std::max(best, s.at(i, static_cast<std::size_t>(e)));
            total += best;
        }
        return total;
    };
    double current = score(exemplars);
    for (std::size_t pass = 0; pass < n * n; ++pass) {
        std::vector<int> best_set;
        double best_score = current;
        auto consider = [&](std::vector<int> cand) {
            std::sort(cand.begin(), cand.end());
            const double v = score(cand);
            if (v > best_score + 1e-12 * std::max(1.0, std::fabs(best_score))) {
                best_score = v;
                best_set = std::move(cand);
            }
        };
        for (std::size_t j = 0; j < n; ++j) {
            const int cand = static_cast<int>(j);
            if (std::binary_search(exemplars.begin(), exemplars.end(), cand)) {
                if (exemplars.size() < 2) continue;
                auto drop = exemplars;
                drop.erase(std::find(drop.begin(), drop.end(), cand));
                consider(drop);
                continue;
            }
            auto add = exemplars;
            add.push_back(cand);
            consider(add);
            for (std::size_t e = 0; e < exemplars.size(); ++e) {
                auto swap = exemplars;
                swap[e] = cand;
                consider(swap);
            }
        }
        if (best_set.empty()) break;
        exemplars = std::move(best_set);
        current = best_score;
    }
    std::sort(exemplars.begin(), exemplars.end());
    for (std::size_t i = 0; i < n; ++i) ex[i] = is_exemplar(static_cast<int>(i)) ? static_cast<int>(i) : nearest(i);
    res.assignment.rebuild_clusters();
    return res;
}

}  // namespace

ApResult ap_cluster(const SimilarityMatrix& s, const ApConfig& cfg) {
    if (s.n == 0) throw std::invalid_argument("ap_cluster on an empty similarity matrix");
    if (cfg.stable_window < 1 || cfg.max_iter < cfg.stable_window)
        throw std::invalid_argument("ap_cluster needs max_iter >= stable_window >= 1");
    if (!(cfg.damping >= 0.5 && cfg.damping < 1.0))
        throw std::invalid_argument("ap_cluster damping must lie in [0.5, 1)");
    for (double v : s.s)
        if (!std::isfinite(v)) throw std::invalid_argument("similarity matrix has non-finite entries");

    ApConfig attempt = cfg;
    ApResult res = ap_pass(s, attempt);
    int total = res.iterations;
    while (!res.converged && attempt.damping < kMaxDamping) {
        attempt.damping = std::min(kMaxDamping, attempt.damping + 0.1);
        res = ap_pass(s, attempt);
        total += res.iterations;
    }
    res.iterations = total;
    res.damping = attempt.damping;
    return res;
}

double net_similarity(const SimilarityMatrix& s, const ClusterAssignment& a) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.exemplar_of.size(); ++i)
        total += s.at(i, static_cast<std::size_t>(a.exemplar_of[i]));
    return total;
}

ClusterAssignment assign_stragglers(std::span<const int> unassigned, ClusterAssignment clusters,
                                    const Geometry& geometry) {
    if (clusters.clusters.empty()) throw std::invalid_argument("assign_stragglers needs clusters");
    std::vector<int> leaders;
    for (const auto& c : clusters.clusters) leaders.push_back(c.leader);
    std::sort(leaders.begin(), leaders.end());
    for (int d : unassigned) {
        const auto& pos = geometry.device_positions.at(static_cast<std::size_t>(d));
        int best = leaders.front();
        double bd = distance(pos, geometry.device_positions[static_cast<std::size_t>(best)]);
        for (int l : leaders) {
            const double dist = distance(pos, geometry.device_positions[static_cast<std::size_t>(l)]);
            if (dist < bd) {
                bd = dist;
                best = l;
            }
        }
        clusters.exemplar_of.at(static_cast<std::size_t>(d)) = best;
    }
    clusters.rebuild_clusters();
    return clusters;
}

DualClusterResult dual_segment_cluster(const SnrMatrix& gamma, const InfoMatrix& xi,
                                       const Geometry& geometry, const ClusteringConfig& cfg) {
    const std::size_t K = gamma.n;
    if (xi.devices != K || geometry.devices() != K)
        throw std::invalid_argument("dual_segment_cluster: inconsistent device counts");

    DualClusterResult out;
    std::vector<double> pref;
    if (cfg.comm_preference) pref.push_back(*cfg.comm_preference);
    const auto sc = comm_similarity(gamma, pref, cfg.comm_form);
    const auto primary = ap_cluster(sc, cfg.ap);
    out.primary = primary.assignment;
    out.primary_iterations = primary.iterations;
    out.degenerate = primary.degenerate;

    ClusterAssignment partial;
    partial.exemplar_of.assign(K, -1);
    for (const auto& pc : primary.assignment.clusters) {
        if (pc.members.size() == 1) {
            partial.exemplar_of[static_cast<std::size_t>(pc.leader)] = pc.leader;
            continue;
        }
        const auto sd = data_similarity(xi, pc.members, cfg.data_preference, cfg.negate_data_similarity);
        const auto sec = ap_cluster(sd, cfg.ap);
        out.secondary_iterations = std::max(out.secondary_iterations, sec.iterations);
        out.degenerate = out.degenerate || sec.degenerate;
        std::vector<bool> stray(pc.members.size(), false);
        for (int s : sec.stragglers) stray[static_cast<std::size_t>(s)] = true;
        for (std::size_t a = 0; a < pc.members.size(); ++a) {
            const int dev = pc.members[a];
            if (stray[a]) {
                out.stragglers.push_back(dev);
                continue;
            }
            partial.exemplar_of[static_cast<std::size_t>(dev)] =
                pc.members[static_cast<std::size_t>(sec.assignment.exemplar_of[a])];
        }
    }
    partial.rebuild_clusters();
    std::sort(out.stragglers.begin(), out.stragglers.end());
    out.final = out.stragglers.empty() ? partial : assign_stragglers(out.stragglers, partial, geometry);
    out.final.check();
    return out;
}

ClusterAssignment singleton_clusters(std::size_t n) {
    ClusterAssignment a;
    a.exemplar_of.resize(n);
    for (std::size_t i = 0; i < n; ++i) a.exemplar_of[i] = static_cast<int>(i);
    a.rebuild_clusters();
    return a;
}

}  // namespace camu
