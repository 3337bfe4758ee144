#pragma once

// Target-relative negative sampling.
//
// For a composed query q_star every corpus item j gets s_j = cos(q_star, v_j)
// and a gap delta_j = s_tar - s_j. Small gaps are candidates that look like the
// target (likely false negatives), large gaps are easy negatives. The mid-zone
// keeps the band in between, either as raw gap bounds (absolute mode) or as a
// fraction of the candidate gap distribution (quantile mode).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "dqe/corpus.hpp"
#include "dqe/error.hpp"
#include "dqe/parallel.hpp"
#include "dqe/rng.hpp"
#include "dqe/vec.hpp"

namespace dqe {

inline double cosine(CSpan u, CSpan v) {
    if (u.size() != v.size()) throw Error(Errc::DimMismatch, "cosine of vectors with different lengths");
    const double nu = norm(u);
    const double nv = norm(v);
    if (nu == 0.0 || nv == 0.0) throw Error(Errc::ZeroVector, "cosine of a zero vector");
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

struct ScoreTable {
    std::size_t query_index = 0;
    std::size_t target_row = 0;
    double s_tar = 0.0;
    /// One entry per corpus row. The target slot holds s_tar / 0 and is
    /// never treated as a candidate.
    Vec s;
    Vec delta;

    std::size_t size() const noexcept { return s.size(); }
    std::size_t candidate_count() const noexcept { return s.empty() ? 0 : s.size() - 1; }
    bool is_candidate(std::size_t j) const noexcept { return j != target_row; }
};

inline ScoreTable score_all(CSpan q_star, const EmbeddingMatrix& corpus, std::size_t target_row,
                            std::size_t query_index = 0, unsigned threads = 1) {
    if (target_row >= corpus.count()) throw Error(Errc::UnknownId, "target row outside corpus");
    if (q_star.size() != corpus.dim()) throw Error(Errc::DimMismatch, "query length differs from corpus dim");
    const double nq = norm(q_star);
    if (nq == 0.0) throw Error(Errc::ZeroVector, "composed query is zero", "query=" + std::to_string(query_index));

    ScoreTable t;
    t.query_index = query_index;
    t.target_row = target_row;
    t.s.assign(corpus.count(), 0.0);
    t.delta.assign(corpus.count(), 0.0);
    parallel_for(corpus.count(), threads, [&](std::size_t j) {
        const auto v = corpus.row(j);
        const double nv = norm(v);
        if (nv == 0.0) throw Error(Errc::ZeroVector, "corpus row is zero", "row=" + std::to_string(j));
        t.s[j] = std::clamp(dot(q_star, v) / (nq * nv), -1.0, 1.0);
    });
    t.s_tar = t.s[target_row];
    for (std::size_t j = 0; j < t.s.size(); ++j) t.delta[j] = t.s_tar - t.s[j];
    return t;
}

/// Convenience overload resolving the target by id.
inline ScoreTable score_all(CSpan q_star, const EmbeddingMatrix& corpus, const std::string& target_id,
                            std::size_t query_index = 0, unsigned threads = 1) {
    return score_all(q_star, corpus, corpus.lookup(target_id), query_index, threads);
}

enum class BandMode { quantile, absolute };

struct MidZoneConfig {
    BandMode mode = BandMode::quantile;
    double alpha = 0.20;
    double beta = 0.80;

    void validate() const {
        if (!std::isfinite(alpha) || !std::isfinite(beta) || !(alpha < beta))
            throw Error(Errc::InvalidConfig, "mid-zone needs finite alpha < beta");
        if (mode == BandMode::quantile && (alpha < 0.0 || beta > 1.0))
            throw Error(Errc::InvalidConfig, "quantile mid-zone needs 0 <= alpha < beta <= 1");
    }

    double midpoint() const noexcept { return 0.5 * (alpha + beta); }
};

struct NegativeSet {
    std::size_t query_index = 0;
    std::vector<std::size_t> members;  // corpus rows, ascending
    int defined_at_epoch = -1;

    std::size_t size() const noexcept { return members.size(); }
    bool empty() const noexcept { return members.empty(); }

    friend bool operator==(const NegativeSet&, const NegativeSet&) = default;
};

/// Normalized average rank of every candidate's gap: rank / (n_candidates - 1),
/// ties share their mean rank. The target slot gets NaN. A lone candidate sits
/// at position 0.
inline Vec quantile_positions(const ScoreTable& table) {
    Vec pos(table.size(), std::nan(""));
    std::vector<std::size_t> order;
    order.reserve(table.candidate_count());
    for (std::size_t j = 0; j < table.size(); ++j)
        if (table.is_candidate(j)) order.push_back(j);
    const std::size_t n = order.size();
    if (n == 0) return pos;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return table.delta[a] < table.delta[b] || (table.delta[a] == table.delta[b] && a < b);
    });
    const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
    for (std::size_t lo = 0; lo < n;) {
        std::size_t hi = lo + 1;
        while (hi < n && table.delta[order[hi]] == table.delta[order[lo]]) ++hi;
        const double avg_rank = 0.5 * static_cast<double>(lo + hi - 1);
        for (std::size_t k = lo; k < hi; ++k) pos[order[k]] = avg_rank / denom;
        lo = hi;
    }
    return pos;
}

inline NegativeSet mid_zone(const ScoreTable& table, const MidZoneConfig& cfg, int epoch = -1) {
    cfg.validate();
    NegativeSet set{table.query_index, {}, epoch};
    if (cfg.mode == BandMode::absolute) {
        for (std::size_t j = 0; j < table.size(); ++j)
            if (table.is_candidate(j) && cfg.alpha <= table.delta[j] && table.delta[j] <= cfg.beta)
                set.members.push_back(j);
        return set;
    }
    const auto pos = quantile_positions(table);
    for (std::size_t j = 0; j < table.size(); ++j)
        if (table.is_candidate(j) && cfg.alpha <= pos[j] && pos[j] <= cfg.beta) set.members.push_back(j);
    return set;
}

/// Distances closer than this count as equal when the empty-band fallback
/// picks the candidate nearest the band midpoint.
inline constexpr double kFallbackTieTolerance = 1e-12;

/// The candidate whose band coordinate (gap, or quantile position) is nearest
/// the band midpoint; ties go to the smaller row.
inline std::size_t fallback_negative(const ScoreTable& table, const MidZoneConfig& cfg) {
    if (table.candidate_count() == 0)
        throw Error(Errc::NoCandidates, "corpus holds only the target", "query=" + std::to_string(table.query_index));
    const Vec coord = cfg.mode == BandMode::quantile ? quantile_positions(table) : table.delta;
    const double mid = cfg.midpoint();
    std::size_t best = table.size();
    double best_dist = 0.0;
    for (std::size_t j = 0; j < table.size(); ++j) {
        if (!table.is_candidate(j)) continue;
        const double dist = std::abs(coord[j] - mid);
        if (best == table.size() || dist < best_dist - kFallbackTieTolerance) {
            best = j;
            best_dist = dist;
        }
    }
    return best;
}

inline std::size_t sample_negative(const NegativeSet& set, const ScoreTable& table, const MidZoneConfig& cfg,
                                   Rng& rng) {
    if (set.query_index != table.query_index)
        throw Error(Errc::ShapeMismatch, "negative set and score table belong to different queries");
    if (set.empty()) return fallback_negative(table, cfg);
    return set.members[rng.below(set.members.size())];
}

/// Uniform over every row except the target (warm-up negatives).
inline std::size_t sample_any_but(std::size_t count, std::size_t target_row, Rng& rng,
                                  std::size_t query_index = 0) {
    if (count < 2)
        throw Error(Errc::NoCandidates, "corpus holds only the target", "query=" + std::to_string(query_index));
    const auto k = static_cast<std::size_t>(rng.below(count - 1));
    return k >= target_row ? k + 1 : k;
}

struct RefreshSchedule {
    int warmup_epochs = 0;
    int num_intervals = 5;
    int total_epochs = 50;

    /// warmup_epochs >= total_epochs is accepted as the no-refresh degenerate
    /// schedule (the whole run is warm-up).
    bool degenerate() const noexcept { return warmup_epochs >= total_epochs; }

    void validate() const {
        if (warmup_epochs < 0 || num_intervals < 1 || total_epochs < 1)
            throw Error(Errc::InvalidConfig, "schedule needs warmup >= 0, intervals >= 1, total >= 1");
        if (!degenerate() && warmup_epochs + num_intervals > total_epochs)
            throw Error(Errc::InvalidConfig, "warmup + intervals exceeds total epochs");
    }
};

/// warmup + round(k * (total - warmup) / intervals) for k = 0..intervals-1,
/// rounding halves up.
inline std::vector<int> refresh_epochs(const RefreshSchedule& sched) {
    sched.validate();
    std::vector<int> out;
    if (sched.degenerate()) return out;
    const long long span = sched.total_epochs - sched.warmup_epochs;
    const long long n = sched.num_intervals;
    for (long long k = 0; k < n; ++k) out.push_back(sched.warmup_epochs + static_cast<int>((2 * k * span + n) / (2 * n)));
    return out;
}

inline double log_set_size(const std::vector<NegativeSet>& sets) {
    if (sets.empty()) throw Error(Errc::InvalidConfig, "no negative sets to average");
    double total = 0.0;
    for (const auto& s : sets) total += static_cast<double>(s.size());
    return total / static_cast<double>(sets.size());
}

/// Gap window [lo, hi] spanned by a set's members; used to follow how many
/// candidates a fixed absolute window holds as training sharpens scores.
struct GapWindow {
    double lo = 0.0;
    double hi = -1.0;  // empty
    bool empty() const noexcept { return hi < lo; }
};

inline GapWindow gap_window(const NegativeSet& set, const ScoreTable& table) {
    GapWindow w;
    for (auto j : set.members) {
        const double d = table.delta[j];
        if (w.empty()) {
            w.lo = w.hi = d;
        } else {
            w.lo = std::min(w.lo, d);
            w.hi = std::max(w.hi, d);
        }
    }
    return w;
}

inline std::size_t count_in_window(const ScoreTable& table, const GapWindow& w) {
    if (w.empty()) return 0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < table.size(); ++j)
        if (table.is_candidate(j) && w.lo <= table.delta[j] && table.delta[j] <= w.hi) ++n;
    return n;
}

}  // namespace dqe
