#pragma once

// Exact ranking and retrieval metrics. Metrics are fractions in [0, 1];
// presentation code converts to percent with round_half_up.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "dqe/compose.hpp"
#include "dqe/corpus.hpp"
#include "dqe/error.hpp"
#include "dqe/parallel.hpp"
#include "dqe/trns.hpp"

namespace dqe {

struct RankedList {
    std::size_t query_index = 0;
    std::vector<std::size_t> rows;  // best first
    Vec scores;                     // aligned with rows

    /// 1-based rank of `row`, or nullopt if it is not in the list.
    std::optional<std::size_t> rank_of(std::size_t row) const {
        for (std::size_t k = 0; k < rows.size(); ++k)
            if (rows[k] == row) return k + 1;
        return std::nullopt;
    }
};

/// Orders rows by descending cosine, ties by ascending item id. `candidates`
/// restricts the pool (empty = whole corpus); `exclude` removes rows from it.
inline RankedList rank_corpus(CSpan q_star, const EmbeddingMatrix& corpus, const std::set<std::size_t>& exclude = {},
                              std::span<const std::size_t> candidates = {}, std::size_t query_index = 0) {
    RankedList out;
    out.query_index = query_index;
    auto consider = [&](std::size_t j) {
        if (!exclude.contains(j)) out.rows.push_back(j);
    };
    if (candidates.empty()) {
        for (std::size_t j = 0; j < corpus.count(); ++j) consider(j);
    } else {
        std::set<std::size_t> seen;
        for (auto j : candidates) {
            if (j >= corpus.count()) throw Error(Errc::UnknownId, "candidate row outside corpus");
            if (seen.insert(j).second) consider(j);
        }
    }
    if (out.rows.empty()) throw Error(Errc::EmptyAfterExclusion, "no candidates left to rank");
    Vec score(corpus.count(), 0.0);
    for (auto j : out.rows) score[j] = cosine(q_star, corpus.row(j));
    std::sort(out.rows.begin(), out.rows.end(), [&](std::size_t a, std::size_t b) {
        if (score[a] != score[b]) return score[a] > score[b];
        return corpus.id(a) < corpus.id(b);
    });
    out.scores.reserve(out.rows.size());
    for (auto j : out.rows) out.scores.push_back(score[j]);
    return out;
}

inline double recall_at_k(const std::vector<RankedList>& ranked, const std::vector<std::size_t>& targets,
                          std::size_t k) {
    if (k == 0) throw Error(Errc::InvalidConfig, "K must be >= 1");
    if (ranked.size() != targets.size()) throw Error(Errc::ShapeMismatch, "one target per ranking required");
    if (ranked.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        const auto r = ranked[i].rank_of(targets[i]);
        if (r && *r <= k) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(ranked.size());
}

/// Each ranking is restricted to its query's subset before counting.
/// `subsets[i]` must contain `targets[i]`.
inline double recall_subset_at_k(const std::vector<RankedList>& ranked, const std::vector<std::size_t>& targets,
                                 const std::vector<std::optional<std::vector<std::size_t>>>& subsets, std::size_t k) {
    if (ranked.size() != subsets.size()) throw Error(Errc::ShapeMismatch, "one subset per ranking required");
    std::vector<RankedList> restricted;
    restricted.reserve(ranked.size());
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        if (!subsets[i]) throw Error(Errc::MissingSubset, "query has no subset", "query=" + std::to_string(i));
        const std::unordered_set<std::size_t> keep(subsets[i]->begin(), subsets[i]->end());
        if (!keep.contains(targets[i]))
            throw Error(Errc::TargetNotInSubset, "subset does not contain target", "query=" + std::to_string(i));
        RankedList r;
        r.query_index = ranked[i].query_index;
        for (std::size_t p = 0; p < ranked[i].rows.size(); ++p) {
            if (keep.contains(ranked[i].rows[p])) {
                r.rows.push_back(ranked[i].rows[p]);
                r.scores.push_back(ranked[i].scores[p]);
            }
        }
        restricted.push_back(std::move(r));
    }
    return recall_at_k(restricted, targets, k);
}

/// AP@K normalized by min(|GT|, K), averaged over queries.
inline double map_at_k(const std::vector<RankedList>& ranked, const std::vector<std::set<std::size_t>>& relevant,
                       std::size_t k) {
    if (k == 0) throw Error(Errc::InvalidConfig, "K must be >= 1");
    if (ranked.size() != relevant.size()) throw Error(Errc::ShapeMismatch, "one relevant set per ranking required");
    if (ranked.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        if (relevant[i].empty()) throw Error(Errc::EmptyRelevantSet, "empty relevant set", "query=" + std::to_string(i));
        const std::size_t depth = std::min(k, ranked[i].rows.size());
        double ap = 0.0;
        std::size_t hits = 0;
        for (std::size_t p = 0; p < depth; ++p) {
            if (relevant[i].contains(ranked[i].rows[p])) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(p + 1);
            }
        }
        total += ap / static_cast<double>(std::min(relevant[i].size(), k));
    }
    return total / static_cast<double>(ranked.size());
}

inline double cirr_average(double r_at_5, double r_subset_at_1) { return 0.5 * (r_at_5 + r_subset_at_1); }

/// Mean over categories of (R@10 + R@50) / 2.
inline double fashioniq_average(const std::vector<std::pair<double, double>>& r10_r50_per_category) {
    if (r10_r50_per_category.empty()) return 0.0;
    double s = 0.0;
    for (const auto& [r10, r50] : r10_r50_per_category) s += r10 + r50;
    return s / (2.0 * static_cast<double>(r10_r50_per_category.size()));
}

/// Round half away from zero at `decimals` places. Values within 1e-9
/// (relative) of a half step are treated as the half step, so binary
/// representation error in inputs such as 82.155 does not flip the result.
inline double round_half_up(double x, int decimals) {
    const double scale = std::pow(10.0, decimals);
    const double y = std::abs(x) * scale;
    const double r = std::floor(y + 0.5 + 1e-9 * std::max(1.0, y));
    return std::copysign(r / scale, x);
}

inline double to_percent(double fraction) { return round_half_up(100.0 * fraction, 2); }

struct MetricsReport {
    std::map<std::size_t, double> recall_at;
    std::map<std::size_t, double> recall_subset_at;
    std::optional<double> average;  // CIRR-style, when subsets exist
    std::map<std::size_t, double> map_at;
};

struct EvalOptions {
    bool exclude_reference = true;
    std::vector<std::size_t> recall_ks{1, 5, 10, 50};
    std::vector<std::size_t> subset_ks{1, 2, 3};
    std::vector<std::size_t> map_ks{5, 10, 25, 50};
    bool use_subsets = false;
    unsigned threads = 1;
};

struct QueryRank {
    std::size_t query_index = 0;
    std::size_t target_rank = 0;                 // 1-based over the full pool
    std::optional<std::size_t> subset_rank;      // 1-based inside the subset
};

struct EvalResult {
    MetricsReport report;
    std::vector<QueryRank> ranks;
};

/// Ranks every query's q_star against the corpus and computes all metrics.
/// mAP is computed only when `relevant` is given (one set per triplet).
inline EvalResult evaluate_model(const CompositionHead& head, const AttributeWeights& weights,
                                 const std::vector<QueryTriplet>& triplets, const EmbeddingMatrix& corpus,
                                 const EvalOptions& opt,
                                 const std::vector<std::set<std::size_t>>* relevant = nullptr) {
    std::vector<RankedList> ranked(triplets.size());
    parallel_for(triplets.size(), opt.threads, [&](std::size_t i) {
        const auto cq = forward(head, weights, triplets[i], corpus);
        std::set<std::size_t> exclude;
        if (opt.exclude_reference && triplets[i].ref_row != triplets[i].target_row) exclude.insert(triplets[i].ref_row);
        ranked[i] = rank_corpus(cq.q_star, corpus, exclude, {}, i);
    });
    std::vector<std::size_t> targets;
    std::vector<std::optional<std::vector<std::size_t>>> subsets;
    for (const auto& t : triplets) {
        targets.push_back(t.target_row);
        if (t.subset_ids) {
            std::vector<std::size_t> rows;
            for (const auto& id : *t.subset_ids) rows.push_back(corpus.lookup(id));
            subsets.emplace_back(std::move(rows));
        } else {
            subsets.emplace_back(std::nullopt);
        }
    }

    EvalResult out;
    for (auto k : opt.recall_ks) out.report.recall_at[k] = recall_at_k(ranked, targets, k);
    if (opt.use_subsets) {
        for (auto k : opt.subset_ks) out.report.recall_subset_at[k] = recall_subset_at_k(ranked, targets, subsets, k);
        const auto r5 = out.report.recall_at.find(5);
        const auto rs1 = out.report.recall_subset_at.find(1);
        if (r5 != out.report.recall_at.end() && rs1 != out.report.recall_subset_at.end())
            out.report.average = cirr_average(r5->second, rs1->second);
    }
    if (relevant) {
        for (auto k : opt.map_ks) out.report.map_at[k] = map_at_k(ranked, *relevant, k);
    }
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        QueryRank qr{i, ranked[i].rank_of(targets[i]).value_or(0), std::nullopt};
        if (opt.use_subsets && subsets[i]) {
            const std::set<std::size_t> keep(subsets[i]->begin(), subsets[i]->end());
            std::size_t pos = 0;
            for (auto row : ranked[i].rows) {
                if (!keep.contains(row)) continue;
                ++pos;
                if (row == targets[i]) {
                    qr.subset_rank = pos;
                    break;
                }
            }
        }
        out.ranks.push_back(qr);
    }
    return out;
}

}  // namespace dqe
