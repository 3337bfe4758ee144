#pragma once

// Shared fixtures for the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "dqe/compose.hpp"
#include "dqe/corpus.hpp"
#include "dqe/loss.hpp"
#include "dqe/rng.hpp"
#include "dqe/train.hpp"
#include "dqe/trns.hpp"

namespace dqe::testing {

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("dqe_test_" + std::to_string(::getpid()) + "_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline Vec random_vec(Rng& rng, std::size_t d, double lo = -1.0, double hi = 1.0) {
    Vec v(d);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

inline EmbeddingMatrix random_corpus(Rng& rng, std::size_t n, std::size_t d, bool unit = true) {
    std::vector<std::string> ids;
    Vec data;
    for (std::size_t i = 0; i < n; ++i) {
        ids.push_back("id" + std::to_string(i));
        auto v = random_vec(rng, d);
        if (unit) {
            const double nv = norm(v);
            for (auto& x : v) x /= nv;
        }
        data.insert(data.end(), v.begin(), v.end());
    }
    return EmbeddingMatrix(d, std::move(ids), std::move(data));
}

inline QueryTriplet random_triplet(Rng& rng, const EmbeddingMatrix& corpus, bool color, bool shape) {
    QueryTriplet t;
    const auto n = corpus.count();
    t.ref_row = rng.below(n);
    do t.target_row = rng.below(n);
    while (t.target_row == t.ref_row && n > 1);
    t.ref_id = corpus.id(t.ref_row);
    t.target_id = corpus.id(t.target_row);
    t.text_emb = random_vec(rng, corpus.dim());
    if (color) t.attr(Attribute::color) = random_vec(rng, corpus.dim());
    if (shape) t.attr(Attribute::shape) = random_vec(rng, corpus.dim());
    return t;
}

/// Independent evaluation of the full objective. Shares nothing with the
/// library loss beyond the data types.
inline double oracle_total_loss(const CompositionHead& h, const AttributeWeights& w, const LossConfig& cfg,
                                const QueryTriplet& t, const EmbeddingMatrix& corpus, std::size_t neg) {
    const std::size_t d = corpus.dim();
    auto cosv = [](const Vec& a, CSpan b) {
        double ab = 0, aa = 0, bb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            ab += a[i] * b[i];
            aa += a[i] * a[i];
            bb += b[i] * b[i];
        }
        if (aa == 0.0) return 0.0;
        return ab / std::sqrt(aa * bb);
    };
    auto sp = [](double r) { return std::log(1.0 + std::exp(r)); };
    Vec q(d), qc(d, 0.0), qs(d, 0.0), qstar(d);
    const auto ref = corpus.row(t.ref_row);
    for (std::size_t r = 0; r < d; ++r) {
        double acc = h.b_q[r];
        for (std::size_t c = 0; c < d; ++c) acc += h.w_q(r, c) * ref[c] + h.w_q(r, d + c) * t.text_emb[c];
        q[r] = acc;
        if (auto& e = t.attr(Attribute::color))
            for (std::size_t c = 0; c < d; ++c) qc[r] += h.w_color(r, c) * (*e)[c];
        if (auto& e = t.attr(Attribute::shape))
            for (std::size_t c = 0; c < d; ++c) qs[r] += h.w_shape(r, c) * (*e)[c];
    }
    const double wc = sp(w.rho_color), ws = sp(w.rho_shape);
    for (std::size_t r = 0; r < d; ++r) qstar[r] = q[r] + wc * qc[r] + ws * qs[r];

    std::vector<double> s;
    s.push_back(cosv(qstar, corpus.row(t.target_row)));
    for (std::size_t j = 0; j < corpus.count(); ++j)
        if (j != t.target_row) s.push_back(cosv(qstar, corpus.row(j)));
    long double z = 0;
    for (double x : s) z += std::exp(static_cast<long double>(x / cfg.tau));
    const double lkl = -static_cast<double>(std::log(std::exp(static_cast<long double>(s[0] / cfg.tau)) / z));
    const double s_neg = cosv(qstar, corpus.row(neg));
    const double lmain = std::max(0.0, cfg.margin_main - s[0] + s_neg);
    auto la = [&](const Vec& sub, bool present, double m) {
        if (!present) return 0.0;
        return std::max(0.0, m - cosv(sub, corpus.row(t.target_row)) + cosv(sub, corpus.row(neg)));
    };
    const double lc = la(qc, t.attr(Attribute::color).has_value(), cfg.margin_color);
    const double ls = la(qs, t.attr(Attribute::shape).has_value(), cfg.margin_shape);
    return lkl + cfg.lambda_rank * lmain + wc * lc + ws * ls;
}

struct FdReport {
    double max_rel_err = 0.0;
    std::size_t entries = 0;
};

/// Compares every analytic gradient entry against central differences of
/// total_loss. Relative error uses max(|analytic|, |numeric|, floor).
inline FdReport finite_difference_check(const CompositionHead& head, const AttributeWeights& weights,
                                        const LossConfig& cfg, const QueryTriplet& t, const EmbeddingMatrix& corpus,
                                        std::size_t neg, double h, double floor) {
    const auto grad = flatten(backward(head, weights, cfg, t, corpus, neg));
    Vec theta = flatten(head, weights);
    FdReport rep;
    CompositionHead hh = head;
    AttributeWeights ww = weights;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double orig = theta[i];
        theta[i] = orig + h;
        unflatten(theta, hh, ww);
        const double fp = total_loss(hh, ww, cfg, t, corpus, neg).l_total;
        theta[i] = orig - h;
        unflatten(theta, hh, ww);
        const double fm = total_loss(hh, ww, cfg, t, corpus, neg).l_total;
        theta[i] = orig;
        const double num = (fp - fm) / (2.0 * h);
        const double den = std::max({std::abs(grad[i]), std::abs(num), floor});
        rep.max_rel_err = std::max(rep.max_rel_err, std::abs(grad[i] - num) / den);
        ++rep.entries;
    }
    return rep;
}

struct GradCase {
    CompositionHead head;
    AttributeWeights weights;
    LossConfig cfg;
    EmbeddingMatrix corpus;
    QueryTriplet triplet;
    std::size_t negative = 0;
};

inline GradCase random_grad_case(Rng& rng, std::size_t d, std::size_t n) {
    GradCase c;
    c.corpus = random_corpus(rng, n, d, rng.uniform() < 0.5);
    c.triplet = random_triplet(rng, c.corpus, rng.uniform() < 0.8, rng.uniform() < 0.8);
    c.head = init_head(d, rng(), rng.uniform(0.1, 1.0));
    c.weights = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
    c.cfg.tau = rng.uniform(0.05, 1.0);
    c.cfg.margin_main = rng.uniform(0.0, 1.0);
    c.cfg.margin_color = rng.uniform(0.0, 1.0);
    c.cfg.margin_shape = rng.uniform(0.0, 1.0);
    c.cfg.lambda_rank = rng.uniform(0.0, 2.0);
    do c.negative = rng.below(n);
    while (c.negative == c.triplet.target_row);
    return c;
}


/// Random table; with `ties`, similarities are quantized so that equal gaps
/// are common.
inline ScoreTable random_table(Rng& rng, std::size_t n, bool ties, std::size_t query_index = 0) {
    ScoreTable t;
    t.query_index = query_index;
    t.target_row = rng.below(n);
    t.s.resize(n);
    for (auto& x : t.s) {
        x = rng.uniform(-1.0, 1.0);
        if (ties) x = std::round(x * 4.0) / 4.0;
    }
    t.s_tar = t.s[t.target_row];
    t.delta.resize(n);
    for (std::size_t j = 0; j < n; ++j) t.delta[j] = t.s_tar - t.s[j];
    return t;
}

/// Sort the candidate gaps, locate each one's run of equal values by binary
/// search and keep it when the run's mean position falls inside the band.
/// Absolute mode is a plain filter.
inline std::vector<std::size_t> oracle_mid_zone(const ScoreTable& t, const MidZoneConfig& cfg) {
    std::vector<std::size_t> out;
    std::vector<double> sorted;
    for (std::size_t j = 0; j < t.size(); ++j)
        if (j != t.target_row) sorted.push_back(t.delta[j]);
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    for (std::size_t j = 0; j < t.size(); ++j) {
        if (j == t.target_row) continue;
        if (cfg.mode == BandMode::absolute) {
            if (t.delta[j] >= cfg.alpha && t.delta[j] <= cfg.beta) out.push_back(j);
            continue;
        }
        const auto lo = std::lower_bound(sorted.begin(), sorted.end(), t.delta[j]) - sorted.begin();
        const auto hi = std::upper_bound(sorted.begin(), sorted.end(), t.delta[j]) - sorted.begin();
        const double mean_rank = (static_cast<double>(lo) + static_cast<double>(hi - 1)) / 2.0;
        const double pos = n > 1 ? mean_rank / (n - 1.0) : 0.0;
        if (pos >= cfg.alpha && pos <= cfg.beta) out.push_back(j);
    }
    return out;
}

/// Exhaustive-definition metric oracles. Ranks are computed by counting the
/// rows that beat the target under (score desc, id asc).
inline std::size_t oracle_rank(const std::vector<double>& score, const std::vector<std::string>& ids,
                               const std::vector<bool>& pool, std::size_t target) {
    std::size_t better = 0;
    for (std::size_t j = 0; j < score.size(); ++j)
        if (pool[j] && j != target && (score[j] > score[target] || (score[j] == score[target] && ids[j] < ids[target])))
            ++better;
    return better + 1;
}

inline double oracle_ap(const std::vector<std::size_t>& ranked_rows, const std::set<std::size_t>& rel, std::size_t k) {
    double sum = 0.0;
    for (std::size_t i = 1; i <= std::min(k, ranked_rows.size()); ++i) {
        if (!rel.contains(ranked_rows[i - 1])) continue;
        std::size_t rel_in_top = 0;
        for (std::size_t p = 0; p < i; ++p) rel_in_top += rel.contains(ranked_rows[p]) ? 1 : 0;
        sum += static_cast<double>(rel_in_top) / static_cast<double>(i);
    }
    return sum / static_cast<double>(std::min(rel.size(), k));
}

}  // namespace dqe::testing
