#pragma once

// Training objective for one query and one sampled negative:
//
//   L_total = L_kl + lambda_rank * L_main + w_color * L_color + w_shape * L_shape
//
//   L_kl   = KL(one-hot || softmax([s_tar, s_j...] / tau)) = -log p[0]
//   L_main = max(0, m - s_tar + s_neg)
//   L_a    = max(0, m_a - cos(q_a, v_tar) + cos(q_a, v_neg))
//
// with hand-derived gradients for every parameter of the composition head and
// both attribute pre-weights. rho_a receives gradient through q_star and
// through its direct multiplier on L_a.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "dqe/compose.hpp"
#include "dqe/corpus.hpp"
#include "dqe/trns.hpp"
#include "dqe/vec.hpp"

namespace dqe {

struct LossConfig {
    double tau = 0.07;
    double margin_main = 0.2;
    double margin_color = 0.2;
    double margin_shape = 0.2;
    double lambda_rank = 1.0;

    double margin(Attribute a) const noexcept { return a == Attribute::color ? margin_color : margin_shape; }

    void validate() const {
        if (!(tau > 0.0) || !std::isfinite(tau)) throw Error(Errc::InvalidConfig, "tau must be > 0");
        if (!(lambda_rank >= 0.0)) throw Error(Errc::InvalidConfig, "lambda_rank must be >= 0");
        if (!std::isfinite(margin_main) || !std::isfinite(margin_color) || !std::isfinite(margin_shape))
            throw Error(Errc::InvalidConfig, "margins must be finite");
    }
};

struct LossBreakdown {
    double l_kl = 0.0;
    double l_main = 0.0;
    double l_color = 0.0;
    double l_shape = 0.0;
    double l_total = 0.0;
    double w_color = 0.0;
    double w_shape = 0.0;
    /// Pre-clamp hinge arguments (main, color, shape); NaN for an absent
    /// attribute term. Used to stay clear of kinks in gradient checks.
    std::array<double, 3> hinge_args{0.0, std::numeric_limits<double>::quiet_NaN(),
                                     std::numeric_limits<double>::quiet_NaN()};

    double attr(Attribute a) const noexcept { return a == Attribute::color ? l_color : l_shape; }
    double& attr(Attribute a) noexcept { return a == Attribute::color ? l_color : l_shape; }

    double kink_distance() const noexcept {
        double d = std::numeric_limits<double>::infinity();
        for (double a : hinge_args)
            if (!std::isnan(a)) d = std::min(d, std::abs(a));
        return d;
    }
};

struct GradientBundle {
    Matrix d_w_q;
    Vec d_b_q;
    Matrix d_w_color;
    Matrix d_w_shape;
    double d_rho_color = 0.0;
    double d_rho_shape = 0.0;

    static GradientBundle zeros(std::size_t dim) {
        return {Matrix(dim, 2 * dim), Vec(dim, 0.0), Matrix(dim, dim), Matrix(dim, dim), 0.0, 0.0};
    }

    Matrix& d_projector(Attribute a) { return a == Attribute::color ? d_w_color : d_w_shape; }
    double& d_rho(Attribute a) { return a == Attribute::color ? d_rho_color : d_rho_shape; }

    void add(const GradientBundle& o) {
        auto acc = [](Vec& a, const Vec& b) {
            if (a.size() != b.size()) throw Error(Errc::ShapeMismatch, "gradient shapes differ");
            for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
        };
        acc(d_w_q.data, o.d_w_q.data);
        acc(d_b_q, o.d_b_q);
        acc(d_w_color.data, o.d_w_color.data);
        acc(d_w_shape.data, o.d_w_shape.data);
        d_rho_color += o.d_rho_color;
        d_rho_shape += o.d_rho_shape;
    }

    void scale(double s) {
        for (Vec* v : {&d_w_q.data, &d_b_q, &d_w_color.data, &d_w_shape.data})
            for (auto& x : *v) x *= s;
        d_rho_color *= s;
        d_rho_shape *= s;
    }

    friend bool operator==(const GradientBundle&, const GradientBundle&) = default;
};

// ---------------------------------------------------------------------------
// Elementary pieces

inline Vec softmax_temp(CSpan scores, double tau) {
    if (!(tau > 0.0)) throw Error(Errc::InvalidConfig, "tau must be > 0");
    Vec p(scores.size());
    if (scores.empty()) return p;
    const double mx = *std::max_element(scores.begin(), scores.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        p[i] = std::exp((scores[i] - mx) / tau);
        sum += p[i];
    }
    for (auto& x : p) x /= sum;
    return p;
}

/// KL against the one-hot distribution on index 0.
inline double kl_one_hot(CSpan p_pred) {
    if (p_pred.empty() || p_pred[0] == 0.0)
        throw Error(Errc::DegenerateProbability, "target probability is zero");
    return -std::log(p_pred[0]);
}

inline double hinge(double margin, double s_pos, double s_neg) { return std::max(0.0, margin - s_pos + s_neg); }

inline double attr_hinge(CSpan sub_query, CSpan v_tar, CSpan v_neg, double margin) {
    return hinge(margin, cosine(sub_query, v_tar), cosine(sub_query, v_neg));
}

namespace detail {

/// Cosine with zero-norm guard: value 0 and no gradient through a zero
/// vector. Corpus rows must be nonzero.
struct CosTerm {
    double value = 0.0;
    double inv_xv = 0.0;   // 1 / (|x| |v|)
    double inv_xx = 0.0;   // 1 / |x|^2

    /// d value / d x accumulated with weight c into g.
    void accumulate_grad(double c, CSpan x, CSpan v, MSpan g) const {
        if (c == 0.0 || inv_xv == 0.0) return;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * (v[i] * inv_xv - value * x[i] * inv_xx);
    }
};

inline CosTerm cos_term(CSpan x, double x_norm, CSpan v) {
    const double nv = norm(v);
    if (nv == 0.0) throw Error(Errc::ZeroVector, "corpus row is zero");
    if (x_norm == 0.0) return {};
    const double iv = 1.0 / (x_norm * nv);
    return {dot(x, v) * iv, iv, 1.0 / (x_norm * x_norm)};
}

}  // namespace detail

struct LossResult {
    LossBreakdown loss;
    GradientBundle grad;
};

/// Loss and (optionally) gradients for one query.
///
/// `kl_candidates` lists the rows competing with the target inside the
/// softmax; empty means every non-target row of the corpus.
inline LossResult evaluate_loss(const CompositionHead& head, const AttributeWeights& weights, const LossConfig& cfg,
                                const QueryTriplet& t, const EmbeddingMatrix& corpus, std::size_t negative_row,
                                bool with_grad = true, std::span<const std::size_t> kl_candidates = {}) {
    cfg.validate();
    const std::size_t d = corpus.dim();
    const std::size_t tar = t.target_row;
    if (negative_row >= corpus.count()) throw Error(Errc::UnknownId, "negative row outside corpus");
    if (negative_row == tar) throw Error(Errc::InvalidConfig, "negative equals target");

    const auto cq = forward(head, weights, t, corpus);
    const double qn = norm(cq.q_star);

    LossResult res;
    auto& L = res.loss;
    L.w_color = weights.w_color();
    L.w_shape = weights.w_shape();

    // Rows in the softmax: target first, then the candidates.
    std::vector<std::size_t> rows;
    if (kl_candidates.empty()) {
        rows.reserve(corpus.count());
        rows.push_back(tar);
        for (std::size_t j = 0; j < corpus.count(); ++j)
            if (j != tar) rows.push_back(j);
    } else {
        rows.push_back(tar);
        for (auto j : kl_candidates) {
            if (j >= corpus.count()) throw Error(Errc::UnknownId, "candidate row outside corpus");
            if (j != tar) rows.push_back(j);
        }
    }

    std::vector<detail::CosTerm> terms(rows.size());
    Vec scores(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        terms[k] = detail::cos_term(cq.q_star, qn, corpus.row(rows[k]));
        scores[k] = terms[k].value;
    }
    const Vec p = softmax_temp(scores, cfg.tau);
    // -log p[0] through log-sum-exp so it stays finite when p[0] underflows.
    {
        const double mx = *std::max_element(scores.begin(), scores.end());
        double sum = 0.0;
        for (double s : scores) sum += std::exp((s - mx) / cfg.tau);
        L.l_kl = std::max(0.0, (mx - scores[0]) / cfg.tau + std::log(sum));
    }

    const auto v_tar = corpus.row(tar);
    const auto v_neg = corpus.row(negative_row);
    const double s_tar = scores[0];
    const auto neg_term = detail::cos_term(cq.q_star, qn, v_neg);
    L.hinge_args[0] = cfg.margin_main - s_tar + neg_term.value;
    L.l_main = std::max(0.0, L.hinge_args[0]);

    struct AttrPart {
        bool present = false;
        detail::CosTerm tar, neg;
        double sub_norm = 0.0;
    };
    std::array<AttrPart, 2> parts;
    for (auto a : kAttributes) {
        auto& part = parts[static_cast<std::size_t>(a)];
        if (!t.attr(a)) continue;
        part.present = true;
        const auto& qa = cq.sub(a);
        part.sub_norm = norm(qa);
        part.tar = detail::cos_term(qa, part.sub_norm, v_tar);
        part.neg = detail::cos_term(qa, part.sub_norm, v_neg);
        const double arg = cfg.margin(a) - part.tar.value + part.neg.value;
        L.hinge_args[1 + static_cast<std::size_t>(a)] = arg;
        L.attr(a) = std::max(0.0, arg);
    }
    L.l_total = L.l_kl + cfg.lambda_rank * L.l_main + L.w_color * L.l_color + L.w_shape * L.l_shape;

    if (!with_grad) return res;

    // d L / d q_star
    Vec g_star(d, 0.0);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const double coeff = (k == 0 ? p[0] - 1.0 : p[k]) / cfg.tau;
        terms[k].accumulate_grad(coeff, cq.q_star, corpus.row(rows[k]), g_star);
    }
    if (L.hinge_args[0] > 0.0) {
        terms[0].accumulate_grad(-cfg.lambda_rank, cq.q_star, v_tar, g_star);
        neg_term.accumulate_grad(cfg.lambda_rank, cq.q_star, v_neg, g_star);
    }

    auto& G = res.grad;
    G = GradientBundle::zeros(d);
    const Vec x = head_input(t, corpus);
    add_outer(1.0, g_star, x, G.d_w_q);
    G.d_b_q = g_star;

    for (auto a : kAttributes) {
        const auto& part = parts[static_cast<std::size_t>(a)];
        if (!part.present) continue;
        const double w = weights.weight(a);
        const auto& qa = cq.sub(a);
        // Through q_star, then through the auxiliary hinge scaled by w_a.
        Vec g_sub(d, 0.0);
        axpy(w, g_star, g_sub);
        if (L.hinge_args[1 + static_cast<std::size_t>(a)] > 0.0) {
            part.neg.accumulate_grad(w, qa, v_neg, g_sub);
            part.tar.accumulate_grad(-w, qa, v_tar, g_sub);
        }
        add_outer(1.0, g_sub, *t.attr(a), G.d_projector(a));
        const double d_w = dot(g_star, qa) + L.attr(a);
        G.d_rho(a) = sigmoid(weights.rho(a)) * d_w;
    }
    return res;
}

inline LossBreakdown total_loss(const CompositionHead& head, const AttributeWeights& weights, const LossConfig& cfg,
                                const QueryTriplet& t, const EmbeddingMatrix& corpus, std::size_t negative_row) {
    return evaluate_loss(head, weights, cfg, t, corpus, negative_row, false).loss;
}

inline GradientBundle backward(const CompositionHead& head, const AttributeWeights& weights, const LossConfig& cfg,
                               const QueryTriplet& t, const EmbeddingMatrix& corpus, std::size_t negative_row) {
    return evaluate_loss(head, weights, cfg, t, corpus, negative_row, true).grad;
}

}  // namespace dqe
