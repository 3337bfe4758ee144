#pragma once

// Query composition: an affine base head over [e_ref; e_txt] plus one linear
// projector per attribute, blended with softplus-positive weights:
//
//   q      = W_q [e_ref; e_txt] + b_q
//   q_a    = W_a e_a                      (zero when e_a is absent)
//   q_star = q + w_color q_color + w_shape q_shape,   w_a = softplus(rho_a)

#include <cmath>
#include <cstdint>

#include "dqe/corpus.hpp"
#include "dqe/rng.hpp"
#include "dqe/vec.hpp"

namespace dqe {

inline double softplus(double x) noexcept {
    // log(1 + e^x) without overflow for large |x|.
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

struct CompositionHead {
    Matrix w_q;      // d x 2d
    Vec b_q;         // d
    Matrix w_color;  // d x d
    Matrix w_shape;  // d x d

    std::size_t dim() const noexcept { return b_q.size(); }

    const Matrix& projector(Attribute a) const { return a == Attribute::color ? w_color : w_shape; }
    Matrix& projector(Attribute a) { return a == Attribute::color ? w_color : w_shape; }

    static CompositionHead zeros(std::size_t dim) {
        return {Matrix(dim, 2 * dim), Vec(dim, 0.0), Matrix(dim, dim), Matrix(dim, dim)};
    }

    void check(std::size_t dim) const {
        if (b_q.size() != dim || w_q.rows != dim || w_q.cols != 2 * dim || w_color.rows != dim ||
            w_color.cols != dim || w_shape.rows != dim || w_shape.cols != dim)
            throw Error(Errc::DimMismatch, "head shape does not match corpus dim");
    }

    friend bool operator==(const CompositionHead&, const CompositionHead&) = default;
};

struct AttributeWeights {
    double rho_color = 0.0;
    double rho_shape = 0.0;

    double rho(Attribute a) const noexcept { return a == Attribute::color ? rho_color : rho_shape; }
    double& rho(Attribute a) noexcept { return a == Attribute::color ? rho_color : rho_shape; }
    double weight(Attribute a) const noexcept { return softplus(rho(a)); }
    double w_color() const noexcept { return softplus(rho_color); }
    double w_shape() const noexcept { return softplus(rho_shape); }

    friend bool operator==(const AttributeWeights&, const AttributeWeights&) = default;
};

struct ComposedQuery {
    Vec q;
    Vec q_color;
    Vec q_shape;
    Vec q_star;

    const Vec& sub(Attribute a) const { return a == Attribute::color ? q_color : q_shape; }
};

/// Entries i.i.d. uniform in [-scale, scale]; attribute weights are not part
/// of the head.
inline CompositionHead init_head(std::size_t dim, std::uint64_t seed, double scale) {
    if (dim == 0) throw Error(Errc::InvalidConfig, "head dim must be >= 1");
    auto head = CompositionHead::zeros(dim);
    Rng rng(seed);
    auto fill = [&](Vec& v) {
        for (auto& x : v) x = rng.uniform(-scale, scale);
    };
    fill(head.w_q.data);
    fill(head.b_q);
    fill(head.w_color.data);
    fill(head.w_shape.data);
    return head;
}

/// [e_ref; e_txt]
inline Vec head_input(const QueryTriplet& t, const EmbeddingMatrix& corpus) {
    const auto ref = corpus.row(t.ref_row);
    Vec x(ref.begin(), ref.end());
    x.insert(x.end(), t.text_emb.begin(), t.text_emb.end());
    return x;
}

inline ComposedQuery forward(const CompositionHead& head, const AttributeWeights& weights, const QueryTriplet& t,
                             const EmbeddingMatrix& corpus) {
    const std::size_t d = corpus.dim();
    head.check(d);
    if (t.text_emb.size() != d) throw Error(Errc::DimMismatch, "text_emb length differs from corpus dim");

    ComposedQuery out{Vec(d), Vec(d, 0.0), Vec(d, 0.0), Vec(d)};
    matvec(head.w_q, head_input(t, corpus), out.q);
    for (std::size_t i = 0; i < d; ++i) out.q[i] += head.b_q[i];

    for (auto a : kAttributes) {
        const auto& e = t.attr(a);
        if (!e) continue;
        if (e->size() != d) throw Error(Errc::DimMismatch, "attr_embs length differs from corpus dim");
        matvec(head.projector(a), *e, a == Attribute::color ? out.q_color : out.q_shape);
    }

    const double wc = weights.w_color();
    const double ws = weights.w_shape();
    for (std::size_t i = 0; i < d; ++i) out.q_star[i] = out.q[i] + wc * out.q_color[i] + ws * out.q_shape[i];
    return out;
}

}  // namespace dqe
