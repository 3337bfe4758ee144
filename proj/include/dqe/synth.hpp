#pragma once

// Synthetic attribute world with known relevance.
//
// Every item is   v = dir(color) + dir(shape) + identity + N(0, sigma^2 I)
// where the color, shape and nuisance directions are orthonormal and the
// identity vector lives in the nuisance span. Identities are drawn from a pool
// so that several items share one, which is what lets a query keep the
// reference's identity while changing its attributes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "dqe/corpus.hpp"
#include "dqe/error.hpp"
#include "dqe/rng.hpp"
#include "dqe/trns.hpp"
#include "dqe/vec.hpp"

namespace dqe {

struct AttributeSchema {
    std::vector<std::string> color_values{"red", "green", "blue", "yellow", "black"};
    std::vector<std::string> shape_values{"round", "square", "triangle", "star", "oval"};
    std::size_t nuisance_dim = 16;

    void validate() const {
        if (color_values.size() < 2 || shape_values.size() < 2)
            throw Error(Errc::InvalidConfig, "each attribute needs at least 2 values");
    }
};

struct WorldOptions {
    double identity_scale = 0.5;
    /// 0 picks n_items / (#colors * #shapes).
    std::size_t identity_pool = 0;
};

struct ItemLabels {
    std::size_t color = 0;
    std::size_t shape = 0;
    friend bool operator==(const ItemLabels&, const ItemLabels&) = default;
};

struct SyntheticWorld {
    AttributeSchema schema;
    EmbeddingMatrix corpus;
    std::vector<ItemLabels> labels;
    std::vector<Vec> color_dirs;
    std::vector<Vec> shape_dirs;
    std::vector<Vec> nuisance_dirs;
    std::vector<Vec> identities;
    std::vector<std::size_t> identity_of;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
};

/// Orthonormal rows via twice-iterated modified Gram-Schmidt on seeded
/// Gaussian vectors.
inline std::vector<Vec> orthonormal_directions(std::size_t count, std::size_t dim, Rng& rng) {
    if (count > dim) throw Error(Errc::DimTooSmall, "more directions than dimensions");
    std::vector<Vec> dirs;
    dirs.reserve(count);
    while (dirs.size() < count) {
        Vec v(dim);
        for (auto& x : v) x = rng.normal();
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& u : dirs) axpy(-dot(u, v), u, v);
        const double n = norm(v);
        if (n < 1e-6) continue;
        for (auto& x : v) x /= n;
        dirs.push_back(std::move(v));
    }
    return dirs;
}

inline std::string item_id(std::size_t i, std::size_t n) {
    const auto width = std::to_string(n > 0 ? n - 1 : 0).size();
    auto s = std::to_string(i);
    return "item_" + std::string(width > s.size() ? width - s.size() : 0, '0') + s;
}

/// Embedding of one item before float rounding: color + shape + identity + noise.
inline Vec compose_item(const SyntheticWorld& w, ItemLabels l, CSpan identity, CSpan noise) {
    Vec v(w.color_dirs.at(l.color));
    axpy(1.0, w.shape_dirs.at(l.shape), v);
    if (!identity.empty()) axpy(1.0, identity, v);
    if (!noise.empty()) axpy(1.0, noise, v);
    return v;
}

inline SyntheticWorld generate_world(const AttributeSchema& schema, std::size_t n_items, std::size_t dim,
                                     double noise_sigma, std::uint64_t seed, const WorldOptions& opt = {}) {
    schema.validate();
    const std::size_t nc = schema.color_values.size();
    const std::size_t ns = schema.shape_values.size();
    if (dim < nc + ns + schema.nuisance_dim)
        throw Error(Errc::DimTooSmall, "dim must be >= #colors + #shapes + nuisance_dim");
    if (n_items == 0) throw Error(Errc::InvalidConfig, "world needs at least one item");
    if (!(noise_sigma >= 0.0)) throw Error(Errc::InvalidConfig, "noise_sigma must be >= 0");

    SyntheticWorld w;
    w.schema = schema;
    w.noise_sigma = noise_sigma;
    w.seed = seed;

    Rng dir_rng(derive_seed(seed, "world.directions"));
    auto dirs = orthonormal_directions(nc + ns + schema.nuisance_dim, dim, dir_rng);
    w.color_dirs.assign(dirs.begin(), dirs.begin() + static_cast<std::ptrdiff_t>(nc));
    w.shape_dirs.assign(dirs.begin() + static_cast<std::ptrdiff_t>(nc),
                        dirs.begin() + static_cast<std::ptrdiff_t>(nc + ns));
    w.nuisance_dirs.assign(dirs.begin() + static_cast<std::ptrdiff_t>(nc + ns), dirs.end());

    const std::size_t pool = opt.identity_pool > 0 ? opt.identity_pool : std::max<std::size_t>(1, n_items / (nc * ns));
    Rng id_rng(derive_seed(seed, "world.identities"));
    w.identities.assign(pool, Vec(dim, 0.0));
    if (schema.nuisance_dim > 0) {
        for (auto& id : w.identities) {
            Vec coef(schema.nuisance_dim);
            for (auto& c : coef) c = id_rng.normal();
            const double n = norm(coef);
            for (std::size_t k = 0; k < coef.size(); ++k) axpy(opt.identity_scale * coef[k] / n, w.nuisance_dirs[k], id);
        }
    }

    Rng item_rng(derive_seed(seed, "world.items"));
    std::vector<std::string> ids;
    Vec data;
    data.reserve(n_items * dim);
    w.labels.reserve(n_items);
    w.identity_of.reserve(n_items);
    Vec noise(dim);
    for (std::size_t i = 0; i < n_items; ++i) {
        ItemLabels l{static_cast<std::size_t>(item_rng.below(nc)), static_cast<std::size_t>(item_rng.below(ns))};
        const auto ident = static_cast<std::size_t>(item_rng.below(pool));
        for (auto& x : noise) x = noise_sigma * item_rng.normal();
        const Vec v = compose_item(w, l, w.identities[ident], noise);
        // Stored at the precision of the on-disk format.
        for (double x : v) data.push_back(static_cast<double>(static_cast<float>(x)));
        w.labels.push_back(l);
        w.identity_of.push_back(ident);
        ids.push_back(item_id(i, n_items));
    }
    w.corpus = EmbeddingMatrix(dim, std::move(ids), std::move(data));
    return w;
}

enum class FlipMode { color, shape, both, mixed };

inline FlipMode parse_flip(const std::string& s) {
    if (s == "color") return FlipMode::color;
    if (s == "shape") return FlipMode::shape;
    if (s == "both") return FlipMode::both;
    if (s == "mixed") return FlipMode::mixed;
    throw Error(Errc::InvalidConfig, "flip must be color, shape, both or mixed", s);
}

inline std::string_view flip_name(FlipMode f) {
    switch (f) {
        case FlipMode::color: return "color";
        case FlipMode::shape: return "shape";
        case FlipMode::both: return "both";
        case FlipMode::mixed: return "mixed";
    }
    return "color";
}

/// Queries change one or both attributes of a random reference item. The
/// target is the item carrying the modified labels whose embedding is nearest
/// (cosine) to e_ref + text_emb. `mixed` draws color, shape or both per query.
/// With subset_size >= 2 each query also gets a subset of that many items
/// containing the target.
inline std::vector<QueryTriplet> generate_triplets(const SyntheticWorld& w, std::size_t n_queries, FlipMode flip,
                                                   std::uint64_t seed, std::size_t subset_size = 0) {
    const std::size_t n = w.corpus.count();
    const std::size_t nc = w.schema.color_values.size();
    const std::size_t ns = w.schema.shape_values.size();
    if (subset_size == 1) throw Error(Errc::InvalidConfig, "subset_size must be 0 or >= 2");
    if (subset_size > n - 1 && subset_size > 0) throw Error(Errc::InvalidConfig, "subset larger than corpus");

    Rng rng(derive_seed(seed, "triplets"));
    std::vector<QueryTriplet> out;
    out.reserve(n_queries);
    constexpr int kMaxAttempts = 1000;
    for (std::size_t qi = 0; qi < n_queries; ++qi) {
        bool made = false;
        for (int attempt = 0; attempt < kMaxAttempts && !made; ++attempt) {
            const auto ref = static_cast<std::size_t>(rng.below(n));
            FlipMode f = flip;
            if (f == FlipMode::mixed) f = static_cast<FlipMode>(rng.below(3));
            const bool fc = f == FlipMode::color || f == FlipMode::both;
            const bool fs = f == FlipMode::shape || f == FlipMode::both;
            const ItemLabels old = w.labels[ref];
            ItemLabels want = old;
            if (fc) {
                want.color = static_cast<std::size_t>(rng.below(nc - 1));
                if (want.color >= old.color) ++want.color;
            }
            if (fs) {
                want.shape = static_cast<std::size_t>(rng.below(ns - 1));
                if (want.shape >= old.shape) ++want.shape;
            }

            QueryTriplet t;
            t.ref_id = w.corpus.id(ref);
            t.ref_row = ref;
            t.text_emb.assign(w.corpus.dim(), 0.0);
            if (fc) {
                axpy(1.0, w.color_dirs[want.color], t.text_emb);
                axpy(-1.0, w.color_dirs[old.color], t.text_emb);
                t.attr(Attribute::color) = w.color_dirs[want.color];
            }
            if (fs) {
                axpy(1.0, w.shape_dirs[want.shape], t.text_emb);
                axpy(-1.0, w.shape_dirs[old.shape], t.text_emb);
                t.attr(Attribute::shape) = w.shape_dirs[want.shape];
            }

            Vec ideal(w.corpus.row(ref).begin(), w.corpus.row(ref).end());
            axpy(1.0, t.text_emb, ideal);
            std::size_t best = n;
            double best_cos = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == ref || w.labels[j] != want) continue;
                const double c = cosine(ideal, w.corpus.row(j));
                if (best == n || c > best_cos) {
                    best = j;
                    best_cos = c;
                }
            }
            if (best == n) continue;
            t.target_row = best;
            t.target_id = w.corpus.id(best);

            if (subset_size >= 2) {
                std::vector<std::string> subset{t.target_id};
                std::set<std::size_t> used{ref, best};
                while (subset.size() < subset_size) {
                    const auto j = static_cast<std::size_t>(rng.below(n));
                    if (used.insert(j).second) subset.push_back(w.corpus.id(j));
                }
                shuffle(subset, rng);
                t.subset_ids = std::move(subset);
            }
            out.push_back(std::move(t));
            made = true;
        }
        if (!made)
            throw Error(Errc::NoValidTarget, "no item carries the requested label combination",
                        "query=" + std::to_string(qi));
    }
    return out;
}

/// Items whose labels equal the target's (the modified combination).
inline std::set<std::size_t> relevant_set(const SyntheticWorld& w, const QueryTriplet& t) {
    const auto want = w.labels.at(t.target_row);
    std::set<std::size_t> out;
    for (std::size_t j = 0; j < w.labels.size(); ++j)
        if (w.labels[j] == want) out.insert(j);
    return out;
}

/// Share of all mid-zone members (pooled over queries) that are relevant to
/// their own query.
inline double false_negative_rate(const std::vector<NegativeSet>& sets, const SyntheticWorld& w,
                                  const std::vector<QueryTriplet>& triplets) {
    std::size_t members = 0;
    std::size_t relevant = 0;
    for (const auto& s : sets) {
        const auto rel = relevant_set(w, triplets.at(s.query_index));
        for (auto j : s.members) {
            ++members;
            if (rel.contains(j)) ++relevant;
        }
    }
    return members == 0 ? 0.0 : static_cast<double>(relevant) / static_cast<double>(members);
}

inline std::string labels_csv(const SyntheticWorld& w) {
    std::string out = "item_id,color,shape\n";
    for (std::size_t i = 0; i < w.labels.size(); ++i)
        out += w.corpus.id(i) + "," + w.schema.color_values[w.labels[i].color] + "," +
               w.schema.shape_values[w.labels[i].shape] + "\n";
    return out;
}

}  // namespace dqe
