#pragma once

// Training loop: warm-up on uniform non-target negatives, then interval-based
// rebuilds of every query's mid-zone set, batch-mean loss, AdamW with a
// step-wise cosine learning rate. Checkpoints capture everything the loop
// needs to continue bit-identically.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dqe/bytes.hpp"
#include "dqe/compose.hpp"
#include "dqe/corpus.hpp"
#include "dqe/loss.hpp"
#include "dqe/parallel.hpp"
#include "dqe/rng.hpp"
#include "dqe/sha256.hpp"
#include "dqe/trns.hpp"

namespace dqe {

// ---------------------------------------------------------------------------
// Parameters as one flat vector: W_q, b_q, W_color, W_shape, rho_color, rho_shape.

inline Vec flatten(const CompositionHead& h, const AttributeWeights& w) {
    Vec out;
    out.reserve(h.w_q.data.size() + h.b_q.size() + h.w_color.data.size() + h.w_shape.data.size() + 2);
    out.insert(out.end(), h.w_q.data.begin(), h.w_q.data.end());
    out.insert(out.end(), h.b_q.begin(), h.b_q.end());
    out.insert(out.end(), h.w_color.data.begin(), h.w_color.data.end());
    out.insert(out.end(), h.w_shape.data.begin(), h.w_shape.data.end());
    out.push_back(w.rho_color);
    out.push_back(w.rho_shape);
    return out;
}

inline Vec flatten(const GradientBundle& g) {
    Vec out;
    out.insert(out.end(), g.d_w_q.data.begin(), g.d_w_q.data.end());
    out.insert(out.end(), g.d_b_q.begin(), g.d_b_q.end());
    out.insert(out.end(), g.d_w_color.data.begin(), g.d_w_color.data.end());
    out.insert(out.end(), g.d_w_shape.data.begin(), g.d_w_shape.data.end());
    out.push_back(g.d_rho_color);
    out.push_back(g.d_rho_shape);
    return out;
}

inline std::size_t parameter_count(std::size_t dim) { return 2 * dim * dim + dim + 2 * dim * dim + 2; }

inline void unflatten(CSpan flat, CompositionHead& h, AttributeWeights& w) {
    const std::size_t d = h.dim();
    if (flat.size() != parameter_count(d)) throw Error(Errc::ShapeMismatch, "flat parameter length");
    std::size_t k = 0;
    auto take = [&](Vec& dst) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(k),
                  flat.begin() + static_cast<std::ptrdiff_t>(k + dst.size()), dst.begin());
        k += dst.size();
    };
    take(h.w_q.data);
    take(h.b_q);
    take(h.w_color.data);
    take(h.w_shape.data);
    w.rho_color = flat[k++];
    w.rho_shape = flat[k++];
}

// ---------------------------------------------------------------------------
// Optimizer and schedule

struct OptimizerState {
    Vec m;
    Vec v;
    std::uint64_t t = 0;
    double lr_base = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-2;

    static OptimizerState for_size(std::size_t n, double lr_base, double weight_decay, double beta1 = 0.9,
                                   double beta2 = 0.999, double epsilon = 1e-8) {
        return {Vec(n, 0.0), Vec(n, 0.0), 0, lr_base, beta1, beta2, epsilon, weight_decay};
    }

    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Decoupled weight decay:
///   theta -= lr_t * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
inline void adamw_step(OptimizerState& s, CSpan grads, MSpan params, double lr_t) {
    if (grads.size() != params.size() || s.m.size() != params.size() || s.v.size() != params.size())
        throw Error(Errc::ShapeMismatch, "optimizer, gradient and parameter sizes differ");
    ++s.t;
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
        const double m_hat = s.m[i] / bc1;
        const double v_hat = s.v[i] / bc2;
        params[i] -= lr_t * (m_hat / (std::sqrt(v_hat) + s.epsilon) + s.weight_decay * params[i]);
    }
}

inline double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr_base) {
    if (total_steps == 0 || step > total_steps) throw Error(Errc::InvalidConfig, "step outside [0, total_steps]");
    return lr_base * 0.5 *
           (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

// ---------------------------------------------------------------------------
// Configuration

enum class KlScope { full_corpus, in_batch };

struct TrainConfig {
    int total_epochs = 30;
    int batch_size = 128;
    std::uint64_t seed = 0;
    RefreshSchedule schedule{0, 5, 30};
    LossConfig loss;
    MidZoneConfig midzone;
    double lr_base = 1e-3;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double init_scale = 0.05;
    double init_rho = 0.0;
    /// Sample one negative per query at each rebuild and reuse it for the
    /// whole interval, instead of re-drawing from the frozen set per visit.
    bool freeze_sample = false;
    KlScope kl_scope = KlScope::full_corpus;

    // Run control; not part of the config hash.
    unsigned threads = 1;
    int stop_after_epoch = 0;  // 0 = run to total_epochs

    void validate() const {
        if (total_epochs < 1) throw Error(Errc::InvalidConfig, "total_epochs must be >= 1");
        if (batch_size < 1) throw Error(Errc::InvalidConfig, "batch_size must be >= 1");
        if (schedule.total_epochs != total_epochs)
            throw Error(Errc::InvalidConfig, "schedule total_epochs differs from total_epochs");
        schedule.validate();
        loss.validate();
        midzone.validate();
        if (!(lr_base >= 0.0) || !(weight_decay >= 0.0) || !(epsilon > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) ||
            !(beta2 >= 0.0 && beta2 < 1.0) || !(init_scale >= 0.0) || !std::isfinite(init_rho))
            throw Error(Errc::InvalidConfig, "optimizer or init hyperparameter out of range");
        if (stop_after_epoch < 0 || stop_after_epoch > total_epochs)
            throw Error(Errc::InvalidConfig, "stop_after_epoch outside [0, total_epochs]");
    }
};

/// FNV-1a over a canonical rendering of every trajectory-relevant field.
inline std::uint64_t config_hash(const TrainConfig& c) {
    char buf[64];
    std::string s;
    auto f = [&](double x) {
        std::snprintf(buf, sizeof buf, "%a;", x);
        s += buf;
    };
    auto i = [&](long long x) { s += std::to_string(x) + ";"; };
    i(c.total_epochs);
    i(c.batch_size);
    i(static_cast<long long>(c.seed));
    i(c.schedule.warmup_epochs);
    i(c.schedule.num_intervals);
    i(c.schedule.total_epochs);
    f(c.loss.tau);
    f(c.loss.margin_main);
    f(c.loss.margin_color);
    f(c.loss.margin_shape);
    f(c.loss.lambda_rank);
    i(c.midzone.mode == BandMode::quantile ? 0 : 1);
    f(c.midzone.alpha);
    f(c.midzone.beta);
    f(c.lr_base);
    f(c.weight_decay);
    f(c.beta1);
    f(c.beta2);
    f(c.epsilon);
    f(c.init_scale);
    f(c.init_rho);
    i(c.freeze_sample ? 1 : 0);
    i(c.kl_scope == KlScope::full_corpus ? 0 : 1);
    return fnv1a64(s);
}

// ---------------------------------------------------------------------------
// State and logs

inline constexpr std::size_t kNoSample = static_cast<std::size_t>(-1);

struct TrainState {
    CompositionHead head;
    AttributeWeights weights;
    OptimizerState optimizer;
    int epoch = 0;  // next epoch to run
    std::uint64_t step = 0;
    std::uint64_t refresh_count = 0;
    Rng sampler;
    std::uint64_t config_hash = 0;
    std::vector<NegativeSet> sets;        // empty until the first rebuild
    std::vector<std::size_t> frozen;      // per query, kNoSample when unset
    std::vector<GapWindow> windows;       // calibrated at the first rebuild

    friend bool operator==(const TrainState& a, const TrainState& b) {
        auto same_windows = [&] {
            if (a.windows.size() != b.windows.size()) return false;
            for (std::size_t i = 0; i < a.windows.size(); ++i)
                if (a.windows[i].lo != b.windows[i].lo || a.windows[i].hi != b.windows[i].hi) return false;
            return true;
        };
        return a.head == b.head && a.weights == b.weights && a.optimizer == b.optimizer && a.epoch == b.epoch &&
               a.step == b.step && a.refresh_count == b.refresh_count && a.sampler == b.sampler &&
               a.config_hash == b.config_hash && a.sets == b.sets && a.frozen == b.frozen && same_windows();
    }
};

struct StepLog {
    int epoch = 0;
    std::uint64_t step = 0;
    LossBreakdown loss;  // batch mean
    double lr = 0.0;
};

/// One row per mid-zone rebuild, plus a final measurement row after the last
/// epoch (rebuild == false) that scores the finished model the same way.
struct RefreshLog {
    int epoch = 0;
    double mean_set_size = 0.0;
    /// Mean count of candidates inside each query's gap window calibrated at
    /// the first rebuild.
    double mean_window_size = 0.0;
    bool rebuild = true;
};

struct TrainResult {
    TrainState state;
    std::vector<StepLog> steps;
    std::vector<RefreshLog> refreshes;
};

inline std::uint64_t steps_per_epoch(std::size_t n_queries, int batch_size) {
    return (n_queries + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size);
}

inline TrainState initial_state(const TrainConfig& cfg, std::size_t dim, std::size_t n_queries) {
    TrainState s;
    s.head = init_head(dim, derive_seed(cfg.seed, "init"), cfg.init_scale);
    s.weights = {cfg.init_rho, cfg.init_rho};
    s.optimizer = OptimizerState::for_size(parameter_count(dim), cfg.lr_base, cfg.weight_decay, cfg.beta1, cfg.beta2,
                                           cfg.epsilon);
    s.sampler = Rng(derive_seed(cfg.seed, "negatives"));
    s.config_hash = config_hash(cfg);
    s.frozen.assign(n_queries, kNoSample);
    return s;
}

/// Score tables for every query under the current model.
inline std::vector<ScoreTable> score_queries(const CompositionHead& head, const AttributeWeights& weights,
                                             const std::vector<QueryTriplet>& triplets,
                                             const EmbeddingMatrix& corpus, unsigned threads) {
    std::vector<ScoreTable> tables(triplets.size());
    parallel_for(triplets.size(), threads, [&](std::size_t i) {
        const auto cq = forward(head, weights, triplets[i], corpus);
        tables[i] = score_all(cq.q_star, corpus, triplets[i].target_row, i);
    });
    return tables;
}

namespace detail {

inline RefreshLog rebuild_sets(TrainState& s, const TrainConfig& cfg, const std::vector<QueryTriplet>& triplets,
                               const EmbeddingMatrix& corpus, int epoch, bool commit) {
    const auto tables = score_queries(s.head, s.weights, triplets, corpus, cfg.threads);
    std::vector<NegativeSet> sets(triplets.size());
    for (std::size_t i = 0; i < triplets.size(); ++i) sets[i] = mid_zone(tables[i], cfg.midzone, epoch);

    const bool calibrate = s.windows.empty();
    if (calibrate && commit) {
        s.windows.resize(triplets.size());
        for (std::size_t i = 0; i < triplets.size(); ++i) s.windows[i] = gap_window(sets[i], tables[i]);
    }
    double window_total = 0.0;
    for (std::size_t i = 0; i < triplets.size() && !s.windows.empty(); ++i)
        window_total += static_cast<double>(count_in_window(tables[i], s.windows[i]));

    RefreshLog row{epoch, log_set_size(sets), window_total / static_cast<double>(triplets.size()), commit};
    if (commit) {
        if (cfg.freeze_sample) {
            for (std::size_t i = 0; i < triplets.size(); ++i)
                s.frozen[i] = sample_negative(sets[i], tables[i], cfg.midzone, s.sampler);
        }
        s.sets = std::move(sets);
        ++s.refresh_count;
    }
    return row;
}

}  // namespace detail

struct BatchOutcome {
    LossBreakdown mean;
    GradientBundle grad;
};

/// Batch-mean loss and gradient; per-query terms are reduced in batch order.
inline BatchOutcome batch_gradient(const CompositionHead& head, const AttributeWeights& weights, const LossConfig& loss,
                                   const std::vector<QueryTriplet>& triplets, std::span<const std::size_t> batch,
                                   std::span<const std::size_t> negatives, const EmbeddingMatrix& corpus,
                                   KlScope scope, unsigned threads) {
    std::vector<std::size_t> in_batch;
    if (scope == KlScope::in_batch) {
        std::set<std::size_t> uniq;
        for (auto qi : batch) uniq.insert(triplets[qi].target_row);
        for (auto n : negatives) uniq.insert(n);
        in_batch.assign(uniq.begin(), uniq.end());
    }
    std::vector<LossResult> parts(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t k) {
        parts[k] = evaluate_loss(head, weights, loss, triplets[batch[k]], corpus, negatives[k], true, in_batch);
    });
    BatchOutcome out{{}, GradientBundle::zeros(corpus.dim())};
    for (const auto& p : parts) {
        out.mean.l_kl += p.loss.l_kl;
        out.mean.l_main += p.loss.l_main;
        out.mean.l_color += p.loss.l_color;
        out.mean.l_shape += p.loss.l_shape;
        out.mean.l_total += p.loss.l_total;
        out.grad.add(p.grad);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.mean.l_kl *= inv;
    out.mean.l_main *= inv;
    out.mean.l_color *= inv;
    out.mean.l_shape *= inv;
    out.mean.l_total *= inv;
    out.mean.w_color = weights.w_color();
    out.mean.w_shape = weights.w_shape();
    out.grad.scale(inv);
    return out;
}

/// Runs (or resumes) training. With `resume`, the state must come from a run
/// with the same config hash; training continues at resume->epoch.
inline TrainResult train(const TrainConfig& cfg, const std::vector<QueryTriplet>& triplets,
                         const EmbeddingMatrix& corpus, std::optional<TrainState> resume = std::nullopt) {
    cfg.validate();
    if (triplets.empty()) throw Error(Errc::InvalidConfig, "no training triplets");
    if (corpus.count() < 2) throw Error(Errc::NoCandidates, "corpus holds only the target", "query=0");

    TrainResult res;
    auto& s = res.state;
    if (resume) {
        s = std::move(*resume);
        if (s.config_hash != config_hash(cfg))
            throw Error(Errc::BadCheckpoint, "checkpoint was written under a different config");
        s.head.check(corpus.dim());
        if (s.frozen.size() != triplets.size() || (!s.sets.empty() && s.sets.size() != triplets.size()))
            throw Error(Errc::BadCheckpoint, "checkpoint query count differs from dataset");
    } else {
        s = initial_state(cfg, corpus.dim(), triplets.size());
    }

    const auto refresh = refresh_epochs(cfg.schedule);
    const std::uint64_t per_epoch = steps_per_epoch(triplets.size(), cfg.batch_size);
    const std::uint64_t total_steps = per_epoch * static_cast<std::uint64_t>(cfg.total_epochs);
    const int stop = cfg.stop_after_epoch > 0 ? cfg.stop_after_epoch : cfg.total_epochs;

    std::vector<std::size_t> order(triplets.size());
    for (; s.epoch < stop; ++s.epoch) {
        const int epoch = s.epoch;
        if (std::find(refresh.begin(), refresh.end(), epoch) != refresh.end())
            res.refreshes.push_back(detail::rebuild_sets(s, cfg, triplets, corpus, epoch, true));
        const bool warm = s.sets.empty();

        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffler(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        shuffle(order, shuffler);

        for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
            const std::span<const std::size_t> batch(order.data() + lo, hi - lo);

            std::vector<std::size_t> negatives(batch.size());
            std::vector<ScoreTable> fallback_tables;
            for (std::size_t k = 0; k < batch.size(); ++k) {
                const auto qi = batch[k];
                const auto& t = triplets[qi];
                if (warm) {
                    negatives[k] = sample_any_but(corpus.count(), t.target_row, s.sampler, qi);
                } else if (cfg.freeze_sample && s.frozen[qi] != kNoSample) {
                    negatives[k] = s.frozen[qi];
                } else if (!s.sets[qi].empty()) {
                    negatives[k] = s.sets[qi].members[s.sampler.below(s.sets[qi].size())];
                } else {
                    // Empty band: deterministic fallback from current scores.
                    const auto cq = forward(s.head, s.weights, t, corpus);
                    negatives[k] = fallback_negative(score_all(cq.q_star, corpus, t.target_row, qi), cfg.midzone);
                }
            }

            auto outcome = batch_gradient(s.head, s.weights, cfg.loss, triplets, batch, negatives, corpus,
                                          cfg.kl_scope, cfg.threads);
            if (!std::isfinite(outcome.mean.l_total))
                throw Error(Errc::InvalidConfig, "non-finite loss", "step=" + std::to_string(s.step));
            const double lr = cosine_lr(s.step, total_steps, cfg.lr_base);
            Vec params = flatten(s.head, s.weights);
            adamw_step(s.optimizer, flatten(outcome.grad), params, lr);
            unflatten(params, s.head, s.weights);
            res.steps.push_back({epoch, s.step, outcome.mean, lr});
            ++s.step;
        }
    }
    if (s.epoch == cfg.total_epochs && !refresh.empty())
        res.refreshes.push_back(detail::rebuild_sets(s, cfg, triplets, corpus, cfg.total_epochs, false));
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoint container
//
//   "DQE1" | u32 version | u64 config hash | u32 dim | u64 epoch | u64 step |
//   u64 refresh count | u64 rng key | u64 rng counter |
//   u64 n + n f64 parameters | optimizer: u64 t, 5 f64 hyper, n f64 m, n f64 v |
//   u64 queries | u8 has_sets, per query (i64 epoch, u64 k, k u64 rows) |
//   per query u64 frozen | u8 has_windows, per query (f64 lo, f64 hi) |
//   u64 FNV-1a of everything before it

inline constexpr std::string_view kCheckpointMagic = "DQE1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> encode_checkpoint(const TrainState& s) {
    ByteWriter w;
    w.raw(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.u64(s.config_hash);
    w.u32(static_cast<std::uint32_t>(s.head.dim()));
    w.u64(static_cast<std::uint64_t>(s.epoch));
    w.u64(s.step);
    w.u64(s.refresh_count);
    w.u64(s.sampler.key());
    w.u64(s.sampler.counter());
    const Vec params = flatten(s.head, s.weights);
    w.u64(params.size());
    for (double x : params) w.f64(x);
    const auto& o = s.optimizer;
    w.u64(o.t);
    for (double x : {o.lr_base, o.beta1, o.beta2, o.epsilon, o.weight_decay}) w.f64(x);
    if (o.m.size() != params.size() || o.v.size() != params.size())
        throw Error(Errc::ShapeMismatch, "optimizer moments do not match parameters");
    for (double x : o.m) w.f64(x);
    for (double x : o.v) w.f64(x);
    w.u64(s.frozen.size());
    w.uint<std::uint8_t>(s.sets.empty() ? 0 : 1);
    for (const auto& set : s.sets) {
        w.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(set.defined_at_epoch)));
        w.u64(set.members.size());
        for (auto j : set.members) w.u64(j);
    }
    for (auto f : s.frozen) w.u64(f);
    w.uint<std::uint8_t>(s.windows.empty() ? 0 : 1);
    for (const auto& win : s.windows) {
        w.f64(win.lo);
        w.f64(win.hi);
    }
    auto bytes = std::move(w).bytes();
    const auto h = fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    ByteWriter tail;
    tail.u64(h);
    bytes.insert(bytes.end(), tail.bytes().begin(), tail.bytes().end());
    return bytes;
}

inline TrainState decode_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 12 + 8) throw Error(Errc::BadCheckpoint, "checkpoint too short");
    if (!std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin()))
        throw Error(Errc::BadMagic, "checkpoint does not start with DQE1");
    const auto body = bytes.first(bytes.size() - 8);
    ByteReader tail(bytes.last(8));
    if (tail.u64() != fnv1a64(std::string_view(reinterpret_cast<const char*>(body.data()), body.size())))
        throw Error(Errc::BadCheckpoint, "checkpoint integrity hash mismatch");
    try {
        ByteReader r(body);
        if (r.raw(4) != kCheckpointMagic) throw Error(Errc::BadMagic, "checkpoint does not start with DQE1");
        if (r.u32() != kCheckpointVersion) throw Error(Errc::BadCheckpoint, "unsupported checkpoint version");
        TrainState s;
        s.config_hash = r.u64();
        const std::size_t dim = r.u32();
        if (dim == 0) throw Error(Errc::BadCheckpoint, "zero dim");
        s.epoch = static_cast<int>(r.u64());
        s.step = r.u64();
        s.refresh_count = r.u64();
        const auto key = r.u64();
        const auto counter = r.u64();
        s.sampler = Rng(key, counter);
        const auto n = r.u64();
        if (n != parameter_count(dim)) throw Error(Errc::BadCheckpoint, "parameter count does not match dim");
        Vec params(n);
        for (auto& x : params) x = r.f64();
        s.head = CompositionHead::zeros(dim);
        unflatten(params, s.head, s.weights);
        auto& o = s.optimizer;
        o.t = r.u64();
        o.lr_base = r.f64();
        o.beta1 = r.f64();
        o.beta2 = r.f64();
        o.epsilon = r.f64();
        o.weight_decay = r.f64();
        o.m.resize(n);
        o.v.resize(n);
        for (auto& x : o.m) x = r.f64();
        for (auto& x : o.v) x = r.f64();
        const auto nq = r.u64();
        if (nq > r.remaining()) throw Error(Errc::BadCheckpoint, "query count exceeds payload");
        if (r.uint<std::uint8_t>() != 0) {
            s.sets.resize(nq);
            for (std::size_t i = 0; i < nq; ++i) {
                s.sets[i].query_index = i;
                s.sets[i].defined_at_epoch = static_cast<int>(static_cast<std::int64_t>(r.u64()));
                const auto k = r.u64();
                if (k > r.remaining() / 8) throw Error(Errc::BadCheckpoint, "set size exceeds payload");
                s.sets[i].members.resize(k);
                for (auto& j : s.sets[i].members) j = r.u64();
            }
        }
        s.frozen.resize(nq);
        for (auto& f : s.frozen) f = r.u64();
        if (r.uint<std::uint8_t>() != 0) {
            s.windows.resize(nq);
            for (auto& win : s.windows) {
                win.lo = r.f64();
                win.hi = r.f64();
            }
        }
        if (r.remaining() != 0) throw Error(Errc::BadCheckpoint, "trailing bytes in checkpoint");
        return s;
    } catch (const Error& e) {
        if (e.code() == Errc::TruncatedFile) throw Error(Errc::BadCheckpoint, "checkpoint truncated", e.where());
        throw;
    }
}

inline void save_checkpoint(const std::string& path, const TrainState& s) { write_file_bytes(path, encode_checkpoint(s)); }

inline TrainState load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

// ---------------------------------------------------------------------------
// CSV logs

inline std::string format_real(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string training_log_csv(const std::vector<StepLog>& steps, bool header = true) {
    std::string out = header ? "epoch,step,l_kl,l_main,l_color,l_shape,l_total,lr,w_color,w_shape\n" : "";
    for (const auto& r : steps) {
        out += std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + format_real(r.loss.l_kl) + "," +
               format_real(r.loss.l_main) + "," + format_real(r.loss.l_color) + "," + format_real(r.loss.l_shape) +
               "," + format_real(r.loss.l_total) + "," + format_real(r.lr) + "," + format_real(r.loss.w_color) + "," +
               format_real(r.loss.w_shape) + "\n";
    }
    return out;
}

/// Rebuild rows only; columns epoch, mean_set_size.
inline std::string refresh_log_csv(const std::vector<RefreshLog>& rows, bool header = true) {
    std::string out = header ? "epoch,mean_set_size\n" : "";
    for (const auto& r : rows)
        if (r.rebuild) out += std::to_string(r.epoch) + "," + format_real(r.mean_set_size) + "\n";
    return out;
}

/// Every row including the final measurement, with the calibrated-window count.
inline std::string size_trend_csv(const std::vector<RefreshLog>& rows, bool header = true) {
    std::string out = header ? "epoch,mean_set_size,mean_window_size,rebuild\n" : "";
    for (const auto& r : rows)
        out += std::to_string(r.epoch) + "," + format_real(r.mean_set_size) + "," + format_real(r.mean_window_size) +
               "," + (r.rebuild ? "1" : "0") + "\n";
    return out;
}

}  // namespace dqe
