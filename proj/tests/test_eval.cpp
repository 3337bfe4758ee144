#include <gtest/gtest.h>

#include <numeric>

#include "dqe/eval.hpp"
#include "support.hpp"

using namespace dqe;
using namespace dqe::testing;

namespace {

RankedList list_of(std::vector<std::size_t> rows) {
    RankedList r;
    r.rows = std::move(rows);
    r.scores.assign(r.rows.size(), 0.0);
    return r;
}

}  // namespace

TEST(RankCorpus, Examples) {
    const EmbeddingMatrix one(2, {"x"}, {0.3, 0.4});
    EXPECT_EQ(rank_corpus(Vec{1, 0}, one).rows, std::vector<std::size_t>{0});
    const EmbeddingMatrix c(3, {"a", "b", "c"}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    EXPECT_EQ(rank_corpus(Vec{0, 1, 0}, c).rows.front(), 1u);
    EXPECT_THROW(rank_corpus(Vec{1, 0}, one, {0}), Error);
}

TEST(RankCorpus, TiesByAscendingId) {
    const EmbeddingMatrix c(2, {"zeta", "alpha", "mid"}, {1, 0, 1, 0, 0, 1});
    const auto r = rank_corpus(Vec{1, 0}, c);
    EXPECT_EQ(r.rows, (std::vector<std::size_t>{1, 0, 2}));
}

TEST(RankCorpus, MatchesSortOracle) {
    Rng rng(1);
    const auto c = random_corpus(rng, 100, 8, false);
    const auto q = random_vec(rng, 8);
    const auto r = rank_corpus(q, c, {5, 9});
    std::vector<std::size_t> want;
    std::vector<double> score(100);
    for (std::size_t j = 0; j < 100; ++j) {
        double qv = 0, qq = 0, vv = 0;
        for (std::size_t i = 0; i < 8; ++i) qv += q[i] * c.row(j)[i], qq += q[i] * q[i], vv += c.row(j)[i] * c.row(j)[i];
        score[j] = qv / std::sqrt(qq) / std::sqrt(vv);
        if (j != 5 && j != 9) want.push_back(j);
    }
    std::stable_sort(want.begin(), want.end(), [&](auto a, auto b) { return score[a] > score[b]; });
    EXPECT_EQ(r.rows, want);
    for (std::size_t k = 1; k < r.scores.size(); ++k) EXPECT_GE(r.scores[k - 1], r.scores[k]);
}

TEST(Recall, Examples) {
    const std::vector<RankedList> r{list_of({3, 1, 2}), list_of({1, 2, 3})};
    EXPECT_EQ(recall_at_k(r, {3, 1}, 1), 1.0);
    EXPECT_EQ(recall_at_k(r, {3, 3}, 2), 0.5);
    EXPECT_EQ(recall_at_k(r, {2, 3}, 3), 1.0);
    EXPECT_THROW(recall_at_k(r, {3, 1}, 0), Error);
}

TEST(Recall, SubsetExamples) {
    const std::vector<RankedList> r{list_of({0, 1, 2, 3})};
    EXPECT_EQ(recall_subset_at_k(r, {2}, {std::vector<std::size_t>{2, 3}}, 1), 1.0);
    EXPECT_EQ(recall_subset_at_k(r, {3}, {std::vector<std::size_t>{2, 3}}, 1), 0.0);
    EXPECT_THROW(recall_subset_at_k(r, {1}, {std::nullopt}, 1), Error);
    EXPECT_THROW(recall_subset_at_k(r, {1}, {std::vector<std::size_t>{2, 3}}, 1), Error);
}

TEST(Recall, MonotoneSubsetReductionAndPermutation) {
    Rng rng(2);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = 2 + rng.below(30), nq = 1 + rng.below(10);
        std::vector<RankedList> lists;
        std::vector<std::size_t> targets;
        std::vector<std::optional<std::vector<std::size_t>>> whole;
        for (std::size_t q = 0; q < nq; ++q) {
            std::vector<std::size_t> rows(n);
            std::iota(rows.begin(), rows.end(), 0);
            shuffle(rows, rng);
            lists.push_back(list_of(rows));
            targets.push_back(rng.below(n));
            whole.emplace_back(rows);
        }
        double prev = 0.0;
        for (std::size_t k = 1; k <= n; ++k) {
            const double r = recall_at_k(lists, targets, k);
            EXPECT_GE(r, prev);
            EXPECT_EQ(recall_subset_at_k(lists, targets, whole, k), r);
            prev = r;
        }
        EXPECT_EQ(prev, 1.0);
        auto pl = lists;
        auto pt = targets;
        std::reverse(pl.begin(), pl.end());
        std::reverse(pt.begin(), pt.end());
        EXPECT_EQ(recall_at_k(pl, pt, 3), recall_at_k(lists, targets, 3));
    }
}

TEST(MapAtK, Examples) {
    EXPECT_EQ(map_at_k({list_of({4, 1, 2})}, {{4}}, 5), 1.0);
    EXPECT_EQ(map_at_k({list_of({1, 4, 2})}, {{4}}, 5), 0.5);
    // relevant {0, 3, 7} at ranks 1, 4, 8 of 10: (1 + 2/4 + 3/8) / 3
    const auto r = list_of({0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    EXPECT_DOUBLE_EQ(map_at_k({r}, {{0, 3, 7}}, 10), (1.0 + 0.5 + 0.375) / 3.0);
    EXPECT_THROW(map_at_k({r}, {{}}, 5), Error);
}

TEST(MapAtK, BoundsAndPerfectRanking) {
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = 5 + rng.below(20);
        std::vector<std::size_t> rows(n);
        std::iota(rows.begin(), rows.end(), 0);
        shuffle(rows, rng);
        std::set<std::size_t> rel;
        const std::size_t nrel = 1 + rng.below(4);
        for (std::size_t i = 0; i < nrel; ++i) rel.insert(rows[i]);
        const std::size_t k = 1 + rng.below(n);
        EXPECT_EQ(map_at_k({list_of(rows)}, {rel}, k), 1.0);
        shuffle(rows, rng);
        const double m = map_at_k({list_of(rows)}, {rel}, k);
        EXPECT_GE(m, 0.0);
        EXPECT_LE(m, 1.0);
    }
}

TEST(Averages, TableArithmetic) {
    EXPECT_EQ(to_percent(cirr_average(82.53, 78.51) / 100.0), 80.52);
    EXPECT_EQ(round_half_up(cirr_average(82.53, 78.51), 2), 80.52);
    EXPECT_EQ(round_half_up(cirr_average(84.17, 80.14), 2), 82.16);
    EXPECT_EQ(cirr_average(0.37, 0.37), 0.37);
    EXPECT_DOUBLE_EQ(fashioniq_average({{0.4, 0.6}, {0.2, 0.4}}), 0.4);
}

TEST(Averages, RoundHalfUp) {
    EXPECT_EQ(round_half_up(0.125, 2), 0.13);
    EXPECT_EQ(round_half_up(2.5, 0), 3.0);
    EXPECT_EQ(round_half_up(-2.5, 0), -3.0);
    EXPECT_EQ(round_half_up(1.004, 2), 1.0);
    EXPECT_EQ(to_percent(0.26), 26.0);
}

TEST(EvaluateModel, AgreesWithDirectMetrics) {
    Rng rng(4);
    const auto c = random_corpus(rng, 40, 6);
    std::vector<QueryTriplet> ts;
    for (int i = 0; i < 15; ++i) {
        auto t = random_triplet(rng, c, true, i % 2 == 0);
        std::vector<std::string> sub{t.target_id};
        for (int k = 0; k < 3; ++k) {
            auto id = c.id(rng.below(40));
            if (std::find(sub.begin(), sub.end(), id) == sub.end()) sub.push_back(id);
        }
        if (sub.size() < 2) sub.push_back(c.id(t.target_row == 0 ? 1 : 0));
        t.subset_ids = sub;
        validate_triplet(t, c);
        ts.push_back(t);
    }
    const auto h = init_head(6, 3, 0.5);
    const AttributeWeights w{0.1, 0.2};
    EvalOptions opt;
    opt.use_subsets = true;
    std::vector<std::set<std::size_t>> rel;
    for (const auto& t : ts) rel.push_back({t.target_row, (t.target_row + 1) % 40});
    const auto res = evaluate_model(h, w, ts, c, opt, &rel);
    opt.threads = 4;
    const auto res4 = evaluate_model(h, w, ts, c, opt, &rel);
    EXPECT_EQ(res.report.recall_at, res4.report.recall_at);
    EXPECT_EQ(res.report.map_at, res4.report.map_at);

    std::vector<RankedList> lists;
    std::vector<std::size_t> targets;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        lists.push_back(rank_corpus(forward(h, w, ts[i], c).q_star, c, {ts[i].ref_row}));
        targets.push_back(ts[i].target_row);
        EXPECT_EQ(res.ranks[i].target_rank, lists.back().rank_of(targets.back()).value());
    }
    for (auto k : {1, 5, 10, 50}) EXPECT_EQ(res.report.recall_at.at(k), recall_at_k(lists, targets, k));
    for (auto k : {5, 10}) EXPECT_EQ(res.report.map_at.at(k), map_at_k(lists, rel, k));
    ASSERT_TRUE(res.report.average.has_value());
    EXPECT_EQ(*res.report.average, cirr_average(res.report.recall_at.at(5), res.report.recall_subset_at.at(1)));
    for (auto [k, v] : res.report.recall_at) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(EvaluateModel, ReferenceExclusionFlag) {
    // q_star == e_ref so the reference ranks first unless excluded
    const EmbeddingMatrix c(2, {"r", "t", "o"}, {1, 0, 0.8, 0.6, 0, 1});
    QueryTriplet t;
    t.ref_id = "r";
    t.target_id = "t";
    t.text_emb = {0, 0};
    validate_triplet(t, c);
    auto h = CompositionHead::zeros(2);
    h.w_q(0, 0) = h.w_q(1, 1) = 1.0;
    EvalOptions opt;
    EXPECT_EQ(evaluate_model(h, {}, {t}, c, opt).ranks[0].target_rank, 1u);
    opt.exclude_reference = false;
    EXPECT_EQ(evaluate_model(h, {}, {t}, c, opt).ranks[0].target_rank, 2u);
}
