// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "mm3d/error.hpp"
#include "mm3d/masking.hpp"
#include "oracles.hpp"

using namespace mm3d;

namespace {

std::set<PointId> as_set(std::span<const PointId> ids) { return {ids.begin(), ids.end()}; }

bool subset(std::span<const PointId> a, std::span<const PointId> b) {
    const auto sb = as_set(b);
    return std::all_of(a.begin(), a.end(), [&](PointId id) { return sb.count(id) == 1; });
}

// D looked up by id for a scene whose ids are 0..N-1 in row order.
float d_of(const std::vector<float>& d, PointId id) { return d[id]; }

} // namespace

TEST_CASE("retained count rounds half up") {
    CHECK(retained_count(0.3, 10) == 7);
    CHECK(retained_count(0.5, 3) == 2);  // 1.5 -> 2
    CHECK(retained_count(0.25, 2) == 2); // 1.5 -> 2
    CHECK(retained_count(0.0, 9) == 9);
    CHECK(retained_count(0.7, 1500) == 450);
}

TEST_CASE("rank_by_statistics examples") {
    const std::vector<PointId> ids = {0, 1, 2};
    CHECK(rank_by_statistics(std::vector<float>{0.2f, 0.9f, 0.5f}, ids) == std::vector<PointId>{1, 2, 0});
    CHECK(rank_by_statistics(std::vector<float>{0.5f, 0.5f}, std::vector<PointId>{0, 1}) ==
          std::vector<PointId>{0, 1});
    CHECK(rank_by_statistics(std::vector<float>{0.5f, 0.5f}, std::vector<PointId>{4, 2}) ==
          std::vector<PointId>{2, 4});
}

TEST_CASE("rank_by_statistics agrees with a stable sort") {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> level(0, 9);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 30 + trial;
        std::vector<float> d(n);
        std::vector<PointId> ids(n);
        for (std::size_t i = 0; i < n; ++i) {
            d[i] = 0.1f * float(level(rng));
            ids[i] = static_cast<PointId>(i);
        }
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] > d[b]; });
        std::vector<PointId> want;
        for (auto r : order) {
            want.push_back(ids[r]);
        }
        CHECK(rank_by_statistics(d, ids) == want);
    }
}

TEST_CASE("single-step sequence keeps the highest-D points") {
    std::vector<float> d = {0.0f, 0.9f, 0.1f, 0.8f, 0.2f, 0.7f, 0.3f, 0.6f, 0.4f, 0.5f};
    std::vector<PointId> ids(10);
    std::iota(ids.begin(), ids.end(), 0u);
    MaskSchedule sched;
    sched.theta = {0.3};
    sched.gap = 0.3;
    const MaskedSequence seq = build_sequence_from_ranking(rank_by_statistics(d, ids), sched);
    const auto kept = seq.retained(1);
    CHECK(kept.size() == 7);
    CHECK(as_set(kept) == std::set<PointId>{1, 3, 5, 7, 9, 8, 6});
    CHECK(seq.retained(0).size() == 10);
}

TEST_CASE("masked sequence invariants over random scenes") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 40; ++trial) {
        const PointScene s = oracle::random_scene(rng, 40 + trial * 5);
        const StatField f = compute_statistics(s, {});
        const std::size_t steps = 1 + trial % 8;
        const MaskSchedule sched = MaskSchedule::uniform(0.1, steps);
        const MaskedSequence seq = build_sequence(s, f, sched);
        for (std::size_t t = 1; t <= steps; ++t) {
            const auto cur = seq.retained(t);
            const auto prev = seq.retained(t - 1);
            CHECK(cur.size() == retained_count(sched.theta[t - 1], s.size()));
            CHECK(subset(cur, prev));
            const auto kept = as_set(cur);
            float min_kept = 1e9f, max_masked = -1e9f;
            for (PointId id : s.ids) {
                if (kept.count(id)) {
                    min_kept = std::min(min_kept, d_of(f.combined, id));
                } else {
                    max_masked = std::max(max_masked, d_of(f.combined, id));
                }
            }
            CHECK(min_kept >= max_masked);
        }
    }
}

TEST_CASE("sequence json export") {
    const MaskedSequence seq({3, 1, 2, 0}, {0.25, 0.5});
    const auto doc = seq.to_json();
    CHECK(doc["theta"] == nlohmann::json({0.25, 0.5}));
    CHECK(doc["sets"] == nlohmann::json({{3, 1, 2}, {3, 1}}));
}

TEST_CASE("empty final step is rejected") {
    MaskSchedule sched;
    sched.theta = {0.5, 0.9};
    sched.gap = 0.4;
    const std::vector<PointId> ranking = {0, 1, 2, 3};
    CHECK_THROWS_AS(build_sequence_from_ranking(ranking, sched), DegenerateSceneError);
}

TEST_CASE("training pairs") {
    const std::vector<PointId> ranking = {9, 8, 7, 6, 5, 4, 3, 2, 1, 0};
    const MaskSchedule sched = MaskSchedule::uniform(0.1, 7);
    const MaskedSequence seq = build_sequence_from_ranking(ranking, sched);

    const TrainingPair first = training_pair_at(seq, 1);
    CHECK(first.target.size() == 10);
    CHECK(first.input.size() == 9);

    const TrainingPair third = training_pair_at(seq, 3);
    CHECK(third.input.size() == 7);  // 30% masked
    CHECK(third.target.size() == 8); // 20% masked
    CHECK(training_pair_at(seq, 5, Progression::full_scene).target.size() == 10);
    CHECK_THROWS_AS(training_pair_at(seq, 0), ContractError);
    CHECK_THROWS_AS(training_pair_at(seq, 8), ContractError);

    Rng rng(3);
    MaskSchedule random_gap = sched;
    random_gap.gap_mode = GapMode::random;
    for (int i = 0; i < 500; ++i) {
        const TrainingPair p = sample_training_pair(seq, rng, sched);
        CHECK(p.target_step + 1 == p.step);
        CHECK(subset(p.input, p.target));
        const TrainingPair r = sample_training_pair(seq, rng, random_gap);
        CHECK(r.target_step < r.step);
        CHECK(subset(r.input, r.target));
    }
}

TEST_CASE("sampled steps are uniform") {
    const MaskSchedule sched = MaskSchedule::uniform(0.1, 7);
    std::vector<PointId> ranking(100);
    std::iota(ranking.begin(), ranking.end(), 0u);
    const MaskedSequence seq = build_sequence_from_ranking(ranking, sched);
    Rng rng(4);
    std::vector<double> counts(7, 0.0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        counts[sample_training_pair(seq, rng, sched).step - 1] += 1.0;
    }
    double chi2 = 0.0;
    const double expected = n / 7.0;
    for (double c : counts) {
        chi2 += (c - expected) * (c - expected) / expected;
    }
    CHECK(chi2 < 16.812); // chi-square, 6 degrees of freedom, p = 0.01
}

TEST_CASE("baseline masks") {
    std::mt19937_64 rng(5);
    const PointScene s = oracle::random_scene(rng, 100);
    const StatField f = compute_statistics(s, {});
    for (auto strategy : {MaskStrategy::random, MaskStrategy::informative_abandoned, MaskStrategy::informative_preserved}) {
        Rng r(1);
        CHECK(baseline_mask(s, f, strategy, 0.0, r).size() == 100);
    }

    Rng r1(7), r2(7);
    const auto a = baseline_mask(s, f, MaskStrategy::random, 0.5, r1);
    const auto b = baseline_mask(s, f, MaskStrategy::random, 0.5, r2);
    CHECK(a.size() == 50);
    CHECK(a == b);
    CHECK(as_set(a).size() == 50);

    Rng r3(0);
    const auto low = as_set(baseline_mask(s, f, MaskStrategy::informative_abandoned, 0.3, r3));
    CHECK(low.size() == 70);
    float max_kept = -1.0f, min_masked = 1e9f;
    for (PointId id : s.ids) {
        if (low.count(id)) {
            max_kept = std::max(max_kept, f.combined[id]);
        } else {
            min_masked = std::min(min_masked, f.combined[id]);
        }
    }
    CHECK(max_kept <= min_masked);
    CHECK_THROWS_AS(baseline_mask(s, f, MaskStrategy::random, 1.0, r3), ContractError);
}

TEST_CASE("strategy names") {
    for (auto s : {MaskStrategy::random, MaskStrategy::informative_abandoned, MaskStrategy::informative_preserved}) {
        CHECK(mask_strategy_from_string(to_string(s)) == s);
    }
    CHECK_THROWS_AS(mask_strategy_from_string("everything"), ConfigError);
}

TEST_CASE("schedule validation and json") {
    CHECK_NOTHROW(MaskSchedule{}.validate());
    MaskSchedule bad;
    bad.theta = {0.1, 0.3};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.gap_mode = GapMode::random;
    CHECK_NOTHROW(bad.validate());
    bad.theta = {0.3, 0.2};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.theta = {0.5, 1.0};
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    const MaskSchedule s = mask_schedule_from_json(nlohmann::json::parse(R"({"gap": 0.2, "steps": 3})"));
    CHECK(s.steps() == 3);
    CHECK(s.theta[2] == Catch::Approx(0.6));
    const MaskSchedule back = mask_schedule_from_json(to_json(s));
    CHECK(back.theta == s.theta);
    CHECK(back.gap == s.gap);
    CHECK(back.gap_mode == s.gap_mode);
}
