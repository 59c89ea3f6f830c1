#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "advmidi/adversarial.hpp"
#include "advmidi/error.hpp"

using namespace advmidi;
using Catch::Approx;

namespace {

const Vocabulary kVocab = Vocabulary::standard();

TokenWindow window_of(int length, int real) {
    TokenWindow w;
    w.song_id = "s";
    for (int i = 0; i < length; ++i) {
        if (i < real) {
            OctupleToken t;
            for (int j = 0; j < kNumAttributes; ++j) t[j] = 2 + (i + j) % (kVocab.size(j) - 2);
            w.tokens.push_back(t);
            w.attn_mask.push_back(1);
        } else {
            w.tokens.push_back(OctupleToken::pad());
            w.attn_mask.push_back(0);
        }
    }
    return w;
}

// Log-softmax cross-entropy written out directly.
double oracle_ce(const std::vector<double>& row, int target) {
    double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double x : row) s += std::exp(x - mx);
    return -(row[static_cast<std::size_t>(target)] - mx - std::log(s));
}

std::vector<int> iota_vec(int from, int to) {
    std::vector<int> v(static_cast<std::size_t>(to - from));
    std::iota(v.begin(), v.end(), from);
    return v;
}

}  // namespace

TEST_CASE("percent_count rounds half away from zero", "[adversarial]") {
    CHECK(percent_count(15, 200) == 30);
    CHECK(percent_count(30, 5) == 2);   // 1.5
    CHECK(percent_count(15, 10) == 2);  // 1.5
    CHECK(percent_count(15, 3) == 0);   // 0.45
    CHECK(percent_count(0, 100) == 0);
}

TEST_CASE("update_weights", "[adversarial]") {
    SECTION("one attribute at half accuracy") {
        std::array<double, 8> acc;
        acc.fill(1.0);
        acc[0] = 0.5;
        auto w = update_weights(acc);
        CHECK(w.w[0] == Approx(2.0 / 9.0));
        for (int j = 1; j < 8; ++j) CHECK(w.w[static_cast<std::size_t>(j)] == Approx(1.0 / 9.0));
    }
    SECTION("equal accuracies give uniform weights") {
        std::array<double, 8> acc;
        acc.fill(0.37);
        for (double x : update_weights(acc).w) CHECK(x == Approx(0.125));
    }
    SECTION("zero accuracy is floored") {
        std::array<double, 8> acc;
        acc.fill(1.0);
        acc[5] = 0.0;
        auto w = update_weights(acc);
        CHECK(w.w[5] == Approx(1000.0 / 1007.0));
        CHECK(w.w[0] == Approx(1.0 / 1007.0));
        CHECK(w.prev_accuracy[5] == 0.0);
    }
    SECTION("mixed accuracies") {
        std::array<double, 8> acc{0.25, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
        auto w = update_weights(acc);
        // inverses 4, 2, 1 x6 -> sum 12
        CHECK(w.w[0] == Approx(4.0 / 12.0));
        CHECK(w.w[1] == Approx(2.0 / 12.0));
        CHECK(w.w[7] == Approx(1.0 / 12.0));
        CHECK(std::accumulate(w.w.begin(), w.w.end(), 0.0) == Approx(1.0));
    }
}

TEST_CASE("masker_loss", "[adversarial]") {
    SECTION("two-token example") {
        std::vector<double> p{0.9, 0.2}, d(2, 0.0);
        std::vector<int> ones{0}, zeros{1};
        CHECK(masker_loss(p, ones, zeros, d) == Approx(0.05));
        CHECK(d[0] == Approx(-0.2));
        CHECK(d[1] == Approx(0.4));
    }
    SECTION("perfect predictions cost nothing") {
        std::vector<double> p{1.0, 0.0, 0.5};
        std::vector<int> ones{0}, zeros{1};
        CHECK(masker_loss(p, ones, zeros) == 0.0);
    }
    SECTION("indices outside both sets are ignored") {
        std::vector<double> p{0.5, 0.5, 0.3, 0.7}, d(4, 0.0);
        std::vector<int> ones{3}, zeros{2};
        CHECK(masker_loss(p, ones, zeros, d) == Approx(0.09 + 0.09));
        CHECK(d[0] == 0.0);
        CHECK(d[1] == 0.0);
    }
}

TEST_CASE("masker_targets", "[adversarial]") {
    SECTION("descending losses, q = 40") {
        std::vector<double> l{5, 4, 3, 2, 1};
        auto t = masker_targets(l, 40);
        CHECK(t.ones == std::vector<int>{0, 1});
        CHECK(t.zeros == std::vector<int>{3, 4});
    }
    SECTION("m = 10, q = 30") {
        std::vector<double> l{0.3, 2.0, 0.1, 1.5, 0.9, 0.05, 3.0, 0.7, 0.2, 1.1};
        auto t = masker_targets(l, 30);
        CHECK(t.ones == std::vector<int>{1, 3, 6});
        CHECK(t.zeros == std::vector<int>{2, 5, 8});
    }
    SECTION("ties go to the lower index and the sets stay disjoint") {
        std::vector<double> l{1, 1, 1, 1};
        auto t = masker_targets(l, 50);
        CHECK(t.ones == std::vector<int>{0, 1});
        CHECK(t.zeros == std::vector<int>{2, 3});
    }
    SECTION("k is capped at half of m") {
        std::vector<double> l{3, 2, 1};
        auto t = masker_targets(l, 50);  // round(1.5) = 2, capped to 1
        CHECK(t.ones == std::vector<int>{0});
        CHECK(t.zeros == std::vector<int>{2});
    }
    SECTION("tiny sets") {
        CHECK(masker_targets(std::vector<double>{}, 30).ones.empty());
        auto one = masker_targets(std::vector<double>{4.0}, 50);
        CHECK(one.ones.empty());
        CHECK(one.zeros.empty());
    }
    SECTION("q out of range") {
        std::vector<double> l{1, 2};
        CHECK_THROWS_AS(masker_targets(l, 0), InvalidArgument);
        CHECK_THROWS_AS(masker_targets(l, 60), InvalidArgument);
    }
}

TEST_CASE("plan_masks", "[adversarial]") {
    std::mt19937_64 rng(1);
    SECTION("200 candidates at 15 percent: 24 masked, 6 random") {
        auto w = window_of(256, 200);
        std::vector<double> probs(256);
        for (int i = 0; i < 256; ++i) probs[static_cast<std::size_t>(i)] = (i * 37 % 256) / 256.0;
        auto plan = plan_masks(probs, w, {}, 15, kVocab, rng);
        REQUIRE(plan);
        REQUIRE(plan->chosen.size() == 30);
        CHECK(plan->replaced_with_mask.size() == 24);
        CHECK(plan->replaced_with_random.size() == 6);
        CHECK(plan->random_tokens.size() == 6);

        // Oracle: the 30 real positions with the largest probability.
        std::vector<int> real = iota_vec(0, 200);
        std::sort(real.begin(), real.end(), [&](int a, int b) { return probs[a] > probs[b] || (probs[a] == probs[b] && a < b); });
        std::vector<int> expect(real.begin(), real.begin() + 30);
        std::sort(expect.begin(), expect.end());
        CHECK(plan->chosen == expect);

        std::vector<int> merged = plan->replaced_with_mask;
        merged.insert(merged.end(), plan->replaced_with_random.begin(), plan->replaced_with_random.end());
        std::sort(merged.begin(), merged.end());
        CHECK(merged == plan->chosen);
        for (std::size_t i = 0; i < plan->chosen.size(); ++i)
            CHECK(plan->originals[i] == w.tokens[static_cast<std::size_t>(plan->chosen[i])]);
        for (const auto& t : plan->random_tokens)
            for (int j = 0; j < kNumAttributes; ++j) {
                CHECK(t[j] >= kFirstRealId);
                CHECK(t[j] < kVocab.size(j));
            }
    }
    SECTION("equal probabilities choose the lowest indices") {
        auto w = window_of(20, 20);
        std::vector<double> probs(20, 0.5);
        auto plan = plan_masks(probs, w, {}, 15, kVocab, rng);
        CHECK(plan->chosen == std::vector<int>{0, 1, 2});
    }
    SECTION("padding and frozen positions are never chosen") {
        auto w = window_of(10, 6);
        std::vector<double> probs{0.1, 0.9, 0.8, 0.2, 0.3, 0.4, 1.0, 1.0, 1.0, 1.0};
        auto plan = plan_masks(probs, w, {1}, 40, kVocab, rng);  // candidates 0,2,3,4,5 -> k = 2
        CHECK(plan->chosen == std::vector<int>{2, 5});
    }
    SECTION("at least one token") {
        auto w = window_of(4, 3);
        std::vector<double> probs{0.2, 0.1, 0.3, 0.9};
        auto plan = plan_masks(probs, w, {}, 15, kVocab, rng);
        CHECK(plan->chosen == std::vector<int>{2});
        CHECK(plan->replaced_with_mask == std::vector<int>{2});
    }
    SECTION("everything frozen gives nothing") {
        auto w = window_of(4, 2);
        std::vector<double> probs(4, 0.5);
        CHECK_FALSE(plan_masks(probs, w, {0, 1}, 15, kVocab, rng));
    }
    SECTION("bad arguments") {
        auto w = window_of(4, 2);
        std::vector<double> probs(4, 0.5), short_probs(3, 0.5);
        CHECK_THROWS_AS(plan_masks(probs, w, {}, 0, kVocab, rng), InvalidArgument);
        CHECK_THROWS_AS(plan_masks(short_probs, w, {}, 15, kVocab, rng), InvalidArgument);
    }
    SECTION("same seed, same plan") {
        auto w = window_of(64, 64);
        std::vector<double> probs(64);
        for (int i = 0; i < 64; ++i) probs[static_cast<std::size_t>(i)] = std::sin(i * 1.3);
        std::mt19937_64 r1(99), r2(99);
        auto a = plan_masks(probs, w, {}, 30, kVocab, r1);
        auto b = plan_masks(probs, w, {}, 30, kVocab, r2);
        CHECK(a->replaced_with_mask == b->replaced_with_mask);
        CHECK(a->random_tokens == b->random_tokens);
    }
}

TEST_CASE("apply_plan", "[adversarial]") {
    std::mt19937_64 rng(4);
    auto w = window_of(40, 40);
    std::vector<double> probs(40);
    for (int i = 0; i < 40; ++i) probs[static_cast<std::size_t>(i)] = i / 40.0;
    auto plan = *plan_masks(probs, w, {}, 25, kVocab, rng);  // top 10: positions 30..39
    auto out = apply_plan(w, plan);
    for (int i = 0; i < 30; ++i) CHECK(out.tokens[static_cast<std::size_t>(i)] == w.tokens[static_cast<std::size_t>(i)]);
    for (int pos : plan.replaced_with_mask) CHECK(out.tokens[static_cast<std::size_t>(pos)] == OctupleToken::mask());
    for (std::size_t r = 0; r < plan.replaced_with_random.size(); ++r)
        CHECK(out.tokens[static_cast<std::size_t>(plan.replaced_with_random[r])] == plan.random_tokens[r]);
    CHECK(out.attn_mask == w.attn_mask);
}

TEST_CASE("recovery_loss", "[adversarial]") {
    const std::vector<OctupleToken> originals = window_of(3, 3).tokens;
    auto logits_like = [&](double fill) {
        std::array<nn::Matrix, kNumAttributes> lg;
        for (int j = 0; j < kNumAttributes; ++j) lg[static_cast<std::size_t>(j)] = nn::Matrix::Constant(3, kVocab.size(j), fill);
        return lg;
    };

    SECTION("uniform logits cost log V per attribute") {
        AttributeWeights w;
        auto r = recovery_loss(logits_like(0.0), originals, w);
        double per = 0.0;
        for (int j = 0; j < kNumAttributes; ++j) per += std::log(static_cast<double>(kVocab.size(j))) / 8.0;
        for (double x : r.per_token) CHECK(x == Approx(per));
        CHECK(r.total == Approx(3 * per));
        for (double a : r.accuracy) CHECK(a == 0.0);  // argmax picks PAD
    }
    SECTION("confident correct logits: full accuracy, near-zero loss") {
        auto lg = logits_like(0.0);
        for (int j = 0; j < kNumAttributes; ++j)
            for (int i = 0; i < 3; ++i) lg[static_cast<std::size_t>(j)](i, originals[static_cast<std::size_t>(i)][j]) = 50.0;
        auto r = recovery_loss(lg, originals, AttributeWeights{});
        CHECK(r.total < 1e-9);
        for (double a : r.accuracy) CHECK(a == 1.0);
        for (int c : r.correct) CHECK(c == 3);
    }
    SECTION("weighted random logits match the direct formula and its gradient") {
        std::mt19937_64 rng(8);
        std::normal_distribution<double> g(0.0, 2.0);
        auto lg = logits_like(0.0);
        for (auto& m : lg)
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = g(rng);
        std::array<double, 8> acc{0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2};
        auto w = update_weights(acc);
        auto res = recovery_loss(lg, originals, w);

        double total = 0.0;
        for (int i = 0; i < 3; ++i) {
            double li = 0.0;
            for (int j = 0; j < kNumAttributes; ++j) {
                const auto& m = lg[static_cast<std::size_t>(j)];
                std::vector<double> row(m.row(i).data(), m.row(i).data() + m.cols());
                li += w.w[static_cast<std::size_t>(j)] * oracle_ce(row, originals[static_cast<std::size_t>(i)][j]);
            }
            CHECK(res.per_token[static_cast<std::size_t>(i)] == Approx(li));
            total += li;
        }
        CHECK(res.total == Approx(total));

        // Finite differences on a handful of coordinates.
        const double h = 1e-6;
        for (int j : {0, 5, 7})
            for (int c : {0, 3, 17}) {
                auto plus = lg, minus = lg;
                plus[static_cast<std::size_t>(j)](1, c) += h;
                minus[static_cast<std::size_t>(j)](1, c) -= h;
                double fd = (recovery_loss(plus, originals, w).total - recovery_loss(minus, originals, w).total) / (2 * h);
                CHECK(res.d_logits[static_cast<std::size_t>(j)](1, c) == Approx(fd).margin(1e-7));
            }
    }
    SECTION("row count must match") {
        auto lg = logits_like(0.0);
        std::vector<OctupleToken> two(originals.begin(), originals.begin() + 2);
        CHECK_THROWS_AS(recovery_loss(lg, two, AttributeWeights{}), InvalidArgument);
    }
}

TEST_CASE("freeze_update", "[adversarial]") {
    std::vector<double> probs(100);
    for (int i = 0; i < 100; ++i) probs[static_cast<std::size_t>(i)] = i / 100.0;
    const std::map<std::string, std::vector<double>> song{{"s", probs}};
    auto as_set = [](int from, int to) {
        auto v = iota_vec(from, to);
        return std::set<int>(v.begin(), v.end());
    };
    std::mt19937_64 rng(2);

    SECTION("first update freezes the top a percent") {
        for (auto policy : {FreezePolicy::Refresh, FreezePolicy::Accumulate}) {
            FreezeRegistry reg;
            freeze_update(reg, song, 30, 20, rng, policy);
            CHECK(reg.frozen_of("s") == as_set(70, 100));
            CHECK(reg.frozen_fraction() == Approx(0.3));
        }
    }
    SECTION("refresh keeps the size fixed and skips released tokens") {
        FreezeRegistry reg;
        freeze_update(reg, song, 30, 0, rng);
        freeze_update(reg, song, 30, 0, rng);
        CHECK(reg.frozen_of("s") == as_set(70, 100));
        freeze_update(reg, song, 30, 100, rng);  // all 30 released, next best 30 frozen
        CHECK(reg.frozen_of("s") == as_set(40, 70));
    }
    SECTION("accumulate grows by a percent each time") {
        FreezeRegistry reg;
        freeze_update(reg, song, 30, 0, rng, FreezePolicy::Accumulate);
        freeze_update(reg, song, 30, 0, rng, FreezePolicy::Accumulate);
        CHECK(reg.frozen_of("s") == as_set(40, 100));
        freeze_update(reg, song, 30, 100, rng, FreezePolicy::Accumulate);  // released tokens may refreeze
        CHECK(reg.frozen_of("s") == as_set(70, 100));
    }
    SECTION("a = 0 and b = 0") {
        FreezeRegistry reg;
        freeze_update(reg, song, 30, 0, rng, FreezePolicy::Accumulate);
        auto before = reg;
        freeze_update(reg, song, 0, 0, rng, FreezePolicy::Accumulate);
        CHECK(reg == before);
        freeze_update(reg, song, 0, 0, rng, FreezePolicy::Refresh);
        CHECK(reg.frozen_of("s").empty());
    }
    SECTION("rounding per song length") {
        FreezeRegistry reg;
        freeze_update(reg, {{"short", {0.1, 0.5, 0.2, 0.9, 0.3}}}, 30, 0, rng);  // round(1.5) = 2
        CHECK(reg.frozen_of("short") == std::set<int>{1, 3});
        CHECK(reg.total_tokens() == 5);
    }
    SECTION("unfreezing rate follows b") {
        std::vector<double> big(20000);
        for (std::size_t i = 0; i < big.size(); ++i) big[i] = static_cast<double>(i);
        const std::map<std::string, std::vector<double>> s{{"big", big}};
        FreezeRegistry reg;
        freeze_update(reg, s, 50, 0, rng, FreezePolicy::Accumulate);  // top half frozen
        freeze_update(reg, s, 0, 40, rng, FreezePolicy::Accumulate);
        // 10000 Bernoulli(0.4) releases: mean 4000, sd ~49.
        CHECK(std::abs(static_cast<double>(10000 - reg.total_frozen()) - 4000.0) < 250.0);
    }
    SECTION("seeded updates are reproducible") {
        FreezeRegistry r1, r2;
        std::mt19937_64 a(5), b(5);
        for (int k = 0; k < 4; ++k) {
            freeze_update(r1, song, 30, 20, a);
            freeze_update(r2, song, 30, 20, b);
        }
        CHECK(r1 == r2);
    }
    SECTION("percentages out of range") {
        FreezeRegistry reg;
        CHECK_THROWS_AS(freeze_update(reg, song, -1, 0, rng), InvalidArgument);
        CHECK_THROWS_AS(freeze_update(reg, song, 30, 101, rng), InvalidArgument);
    }
}
