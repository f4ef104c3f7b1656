#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <random>
#include <set>

#include "madeval/error.hpp"
#include "madeval/selection.hpp"
#include "selection_oracle.hpp"
#include "test_util.hpp"

using namespace madeval;
using madeval::testing::OracleInput;
using madeval::testing::oracle_greedy;

namespace {

struct Fixture {
    std::vector<FeatureVector> features;
    PairInputs inputs;
    OracleInput oracle;

    Fixture(std::vector<std::string> ids, std::vector<double> d1, std::vector<std::vector<double>> feats) {
        for (auto& f : feats) features.push_back({f, "t"});
        for (const auto& f : features) inputs.features.push_back(&f);
        inputs.ids = ids;
        inputs.d1 = d1;
        oracle = {std::move(ids), std::move(d1), std::move(feats)};
    }
    Fixture(const Fixture&) = delete;
};

std::unique_ptr<Fixture> random_fixture(std::mt19937_64& rng, std::size_t n, std::size_t dims, bool coarse = false) {
    std::vector<std::string> ids;
    std::vector<double> d1;
    std::vector<std::vector<double>> feats;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t c = 0; c < n; ++c) {
        char name[16];
        std::snprintf(name, sizeof name, "x%04zu", c);
        ids.emplace_back(name);
        // coarse values make exact ties common
        d1.push_back(coarse ? static_cast<double>(rng() % 4) : u(rng));
        std::vector<double> f(dims);
        for (double& v : f) v = coarse ? static_cast<double>(rng() % 3) : u(rng);
        feats.push_back(std::move(f));
    }
    return std::make_unique<Fixture>(std::move(ids), std::move(d1), std::move(feats));
}

std::vector<std::string> pick_ids(const SelectionResult& r) {
    std::vector<std::string> out;
    for (const auto& p : r.picks) out.push_back(p.candidate_id);
    return out;
}

SelectionConfig config_with(int k, double lambda1, bool normalize = true) {
    SelectionConfig c;
    c.k = k;
    c.lambda1 = lambda1;
    c.normalize = normalize;
    return c;
}

}  // namespace

TEST_CASE("enumerate_method_pairs") {
    CHECK(enumerate_method_pairs(2) == std::vector<PairKey>{{0, 1}});
    const auto four = enumerate_method_pairs(4);
    CHECK(four.size() == 6);
    CHECK(four.front() == PairKey{0, 1});
    CHECK(four.back() == PairKey{2, 3});
    const auto eight = enumerate_method_pairs(8);
    CHECK(eight.size() == 28);
    CHECK(std::set<PairKey>(eight.begin(), eight.end()).size() == 28);
    for (const auto& p : eight) CHECK(p.i < p.j);
    CHECK_THROWS_AS(enumerate_method_pairs(1), Error);
}

TEST_CASE("score_candidate examples") {
    Fixture f({"a", "b", "c"}, {0.0, 0.5, 1.0}, {{0.0}, {1.0}, {3.0}});
    const auto cfg = config_with(2, 1.0);
    SUBCASE("empty set: pure D1 term") {
        const auto s = score_candidate(f.inputs, 1, {}, cfg);
        CHECK(s.d1_term == 0.5);
        CHECK(s.d2_term == 0.0);
        CHECK(s.total == 0.5);
        CHECK(s.d2_raw == kEmptySetDistance);
    }
    SUBCASE("one member: D2 normalised over the unselected pool") {
        const std::vector<std::size_t> sel{2};
        // raw D2 to {c}: a=9, b=4 -> normalised a=1, b=0
        const auto a = score_candidate(f.inputs, 0, sel, cfg);
        CHECK(a.d2_raw == 9.0);
        CHECK(a.d2_term == 1.0);
        CHECK(a.total == 1.0);
        const auto b = score_candidate(f.inputs, 1, sel, cfg);
        CHECK(b.d2_term == 0.0);
        CHECK(b.total == 0.5);
    }
    SUBCASE("raw units when normalisation is off") {
        const std::vector<std::size_t> sel{2};
        const auto a = score_candidate(f.inputs, 0, sel, config_with(2, 0.5, false));
        CHECK(a.total == doctest::Approx(0.0 + 0.5 * 9.0));
    }
}

TEST_CASE("select_top_k worked example") {
    // D1 favours c then b; diversity pulls a in second.
    Fixture f({"a", "b", "c"}, {0.0, 0.9, 1.0}, {{0.0}, {2.9}, {3.0}});
    const auto r = select_top_k(f.inputs, {0, 1}, config_with(2, 1.0));
    REQUIRE(r.picks.size() == 2);
    CHECK(r.picks[0].candidate_id == "c");
    CHECK(r.picks[0].d2_term == 0.0);
    CHECK(r.picks[1].candidate_id == "a");
    CHECK(r.picks[1].total == doctest::Approx(1.0));
    CHECK(pick_ids(select_top_k(f.inputs, {0, 1}, config_with(2, 0.0))) == std::vector<std::string>{"c", "b"});
}

TEST_CASE("ties go to the smaller candidate id") {
    Fixture f({"a", "b", "c", "d"}, {0.5, 1.0, 1.0, 0.5}, {{0.0}, {1.0}, {1.0}, {0.0}});
    const auto r = select_top_k(f.inputs, {0, 1}, config_with(4, 0.0));
    CHECK(pick_ids(r) == std::vector<std::string>{"b", "c", "a", "d"});
}

TEST_CASE("greedy matches the from-scratch oracle on random pools") {
    std::mt19937_64 rng(20240601);
    for (int t = 0; t < 40; ++t) {
        const bool coarse = t % 3 == 0;
        const std::size_t n = 12 + rng() % 60;
        auto f = random_fixture(rng, n, 1 + rng() % 6, coarse);
        const int k = 1 + static_cast<int>(rng() % std::min<std::size_t>(n, 15));
        const double lambda = (t % 4 == 0) ? 0.0 : std::uniform_real_distribution<double>(0.1, 3.0)(rng);
        const bool normalize = t % 5 != 1;
        const bool mean = t % 7 == 2;
        auto cfg = config_with(k, lambda, normalize);
        cfg.d2.aggregation = mean ? Aggregation::Mean : Aggregation::Min;
        const auto got = select_top_k(f->inputs, {0, 1}, cfg);
        CHECK_MESSAGE(pick_ids(got) == oracle_greedy(f->oracle, k, lambda, normalize, mean), "trial " << t);

        // recorded terms agree with a from-scratch evaluation
        std::vector<std::size_t> sel;
        for (const auto& p : got.picks) {
            const auto idx = static_cast<std::size_t>(
                std::find(f->inputs.ids.begin(), f->inputs.ids.end(), p.candidate_id) - f->inputs.ids.begin());
            const auto s = score_candidate(f->inputs, idx, sel, cfg);
            CHECK(p.total == doctest::Approx(s.total).epsilon(1e-12));
            CHECK(p.d1_raw == s.d1_raw);
            sel.push_back(idx);
        }
    }
}

TEST_CASE("lambda1 = 0 reduces to top-K by D1") {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 20; ++t) {
        auto f = random_fixture(rng, 50, 3);
        std::vector<std::size_t> order(50);
        for (std::size_t i = 0; i < 50; ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return f->inputs.d1[a] > f->inputs.d1[b]; });
        std::vector<std::string> expected;
        for (int i = 0; i < 12; ++i) expected.push_back(f->inputs.ids[order[static_cast<std::size_t>(i)]]);
        CHECK(pick_ids(select_top_k(f->inputs, {0, 1}, config_with(12, 0.0))) == expected);
    }
}

TEST_CASE("diversity term skips near-duplicate inputs") {
    // a and dup share features and carry the two largest D1 values.
    Fixture f({"a", "b", "dup", "z"}, {1.0, 0.6, 0.99, 0.0}, {{0.0, 0.0}, {5.0, 5.0}, {0.0, 0.0}, {9.0, 0.0}});
    CHECK(pick_ids(select_top_k(f.inputs, {0, 1}, config_with(2, 0.0))) == std::vector<std::string>{"a", "dup"});
    const auto diverse = pick_ids(select_top_k(f.inputs, {0, 1}, config_with(2, 1.0)));
    CHECK(diverse[0] == "a");
    CHECK(diverse[1] != "dup");
}

TEST_CASE("apply_rejections substitutes the runner-up and keeps survivors") {
    std::mt19937_64 rng(42);
    auto f = random_fixture(rng, 40, 4);
    const auto cfg = config_with(6, 1.0);
    const auto base = select_top_k(f->inputs, {0, 1}, cfg);
    const std::string victim = base.picks[3].candidate_id;
    const std::vector<Rejection> rej{{victim, "watermark, cropped"}};
    const auto redo = apply_rejections(f->inputs, {0, 1}, cfg, rej);
    REQUIRE(redo.picks.size() == 6);
    for (int i = 0; i < 3; ++i) CHECK(redo.picks[static_cast<std::size_t>(i)] == base.picks[static_cast<std::size_t>(i)]);
    for (const auto& p : redo.picks) CHECK(p.candidate_id != victim);
    CHECK(redo.rejected == rej);
    CHECK(pick_ids(redo) == oracle_greedy(f->oracle, 6, 1.0, true, false, {victim}));
}

TEST_CASE("interleaved screening equals rerunning with the rejections") {
    std::mt19937_64 rng(77);
    for (int t = 0; t < 15; ++t) {
        auto f = random_fixture(rng, 60, 3);
        const auto cfg = config_with(10, 1.5);
        std::set<std::string> bad;
        for (int b = 0; b < 12; ++b) bad.insert(f->inputs.ids[rng() % 60]);
        const ScreeningHook hook = [&](const std::string& id, PairKey) -> std::optional<std::string> {
            if (bad.count(id)) return "flagged";
            return std::nullopt;
        };
        const auto live = select_top_k(f->inputs, {0, 1}, cfg, hook);
        for (const auto& p : live.picks) CHECK(bad.count(p.candidate_id) == 0);
        const auto rerun = apply_rejections(f->inputs, {0, 1}, cfg, live.rejected);
        CHECK(pick_ids(rerun) == pick_ids(live));
        CHECK(rerun.picks == live.picks);
    }
}

TEST_CASE("PoolExhausted when too few candidates survive") {
    Fixture f({"a", "b", "c"}, {0.1, 0.2, 0.3}, {{0.0}, {1.0}, {2.0}});
    try {
        select_top_k(f.inputs, {0, 1}, config_with(4, 1.0));
        FAIL("expected PoolExhausted");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::PoolExhausted);
    }
    const std::vector<Rejection> rej{{"a", "x"}, {"b", "y"}};
    CHECK_THROWS_AS(apply_rejections(f.inputs, {0, 1}, config_with(2, 1.0), rej), Error);
    const ScreeningHook all = [](const std::string&, PairKey) -> std::optional<std::string> { return "no"; };
    CHECK_THROWS_AS(select_top_k(f.inputs, {0, 1}, config_with(1, 1.0), all), Error);
    CHECK_THROWS_AS(select_top_k(f.inputs, {0, 1}, config_with(0, 1.0)), Error);
}

TEST_CASE("selection is deterministic and round-trips through its file format") {
    std::mt19937_64 rng(5);
    auto f = random_fixture(rng, 30, 2);
    const auto cfg = config_with(5, 1.0);
    const std::vector<Rejection> rej{{f->inputs.ids[3], "bad, really bad"}};
    const auto a = apply_rejections(f->inputs, {2, 5}, cfg, rej);
    const auto b = apply_rejections(f->inputs, {2, 5}, cfg, rej);
    CHECK(a == b);
    const std::vector<std::string> methods{"m0", "m1", "m2", "m3", "m4", "m5"};
    const auto text = serialize_selection(a, methods);
    CHECK(serialize_selection(b, methods) == text);
    CHECK(parse_selection(text) == a);
    CHECK(selection_file_name({2, 5}) == "pair_002_005.sel");

    madeval::testing::TempDir tmp;
    write_selection_file(tmp / "s.sel", a, methods);
    CHECK(read_selection_file(tmp / "s.sel") == a);
    CHECK_THROWS_AS(parse_selection("selection,0,1,a,b\npick,1,x,notanumber,0,0,0,0\n"), Error);
}

TEST_CASE("read_rejection_list keeps commas in reasons") {
    madeval::testing::TempDir tmp;
    madeval::testing::write_bytes(tmp / "r.txt", "# screened\nc001,blurry, low light\n\nc007,nsfw\n");
    const auto r = read_rejection_list(tmp / "r.txt");
    REQUIRE(r.size() == 2);
    CHECK(r[0] == Rejection{"c001", "blurry, low light"});
    CHECK(r[1].candidate_id == "c007");
}

TEST_CASE("pool-backed D1 and features") {
    madeval::testing::TempDir tmp;
    const auto pool = madeval::testing::make_disk_pool(tmp.path(), {"alpha", "beta", "gamma"}, 6, 9);
    REQUIRE(pool.candidates.size() == 6);
    const auto feats1 = compute_features(pool, D2Provider{}, 1);
    const auto feats4 = compute_features(pool, D2Provider{}, 4);
    REQUIRE(feats1.size() == 6);
    CHECK(feats1 == feats4);
    CHECK(feats1[0].values.size() == 280);

    const auto d1 = D1Provider::builtin(D1Kind::OneMinusSsim);
    const auto a = compute_d1(pool, {0, 2}, d1, 1);
    const auto b = compute_d1(pool, {0, 2}, d1, 3);
    CHECK(a == b);
    for (std::size_t c = 0; c < a.size(); ++c) {
        const auto x = to_luma(load_image(pool.candidates[c].outputs[0]));
        const auto y = to_luma(load_image(pool.candidates[c].outputs[2]));
        CHECK(a[c] == doctest::Approx(1.0 - ssim(x, y)).epsilon(1e-12));
        CHECK(a[c] > 0.0);
    }

    const auto inputs = make_pair_inputs(pool, feats1, a);
    CHECK(inputs.ids == pool.ids());
    const auto r = select_top_k(inputs, {0, 2}, config_with(3, 1.0));
    CHECK(r.picks.size() == 3);

    // external features and matrices replace the builtin providers
    std::map<std::string, FeatureVector> ext;
    for (std::size_t c = 0; c < 6; ++c) ext.emplace(pool.candidates[c].id, FeatureVector{{double(c), 1.0}, "ext"});
    write_external_features(tmp / "feat.txt", ext);
    D2Provider d2{Extractor::ExternalFeatures, Aggregation::Min, tmp / "feat.txt"};
    const auto ef = compute_features(pool, d2);
    CHECK(ef[4].values == std::vector<double>{4.0, 1.0});

    ExternalDistanceMatrix m{"gamma", "alpha", {}};
    for (std::size_t c = 0; c < 6; ++c) m.entries[pool.candidates[c].id] = 0.1 * static_cast<double>(c);
    const auto ed = compute_d1(pool, {0, 2}, D1Provider::external({m}));
    CHECK(ed[5] == doctest::Approx(0.5));
    CHECK_THROWS_AS(compute_d1(pool, {0, 1}, D1Provider::external({m})), Error);
}
