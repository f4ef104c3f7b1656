// Acceptance runner: one PASS/FAIL line per criterion, non-zero exit on any
// failure.

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "madeval/error.hpp"
#include "madeval/metrics.hpp"
#include "madeval/ranking.hpp"
#include "madeval/selection.hpp"
#include "madeval/service.hpp"
#include "madeval/study.hpp"
#include "selection_oracle.hpp"
#include "test_util.hpp"
#include "thurstone_oracle.hpp"

using namespace madeval;
using json = nlohmann::json;

namespace {

/// Criterion body: returns true on success and fills `detail`.
using Check = std::function<bool(std::ostringstream& detail)>;

struct Criterion {
    std::string name;
    double budget_seconds;
    Check body;
};

// ---- selection fixtures ----

struct SyntheticPool {
    std::vector<FeatureVector> features;
    PairInputs inputs;
    testing::OracleInput oracle;
};

SyntheticPool synthetic_pool(std::mt19937_64& rng, std::size_t n, std::size_t dims) {
    SyntheticPool p;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t c = 0; c < n; ++c) {
        char name[16];
        std::snprintf(name, sizeof name, "p%04zu", c);
        p.inputs.ids.emplace_back(name);
        // quantised D1 so that exact ties occur and exercise the id tie-break
        p.inputs.d1.push_back(c % 5 == 0 ? std::floor(u(rng) * 8.0) / 8.0 : u(rng));
        std::vector<double> f(dims);
        for (double& v : f) v = u(rng);
        p.features.push_back({f, "acc"});
        p.oracle.feat.push_back(std::move(f));
    }
    for (const auto& f : p.features) p.inputs.features.push_back(&f);
    p.oracle.ids = p.inputs.ids;
    p.oracle.d1 = p.inputs.d1;
    return p;
}

std::vector<std::string> pick_ids(const SelectionResult& r) {
    std::vector<std::string> out;
    for (const auto& p : r.picks) out.push_back(p.candidate_id);
    return out;
}

SelectionConfig sel_config(int k, double lambda1) {
    SelectionConfig c;
    c.k = k;
    c.lambda1 = lambda1;
    return c;
}

bool greedy_vs_brute_force(std::ostringstream& d) {
    std::mt19937_64 rng(1001);
    int steps = 0;
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 20 + rng() % 181;  // <= 200
        const auto pool = synthetic_pool(rng, n, 1 + rng() % 4);
        const int k = 1 + static_cast<int>(rng() % 20);
        const double lambda = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
        const auto got = pick_ids(select_top_k(pool.inputs, {0, 1}, sel_config(k, lambda)));
        const auto want = testing::oracle_greedy(pool.oracle, k, lambda, true);
        if (got != want) {
            d << "pool " << t << " diverged";
            return false;
        }
        steps += k;
    }
    d << "50 pools, " << steps << " greedy steps identical";
    return true;
}

bool lambda_zero_reduction(std::ostringstream& d) {
    std::mt19937_64 rng(1002);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 20 + rng() % 181;
        const auto pool = synthetic_pool(rng, n, 2);
        const int k = 1 + static_cast<int>(rng() % 20);
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return pool.inputs.d1[a] > pool.inputs.d1[b]; });
        std::vector<std::string> want;
        for (int i = 0; i < k; ++i) want.push_back(pool.inputs.ids[order[static_cast<std::size_t>(i)]]);
        if (pick_ids(select_top_k(pool.inputs, {0, 1}, sel_config(k, 0.0))) != want) {
            d << "pool " << t << " differs from top-K by D1";
            return false;
        }
    }
    d << "50 pools equal top-K by D1";
    return true;
}

bool diversity_effect(std::ostringstream& d) {
    // `top` and `twin` carry the two largest D1 values and identical features;
    // `far` is the lone distinct input. After `top` is picked, normalised
    // scores are twin = 0.9 and far = 0.5 + lambda1, so the second pick flips
    // once lambda1 exceeds 0.4.
    const std::vector<FeatureVector> f{{{1.0, 1.0}, "x"}, {{0.0, 0.0}, "x"}, {{0.0, 0.0}, "x"}, {{0.0, 0.0}, "x"}};
    PairInputs in;
    in.ids = {"far", "low", "top", "twin"};
    in.d1 = {0.5, 0.0, 1.0, 0.9};
    for (const auto& v : f) in.features.push_back(&v);
    const double threshold = 0.4;

    auto second = [&](double lambda) { return select_top_k(in, {0, 1}, sel_config(2, lambda)).picks[1].candidate_id; };
    const bool ok = second(0.0) == "twin" && second(threshold - 0.01) == "twin" && second(threshold + 0.01) == "far" &&
                    second(1.0) == "far" && second(5.0) == "far";
    d << "second pick: lambda1=0 -> " << second(0.0) << ", lambda1=" << threshold + 0.01 << " -> "
      << second(threshold + 0.01);
    return ok;
}

// ---- ranking ----

bool thurstone_vs_grid(std::ostringstream& d) {
    std::mt19937_64 rng(1004);
    FitOptions opts;
    opts.smoothing_epsilon = 0.0;
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        CountMatrix c(3);
        std::array<std::array<double, 3>, 3> w{};
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                if (i == j) continue;
                c(i, j) = 1 + static_cast<std::int64_t>(rng() % 10);
                w[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = static_cast<double>(c(i, j));
            }
        }
        const auto fitted = fit(c, opts);
        const auto grid = testing::oracle_grid_fit3(w, 1e-3, 3.0);
        for (std::size_t i = 0; i < 3; ++i) worst = std::max(worst, std::abs(fitted.mu[i] - grid[i]));
    }
    d << "max |mu - grid| = " << worst;
    return worst <= 2e-3;
}

bool fit_invariances(std::ostringstream& d) {
    std::mt19937_64 rng(1005);
    FitOptions raw;
    raw.smoothing_epsilon = 0.0;
    double worst_sum = 0.0, worst_scale = 0.0, worst_perm = 0.0;
    for (int t = 0; t < 20; ++t) {
        const int n = 3 + static_cast<int>(rng() % 8);
        CountMatrix c(n);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                if (i != j) c(i, j) = 1 + static_cast<std::int64_t>(rng() % 50);
            }
        }
        const auto base = fit(c, raw);
        worst_sum = std::max(worst_sum, std::abs(std::accumulate(base.mu.begin(), base.mu.end(), 0.0)));
        const auto smoothed = fit(c);
        worst_sum = std::max(worst_sum, std::abs(std::accumulate(smoothed.mu.begin(), smoothed.mu.end(), 0.0)));

        for (int alpha : {2, 5, 10}) {
            CountMatrix s(n);
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) s(i, j) = alpha * c(i, j);
            }
            const auto r = fit(s, raw);
            for (int i = 0; i < n; ++i) {
                worst_scale = std::max(worst_scale, std::abs(r.mu[static_cast<std::size_t>(i)] - base.mu[static_cast<std::size_t>(i)]));
            }
        }

        std::vector<int> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        CountMatrix pc(n);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) pc(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]) = c(i, j);
        }
        const auto pr = fit(pc, raw);
        for (int i = 0; i < n; ++i) {
            worst_perm = std::max(worst_perm, std::abs(pr.mu[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] -
                                                       base.mu[static_cast<std::size_t>(i)]));
        }
    }
    d << "|sum mu| " << worst_sum << ", scaling " << worst_scale << ", 20 permutations " << worst_perm;
    return worst_sum <= 1e-9 && worst_scale <= 1e-6 && worst_perm <= 1e-6;
}

// Ground truth for the simulated 8-method study: adjacent gaps 0.25..0.4.
std::vector<double> ground_truth() {
    std::vector<double> mu{0.0};
    const double gaps[] = {0.25, 0.3, 0.25, 0.4, 0.25, 0.35, 0.25};
    for (double g : gaps) mu.push_back(mu.back() - g);
    const double mean = std::accumulate(mu.begin(), mu.end(), 0.0) / 8.0;
    for (double& m : mu) m -= mean;
    return mu;
}

Schedule full_schedule(std::uint64_t seed) {
    const auto sel = testing::synthetic_selections(8, 12);
    return build_schedule(sel, 8, seed, "acceptance");
}

bool recovery(std::ostringstream& d) {
    const auto mu_star = ground_truth();
    double min_srcc = 1.0, mean_err_sum = 0.0, worst_err = 0.0;
    std::size_t votes_per_seed = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto schedule = full_schedule(seed);
        const auto votes = simulate_votes(mu_star, schedule, 25, seed * 7919);
        votes_per_seed = votes.size();
        const auto r = fit(tally(votes, schedule));
        min_srcc = std::min(min_srcc, srcc(r.mu, mu_star));
        double err = 0.0;
        for (std::size_t i = 0; i < 8; ++i) err += std::abs(r.mu[i] - mu_star[i]);
        err /= 8.0;
        mean_err_sum += err;
        worst_err = std::max(worst_err, err);
    }
    const double mean_err = mean_err_sum / 20.0;
    d << votes_per_seed << " votes/seed; min srcc " << min_srcc << ", mean |mu err| " << mean_err << " (worst seed "
      << worst_err << ")";
    return votes_per_seed == 8400 && min_srcc >= 0.95 && mean_err <= 0.1;
}

bool stability(std::ostringstream& d) {
    const auto mu_star = ground_truth();
    double worst = 1.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto schedule = full_schedule(seed);
        const auto votes = simulate_votes(mu_star, schedule, 25, seed * 7919);
        const auto curve = stability_curve(votes, schedule, 12);
        if (curve.size() != 12 || curve[10].k != 11) {
            d << "unexpected curve shape";
            return false;
        }
        worst = std::min(worst, curve[10].srcc);
    }
    d << "min over 20 seeds of srcc(K=11, K=12) = " << worst;
    return worst >= 0.97;
}

// ---- metrics ----

bool metric_sanity(std::ostringstream& d) {
    const auto cam_a = to_luma(load_image(testing::data_path("camera_ref.png")));
    const auto cam_b = to_luma(load_image(testing::data_path("camera_dist.png")));
    const bool identity = ssim(cam_a, cam_a) == 1.0 && mse(cam_a, cam_a) == 0.0;
    const double closed = (2 * 0.25 * 0.75 + 1e-4) / (0.25 * 0.25 + 0.75 * 0.75 + 1e-4);
    const double plane_err = std::abs(ssim(testing::constant_plane(32, 32, 0.25), testing::constant_plane(32, 32, 0.75)) - closed);
    // scikit-image structural_similarity on the same luma planes
    const double ref = 0.6574848002495313;
    const double got = ssim(cam_a, cam_b);
    d << "identity " << (identity ? "exact" : "INEXACT") << ", constant-plane err " << plane_err << ", camera ssim "
      << got << " vs " << ref;
    return identity && plane_err <= 1e-6 && std::abs(got - ref) <= 1e-4;
}

// ---- study ----

bool schedule_and_tally(std::ostringstream& d) {
    const auto schedule = full_schedule(42);
    std::map<PairKey, std::pair<int, int>> sides;
    for (const auto& t : schedule.trials()) {
        auto& lr = sides[t.pair];
        (t.left_method == t.pair.i ? lr.first : lr.second)++;
    }
    bool balanced = sides.size() == 28;
    for (const auto& [p, lr] : sides) balanced = balanced && lr.first == 6 && lr.second == 6;

    auto votes = simulate_votes(ground_truth(), schedule, 25, 3);
    const auto ref = tally(votes, schedule);
    std::mt19937_64 rng(9);
    bool invariant = ref.total() == 8400;
    for (int i = 0; i < 10; ++i) {
        std::shuffle(votes.begin(), votes.end(), rng);
        invariant = invariant && tally(votes, schedule) == ref;
    }
    d << schedule.trials().size() << " trials, sides 6/6 in every pair: " << (balanced ? "yes" : "no")
      << ", tally stable over 10 shuffles: " << (invariant ? "yes" : "no");
    return schedule.trials().size() == 336 && balanced && invariant;
}

bool crash_safety(std::ostringstream& d) {
    testing::TempDir tmp("madeval-acc");
    testing::make_disk_pool(tmp / "pool", {"ma", "mb", "mc"}, 4, 17, 16, 14);
    testing::write_bytes(tmp / "methods.txt", "ma\nmb\nmc\n");
    StudyConfig cfg;
    cfg.k = 2;
    const StudyPaths study{tmp / "study"};
    cli_ingest(study, tmp / "pool", tmp / "methods.txt", cfg);
    cli_select(study, cfg);
    const auto schedule = cli_schedule(study, cfg);
    const auto order = schedule.order_for("rater1");
    const Trial& first = schedule.trials()[order[0]];

    int acked = 0;
    {
        testing::ChildServer server(study.root);
        httplib::Client c("127.0.0.1", server.port());
        const auto res = c.Post("/api/session/rater1/vote", json{{"trial_id", first.trial_id}, {"position", "left"}}.dump(),
                                "application/json");
        acked = res ? res->status : -1;
        server.kill_hard();
    }
    testing::ChildServer server(study.root);
    httplib::Client c("127.0.0.1", server.port());
    const auto next = c.Get("/api/session/rater1/next");
    const std::string resumed = next ? json::parse(next->body).value("trial_id", "") : "";
    const auto counts = cli_tally_rank_report(study, cfg, true, false, false).counts;
    const int winner = first.left_method;
    const int loser = first.right_method;
    const bool ok = acked == 200 && counts.total() == 1 && counts(winner, loser) == 1 &&
                    resumed == schedule.trials()[order[1]].trial_id;
    d << "ack " << acked << ", votes after restart " << counts.total() << ", resumed at trial 2: "
      << (resumed == schedule.trials()[order[1]].trial_id ? "yes" : "no");
    return ok;
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {"greedy selection equals exhaustive argmax", 5.0, greedy_vs_brute_force},
        {"lambda1=0 reduces to top-K by D1", 1.0, lambda_zero_reduction},
        {"diversity term changes the second pick", 1.0, diversity_effect},
        {"Thurstone fit matches grid search (N=3)", 60.0, thurstone_vs_grid},
        {"fit invariances", 10.0, fit_invariances},
        {"recovery at N=8, K=12, 25 subjects", 30.0, recovery},
        {"stability curve K=11 vs K=12", 60.0, stability},
        {"metric sanity", 5.0, metric_sanity},
        {"schedule and tally arithmetic", 5.0, schedule_and_tally},
        {"crash safety", 10.0, crash_safety},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        std::ostringstream detail;
        bool ok = false;
        const auto start = std::chrono::steady_clock::now();
        try {
            ok = c.body(detail);
        } catch (const std::exception& e) {
            detail << "exception: " << e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = secs <= c.budget_seconds;
        if (!in_time) detail << "; over budget";
        ok = ok && in_time;
        failures += !ok;
        std::printf("%s  %-44s %7.3f s / %4.0f s  %s\n", ok ? "PASS" : "FAIL", c.name.c_str(), secs, c.budget_seconds,
                    detail.str().c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
