#include "madeval/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "madeval/error.hpp"
#include "madeval/rng.hpp"

namespace madeval {

namespace {

constexpr double kAsymptoticBelow = -8.0;
const double kLogSqrt2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

// 1 - 1/x^2 + 3/x^4 - 15/x^6 + ...: Phi(x) = phi(x)/(-x) * series for x -> -inf.
// Terms shrink while (2n+1) < x^2, so at x <= -8 twenty terms are far past
// double precision before the series starts to diverge.
double mills_series(double x) {
    const double inv_x2 = 1.0 / (x * x);
    double term = 1.0;
    double sum = 1.0;
    for (int n = 1; n <= 20; ++n) {
        term *= -(2.0 * n - 1.0) * inv_x2;
        sum += term;
    }
    return sum;
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

double normal_pdf(double x) { return std::exp(-0.5 * x * x - kLogSqrt2Pi); }

double log_normal_cdf(double x) {
    if (x < kAsymptoticBelow) return -0.5 * x * x - kLogSqrt2Pi - std::log(-x) + std::log(mills_series(x));
    if (x > 0.0) return std::log1p(-0.5 * std::erfc(x * std::numbers::sqrt2 / 2.0));
    return std::log(normal_cdf(x));
}

double inverse_mills_ratio(double x) {
    if (x < kAsymptoticBelow) return -x / mills_series(x);
    return normal_pdf(x) / normal_cdf(x);
}

ComparisonWeights ComparisonWeights::from_counts(const CountMatrix& c, double smoothing_epsilon) {
    ComparisonWeights w;
    w.n = c.size();
    w.w.assign(static_cast<std::size_t>(w.n) * w.n, 0.0);
    for (int i = 0; i < w.n; ++i) {
        for (int j = 0; j < w.n; ++j) {
            if (i != j) w.w[static_cast<std::size_t>(i) * w.n + j] = static_cast<double>(c(i, j)) + smoothing_epsilon;
        }
    }
    return w;
}

double log_likelihood(std::span<const double> mu, const ComparisonWeights& c) {
    if (static_cast<int>(mu.size()) != c.n) throw Error(Errc::ValidationError, "score vector length != N");
    double total = 0.0;
    for (int i = 0; i < c.n; ++i) {
        for (int j = 0; j < c.n; ++j) {
            const double cij = c(i, j);
            if (i != j && cij > 0.0) total += cij * log_normal_cdf(mu[static_cast<std::size_t>(i)] - mu[static_cast<std::size_t>(j)]);
        }
    }
    return total;
}

double log_likelihood(std::span<const double> mu, const CountMatrix& c) {
    return log_likelihood(mu, ComparisonWeights::from_counts(c));
}

std::vector<double> log_likelihood_gradient(std::span<const double> mu, const ComparisonWeights& c) {
    std::vector<double> g(mu.size(), 0.0);
    for (int i = 0; i < c.n; ++i) {
        for (int j = 0; j < c.n; ++j) {
            const double cij = c(i, j);
            if (i == j || cij <= 0.0) continue;
            // term C_ij log Phi(mu_i - mu_j): +psi to i, -psi to j
            const double t = cij * inverse_mills_ratio(mu[static_cast<std::size_t>(i)] - mu[static_cast<std::size_t>(j)]);
            g[static_cast<std::size_t>(i)] += t;
            g[static_cast<std::size_t>(j)] -= t;
        }
    }
    return g;
}

void FitOptions::validate() const {
    if (!(smoothing_epsilon >= 0.0)) throw Error(Errc::ConfigError, "smoothing_epsilon must be >= 0");
    if (!(tolerance > 0.0)) throw Error(Errc::ConfigError, "tolerance must be > 0");
    if (max_iterations < 1) throw Error(Errc::ConfigError, "max_iterations must be >= 1");
}

namespace {

void project_zero_sum(std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    for (double& x : v) x -= mean;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

bool connected(const ComparisonWeights& observed) {
    const int n = observed.n;
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    std::vector<int> stack{0};
    seen[0] = true;
    while (!stack.empty()) {
        const int u = stack.back();
        stack.pop_back();
        for (int v = 0; v < n; ++v) {
            if (!seen[static_cast<std::size_t>(v)] && observed(u, v) + observed(v, u) > 0.0) {
                seen[static_cast<std::size_t>(v)] = true;
                stack.push_back(v);
            }
        }
    }
    return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
}

// Negative Hessian of L plus the all-ones direction (which L ignores), so the
// system is positive definite whenever the weights connect every method.
std::vector<double> curvature(std::span<const double> mu, const ComparisonWeights& c) {
    const std::size_t n = static_cast<std::size_t>(c.n);
    std::vector<double> h(n * n, 1.0 / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double cij = c(static_cast<int>(i), static_cast<int>(j));
            if (i == j || cij <= 0.0) continue;
            const double d = mu[i] - mu[j];
            const double psi = inverse_mills_ratio(d);
            const double k = cij * psi * std::max(0.0, d + psi);
            h[i * n + i] += k;
            h[j * n + j] += k;
            h[i * n + j] -= k;
            h[j * n + i] -= k;
        }
    }
    return h;
}

// Solves h x = b in place by Cholesky; false if h is not positive definite.
bool cholesky_solve(std::vector<double> h, std::vector<double>& b) {
    const std::size_t n = b.size();
    for (std::size_t j = 0; j < n; ++j) {
        double d = h[j * n + j];
        for (std::size_t k = 0; k < j; ++k) d -= h[j * n + k] * h[j * n + k];
        if (!(d > 0.0)) return false;
        d = std::sqrt(d);
        h[j * n + j] = d;
        for (std::size_t i = j + 1; i < n; ++i) {
            double v = h[i * n + j];
            for (std::size_t k = 0; k < j; ++k) v -= h[i * n + k] * h[j * n + k];
            h[i * n + j] = v / d;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < i; ++k) b[i] -= h[i * n + k] * b[k];
        b[i] /= h[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t k = i + 1; k < n; ++k) b[i] -= h[k * n + i] * b[k];
        b[i] /= h[i * n + i];
    }
    return true;
}

// log Phi(b) - log Phi(a) without the cancellation of subtracting two large
// values: for close arguments, Simpson's rule on d/dx log Phi = psi.
// `h` is passed separately because b - a would round away most of a tiny step.
double delta_log_phi(double a, double h) {
    if (std::abs(h) < 1e-3) {
        return h / 6.0 * (inverse_mills_ratio(a) + 4.0 * inverse_mills_ratio(a + 0.5 * h) + inverse_mills_ratio(a + h));
    }
    return log_normal_cdf(a + h) - log_normal_cdf(a);
}

double delta_log_likelihood(std::span<const double> from, std::span<const double> to, const ComparisonWeights& c) {
    double total = 0.0;
    for (int i = 0; i < c.n; ++i) {
        for (int j = 0; j < c.n; ++j) {
            const double cij = c(i, j);
            if (i == j || cij <= 0.0) continue;
            const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
            // coordinate steps are exact differences of nearby doubles
            const double h = (to[ui] - from[ui]) - (to[uj] - from[uj]);
            total += cij * delta_log_phi(from[ui] - from[uj], h);
        }
    }
    return total;
}

RankingScores ascend(const ComparisonWeights& w, const FitOptions& options) {
    const std::size_t n = static_cast<std::size_t>(w.n);
    RankingScores out;
    std::vector<double> mu(n, 0.0);
    double ll = log_likelihood(mu, w);
    std::vector<double> g = log_likelihood_gradient(mu, w);
    project_zero_sum(g);
    double gnorm = std::sqrt(dot(g, g));

    int it = 0;
    while (gnorm > options.tolerance && it < options.max_iterations) {
        // Newton direction when the curvature is usable, otherwise the
        // gradient scaled by the inverse of the largest curvature entry.
        std::vector<double> dir = g;
        const auto h = curvature(mu, w);
        if (!cholesky_solve(h, dir) || !(dot(dir, g) > 0.0)) {
            const double scale = *std::max_element(h.begin(), h.end());
            dir = g;
            for (double& v : dir) v /= scale;
        }
        project_zero_sum(dir);
        const double slope = dot(dir, g);

        double step = 1.0;
        bool accepted = false;
        std::vector<double> trial(n);
        double gain = 0.0;
        std::vector<double> trial_g;
        for (int backtrack = 0; backtrack < 60; ++backtrack) {
            for (std::size_t i = 0; i < n; ++i) trial[i] = mu[i] + step * dir[i];
            project_zero_sum(trial);
            gain = delta_log_likelihood(mu, trial, w);
            if (std::isfinite(gain) && gain >= 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        if (!(gain >= 0.0)) throw std::logic_error("Thurstone fit: log-likelihood decreased");
        trial_g = log_likelihood_gradient(trial, w);
        project_zero_sum(trial_g);
        mu.swap(trial);
        ll += gain;
        g.swap(trial_g);
        gnorm = std::sqrt(dot(g, g));
        ++it;
        if (options.record_trace) out.trace.push_back(ll);
    }
    project_zero_sum(mu);
    out.mu = std::move(mu);
    out.final_log_likelihood = ll;
    out.iterations = it;
    out.gradient_norm = gnorm;
    out.converged = gnorm <= options.tolerance;
    return out;
}

}  // namespace

RankingScores fit(const ComparisonWeights& observed, const FitOptions& options) {
    options.validate();
    if (observed.n < 2) throw Error(Errc::ValidationError, "need at least two methods");
    for (int i = 0; i < observed.n; ++i) {
        for (int j = 0; j < observed.n; ++j) {
            const double v = observed(i, j);
            if (!(v >= 0.0) || !std::isfinite(v)) throw Error(Errc::ValidationError, "counts must be finite and >= 0");
            if (i == j && v != 0.0) throw Error(Errc::ValidationError, "count matrix diagonal must be zero");
        }
    }
    if (!connected(observed)) {
        throw Error(Errc::DisconnectedComparisonGraph, "observed comparisons do not connect all methods");
    }
    ComparisonWeights smoothed = observed;
    for (int i = 0; i < observed.n; ++i) {
        for (int j = 0; j < observed.n; ++j) {
            if (i != j) smoothed.w[static_cast<std::size_t>(i) * observed.n + j] += options.smoothing_epsilon;
        }
    }
    return ascend(smoothed, options);
}

RankingScores fit(const CountMatrix& c, const FitOptions& options) {
    return fit(ComparisonWeights::from_counts(c), options);
}

std::vector<int> ordinal_ranks(std::span<const double> mu, double tie_tolerance) {
    std::vector<std::size_t> idx(mu.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return mu[a] > mu[b]; });
    std::vector<int> ranks(mu.size(), 0);
    for (std::size_t p = 0; p < idx.size(); ++p) {
        if (p > 0 && mu[idx[p - 1]] - mu[idx[p]] <= tie_tolerance) {
            ranks[idx[p]] = ranks[idx[p - 1]];
        } else {
            ranks[idx[p]] = static_cast<int>(p) + 1;
        }
    }
    return ranks;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    std::size_t p = 0;
    while (p < idx.size()) {
        std::size_t q = p;
        while (q + 1 < idx.size() && v[idx[q + 1]] == v[idx[p]]) ++q;
        const double avg = (static_cast<double>(p) + static_cast<double>(q)) / 2.0 + 1.0;
        for (std::size_t t = p; t <= q; ++t) r[idx[t]] = avg;
        p = q + 1;
    }
    return r;
}

}  // namespace

double srcc(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw Error(Errc::ValidationError, "srcc needs equal lengths >= 2");
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    const double n = static_cast<double>(ra.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) throw Error(Errc::DegenerateInput, "rank correlation of a constant vector");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::vector<StabilityPoint> stability_curve(std::span<const Vote> votes, const Schedule& schedule, int k_max,
                                            const FitOptions& options) {
    if (k_max < 1) throw Error(Errc::ValidationError, "K_max must be >= 1");
    int deepest = -1;
    for (const auto& v : votes) {
        const Trial* t = schedule.find(v.trial_id);
        if (t == nullptr) throw Error(Errc::UnknownTrial, v.trial_id);
        deepest = std::max(deepest, t->pick_rank);
    }
    const int k_eff = std::min(k_max, deepest + 1);
    if (k_eff < 1) throw Error(Errc::DisconnectedComparisonGraph, "no votes to rank");
    const auto reference = fit(tally_top_k(votes, schedule, k_eff), options);
    std::vector<StabilityPoint> curve;
    for (int k = 1; k <= k_eff; ++k) {
        const auto scores = k == k_eff ? reference : fit(tally_top_k(votes, schedule, k), options);
        curve.push_back({k, srcc(scores.mu, reference.mu)});
    }
    return curve;
}

std::string simulated_subject_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "sim-%03d", index + 1);
    return buf;
}

namespace {

// 2000-01-01T00:00:00Z plus `seconds`.
std::string synthetic_timestamp(std::int64_t seconds) {
    std::int64_t days = seconds / 86400;
    const std::int64_t rem = seconds % 86400;
    int year = 2000;
    auto leap = [](int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; };
    while (days >= (leap(year) ? 366 : 365)) days -= leap(year++) ? 366 : 365;
    static constexpr int month_days[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    int month = 0;
    while (true) {
        const int len = month_days[month] + (month == 1 && leap(year) ? 1 : 0);
        if (days < len) break;
        days -= len;
        ++month;
    }
    char buf[80];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.000Z", year, month + 1, static_cast<int>(days) + 1,
                  static_cast<int>(rem / 3600), static_cast<int>(rem / 60 % 60), static_cast<int>(rem % 60));
    return buf;
}

}  // namespace

std::vector<Vote> simulate_votes(std::span<const double> mu_star, const Schedule& schedule, int subjects,
                                 std::uint64_t seed) {
    if (static_cast<int>(mu_star.size()) != schedule.method_count()) {
        throw Error(Errc::ValidationError, "mu* length must equal the method count");
    }
    const double sum = std::accumulate(mu_star.begin(), mu_star.end(), 0.0);
    if (std::abs(sum) > 1e-9) throw Error(Errc::ValidationError, "mu* must sum to zero");
    if (subjects < 0) throw Error(Errc::ValidationError, "subject count must be >= 0");

    std::vector<Vote> votes;
    votes.reserve(static_cast<std::size_t>(subjects) * schedule.trials().size());
    std::int64_t clock = 0;
    for (int s = 0; s < subjects; ++s) {
        const std::string subject = simulated_subject_id(s);
        Rng rng(derive_seed(seed, "simulate:" + subject));
        for (std::size_t idx : schedule.order_for(subject)) {
            const Trial& t = schedule.trials()[idx];
            const double p = normal_cdf(mu_star[static_cast<std::size_t>(t.pair.i)] -
                                        mu_star[static_cast<std::size_t>(t.pair.j)]);
            const int chosen = rng.uniform01() < p ? t.pair.i : t.pair.j;
            Vote v;
            v.timestamp = synthetic_timestamp(clock++);
            v.subject_id = subject;
            v.trial_id = t.trial_id;
            v.chosen_method = chosen;
            v.position = chosen == t.left_method ? Position::Left : Position::Right;
            votes.push_back(std::move(v));
        }
    }
    return votes;
}

}  // namespace madeval
