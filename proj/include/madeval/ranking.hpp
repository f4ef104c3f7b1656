#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "madeval/study.hpp"

namespace madeval {

double normal_cdf(double x);
double normal_pdf(double x);

/// log Phi(x), finite for every finite x (asymptotic series below -8).
double log_normal_cdf(double x);

/// phi(x) / Phi(x), finite for every finite x (asymptotic series below -8).
double inverse_mills_ratio(double x);

/// Real-valued N x N comparison weights; a smoothed CountMatrix.
struct ComparisonWeights {
    int n = 0;
    std::vector<double> w;

    double operator()(int i, int j) const { return w[static_cast<std::size_t>(i) * n + j]; }

    static ComparisonWeights from_counts(const CountMatrix& c, double smoothing_epsilon = 0.0);
};

/// Thurstone Case V log-likelihood: sum over i != j of C_ij log Phi(mu_i - mu_j).
double log_likelihood(std::span<const double> mu, const ComparisonWeights& c);
double log_likelihood(std::span<const double> mu, const CountMatrix& c);

/// d L / d mu_i.
std::vector<double> log_likelihood_gradient(std::span<const double> mu, const ComparisonWeights& c);

struct FitOptions {
    double smoothing_epsilon = 0.5;  // pseudo-votes added to every off-diagonal cell
    double tolerance = 1e-9;         // on the Euclidean norm of the projected gradient
    int max_iterations = 20000;
    bool record_trace = false;

    void validate() const;
};

struct RankingScores {
    std::vector<double> mu;  // sums to zero
    bool converged = false;
    double final_log_likelihood = 0.0;  // of the smoothed counts
    int iterations = 0;
    double gradient_norm = 0.0;
    std::vector<double> trace;  // log-likelihood after every iteration, when requested
};

/// Maximum-likelihood scores under the zero-sum constraint by Newton-preconditioned
/// ascent with backtracking. Throws DisconnectedComparisonGraph when
/// the observed (unsmoothed) comparisons do not connect all methods. A run
/// that exhausts max_iterations returns its best iterate with converged=false.
RankingScores fit(const CountMatrix& c, const FitOptions& options = {});
RankingScores fit(const ComparisonWeights& w, const FitOptions& options = {});

/// 1 = best. Scores within 1e-6 of each other share the better rank.
std::vector<int> ordinal_ranks(std::span<const double> mu, double tie_tolerance = 1e-6);

/// Spearman rank correlation (Pearson over average ranks). Throws
/// DegenerateInput when either side is constant.
double srcc(std::span<const double> a, std::span<const double> b);

struct StabilityPoint {
    int k = 0;
    double srcc = 0.0;
};

/// SRCC between the fit on the top-K picks of every pair and the fit on the
/// top-K_max picks, for K = 1..K_max. K_max is capped at the deepest pick rank
/// that actually received votes, so the last row is always the self
/// comparison (1.0).
std::vector<StabilityPoint> stability_curve(std::span<const Vote> votes, const Schedule& schedule, int k_max,
                                            const FitOptions& options = {});

/// Thurstone observers: each of `subjects` anonymous subjects answers every
/// trial in their presentation order, picking method i over j with
/// probability Phi(mu_i - mu_j). Deterministic in `seed`.
std::vector<Vote> simulate_votes(std::span<const double> mu_star, const Schedule& schedule, int subjects,
                                 std::uint64_t seed);

std::string simulated_subject_id(int index);

}  // namespace madeval
