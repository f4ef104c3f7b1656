#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "madeval/imaging.hpp"
#include "madeval/metrics.hpp"
#include "madeval/pool.hpp"

namespace madeval {

/// Zero-based method indices with i < j.
struct PairKey {
    int i = 0;
    int j = 1;

    friend bool operator==(const PairKey&, const PairKey&) = default;
    friend auto operator<=>(const PairKey&, const PairKey&) = default;
};

std::vector<PairKey> enumerate_method_pairs(int method_count);

struct SelectionConfig {
    int k = 12;
    double lambda1 = 1.0;
    // Min-max normalise D1 over the pool and D2 over the unselected pool at
    // every step before combining. Off means raw metric units.
    bool normalize = true;
    D1Provider d1 = D1Provider::builtin(D1Kind::Mse);
    D2Provider d2;
    unsigned threads = 0;  // 0: hardware concurrency

    void validate() const;
};

struct Pick {
    std::string candidate_id;
    double d1_term = 0.0;  // as combined (normalised when enabled)
    double d2_term = 0.0;  // 0 on the first pick
    double total = 0.0;    // d1_term + lambda1 * d2_term
    double d1_raw = 0.0;
    double d2_raw = 0.0;   // +inf on the first pick

    friend bool operator==(const Pick&, const Pick&) = default;
};

struct Rejection {
    std::string candidate_id;
    std::string reason;

    friend bool operator==(const Rejection&, const Rejection&) = default;
};

struct SelectionResult {
    PairKey pair;
    std::vector<Pick> picks;  // greedy order
    std::vector<Rejection> rejected;

    friend bool operator==(const SelectionResult&, const SelectionResult&) = default;
};

/// Returns a rejection reason, or nullopt to accept. Called on each tentative
/// pick; a rejected candidate is replaced by the next eligible argmax.
using ScreeningHook = std::function<std::optional<std::string>(const std::string& candidate_id, PairKey pair)>;

/// Per-pair scoring inputs: the cached D1 value and the input-image feature
/// of every candidate, in pool order (ascending id).
struct PairInputs {
    std::vector<std::string> ids;
    std::vector<double> d1;
    std::vector<const FeatureVector*> features;
};

struct CandidateScore {
    double d1_term = 0.0;
    double d2_term = 0.0;
    double total = 0.0;
    double d1_raw = 0.0;
    double d2_raw = 0.0;
};

/// Objective of candidate `x` given the already-selected indices, evaluated
/// from scratch (no incremental state).
CandidateScore score_candidate(const PairInputs& inputs, std::size_t x, std::span<const std::size_t> selected,
                               const SelectionConfig& config);

/// Greedy top-K selection over prepared inputs. `excluded` candidates never
/// become picks; each is recorded as a rejection with its reason.
SelectionResult select_top_k(const PairInputs& inputs, PairKey pair, const SelectionConfig& config,
                             const ScreeningHook& screen = {}, std::span<const Rejection> excluded = {});

/// Reruns selection with `rejected` removed.
SelectionResult apply_rejections(const PairInputs& inputs, PairKey pair, const SelectionConfig& config,
                                 std::span<const Rejection> rejected, const ScreeningHook& screen = {});

// ---- pool-backed evaluation ----

/// Input-image features for every pool candidate (builtin thumbnails or the
/// external manifest named by the provider), in pool order.
std::vector<FeatureVector> compute_features(const CandidatePool& pool, const D2Provider& d2, unsigned threads = 0);

/// D1 between the two methods' outputs for every candidate, in pool order.
std::vector<double> compute_d1(const CandidatePool& pool, PairKey pair, const D1Provider& d1, unsigned threads = 0);

PairInputs make_pair_inputs(const CandidatePool& pool, std::span<const FeatureVector> features,
                            std::vector<double> d1);

// ---- file formats ----

/// `candidate_id,reason` per line; the reason may contain commas.
std::vector<Rejection> read_rejection_list(const std::filesystem::path& path);

std::string serialize_selection(const SelectionResult& result, std::span<const std::string> methods);
SelectionResult parse_selection(const std::string& text, const std::string& origin = "<selection>");

SelectionResult read_selection_file(const std::filesystem::path& path);
void write_selection_file(const std::filesystem::path& path, const SelectionResult& result,
                          std::span<const std::string> methods);

std::string selection_file_name(PairKey pair);

}  // namespace madeval
