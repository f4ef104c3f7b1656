#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "madeval/ranking.hpp"
#include "madeval/selection.hpp"

namespace madeval {

/// Everything a study needs that is not data: selection knobs, metric
/// choices, seed, fit options. Read from a key=value text file.
struct StudyConfig {
    int k = 12;
    double lambda1 = 1.0;
    bool normalize = true;
    D1Kind d1 = D1Kind::Mse;
    std::filesystem::path d1_matrices;  // directory of distance-matrix files
    Extractor d2 = Extractor::BuiltinThumbnail;
    std::filesystem::path d2_features;
    Aggregation aggregation = Aggregation::Min;
    MismatchPolicy mismatch = MismatchPolicy::Error;
    std::uint64_t seed = 1;
    std::string study_id = "study";
    unsigned threads = 0;
    FitOptions fit;

    /// Builds the selection configuration, loading external matrices if needed.
    SelectionConfig selection_config(const CandidatePool& pool) const;
};

/// Keys (case-insensitive): K, lambda1, normalize, d1, d1_matrices, d2,
/// d2_features, aggregation, mismatch, seed, study_id, threads,
/// smoothing_epsilon, tolerance, max_iterations. Relative paths resolve
/// against the file's directory. Unknown keys are an error.
StudyConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {},
                         const std::string& origin = "<config>");
StudyConfig read_config_file(const std::filesystem::path& path);

/// Applies one key=value override on top of an existing config.
void apply_config_entry(StudyConfig& config, std::string key, const std::string& value,
                        const std::filesystem::path& base_dir = {});

std::string serialize_config(const StudyConfig& config);

}  // namespace madeval
