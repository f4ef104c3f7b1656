#pragma once

#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "madeval/imaging.hpp"

namespace madeval {

// ---- D1: dissimilarity between two enhanced outputs of the same input ----

enum class D1Kind { Mse, OneMinusSsim, ExternalMatrix };
enum class MismatchPolicy { Error, CenterCrop };

double mse(const LumaImage& a, const LumaImage& b);

/// Mean SSIM over all full 11x11 windows (Gaussian, sigma 1.5) with
/// C1 = 0.01^2 and C2 = 0.03^2 for unit dynamic range.
double ssim(const LumaImage& a, const LumaImage& b);

/// Distances between two methods' outputs produced outside the toolkit,
/// one value per candidate.
struct ExternalDistanceMatrix {
    std::string method_i;
    std::string method_j;
    std::map<std::string, double> entries;
};

ExternalDistanceMatrix load_external_distance_matrix(const std::filesystem::path& path,
                                                     std::span<const std::string> expected_ids = {});
void write_external_distance_matrix(const std::filesystem::path& path, const ExternalDistanceMatrix& m);

class D1Provider {
public:
    static D1Provider builtin(D1Kind kind, MismatchPolicy mismatch = MismatchPolicy::Error);

    // Matrices keyed by unordered method-name pair.
    static D1Provider external(std::vector<ExternalDistanceMatrix> matrices);

    D1Kind kind() const noexcept { return kind_; }
    MismatchPolicy mismatch() const noexcept { return mismatch_; }

    /// Builtin kinds only. Applies the mismatch policy first.
    double compare(const LumaImage& a, const LumaImage& b) const;

    /// External kind only: the stored distance for `candidate` under the pair.
    double lookup(const std::string& method_a, const std::string& method_b, const std::string& candidate) const;

    const ExternalDistanceMatrix* find_matrix(const std::string& method_a, const std::string& method_b) const;

private:
    D1Kind kind_ = D1Kind::Mse;
    MismatchPolicy mismatch_ = MismatchPolicy::Error;
    std::vector<ExternalDistanceMatrix> matrices_;
};

// ---- D2: semantic distance from a candidate to the selected set ----

enum class Aggregation { Min, Mean };
enum class Extractor { BuiltinThumbnail, ExternalFeatures };

inline constexpr double kEmptySetDistance = std::numeric_limits<double>::infinity();

double feature_distance(const FeatureVector& u, const FeatureVector& v);

double set_distance(const FeatureVector& x, std::span<const FeatureVector* const> selected,
                    Aggregation aggregation = Aggregation::Min);

struct D2Provider {
    Extractor extractor = Extractor::BuiltinThumbnail;
    Aggregation aggregation = Aggregation::Min;
    std::filesystem::path features_path;  // for ExternalFeatures
};

/// Feature manifest: header `descriptor_id,length`, then `candidate_id,v1,...,vn`.
std::map<std::string, FeatureVector> load_external_features(const std::filesystem::path& path,
                                                            std::span<const std::string> expected_ids = {});
void write_external_features(const std::filesystem::path& path, const std::map<std::string, FeatureVector>& features);

}  // namespace madeval
