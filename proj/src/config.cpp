#include "madeval/config.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "madeval/error.hpp"
#include "madeval/text_io.hpp"

namespace fs = std::filesystem;

namespace madeval {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

bool parse_bool(const std::string& v, const std::string& key) {
    const auto l = lower(v);
    if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
    if (l == "false" || l == "0" || l == "no" || l == "off") return false;
    throw Error(Errc::ConfigError, key + ": expected a boolean, got '" + v + "'");
}

fs::path resolve(const fs::path& base, const std::string& v) {
    fs::path p(v);
    return p.is_absolute() || base.empty() ? p : base / p;
}

std::string d1_name(D1Kind k) {
    switch (k) {
        case D1Kind::Mse: return "mse";
        case D1Kind::OneMinusSsim: return "one-minus-ssim";
        case D1Kind::ExternalMatrix: return "external-matrix";
    }
    return "mse";
}

}  // namespace

void apply_config_entry(StudyConfig& c, std::string key, const std::string& value, const fs::path& base_dir) {
    key = lower(std::string(text::trim(key)));
    const std::string v(text::trim(value));
    try {
        if (key == "k") {
            c.k = static_cast<int>(text::parse_int(v, key));
        } else if (key == "lambda1") {
            c.lambda1 = text::parse_double(v, key);
        } else if (key == "normalize") {
            c.normalize = parse_bool(v, key);
        } else if (key == "d1") {
            const auto l = lower(v);
            if (l == "mse") c.d1 = D1Kind::Mse;
            else if (l == "one-minus-ssim" || l == "ssim") c.d1 = D1Kind::OneMinusSsim;
            else if (l == "external-matrix") c.d1 = D1Kind::ExternalMatrix;
            else throw Error(Errc::ConfigError, "d1: unknown kind '" + v + "'");
        } else if (key == "d1_matrices") {
            c.d1_matrices = resolve(base_dir, v);
        } else if (key == "d2") {
            const auto l = lower(v);
            if (l == kThumbnailDescriptor || l == "builtin") c.d2 = Extractor::BuiltinThumbnail;
            else if (l == "external-features") c.d2 = Extractor::ExternalFeatures;
            else throw Error(Errc::ConfigError, "d2: unknown extractor '" + v + "'");
        } else if (key == "d2_features") {
            c.d2_features = resolve(base_dir, v);
        } else if (key == "aggregation") {
            const auto l = lower(v);
            if (l == "min") c.aggregation = Aggregation::Min;
            else if (l == "mean") c.aggregation = Aggregation::Mean;
            else throw Error(Errc::ConfigError, "aggregation: expected min or mean");
        } else if (key == "mismatch") {
            const auto l = lower(v);
            if (l == "error") c.mismatch = MismatchPolicy::Error;
            else if (l == "center-crop") c.mismatch = MismatchPolicy::CenterCrop;
            else throw Error(Errc::ConfigError, "mismatch: expected error or center-crop");
        } else if (key == "seed") {
            c.seed = static_cast<std::uint64_t>(text::parse_int(v, key));
        } else if (key == "study_id") {
            if (v.empty() || v.find(',') != std::string::npos) throw Error(Errc::ConfigError, "study_id must be comma-free");
            c.study_id = v;
        } else if (key == "threads") {
            c.threads = static_cast<unsigned>(text::parse_int(v, key));
        } else if (key == "smoothing_epsilon") {
            c.fit.smoothing_epsilon = text::parse_double(v, key);
        } else if (key == "tolerance") {
            c.fit.tolerance = text::parse_double(v, key);
        } else if (key == "max_iterations") {
            c.fit.max_iterations = static_cast<int>(text::parse_int(v, key));
        } else {
            throw Error(Errc::ConfigError, "unknown key '" + key + "'");
        }
    } catch (const Error& e) {
        if (e.code() == Errc::ConfigError) throw;
        throw Error(Errc::ConfigError, e.what());
    }
}

StudyConfig parse_config(const std::string& data, const fs::path& base_dir, const std::string& origin) {
    StudyConfig c;
    std::istringstream in(data);
    std::string raw;
    for (int ln = 1; std::getline(in, raw); ++ln) {
        const auto line = text::trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw Error(Errc::ConfigError, origin + ":" + std::to_string(ln) + ": expected key=value");
        }
        try {
            apply_config_entry(c, std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)), base_dir);
        } catch (const Error& e) {
            throw Error(Errc::ConfigError, origin + ":" + std::to_string(ln) + ": " + e.what());
        }
    }
    if (c.k < 1) throw Error(Errc::ConfigError, origin + ": K must be >= 1");
    if (!(c.lambda1 >= 0.0)) throw Error(Errc::ConfigError, origin + ": lambda1 must be >= 0");
    c.fit.validate();
    return c;
}

StudyConfig read_config_file(const fs::path& path) {
    return parse_config(text::read_file(path), path.parent_path(), path.string());
}

std::string serialize_config(const StudyConfig& c) {
    std::ostringstream os;
    os << "K=" << c.k << '\n'
       << "lambda1=" << text::format_double(c.lambda1) << '\n'
       << "normalize=" << (c.normalize ? "true" : "false") << '\n'
       << "d1=" << d1_name(c.d1) << '\n';
    if (!c.d1_matrices.empty()) os << "d1_matrices=" << fs::absolute(c.d1_matrices).string() << '\n';
    os << "d2=" << (c.d2 == Extractor::BuiltinThumbnail ? kThumbnailDescriptor : "external-features") << '\n';
    if (!c.d2_features.empty()) os << "d2_features=" << fs::absolute(c.d2_features).string() << '\n';
    os << "aggregation=" << (c.aggregation == Aggregation::Min ? "min" : "mean") << '\n'
       << "mismatch=" << (c.mismatch == MismatchPolicy::Error ? "error" : "center-crop") << '\n'
       << "seed=" << c.seed << '\n'
       << "study_id=" << c.study_id << '\n'
       << "threads=" << c.threads << '\n'
       << "smoothing_epsilon=" << text::format_double(c.fit.smoothing_epsilon) << '\n'
       << "tolerance=" << text::format_double(c.fit.tolerance) << '\n'
       << "max_iterations=" << c.fit.max_iterations << '\n';
    return os.str();
}

SelectionConfig StudyConfig::selection_config(const CandidatePool& pool) const {
    SelectionConfig s;
    s.k = k;
    s.lambda1 = lambda1;
    s.normalize = normalize;
    s.threads = threads;
    s.d2.extractor = d2;
    s.d2.aggregation = aggregation;
    s.d2.features_path = d2_features;
    if (d2 == Extractor::ExternalFeatures && d2_features.empty()) {
        throw Error(Errc::ConfigError, "d2=external-features requires d2_features");
    }
    if (d1 == D1Kind::ExternalMatrix) {
        if (d1_matrices.empty()) throw Error(Errc::ConfigError, "d1=external-matrix requires d1_matrices");
        const auto ids = pool.ids();
        std::vector<ExternalDistanceMatrix> matrices;
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(d1_matrices)) {
            if (e.is_regular_file()) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) matrices.push_back(load_external_distance_matrix(f, ids));
        s.d1 = D1Provider::external(std::move(matrices));
        for (const auto& p : enumerate_method_pairs(static_cast<int>(pool.methods.size()))) {
            if (!s.d1.find_matrix(pool.methods[static_cast<std::size_t>(p.i)], pool.methods[static_cast<std::size_t>(p.j)])) {
                throw Error(Errc::MissingCandidate, "no distance matrix for pair " +
                                                        pool.methods[static_cast<std::size_t>(p.i)] + "," +
                                                        pool.methods[static_cast<std::size_t>(p.j)]);
            }
        }
    } else {
        s.d1 = D1Provider::builtin(d1, mismatch);
    }
    s.validate();
    return s;
}

}  // namespace madeval
