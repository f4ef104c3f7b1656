#include "madeval/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <sstream>

#include "madeval/error.hpp"
#include "madeval/text_io.hpp"

namespace madeval {

namespace {

void require_same_dims(const LumaImage& a, const LumaImage& b) {
    if (a.width() != b.width() || a.height() != b.height()) {
        throw Error(Errc::DimensionMismatch, std::to_string(a.width()) + "x" + std::to_string(a.height()) +
                                                 " vs " + std::to_string(b.width()) + "x" +
                                                 std::to_string(b.height()));
    }
}

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_kernel() {
    std::array<double, kWindow> k{};
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        k[i] = std::exp(-(d * d) / (2.0 * kSigma * kSigma));
        sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
}

// Separable 'valid' filtering: output is (w - 10) x (h - 10).
std::vector<double> filter_valid(std::span<const double> src, int w, int h, const std::array<double, kWindow>& k) {
    const int ow = w - kWindow + 1;
    const int oh = h - kWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(ow) * h);
    for (int y = 0; y < h; ++y) {
        const double* line = src.data() + static_cast<std::size_t>(y) * w;
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < kWindow; ++t) acc += k[t] * line[x + t];
            rows[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < kWindow; ++t) acc += k[t] * rows[static_cast<std::size_t>(y + t) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    }
    return out;
}

}  // namespace

double mse(const LumaImage& a, const LumaImage& b) {
    require_same_dims(a, b);
    const auto pa = a.samples();
    const auto pb = b.samples();
    double acc = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const double d = pa[i] - pb[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pa.size());
}

double ssim(const LumaImage& a, const LumaImage& b) {
    require_same_dims(a, b);
    if (a.width() < kWindow || a.height() < kWindow) {
        throw Error(Errc::ImageTooSmall, "SSIM needs at least 11x11 pixels");
    }
    const int w = a.width();
    const int h = a.height();
    const auto pa = a.samples();
    const auto pb = b.samples();
    const std::size_t n = pa.size();
    std::vector<double> aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        aa[i] = pa[i] * pa[i];
        bb[i] = pb[i] * pb[i];
        ab[i] = pa[i] * pb[i];
    }
    const auto k = gaussian_kernel();
    const auto mu_a = filter_valid(pa, w, h, k);
    const auto mu_b = filter_valid(pb, w, h, k);
    const auto e_aa = filter_valid(aa, w, h, k);
    const auto e_bb = filter_valid(bb, w, h, k);
    const auto e_ab = filter_valid(ab, w, h, k);

    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i];
        const double mb = mu_b[i];
        const double var_a = e_aa[i] - ma * ma;
        const double var_b = e_bb[i] - mb * mb;
        const double cov = e_ab[i] - ma * mb;
        const double num = (2.0 * ma * mb + kC1) * (2.0 * cov + kC2);
        const double den = (ma * ma + mb * mb + kC1) * (var_a + var_b + kC2);
        total += num / den;
    }
    return total / static_cast<double>(mu_a.size());
}

D1Provider D1Provider::builtin(D1Kind kind, MismatchPolicy mismatch) {
    if (kind == D1Kind::ExternalMatrix) {
        throw Error(Errc::ConfigError, "external D1 requires distance matrices");
    }
    D1Provider p;
    p.kind_ = kind;
    p.mismatch_ = mismatch;
    return p;
}

D1Provider D1Provider::external(std::vector<ExternalDistanceMatrix> matrices) {
    D1Provider p;
    p.kind_ = D1Kind::ExternalMatrix;
    p.matrices_ = std::move(matrices);
    return p;
}

double D1Provider::compare(const LumaImage& a, const LumaImage& b) const {
    if (kind_ == D1Kind::ExternalMatrix) {
        throw Error(Errc::ConfigError, "external D1 has no image comparison");
    }
    if ((a.width() != b.width() || a.height() != b.height()) && mismatch_ == MismatchPolicy::CenterCrop) {
        const int w = std::min(a.width(), b.width());
        const int h = std::min(a.height(), b.height());
        return compare(center_crop(a, w, h), center_crop(b, w, h));
    }
    if (kind_ == D1Kind::Mse) return mse(a, b);
    return 1.0 - ssim(a, b);
}

const ExternalDistanceMatrix* D1Provider::find_matrix(const std::string& method_a,
                                                      const std::string& method_b) const {
    for (const auto& m : matrices_) {
        if ((m.method_i == method_a && m.method_j == method_b) || (m.method_i == method_b && m.method_j == method_a)) {
            return &m;
        }
    }
    return nullptr;
}

double D1Provider::lookup(const std::string& method_a, const std::string& method_b,
                          const std::string& candidate) const {
    const auto* m = find_matrix(method_a, method_b);
    if (m == nullptr) {
        throw Error(Errc::MissingCandidate, "no distance matrix for pair " + method_a + "," + method_b);
    }
    auto it = m->entries.find(candidate);
    if (it == m->entries.end()) {
        throw Error(Errc::MissingCandidate, "candidate " + candidate + " missing from distance matrix " +
                                                method_a + "," + method_b);
    }
    return it->second;
}

double feature_distance(const FeatureVector& u, const FeatureVector& v) {
    if (u.descriptor_id != v.descriptor_id || u.values.size() != v.values.size()) {
        throw Error(Errc::DescriptorMismatch, "'" + u.descriptor_id + "'[" + std::to_string(u.values.size()) +
                                                  "] vs '" + v.descriptor_id + "'[" +
                                                  std::to_string(v.values.size()) + "]");
    }
    if (u.values.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < u.values.size(); ++i) {
        const double d = u.values[i] - v.values[i];
        acc += d * d;
    }
    return acc / static_cast<double>(u.values.size());
}

double set_distance(const FeatureVector& x, std::span<const FeatureVector* const> selected, Aggregation aggregation) {
    if (selected.empty()) return kEmptySetDistance;
    if (aggregation == Aggregation::Min) {
        double best = kEmptySetDistance;
        for (const FeatureVector* s : selected) best = std::min(best, feature_distance(x, *s));
        return best;
    }
    double acc = 0.0;
    for (const FeatureVector* s : selected) acc += feature_distance(x, *s);
    return acc / static_cast<double>(selected.size());
}

namespace {

void require_ids(const std::set<std::string>& present, std::span<const std::string> expected,
                 const std::filesystem::path& path) {
    for (const auto& id : expected) {
        if (!present.contains(id)) {
            throw Error(Errc::MissingCandidate, id + " (not in " + path.string() + ")");
        }
    }
}

}  // namespace

std::map<std::string, FeatureVector> load_external_features(const std::filesystem::path& path,
                                                            std::span<const std::string> expected_ids) {
    const auto lines = text::read_lines(path);
    if (lines.empty()) throw Error(Errc::ValidationError, path.string() + ": missing header");
    const auto header = text::split(lines[0]);
    if (header.size() != 2) throw Error(Errc::ValidationError, path.string() + ": header must be descriptor_id,length");
    const std::string descriptor(text::trim(header[0]));
    const auto length = text::parse_int(header[1], path.string() + ":1");
    if (length < 1) throw Error(Errc::ValidationError, path.string() + ": length must be >= 1");

    std::map<std::string, FeatureVector> out;
    std::set<std::string> ids;
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        if (text::trim(lines[ln]).empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(ln + 1);
        const auto fields = text::split(lines[ln]);
        std::string id(text::trim(fields[0]));
        if (static_cast<std::int64_t>(fields.size()) - 1 != length) {
            throw Error(Errc::LengthMismatch, where + ": candidate " + id + " has " +
                                                  std::to_string(fields.size() - 1) + " values, expected " +
                                                  std::to_string(length));
        }
        FeatureVector fv;
        fv.descriptor_id = descriptor;
        fv.values.reserve(static_cast<std::size_t>(length));
        for (std::size_t i = 1; i < fields.size(); ++i) {
            const double v = text::parse_double(fields[i], where);
            if (!std::isfinite(v)) throw Error(Errc::ValidationError, where + ": non-finite value");
            fv.values.push_back(v);
        }
        if (!ids.insert(id).second) throw Error(Errc::ValidationError, where + ": duplicate candidate " + id);
        out.emplace(std::move(id), std::move(fv));
    }
    require_ids(ids, expected_ids, path);
    return out;
}

void write_external_features(const std::filesystem::path& path, const std::map<std::string, FeatureVector>& features) {
    if (features.empty()) throw Error(Errc::ValidationError, "no features to write");
    const auto& first = features.begin()->second;
    std::ostringstream os;
    os << first.descriptor_id << ',' << first.values.size() << '\n';
    for (const auto& [id, fv] : features) {
        if (fv.descriptor_id != first.descriptor_id || fv.values.size() != first.values.size()) {
            throw Error(Errc::DescriptorMismatch, "feature " + id + " does not match the set");
        }
        os << id;
        for (double v : fv.values) os << ',' << text::format_double(v);
        os << '\n';
    }
    text::write_file_atomic(path, os.str());
}

ExternalDistanceMatrix load_external_distance_matrix(const std::filesystem::path& path,
                                                     std::span<const std::string> expected_ids) {
    const auto lines = text::read_lines(path);
    if (lines.empty()) throw Error(Errc::ValidationError, path.string() + ": missing header");
    const auto header = text::split(lines[0]);
    if (header.size() != 2) throw Error(Errc::ValidationError, path.string() + ": header must be method_i,method_j");
    ExternalDistanceMatrix m;
    m.method_i = std::string(text::trim(header[0]));
    m.method_j = std::string(text::trim(header[1]));
    std::set<std::string> ids;
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        if (text::trim(lines[ln]).empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(ln + 1);
        const auto fields = text::split(lines[ln]);
        if (fields.size() != 2) throw Error(Errc::LengthMismatch, where + ": expected candidate_id,distance");
        std::string id(text::trim(fields[0]));
        const double d = text::parse_double(fields[1], where);
        if (!std::isfinite(d) || d < 0.0) {
            throw Error(Errc::ValidationError, where + ": distance for " + id + " must be finite and >= 0");
        }
        if (!ids.insert(id).second) throw Error(Errc::ValidationError, where + ": duplicate candidate " + id);
        m.entries.emplace(std::move(id), d);
    }
    require_ids(ids, expected_ids, path);
    return m;
}

void write_external_distance_matrix(const std::filesystem::path& path, const ExternalDistanceMatrix& m) {
    std::ostringstream os;
    os << m.method_i << ',' << m.method_j << '\n';
    for (const auto& [id, d] : m.entries) os << id << ',' << text::format_double(d) << '\n';
    text::write_file_atomic(path, os.str());
}

}  // namespace madeval
