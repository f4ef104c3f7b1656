#include "madeval/selection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "madeval/error.hpp"
#include "madeval/text_io.hpp"
#include "parallel.hpp"

namespace madeval {

std::vector<PairKey> enumerate_method_pairs(int method_count) {
    if (method_count < 2) throw Error(Errc::ValidationError, "need at least two methods");
    std::vector<PairKey> pairs;
    pairs.reserve(static_cast<std::size_t>(method_count) * (method_count - 1) / 2);
    for (int i = 0; i < method_count - 1; ++i) {
        for (int j = i + 1; j < method_count; ++j) pairs.push_back({i, j});
    }
    return pairs;
}

void SelectionConfig::validate() const {
    if (k < 1) throw Error(Errc::ConfigError, "K must be >= 1");
    if (!(lambda1 >= 0.0) || !std::isfinite(lambda1)) throw Error(Errc::ConfigError, "lambda1 must be finite and >= 0");
}

namespace {

struct Range {
    double lo = 0.0;
    double hi = 0.0;

    double normalize(double v) const { return hi > lo ? (v - lo) / (hi - lo) : 0.0; }
};

Range range_of(std::span<const double> values, const std::vector<bool>* skip = nullptr) {
    Range r{kEmptySetDistance, -kEmptySetDistance};
    bool any = false;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (skip && (*skip)[i]) continue;
        r.lo = std::min(r.lo, values[i]);
        r.hi = std::max(r.hi, values[i]);
        any = true;
    }
    return any ? r : Range{};
}

void check_inputs(const PairInputs& inputs) {
    if (inputs.d1.size() != inputs.ids.size() || inputs.features.size() != inputs.ids.size()) {
        throw Error(Errc::ValidationError, "pair inputs have inconsistent lengths");
    }
}

}  // namespace

CandidateScore score_candidate(const PairInputs& inputs, std::size_t x, std::span<const std::size_t> selected,
                               const SelectionConfig& config) {
    check_inputs(inputs);
    CandidateScore s;
    s.d1_raw = inputs.d1.at(x);
    s.d1_term = config.normalize ? range_of(inputs.d1).normalize(s.d1_raw) : s.d1_raw;

    std::vector<const FeatureVector*> members;
    for (std::size_t idx : selected) members.push_back(inputs.features.at(idx));
    s.d2_raw = set_distance(*inputs.features[x], members, config.d2.aggregation);
    if (selected.empty()) {
        s.d2_term = 0.0;
    } else if (config.normalize) {
        std::vector<bool> in_set(inputs.ids.size(), false);
        for (std::size_t idx : selected) in_set[idx] = true;
        std::vector<double> raw(inputs.ids.size(), 0.0);
        for (std::size_t c = 0; c < raw.size(); ++c) {
            if (!in_set[c]) raw[c] = set_distance(*inputs.features[c], members, config.d2.aggregation);
        }
        s.d2_term = range_of(raw, &in_set).normalize(s.d2_raw);
    } else {
        s.d2_term = s.d2_raw;
    }
    s.total = s.d1_term + config.lambda1 * s.d2_term;
    return s;
}

SelectionResult select_top_k(const PairInputs& inputs, PairKey pair, const SelectionConfig& config,
                             const ScreeningHook& screen, std::span<const Rejection> excluded) {
    config.validate();
    check_inputs(inputs);
    const std::size_t n = inputs.ids.size();

    SelectionResult result;
    result.pair = pair;

    std::vector<bool> selected(n, false);
    std::vector<bool> blocked(n, false);
    for (const auto& r : excluded) {
        auto it = std::lower_bound(inputs.ids.begin(), inputs.ids.end(), r.candidate_id);
        std::size_t idx = static_cast<std::size_t>(it - inputs.ids.begin());
        if (it == inputs.ids.end() || *it != r.candidate_id) {
            // ids are normally sorted; fall back to a scan otherwise
            idx = static_cast<std::size_t>(std::find(inputs.ids.begin(), inputs.ids.end(), r.candidate_id) -
                                           inputs.ids.begin());
            if (idx == n) throw Error(Errc::MissingCandidate, "rejected candidate " + r.candidate_id + " not in pool");
        }
        if (!blocked[idx]) {
            blocked[idx] = true;
            result.rejected.push_back(r);
        }
    }
    const auto eligible = static_cast<std::size_t>(std::count(blocked.begin(), blocked.end(), false));
    if (eligible < static_cast<std::size_t>(config.k)) {
        throw Error(Errc::PoolExhausted, "pair (" + std::to_string(pair.i) + "," + std::to_string(pair.j) + "): " +
                                             std::to_string(eligible) + " eligible candidates for K=" +
                                             std::to_string(config.k));
    }

    const Range d1_range = range_of(inputs.d1);
    std::vector<double> d1_term(n);
    for (std::size_t c = 0; c < n; ++c) d1_term[c] = config.normalize ? d1_range.normalize(inputs.d1[c]) : inputs.d1[c];

    const bool use_min = config.d2.aggregation == Aggregation::Min;
    std::vector<double> d2_raw(n, kEmptySetDistance);
    std::vector<double> d2_sum(n, 0.0);
    std::size_t newest = n;

    for (int step = 0; step < config.k; ++step) {
        Range d2_range;
        if (step > 0) {
            // Fold the newest member into every unselected candidate's distance.
            const FeatureVector& member = *inputs.features[newest];
            for (std::size_t c = 0; c < n; ++c) {
                if (selected[c]) continue;
                const double d = feature_distance(*inputs.features[c], member);
                if (use_min) {
                    d2_raw[c] = std::min(d2_raw[c], d);
                } else {
                    d2_sum[c] += d;
                    d2_raw[c] = d2_sum[c] / static_cast<double>(step);
                }
            }
            d2_range = range_of(d2_raw, &selected);
        }

        while (true) {
            std::size_t best = n;
            double best_total = 0.0;
            double best_d2 = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
                if (selected[c] || blocked[c]) continue;
                double d2 = 0.0;
                if (step > 0) d2 = config.normalize ? d2_range.normalize(d2_raw[c]) : d2_raw[c];
                const double total = d1_term[c] + config.lambda1 * d2;
                if (best == n || total > best_total || (total == best_total && inputs.ids[c] < inputs.ids[best])) {
                    best = c;
                    best_total = total;
                    best_d2 = d2;
                }
            }
            if (best == n) {
                throw Error(Errc::PoolExhausted, "pair (" + std::to_string(pair.i) + "," + std::to_string(pair.j) +
                                                     "): screening left only " + std::to_string(step) +
                                                     " picks for K=" + std::to_string(config.k));
            }
            if (screen) {
                if (auto reason = screen(inputs.ids[best], pair)) {
                    blocked[best] = true;
                    result.rejected.push_back({inputs.ids[best], *reason});
                    continue;
                }
            }
            selected[best] = true;
            newest = best;
            result.picks.push_back(
                {inputs.ids[best], d1_term[best], best_d2, best_total, inputs.d1[best], d2_raw[best]});
            break;
        }
    }
    return result;
}

SelectionResult apply_rejections(const PairInputs& inputs, PairKey pair, const SelectionConfig& config,
                                 std::span<const Rejection> rejected, const ScreeningHook& screen) {
    return select_top_k(inputs, pair, config, screen, rejected);
}

std::vector<FeatureVector> compute_features(const CandidatePool& pool, const D2Provider& d2, unsigned threads) {
    const auto& cs = pool.candidates;
    if (d2.extractor == Extractor::ExternalFeatures) {
        const auto ids = pool.ids();
        auto loaded = load_external_features(d2.features_path, ids);
        std::vector<FeatureVector> out;
        out.reserve(cs.size());
        for (const auto& c : cs) out.push_back(std::move(loaded.at(c.id)));
        return out;
    }
    std::vector<FeatureVector> out(cs.size());
    detail::parallel_for(cs.size(), threads, [&](std::size_t i) { out[i] = thumbnail_feature(load_image(cs[i].input)); });
    return out;
}

std::vector<double> compute_d1(const CandidatePool& pool, PairKey pair, const D1Provider& d1, unsigned threads) {
    const auto& cs = pool.candidates;
    std::vector<double> out(cs.size());
    const auto i = static_cast<std::size_t>(pair.i);
    const auto j = static_cast<std::size_t>(pair.j);
    if (d1.kind() == D1Kind::ExternalMatrix) {
        for (std::size_t c = 0; c < cs.size(); ++c) out[c] = d1.lookup(pool.methods.at(i), pool.methods.at(j), cs[c].id);
        return out;
    }
    detail::parallel_for(cs.size(), threads, [&](std::size_t c) {
        const LumaImage a = to_luma(load_image(cs[c].outputs.at(i)));
        const LumaImage b = to_luma(load_image(cs[c].outputs.at(j)));
        try {
            out[c] = d1.compare(a, b);
        } catch (const Error& e) {
            throw Error(e.code(), "candidate " + cs[c].id + ": " + e.what());
        }
    });
    return out;
}

PairInputs make_pair_inputs(const CandidatePool& pool, std::span<const FeatureVector> features,
                            std::vector<double> d1) {
    if (features.size() != pool.candidates.size() || d1.size() != pool.candidates.size()) {
        throw Error(Errc::ValidationError, "features/D1 do not cover the pool");
    }
    PairInputs in;
    in.ids = pool.ids();
    in.d1 = std::move(d1);
    for (const auto& f : features) in.features.push_back(&f);
    return in;
}

std::vector<Rejection> read_rejection_list(const std::filesystem::path& path) {
    std::vector<Rejection> out;
    for (const auto& raw : text::read_lines(path)) {
        const auto line = text::trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto fields = text::split_n(line, 2);
        Rejection r{std::string(text::trim(fields[0])), fields.size() > 1 ? std::string(text::trim(fields[1])) : ""};
        if (r.reason.empty()) r.reason = "rejected";
        out.push_back(std::move(r));
    }
    return out;
}

std::string selection_file_name(PairKey pair) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "pair_%03d_%03d.sel", pair.i, pair.j);
    return buf;
}

std::string serialize_selection(const SelectionResult& result, std::span<const std::string> methods) {
    const auto& f = text::format_double;
    std::ostringstream os;
    os << "selection," << result.pair.i << ',' << result.pair.j;
    if (!methods.empty()) {
        os << ',' << methods[static_cast<std::size_t>(result.pair.i)] << ','
           << methods[static_cast<std::size_t>(result.pair.j)];
    }
    os << '\n';
    os << "# pick,rank,candidate_id,d1_term,d2_term,total,d1_raw,d2_raw\n";
    for (std::size_t k = 0; k < result.picks.size(); ++k) {
        const auto& p = result.picks[k];
        os << "pick," << k << ',' << p.candidate_id << ',' << f(p.d1_term) << ',' << f(p.d2_term) << ','
           << f(p.total) << ',' << f(p.d1_raw) << ',' << f(p.d2_raw) << '\n';
    }
    for (const auto& r : result.rejected) {
        std::string reason = r.reason;
        std::replace(reason.begin(), reason.end(), '\n', ' ');
        os << "reject," << r.candidate_id << ',' << reason << '\n';
    }
    return os.str();
}

SelectionResult parse_selection(const std::string& data, const std::string& origin) {
    SelectionResult r;
    bool have_header = false;
    std::istringstream in(data);
    std::string raw;
    for (int ln = 1; std::getline(in, raw); ++ln) {
        const std::string where = origin + ":" + std::to_string(ln);
        const auto line = text::trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto fields = text::split(line);
        if (fields[0] == "selection") {
            if (fields.size() < 3) throw Error(Errc::ValidationError, where + ": bad selection header");
            r.pair = {static_cast<int>(text::parse_int(fields[1], where)),
                      static_cast<int>(text::parse_int(fields[2], where))};
            have_header = true;
        } else if (fields[0] == "pick") {
            if (fields.size() != 8) throw Error(Errc::ValidationError, where + ": pick needs 8 fields");
            if (text::parse_int(fields[1], where) != static_cast<std::int64_t>(r.picks.size())) {
                throw Error(Errc::ValidationError, where + ": picks out of order");
            }
            r.picks.push_back({std::string(fields[2]), text::parse_double(fields[3], where),
                               text::parse_double(fields[4], where), text::parse_double(fields[5], where),
                               text::parse_double(fields[6], where), text::parse_double(fields[7], where)});
        } else if (fields[0] == "reject") {
            const auto parts = text::split_n(line, 3);
            if (parts.size() < 2) throw Error(Errc::ValidationError, where + ": reject needs a candidate id");
            r.rejected.push_back({std::string(parts[1]), parts.size() > 2 ? std::string(parts[2]) : ""});
        } else {
            throw Error(Errc::ValidationError, where + ": unknown record '" + std::string(fields[0]) + "'");
        }
    }
    if (!have_header) throw Error(Errc::ValidationError, origin + ": missing selection header");
    if (r.pair.i < 0 || r.pair.j <= r.pair.i) throw Error(Errc::ValidationError, origin + ": invalid pair");
    return r;
}

SelectionResult read_selection_file(const std::filesystem::path& path) {
    return parse_selection(text::read_file(path), path.string());
}

void write_selection_file(const std::filesystem::path& path, const SelectionResult& result,
                          std::span<const std::string> methods) {
    text::write_file_atomic(path, serialize_selection(result, methods));
}

}  // namespace madeval
