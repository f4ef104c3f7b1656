#include <algorithm>
#include <cstdlib>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "madeval/error.hpp"
#include "madeval/service.hpp"
#include "madeval/text_io.hpp"

namespace fs = std::filesystem;

namespace madeval {

std::string_view phase_name(Phase p) noexcept {
    switch (p) {
        case Phase::Draft: return "draft";
        case Phase::Selecting: return "selecting";
        case Phase::Open: return "open";
        case Phase::Closed: return "closed";
    }
    return "draft";
}

Phase parse_phase(std::string_view s) {
    if (s == "draft") return Phase::Draft;
    if (s == "selecting") return Phase::Selecting;
    if (s == "open") return Phase::Open;
    if (s == "closed") return Phase::Closed;
    throw Error(Errc::ValidationError, "unknown phase '" + std::string(s) + "'");
}

StudyState StudyState::load(const StudyPaths& paths) {
    if (!fs::exists(paths.state())) {
        throw Error(Errc::PhaseError, "no study at " + paths.root.string() + " (run ingest first)");
    }
    StudyState s;
    for (const auto& raw : text::read_lines(paths.state())) {
        const auto line = text::trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw Error(Errc::ValidationError, "bad state line: " + std::string(line));
        const auto key = line.substr(0, eq);
        const auto value = line.substr(eq + 1);
        if (key == "study_id") s.study_id = std::string(value);
        else if (key == "phase") s.phase = parse_phase(value);
    }
    return s;
}

void StudyState::save(const StudyPaths& paths) const {
    fs::create_directories(paths.root);
    text::write_file_atomic(paths.state(), "study_id=" + study_id + "\nphase=" + std::string(phase_name(phase)) + "\n");
}

void require_phase(const StudyState& state, std::initializer_list<Phase> allowed, std::string_view operation) {
    if (std::find(allowed.begin(), allowed.end(), state.phase) != allowed.end()) return;
    std::string want;
    for (Phase p : allowed) want += (want.empty() ? "" : "|") + std::string(phase_name(p));
    throw Error(Errc::PhaseError, std::string(operation) + " needs phase " + want + ", study is " +
                                      std::string(phase_name(state.phase)));
}

CandidatePool cli_ingest(const StudyPaths& study, const fs::path& pool_dir, const fs::path& methods_manifest,
                         const StudyConfig& config) {
    StudyState state;
    if (fs::exists(study.state())) {
        state = StudyState::load(study);
        require_phase(state, {Phase::Draft, Phase::Selecting}, "ingest");
    }
    const auto methods = read_methods_manifest(methods_manifest);
    auto pool = ingest_pool(pool_dir, methods);
    fs::create_directories(study.root);
    write_pool_manifest(study.pool(), pool);
    text::write_file_atomic(study.config(), serialize_config(config));
    state.study_id = config.study_id;
    state.phase = Phase::Draft;
    state.save(study);
    return pool;
}

SelectSummary cli_select(const StudyPaths& study, const StudyConfig& config,
                         const std::optional<fs::path>& rejections) {
    StudyState state = StudyState::load(study);
    require_phase(state, {Phase::Draft, Phase::Selecting}, "select");
    const CandidatePool pool = read_pool_manifest(study.pool());
    const SelectionConfig sel = config.selection_config(pool);
    std::vector<Rejection> rejected;
    if (rejections) rejected = read_rejection_list(*rejections);

    state.phase = Phase::Selecting;
    state.save(study);

    fs::create_directories(study.selections());
    for (const auto& e : fs::directory_iterator(study.selections())) {
        if (e.path().extension() == ".sel") fs::remove(e.path());
    }

    const auto features = compute_features(pool, sel.d2, sel.threads);
    SelectSummary summary;
    std::ostringstream os;
    os << "# pair,i,j,method_i,method_j,file,picks,rejections\n";
    const auto pairs = enumerate_method_pairs(static_cast<int>(pool.methods.size()));
    for (const auto& pair : pairs) {
        auto inputs = make_pair_inputs(pool, features, compute_d1(pool, pair, sel.d1, sel.threads));
        const auto result = apply_rejections(inputs, pair, sel, rejected);
        const auto file = study.selections() / selection_file_name(pair);
        write_selection_file(file, result, pool.methods);
        summary.files.push_back(file);
        summary.total_picks += result.picks.size();
        summary.total_rejections += result.rejected.size();
        os << "pair," << pair.i << ',' << pair.j << ',' << pool.methods[static_cast<std::size_t>(pair.i)] << ','
           << pool.methods[static_cast<std::size_t>(pair.j)] << ',' << file.filename().string() << ','
           << result.picks.size() << ',' << result.rejected.size() << '\n';
    }
    os << "pairs," << pairs.size() << '\n'
       << "picks," << summary.total_picks << '\n'
       << "enhanced_images," << 2 * summary.total_picks << '\n';
    text::write_file_atomic(study.summary(), os.str());
    return summary;
}

namespace {

std::vector<SelectionResult> read_all_selections(const StudyPaths& study, int method_count) {
    std::vector<SelectionResult> out;
    for (const auto& pair : enumerate_method_pairs(method_count)) {
        const auto file = study.selections() / selection_file_name(pair);
        if (!fs::exists(file)) throw Error(Errc::IncompleteSelections, "missing " + file.string());
        out.push_back(read_selection_file(file));
    }
    return out;
}

}  // namespace

Schedule cli_schedule(const StudyPaths& study, const StudyConfig& config) {
    StudyState state = StudyState::load(study);
    require_phase(state, {Phase::Selecting}, "schedule");
    const CandidatePool pool = read_pool_manifest(study.pool());
    const int n = static_cast<int>(pool.methods.size());
    const auto selections = read_all_selections(study, n);
    Schedule schedule = build_schedule(selections, n, config.seed, state.study_id);
    write_schedule_file(study.schedule(), schedule);
    state.phase = Phase::Open;
    state.save(study);
    return schedule;
}

void cli_close(const StudyPaths& study) {
    StudyState state = StudyState::load(study);
    require_phase(state, {Phase::Open}, "close");
    state.phase = Phase::Closed;
    state.save(study);
}

std::string format_ranking_report(const std::string& study_id, std::span<const std::string> methods,
                                  const CountMatrix& counts, const RankingScores& scores, const FitOptions& options) {
    const auto& f = text::format_double;
    const auto ranks = ordinal_ranks(scores.mu);
    std::ostringstream os;
    os << "# Thurstone Case V maximum-likelihood ranking\n"
       << "study," << study_id << '\n'
       << "votes," << counts.total() << '\n'
       << "converged," << (scores.converged ? "true" : "false") << '\n'
       << "iterations," << scores.iterations << '\n'
       << "log_likelihood," << f(scores.final_log_likelihood) << '\n'
       << "gradient_norm," << f(scores.gradient_norm) << '\n'
       << "smoothing_epsilon," << f(options.smoothing_epsilon) << '\n'
       << '\n';
    std::vector<std::size_t> order(scores.mu.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ranks[a] < ranks[b]; });
    os << "method,mu,rank\n";
    for (std::size_t m : order) os << methods[m] << ',' << f(scores.mu[m]) << ',' << ranks[m] << '\n';
    os << '\n' << "method,wins,comparisons\n";
    for (std::size_t m : order) {
        std::int64_t wins = 0, total = 0;
        for (int o = 0; o < counts.size(); ++o) {
            wins += counts(static_cast<int>(m), o);
            total += counts(static_cast<int>(m), o) + counts(o, static_cast<int>(m));
        }
        os << methods[m] << ',' << wins << ',' << total << '\n';
    }
    return os.str();
}

std::string format_stability_curve(std::span<const StabilityPoint> curve) {
    std::ostringstream os;
    os << "K,srcc\n";
    for (const auto& p : curve) os << p.k << ',' << text::format_double(p.srcc) << '\n';
    return os.str();
}

Artifacts cli_tally_rank_report(const StudyPaths& study, const StudyConfig& config, bool preliminary, bool rank,
                                bool stability) {
    const StudyState state = StudyState::load(study);
    if (preliminary) {
        require_phase(state, {Phase::Open, Phase::Closed}, "tally --preliminary");
    } else {
        require_phase(state, {Phase::Closed}, "tally (use --preliminary while open)");
    }
    const CandidatePool pool = read_pool_manifest(study.pool());
    const Schedule schedule = read_schedule_file(study.schedule());
    const auto votes = fs::exists(study.votes()) ? read_vote_log(study.votes(), preliminary) : std::vector<Vote>{};

    Artifacts out;
    out.counts = tally(votes, schedule);
    text::write_file_atomic(study.counts(), serialize_count_matrix(out.counts));
    if (!rank) return out;

    out.ranking = fit(out.counts, config.fit);
    text::write_file_atomic(study.ranking(),
                            format_ranking_report(state.study_id, pool.methods, out.counts, *out.ranking, config.fit));
    if (!stability) return out;

    out.stability = stability_curve(votes, schedule, schedule.k(), config.fit);
    text::write_file_atomic(study.stability(), format_stability_curve(out.stability));
    return out;
}

std::size_t cli_simulate(const StudyPaths& study, std::span<const double> mu_star, int subjects, std::uint64_t seed) {
    const StudyState state = StudyState::load(study);
    require_phase(state, {Phase::Open}, "simulate");
    const Schedule schedule = read_schedule_file(study.schedule());
    const auto votes = simulate_votes(mu_star, schedule, subjects, seed);
    VoteLog log(study.votes());
    log.record_all(schedule, votes);
    return votes.size();
}

void create_synthetic_study(const StudyPaths& study, int methods, int k, const StudyConfig& config) {
    if (fs::exists(study.state())) throw Error(Errc::PhaseError, "study already exists at " + study.root.string());
    if (methods < 2 || k < 1) throw Error(Errc::ValidationError, "synthetic study needs >= 2 methods and K >= 1");
    CandidatePool pool;
    for (int m = 0; m < methods; ++m) pool.methods.push_back("method" + std::to_string(m + 1));
    const auto pairs = enumerate_method_pairs(methods);
    const std::size_t per_pair = static_cast<std::size_t>(k);
    std::vector<SelectionResult> selections;
    for (std::size_t c = 0; c < per_pair; ++c) {
        std::ostringstream id;
        id << "syn-" << std::setw(5) << std::setfill('0') << c;
        Candidate cand{id.str(), fs::path("synthetic") / (id.str() + ".png"), {}};
        for (const auto& m : pool.methods) cand.outputs.push_back(fs::path("synthetic") / m / (id.str() + ".png"));
        pool.candidates.push_back(std::move(cand));
    }
    fs::create_directories(study.selections());
    write_pool_manifest(study.pool(), pool);
    text::write_file_atomic(study.config(), serialize_config(config));
    for (const auto& p : pairs) {
        SelectionResult r;
        r.pair = p;
        for (std::size_t c = 0; c < per_pair; ++c) {
            r.picks.push_back({pool.candidates[c].id, 0.0, 0.0, 0.0, 0.0, 0.0});
        }
        write_selection_file(study.selections() / selection_file_name(p), r, pool.methods);
        selections.push_back(std::move(r));
    }
    Schedule schedule = build_schedule(selections, methods, config.seed, config.study_id);
    write_schedule_file(study.schedule(), schedule);
    StudyState state{config.study_id, Phase::Open};
    state.save(study);
}

ServeOptions resolve_serve_options(std::optional<std::string> address, std::optional<int> port, fs::path ui_dir) {
    ServeOptions o;
    if (const char* env = std::getenv("MADEVAL_ADDRESS"); env && *env) o.address = env;
    if (const char* env = std::getenv("MADEVAL_PORT"); env && *env) {
        o.port = static_cast<int>(text::parse_int(env, "MADEVAL_PORT"));
    }
    if (address) o.address = *address;
    if (port) o.port = *port;
    if (o.port < 0 || o.port > 65535) throw Error(Errc::ConfigError, "port out of range");
    o.ui_dir = std::move(ui_dir);
    return o;
}

}  // namespace madeval
