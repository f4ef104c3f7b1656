#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "madeval/config.hpp"
#include "madeval/ranking.hpp"
#include "madeval/study.hpp"

namespace httplib {
class Server;
}

namespace madeval {

enum class Phase { Draft, Selecting, Open, Closed };

std::string_view phase_name(Phase p) noexcept;
Phase parse_phase(std::string_view s);

/// Files of one study, all under a single directory.
struct StudyPaths {
    std::filesystem::path root;

    std::filesystem::path state() const { return root / "study.state"; }
    std::filesystem::path config() const { return root / "study.conf"; }
    std::filesystem::path pool() const { return root / "pool.manifest"; }
    std::filesystem::path selections() const { return root / "selections"; }
    std::filesystem::path summary() const { return selections() / "summary.txt"; }
    std::filesystem::path schedule() const { return root / "schedule.txt"; }
    std::filesystem::path votes() const { return root / "votes.log"; }
    std::filesystem::path subjects() const { return root / "subjects.txt"; }
    std::filesystem::path counts() const { return root / "counts.txt"; }
    std::filesystem::path ranking() const { return root / "ranking.txt"; }
    std::filesystem::path stability() const { return root / "stability.txt"; }
};

struct StudyState {
    std::string study_id = "study";
    Phase phase = Phase::Draft;

    static StudyState load(const StudyPaths& paths);
    void save(const StudyPaths& paths) const;
};

/// Throws PhaseError unless the study is in one of `allowed`.
void require_phase(const StudyState& state, std::initializer_list<Phase> allowed, std::string_view operation);

// ---- offline commands ----

/// Validates and writes the pool manifest; the study starts in draft.
CandidatePool cli_ingest(const StudyPaths& study, const std::filesystem::path& pool_dir,
                         const std::filesystem::path& methods_manifest, const StudyConfig& config);

struct SelectSummary {
    std::vector<std::filesystem::path> files;
    std::size_t total_picks = 0;
    std::size_t total_rejections = 0;
};

/// One SelectionResult file per method pair plus selections/summary.txt.
SelectSummary cli_select(const StudyPaths& study, const StudyConfig& config,
                         const std::optional<std::filesystem::path>& rejections = std::nullopt);

/// Builds the trial schedule from the selection files and opens the study.
Schedule cli_schedule(const StudyPaths& study, const StudyConfig& config);

void cli_close(const StudyPaths& study);

struct Artifacts {
    CountMatrix counts;
    std::optional<RankingScores> ranking;
    std::vector<StabilityPoint> stability;
};

/// Writes counts.txt, then (with `rank`) ranking.txt, then (with
/// `stability`) stability.txt. Requires phase closed unless `preliminary`.
Artifacts cli_tally_rank_report(const StudyPaths& study, const StudyConfig& config, bool preliminary, bool rank,
                                bool stability);

std::string format_ranking_report(const std::string& study_id, std::span<const std::string> methods,
                                  const CountMatrix& counts, const RankingScores& scores, const FitOptions& options);
std::string format_stability_curve(std::span<const StabilityPoint> curve);

/// Appends simulated Thurstone votes for `subjects` subjects to the study's log.
std::size_t cli_simulate(const StudyPaths& study, std::span<const double> mu_star, int subjects, std::uint64_t seed);

/// Creates a study with synthetic selections (no images) for `methods` methods
/// and `k` picks per pair, already open. For simulation only.
void create_synthetic_study(const StudyPaths& study, int methods, int k, const StudyConfig& config);

// ---- HTTP service ----

struct ServeOptions {
    std::string address = "127.0.0.1";
    int port = 8080;  // 0: any free port
    std::filesystem::path ui_dir;  // static rater bundle; a placeholder page when empty
};

/// Resolves the listening address: explicit flag, then MADEVAL_ADDRESS /
/// MADEVAL_PORT, then the defaults.
ServeOptions resolve_serve_options(std::optional<std::string> address, std::optional<int> port,
                                   std::filesystem::path ui_dir);

/// Rater-facing HTTP service for an open study. Method names, candidate ids
/// and file paths never appear in subject-facing payloads: trials and images
/// are addressed by opaque ids from the schedule.
class StudyService {
public:
    StudyService(StudyPaths study, ServeOptions options);
    ~StudyService();

    StudyService(const StudyService&) = delete;
    StudyService& operator=(const StudyService&) = delete;

    /// Binds the socket; returns the bound port.
    int bind();
    /// Blocks serving requests until stop().
    void run();
    void stop();

    const Schedule& schedule() const noexcept { return schedule_; }
    const VoteLog& votes() const noexcept { return *votes_; }

private:
    void install_routes();

    StudyPaths study_;
    ServeOptions options_;
    StudyState state_;
    CandidatePool pool_;
    Schedule schedule_;
    SubjectRegistry subjects_;
    std::unique_ptr<VoteLog> votes_;
    std::unique_ptr<httplib::Server> server_;
    int port_ = -1;
};

}  // namespace madeval
