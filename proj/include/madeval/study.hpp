#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "madeval/selection.hpp"

namespace madeval {

enum class Position { Left, Right };

std::string_view position_name(Position p) noexcept;
Position parse_position(std::string_view s);

/// One forced-choice presentation of f_i(x) and f_j(x).
struct Trial {
    std::string trial_id;  // opaque
    PairKey pair;
    std::string candidate_id;
    int pick_rank = 0;  // greedy order of the candidate within its pair
    int left_method = 0;
    int right_method = 1;
    std::string left_image;  // opaque image ids served to raters
    std::string right_image;

    int method_at(Position p) const noexcept { return p == Position::Left ? left_method : right_method; }

    friend bool operator==(const Trial&, const Trial&) = default;
};

class Schedule {
public:
    Schedule() = default;
    Schedule(std::string study_id, std::uint64_t seed, int method_count, int k, std::vector<Trial> trials);

    const std::string& study_id() const noexcept { return study_id_; }
    std::uint64_t seed() const noexcept { return seed_; }
    int method_count() const noexcept { return method_count_; }
    int k() const noexcept { return k_; }
    const std::vector<Trial>& trials() const noexcept { return trials_; }

    const Trial* find(std::string_view trial_id) const;

    struct ImageRef {
        const Trial* trial;
        int method;
    };
    std::optional<ImageRef> find_image(std::string_view image_id) const;

    /// Presentation order for one subject: a permutation of trial indices,
    /// fixed by (seed, subject_id).
    std::vector<std::size_t> order_for(std::string_view subject_id) const;

    friend bool operator==(const Schedule& a, const Schedule& b) {
        return a.study_id_ == b.study_id_ && a.seed_ == b.seed_ && a.method_count_ == b.method_count_ &&
               a.k_ == b.k_ && a.trials_ == b.trials_;
    }

private:
    void index();

    std::string study_id_;
    std::uint64_t seed_ = 0;
    int method_count_ = 0;
    int k_ = 0;
    std::vector<Trial> trials_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::unordered_map<std::string, std::pair<std::size_t, int>> by_image_;
};

/// One trial per (pair, pick). Left/right is counterbalanced within each pair:
/// sides alternate along the pick order from a seeded starting side.
Schedule build_schedule(std::span<const SelectionResult> selections, int method_count, std::uint64_t seed,
                        std::string study_id = "study");

std::string serialize_schedule(const Schedule& s);
Schedule parse_schedule(const std::string& text, const std::string& origin = "<schedule>");
Schedule read_schedule_file(const std::filesystem::path& path);
void write_schedule_file(const std::filesystem::path& path, const Schedule& s);

// ---- subjects ----

bool valid_subject_id(std::string_view id) noexcept;

/// With no listed subjects, enrollment is open: any well-formed id is accepted.
class SubjectRegistry {
public:
    SubjectRegistry() = default;
    explicit SubjectRegistry(std::set<std::string> subjects) : subjects_(std::move(subjects)) {}

    static SubjectRegistry load(const std::filesystem::path& path);  // missing file: open enrollment

    bool open_enrollment() const noexcept { return subjects_.empty(); }
    bool is_registered(std::string_view id) const;
    const std::set<std::string>& listed() const noexcept { return subjects_; }

private:
    std::set<std::string> subjects_;
};

// ---- votes ----

struct Vote {
    std::string timestamp;  // ISO-8601 UTC
    std::string subject_id;
    std::string trial_id;
    int chosen_method = 0;
    Position position = Position::Left;

    friend bool operator==(const Vote&, const Vote&) = default;
};

std::string utc_timestamp_now();
std::string format_vote_line(const Vote& v);  // no terminator
Vote parse_vote_line(std::string_view line, std::size_t line_number);

/// Strict reader: any unparseable line (including an unterminated final
/// line) throws CorruptLog naming the line.
/// With `allow_torn_tail`, an unterminated final fragment (an append still in
/// flight) is ignored instead.
std::vector<Vote> read_vote_log(const std::filesystem::path& path, bool allow_torn_tail = false);

struct Progress {
    std::size_t done = 0;
    std::size_t total = 0;
};

/// Append-only, line-per-vote log. All appends go through one mutex and are
/// fsync'ed before `record` returns.
class VoteLog {
public:
    /// Opens (creating if needed) and loads the log. A torn final line left by
    /// a crash mid-append was never acknowledged and is truncated away.
    explicit VoteLog(std::filesystem::path path);
    ~VoteLog();

    VoteLog(const VoteLog&) = delete;
    VoteLog& operator=(const VoteLog&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }

    /// Validates against the schedule and durably appends. Throws UnknownTrial,
    /// InvalidChoice, or DuplicateVote; the log is untouched on error.
    void record(const Schedule& schedule, const Vote& vote);

    /// All-or-nothing batch append with a single sync.
    void record_all(const Schedule& schedule, std::span<const Vote> votes);

    std::vector<Vote> snapshot() const;
    std::size_t size() const;
    bool has_vote(std::string_view subject_id, std::string_view trial_id) const;
    std::map<std::string, std::size_t> votes_per_subject() const;

    /// First trial in the subject's order without a vote, or nullopt when done.
    std::optional<Trial> next_trial(const Schedule& schedule, const SubjectRegistry& subjects,
                                    std::string_view subject_id, Progress* progress = nullptr) const;

private:
    std::filesystem::path path_;
    int fd_ = -1;
    mutable std::mutex mutex_;
    std::vector<Vote> votes_;
    std::set<std::pair<std::string, std::string>> cast_;
};

/// N x N tally; counts(i, j) is the number of votes for method i in trials
/// pairing i with j.
class CountMatrix {
public:
    explicit CountMatrix(int n = 0) : n_(n), counts_(static_cast<std::size_t>(n) * n, 0) {}

    int size() const noexcept { return n_; }
    std::int64_t operator()(int i, int j) const { return counts_[static_cast<std::size_t>(i) * n_ + j]; }
    std::int64_t& operator()(int i, int j) { return counts_[static_cast<std::size_t>(i) * n_ + j]; }
    std::int64_t total() const noexcept;

    friend bool operator==(const CountMatrix&, const CountMatrix&) = default;

private:
    int n_;
    std::vector<std::int64_t> counts_;
};

CountMatrix tally(std::span<const Vote> votes, const Schedule& schedule);

/// Tallies only trials whose pick rank is below `max_rank`.
CountMatrix tally_top_k(std::span<const Vote> votes, const Schedule& schedule, int max_rank);

std::string serialize_count_matrix(const CountMatrix& c);
CountMatrix parse_count_matrix(const std::string& text, const std::string& origin = "<counts>");

}  // namespace madeval
