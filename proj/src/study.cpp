#include "madeval/study.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <limits>
#include <sstream>

#include "madeval/error.hpp"
#include "madeval/rng.hpp"
#include "madeval/text_io.hpp"

namespace fs = std::filesystem;

namespace madeval {

std::string_view position_name(Position p) noexcept { return p == Position::Left ? "left" : "right"; }

Position parse_position(std::string_view s) {
    if (s == "left") return Position::Left;
    if (s == "right") return Position::Right;
    throw Error(Errc::ValidationError, "position must be left or right, got '" + std::string(s) + "'");
}

// ---- schedule ----

Schedule::Schedule(std::string study_id, std::uint64_t seed, int method_count, int k, std::vector<Trial> trials)
    : study_id_(std::move(study_id)), seed_(seed), method_count_(method_count), k_(k), trials_(std::move(trials)) {
    index();
}

void Schedule::index() {
    by_id_.clear();
    by_image_.clear();
    for (std::size_t t = 0; t < trials_.size(); ++t) {
        const Trial& tr = trials_[t];
        if (tr.pair.i < 0 || tr.pair.j <= tr.pair.i || tr.pair.j >= method_count_) {
            throw Error(Errc::ValidationError, "trial " + tr.trial_id + " has an invalid pair");
        }
        const bool sides_ok = (tr.left_method == tr.pair.i && tr.right_method == tr.pair.j) ||
                              (tr.left_method == tr.pair.j && tr.right_method == tr.pair.i);
        if (!sides_ok) throw Error(Errc::ValidationError, "trial " + tr.trial_id + " sides do not match its pair");
        if (!by_id_.emplace(tr.trial_id, t).second) {
            throw Error(Errc::ValidationError, "duplicate trial id " + tr.trial_id);
        }
        if (!by_image_.emplace(tr.left_image, std::pair{t, tr.left_method}).second ||
            !by_image_.emplace(tr.right_image, std::pair{t, tr.right_method}).second) {
            throw Error(Errc::ValidationError, "duplicate image id in trial " + tr.trial_id);
        }
    }
}

const Trial* Schedule::find(std::string_view trial_id) const {
    auto it = by_id_.find(std::string(trial_id));
    return it == by_id_.end() ? nullptr : &trials_[it->second];
}

std::optional<Schedule::ImageRef> Schedule::find_image(std::string_view image_id) const {
    auto it = by_image_.find(std::string(image_id));
    if (it == by_image_.end()) return std::nullopt;
    return ImageRef{&trials_[it->second.first], it->second.second};
}

std::vector<std::size_t> Schedule::order_for(std::string_view subject_id) const {
    std::vector<std::size_t> order(trials_.size());
    for (std::size_t t = 0; t < order.size(); ++t) order[t] = t;
    Rng rng(derive_seed(seed_, "order:" + std::string(subject_id)));
    rng.shuffle(std::span<std::size_t>(order));
    return order;
}

namespace {

std::string hex_id(std::uint64_t v, char prefix) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(13, '0');
    s[0] = prefix;
    for (int i = 12; i >= 1; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace

Schedule build_schedule(std::span<const SelectionResult> selections, int method_count, std::uint64_t seed,
                        std::string study_id) {
    if (study_id.empty() || study_id.find(',') != std::string::npos) {
        throw Error(Errc::ValidationError, "study id must be non-empty and comma-free");
    }
    const auto pairs = enumerate_method_pairs(method_count);
    std::map<PairKey, const SelectionResult*> by_pair;
    for (const auto& s : selections) {
        if (!by_pair.emplace(s.pair, &s).second) {
            throw Error(Errc::IncompleteSelections, "pair (" + std::to_string(s.pair.i) + "," +
                                                        std::to_string(s.pair.j) + ") given twice");
        }
    }
    int k = -1;
    for (const auto& p : pairs) {
        auto it = by_pair.find(p);
        if (it == by_pair.end()) {
            throw Error(Errc::IncompleteSelections,
                        "no selection for pair (" + std::to_string(p.i) + "," + std::to_string(p.j) + ")");
        }
        const int picks = static_cast<int>(it->second->picks.size());
        if (k < 0) k = picks;
        if (picks != k || picks == 0) {
            throw Error(Errc::IncompleteSelections, "pair (" + std::to_string(p.i) + "," + std::to_string(p.j) +
                                                        ") has " + std::to_string(picks) + " picks, expected " +
                                                        std::to_string(k));
        }
    }
    if (by_pair.size() != pairs.size()) throw Error(Errc::IncompleteSelections, "selection for an unknown pair");

    Rng ids(derive_seed(seed, "ids"));
    std::set<std::string> used;
    auto fresh = [&](char prefix) {
        while (true) {
            auto id = hex_id(ids.next(), prefix);
            if (used.insert(id).second) return id;
        }
    };

    std::vector<Trial> trials;
    trials.reserve(pairs.size() * static_cast<std::size_t>(k));
    for (const auto& p : pairs) {
        Rng sides(derive_seed(seed, "sides:" + std::to_string(p.i) + "," + std::to_string(p.j)));
        const int start = sides.coin() ? 1 : 0;
        const auto& picks = by_pair.at(p)->picks;
        for (int r = 0; r < k; ++r) {
            Trial t;
            t.trial_id = fresh('t');
            t.pair = p;
            t.candidate_id = picks[static_cast<std::size_t>(r)].candidate_id;
            t.pick_rank = r;
            const bool i_left = ((r + start) % 2) == 0;
            t.left_method = i_left ? p.i : p.j;
            t.right_method = i_left ? p.j : p.i;
            t.left_image = fresh('i');
            t.right_image = fresh('i');
            trials.push_back(std::move(t));
        }
    }
    return Schedule(std::move(study_id), seed, method_count, k, std::move(trials));
}

std::string serialize_schedule(const Schedule& s) {
    std::ostringstream os;
    os << "schedule," << s.study_id() << ',' << s.seed() << ',' << s.method_count() << ',' << s.k() << '\n';
    os << "# trial,trial_id,i,j,candidate_id,pick_rank,left_method,right_method,left_image,right_image\n";
    for (const auto& t : s.trials()) {
        os << "trial," << t.trial_id << ',' << t.pair.i << ',' << t.pair.j << ',' << t.candidate_id << ','
           << t.pick_rank << ',' << t.left_method << ',' << t.right_method << ',' << t.left_image << ','
           << t.right_image << '\n';
    }
    return os.str();
}

Schedule parse_schedule(const std::string& data, const std::string& origin) {
    std::istringstream in(data);
    std::string raw;
    std::string study_id;
    std::uint64_t seed = 0;
    int n = 0, k = 0;
    bool header = false;
    std::vector<Trial> trials;
    for (int ln = 1; std::getline(in, raw); ++ln) {
        const std::string where = origin + ":" + std::to_string(ln);
        const auto line = text::trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto f = text::split(line);
        if (f[0] == "schedule") {
            if (f.size() != 5) throw Error(Errc::ValidationError, where + ": bad schedule header");
            study_id = std::string(f[1]);
            seed = std::stoull(std::string(f[2]));
            n = static_cast<int>(text::parse_int(f[3], where));
            k = static_cast<int>(text::parse_int(f[4], where));
            header = true;
        } else if (f[0] == "trial") {
            if (f.size() != 10) throw Error(Errc::ValidationError, where + ": trial needs 10 fields");
            Trial t;
            t.trial_id = std::string(f[1]);
            t.pair = {static_cast<int>(text::parse_int(f[2], where)), static_cast<int>(text::parse_int(f[3], where))};
            t.candidate_id = std::string(f[4]);
            t.pick_rank = static_cast<int>(text::parse_int(f[5], where));
            t.left_method = static_cast<int>(text::parse_int(f[6], where));
            t.right_method = static_cast<int>(text::parse_int(f[7], where));
            t.left_image = std::string(f[8]);
            t.right_image = std::string(f[9]);
            trials.push_back(std::move(t));
        } else {
            throw Error(Errc::ValidationError, where + ": unknown record");
        }
    }
    if (!header) throw Error(Errc::ValidationError, origin + ": missing schedule header");
    return Schedule(std::move(study_id), seed, n, k, std::move(trials));
}

Schedule read_schedule_file(const fs::path& path) { return parse_schedule(text::read_file(path), path.string()); }

void write_schedule_file(const fs::path& path, const Schedule& s) { text::write_file_atomic(path, serialize_schedule(s)); }

// ---- subjects ----

bool valid_subject_id(std::string_view id) noexcept {
    if (id.empty() || id.size() > 64) return false;
    return std::all_of(id.begin(), id.end(), [](unsigned char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-' ||
               c == '.';
    });
}

SubjectRegistry SubjectRegistry::load(const fs::path& path) {
    if (!fs::exists(path)) return {};
    std::set<std::string> ids;
    for (const auto& raw : text::read_lines(path)) {
        const auto line = text::trim(raw);
        if (line.empty() || line.front() == '#') continue;
        if (!valid_subject_id(line)) throw Error(Errc::ValidationError, "invalid subject id '" + std::string(line) + "'");
        ids.emplace(line);
    }
    return SubjectRegistry(std::move(ids));
}

bool SubjectRegistry::is_registered(std::string_view id) const {
    if (!valid_subject_id(id)) return false;
    return open_enrollment() || subjects_.contains(std::string(id));
}

// ---- votes ----

std::string utc_timestamp_now() {
    using namespace std::chrono;
    const auto now = system_clock::now();
    const auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
    const std::time_t t = system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[80];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

std::string format_vote_line(const Vote& v) {
    return v.timestamp + ',' + v.subject_id + ',' + v.trial_id + ',' + std::to_string(v.chosen_method) + ',' +
           std::string(position_name(v.position));
}

Vote parse_vote_line(std::string_view line, std::size_t line_number) {
    const auto fields = text::split(line);
    auto corrupt = [&](const std::string& why) {
        return Error(Errc::CorruptLog, "line " + std::to_string(line_number) + ": " + why);
    };
    if (fields.size() != 5) throw corrupt("expected 5 fields, got " + std::to_string(fields.size()));
    Vote v;
    v.timestamp = std::string(fields[0]);
    v.subject_id = std::string(fields[1]);
    v.trial_id = std::string(fields[2]);
    if (v.timestamp.empty() || !valid_subject_id(v.subject_id) || v.trial_id.empty()) throw corrupt("empty field");
    try {
        v.chosen_method = static_cast<int>(text::parse_int(fields[3], "chosen_method"));
        v.position = parse_position(fields[4]);
    } catch (const Error& e) {
        throw corrupt(e.what());
    }
    return v;
}

std::vector<Vote> read_vote_log(const fs::path& path, bool allow_torn_tail) {
    std::string data = text::read_file(path);
    if (allow_torn_tail) data.resize(data.rfind('\n') == std::string::npos ? 0 : data.rfind('\n') + 1);
    std::vector<Vote> votes;
    std::size_t start = 0;
    std::size_t line_number = 0;
    while (start < data.size()) {
        ++line_number;
        const auto end = data.find('\n', start);
        if (end == std::string::npos) {
            throw Error(Errc::CorruptLog, "line " + std::to_string(line_number) + ": unterminated record");
        }
        votes.push_back(parse_vote_line(std::string_view(data).substr(start, end - start), line_number));
        start = end + 1;
    }
    return votes;
}

VoteLog::VoteLog(fs::path path) : path_(std::move(path)) {
    fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error(Errc::UnreadableFile, "cannot open vote log " + path_.string() + ": " + std::strerror(errno));
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
        ::close(fd_);
        throw Error(Errc::PhaseError, "vote log " + path_.string() + " is held by another writer");
    }
    std::string data = text::read_file(path_);
    const auto last_nl = data.rfind('\n');
    const std::size_t keep = last_nl == std::string::npos ? 0 : last_nl + 1;
    if (keep != data.size()) {
        if (::ftruncate(fd_, static_cast<off_t>(keep)) != 0) {
            ::close(fd_);
            throw Error(Errc::UnreadableFile, "cannot repair torn tail of " + path_.string());
        }
        ::fsync(fd_);
        data.resize(keep);
    }
    try {
        votes_ = [&] {
            std::vector<Vote> out;
            std::size_t start = 0, ln = 0;
            while (start < data.size()) {
                const auto end = data.find('\n', start);
                out.push_back(parse_vote_line(std::string_view(data).substr(start, end - start), ++ln));
                start = end + 1;
            }
            return out;
        }();
    } catch (...) {
        ::close(fd_);
        throw;
    }
    for (const auto& v : votes_) cast_.emplace(v.subject_id, v.trial_id);
}

VoteLog::~VoteLog() {
    if (fd_ >= 0) ::close(fd_);
}

namespace {

void validate_vote(const Schedule& schedule, const Vote& vote) {
    const Trial* trial = schedule.find(vote.trial_id);
    if (trial == nullptr) throw Error(Errc::UnknownTrial, vote.trial_id);
    if (vote.chosen_method != trial->pair.i && vote.chosen_method != trial->pair.j) {
        throw Error(Errc::InvalidChoice, "method " + std::to_string(vote.chosen_method) + " is not in trial " +
                                             vote.trial_id);
    }
    if (trial->method_at(vote.position) != vote.chosen_method) {
        throw Error(Errc::InvalidChoice, "position and chosen method disagree for trial " + vote.trial_id);
    }
    if (!valid_subject_id(vote.subject_id)) throw Error(Errc::UnknownSubject, vote.subject_id);
    if (vote.timestamp.empty() || vote.timestamp.find_first_of(",\n") != std::string::npos) {
        throw Error(Errc::ValidationError, "bad timestamp");
    }
}

void append_durably(int fd, const std::string& data) {
    const off_t before = ::lseek(fd, 0, SEEK_END);
    std::size_t written = 0;
    while (written < data.size()) {
        const auto n = ::write(fd, data.data() + written, data.size() - written);
        if (n < 0) {
            if (errno == EINTR) continue;
            const int err = errno;
            if (before >= 0) {
                const int rc = ::ftruncate(fd, before);
                (void)rc;  // a torn tail left behind is repaired at the next open
            }
            throw Error(Errc::UnreadableFile, "vote log append failed: " + std::string(std::strerror(err)));
        }
        written += static_cast<std::size_t>(n);
    }
    if (::fdatasync(fd) != 0) throw Error(Errc::UnreadableFile, "vote log sync failed");
}

}  // namespace

void VoteLog::record(const Schedule& schedule, const Vote& vote) {
    validate_vote(schedule, vote);
    std::lock_guard lock(mutex_);
    if (cast_.contains({vote.subject_id, vote.trial_id})) {
        throw Error(Errc::DuplicateVote, vote.subject_id + " already voted on " + vote.trial_id);
    }
    append_durably(fd_, format_vote_line(vote) + '\n');
    votes_.push_back(vote);
    cast_.emplace(vote.subject_id, vote.trial_id);
}

void VoteLog::record_all(const Schedule& schedule, std::span<const Vote> votes) {
    for (const auto& v : votes) validate_vote(schedule, v);
    std::lock_guard lock(mutex_);
    std::set<std::pair<std::string, std::string>> batch;
    std::string data;
    for (const auto& v : votes) {
        std::pair key{v.subject_id, v.trial_id};
        if (cast_.contains(key) || !batch.insert(key).second) {
            throw Error(Errc::DuplicateVote, v.subject_id + " already voted on " + v.trial_id);
        }
        data += format_vote_line(v);
        data += '\n';
    }
    if (data.empty()) return;
    append_durably(fd_, data);
    for (const auto& v : votes) {
        votes_.push_back(v);
        cast_.emplace(v.subject_id, v.trial_id);
    }
}

std::vector<Vote> VoteLog::snapshot() const {
    std::lock_guard lock(mutex_);
    return votes_;
}

std::size_t VoteLog::size() const {
    std::lock_guard lock(mutex_);
    return votes_.size();
}

bool VoteLog::has_vote(std::string_view subject_id, std::string_view trial_id) const {
    std::lock_guard lock(mutex_);
    return cast_.contains({std::string(subject_id), std::string(trial_id)});
}

std::map<std::string, std::size_t> VoteLog::votes_per_subject() const {
    std::lock_guard lock(mutex_);
    std::map<std::string, std::size_t> out;
    for (const auto& v : votes_) out[v.subject_id]++;
    return out;
}

std::optional<Trial> VoteLog::next_trial(const Schedule& schedule, const SubjectRegistry& subjects,
                                         std::string_view subject_id, Progress* progress) const {
    if (!subjects.is_registered(subject_id)) throw Error(Errc::UnknownSubject, std::string(subject_id));
    const auto order = schedule.order_for(subject_id);
    std::lock_guard lock(mutex_);
    const std::string subject(subject_id);
    std::optional<Trial> next;
    std::size_t done = 0;
    for (std::size_t idx : order) {
        const Trial& t = schedule.trials()[idx];
        if (cast_.contains({subject, t.trial_id})) {
            ++done;
        } else if (!next) {
            next = t;
        }
    }
    if (progress) *progress = {done, order.size()};
    return next;
}

// ---- tally ----

std::int64_t CountMatrix::total() const noexcept {
    std::int64_t sum = 0;
    for (auto c : counts_) sum += c;
    return sum;
}

CountMatrix tally_top_k(std::span<const Vote> votes, const Schedule& schedule, int max_rank) {
    CountMatrix c(schedule.method_count());
    for (const auto& v : votes) {
        const Trial* t = schedule.find(v.trial_id);
        if (t == nullptr) throw Error(Errc::UnknownTrial, v.trial_id);
        if (v.chosen_method != t->pair.i && v.chosen_method != t->pair.j) {
            throw Error(Errc::InvalidChoice, "vote on " + v.trial_id + " names method " + std::to_string(v.chosen_method));
        }
        if (t->pick_rank >= max_rank) continue;
        const int loser = v.chosen_method == t->pair.i ? t->pair.j : t->pair.i;
        c(v.chosen_method, loser) += 1;
    }
    return c;
}

CountMatrix tally(std::span<const Vote> votes, const Schedule& schedule) {
    return tally_top_k(votes, schedule, std::numeric_limits<int>::max());
}

std::string serialize_count_matrix(const CountMatrix& c) {
    std::ostringstream os;
    for (int i = 0; i < c.size(); ++i) {
        for (int j = 0; j < c.size(); ++j) os << (j ? "," : "") << c(i, j);
        os << '\n';
    }
    return os.str();
}

CountMatrix parse_count_matrix(const std::string& data, const std::string& origin) {
    std::vector<std::vector<std::int64_t>> rows;
    std::istringstream in(data);
    std::string raw;
    for (int ln = 1; std::getline(in, raw); ++ln) {
        const auto line = text::trim(raw);
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::int64_t> row;
        for (auto f : text::split(line)) row.push_back(text::parse_int(f, origin + ":" + std::to_string(ln)));
        rows.push_back(std::move(row));
    }
    const int n = static_cast<int>(rows.size());
    CountMatrix c(n);
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(rows[static_cast<std::size_t>(i)].size()) != n) {
            throw Error(Errc::ValidationError, origin + ": count matrix is not square");
        }
        for (int j = 0; j < n; ++j) {
            const auto v = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            if (v < 0) throw Error(Errc::ValidationError, origin + ": negative count");
            if (i == j && v != 0) throw Error(Errc::ValidationError, origin + ": nonzero diagonal");
            c(i, j) = v;
        }
    }
    return c;
}

}  // namespace madeval
