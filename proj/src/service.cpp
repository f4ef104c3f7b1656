#include <httplib.h>

#include <json.hpp>

#include "madeval/error.hpp"
#include "madeval/service.hpp"
#include "madeval/text_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace madeval {

namespace {

constexpr const char* kPlaceholderPage = R"(<!doctype html>
<html><head><meta charset="utf-8"><title>Image quality study</title></head>
<body><p>The rater interface is not installed. Start the service with --ui-dir pointing at the built bundle.</p></body></html>
)";

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_header("Cache-Control", "no-store");
    res.set_content(body.dump(), "application/json");
}

// Subject-facing errors carry only the error class and a fixed message.
void send_error(httplib::Response& res, int status, Errc code, const char* message) {
    send_json(res, status, json{{"error", std::string(errc_name(code))}, {"message", message}});
}

int status_for(Errc code) {
    switch (code) {
        case Errc::DuplicateVote: return 409;
        case Errc::UnknownTrial:
        case Errc::UnknownSubject: return 404;
        case Errc::InvalidChoice:
        case Errc::ValidationError: return 400;
        case Errc::PhaseError: return 403;
        default: return 500;
    }
}

const char* message_for(Errc code) {
    switch (code) {
        case Errc::DuplicateVote: return "this trial already has your vote";
        case Errc::UnknownTrial: return "unknown trial";
        case Errc::UnknownSubject: return "unknown participant id";
        case Errc::InvalidChoice: return "invalid choice";
        case Errc::ValidationError: return "invalid request";
        case Errc::PhaseError: return "the study is not accepting votes";
        default: return "internal error";
    }
}

json progress_json(const Progress& p) { return json{{"done", p.done}, {"total", p.total}}; }

std::string image_content_type(const std::string& bytes) {
    if (bytes.size() >= 4 && static_cast<unsigned char>(bytes[0]) == 0x89 && bytes[1] == 'P') return "image/png";
    if (bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0xFF &&
        static_cast<unsigned char>(bytes[1]) == 0xD8) {
        return "image/jpeg";
    }
    return "application/octet-stream";
}

}  // namespace

StudyService::StudyService(StudyPaths study, ServeOptions options)
    : study_(std::move(study)), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
    state_ = StudyState::load(study_);
    require_phase(state_, {Phase::Open}, "serve");
    schedule_ = read_schedule_file(study_.schedule());
    if (fs::exists(study_.pool())) pool_ = read_pool_manifest(study_.pool());
    subjects_ = SubjectRegistry::load(study_.subjects());
    votes_ = std::make_unique<VoteLog>(study_.votes());
    install_routes();
}

StudyService::~StudyService() { stop(); }

void StudyService::install_routes() {
    auto& svr = *server_;

    if (!options_.ui_dir.empty()) {
        if (!svr.set_mount_point("/", options_.ui_dir.string())) {
            throw Error(Errc::UnreadableFile, "UI bundle directory not found: " + options_.ui_dir.string());
        }
    } else {
        svr.Get("/", [](const httplib::Request&, httplib::Response& res) { res.set_content(kPlaceholderPage, "text/html"); });
    }

    svr.Get(R"(/api/session/([^/]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string subject = req.matches[1];
        try {
            Progress progress;
            const auto trial = votes_->next_trial(schedule_, subjects_, subject, &progress);
            if (!trial) {
                send_json(res, 200, json{{"status", "complete"}, {"progress", progress_json(progress)}});
                return;
            }
            send_json(res, 200,
                      json{{"status", "trial"},
                           {"trial_id", trial->trial_id},
                           {"left", "/images/" + trial->left_image},
                           {"right", "/images/" + trial->right_image},
                           {"progress", progress_json(progress)}});
        } catch (const Error& e) {
            send_error(res, status_for(e.code()), e.code(), message_for(e.code()));
        }
    });

    svr.Post(R"(/api/session/([^/]+)/vote)", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string subject = req.matches[1];
        try {
            if (!subjects_.is_registered(subject)) throw Error(Errc::UnknownSubject, subject);
            const json body = json::parse(req.body, nullptr, false);
            if (body.is_discarded() || !body.is_object() || !body.contains("trial_id") ||
                !body["trial_id"].is_string() || !body.contains("position") || !body["position"].is_string()) {
                throw Error(Errc::ValidationError, "body must be {trial_id, position}");
            }
            const std::string trial_id = body["trial_id"].get<std::string>();
            const Position position = parse_position(body["position"].get<std::string>());
            if (StudyState::load(study_).phase != Phase::Open) throw Error(Errc::PhaseError, "study not open");
            const Trial* trial = schedule_.find(trial_id);
            if (trial == nullptr) throw Error(Errc::UnknownTrial, trial_id);
            Vote v{utc_timestamp_now(), subject, trial_id, trial->method_at(position), position};
            votes_->record(schedule_, v);
            Progress progress;
            votes_->next_trial(schedule_, subjects_, subject, &progress);
            send_json(res, 200, json{{"status", "recorded"}, {"progress", progress_json(progress)}});
        } catch (const Error& e) {
            send_error(res, status_for(e.code()), e.code(), message_for(e.code()));
        }
    });

    svr.Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
        auto counts = votes_->votes_per_subject();
        for (const auto& s : subjects_.listed()) counts.try_emplace(s, 0);
        const std::size_t total = schedule_.trials().size();
        json subjects = json::array();
        for (const auto& [id, done] : counts) subjects.push_back({{"subject", id}, {"done", done}, {"total", total}});
        send_json(res, 200, json{{"trials_per_subject", total}, {"subjects", subjects}});
    });

    svr.Get(R"(/images/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        const auto ref = schedule_.find_image(std::string(req.matches[1]));
        const Candidate* cand = nullptr;
        if (ref) {
            auto it = std::lower_bound(pool_.candidates.begin(), pool_.candidates.end(), ref->trial->candidate_id,
                                       [](const Candidate& c, const std::string& id) { return c.id < id; });
            if (it != pool_.candidates.end() && it->id == ref->trial->candidate_id) cand = &*it;
        }
        if (cand == nullptr) {
            send_error(res, 404, Errc::MissingCandidate, "unknown image");
            return;
        }
        try {
            std::string bytes = text::read_file(cand->outputs.at(static_cast<std::size_t>(ref->method)));
            const std::string type = image_content_type(bytes);
            res.set_header("Cache-Control", "private, max-age=86400");
            res.set_content(std::move(bytes), type);
        } catch (const Error&) {
            send_error(res, 404, Errc::UnreadableFile, "image unavailable");
        }
    });
}

int StudyService::bind() {
    if (options_.port == 0) {
        port_ = server_->bind_to_any_port(options_.address);
    } else {
        port_ = server_->bind_to_port(options_.address, options_.port) ? options_.port : -1;
    }
    if (port_ < 0) {
        throw Error(Errc::ConfigError, "cannot bind " + options_.address + ":" + std::to_string(options_.port));
    }
    return port_;
}

void StudyService::run() {
    if (port_ < 0) bind();
    server_->listen_after_bind();
}

void StudyService::stop() {
    if (server_) server_->stop();
}

}  // namespace madeval
