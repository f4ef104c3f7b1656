// madeval: debiased paired-comparison studies of image enhancement methods.

#include <CLI11.hpp>

#include <pthread.h>
#include <signal.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "madeval/error.hpp"
#include "madeval/service.hpp"
#include "madeval/text_io.hpp"

namespace fs = std::filesystem;
using namespace madeval;

namespace {

struct Common {
    std::string study;
    std::string config;
    std::vector<std::string> overrides;
};

StudyConfig load_config(const Common& c) {
    StudyConfig cfg;
    const StudyPaths paths{c.study};
    if (!c.config.empty()) {
        cfg = read_config_file(c.config);
    } else if (fs::exists(paths.config())) {
        cfg = read_config_file(paths.config());
    }
    for (const auto& kv : c.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw Error(Errc::ConfigError, "--set expects key=value, got '" + kv + "'");
        apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1), fs::current_path());
    }
    return cfg;
}

void add_common(CLI::App* cmd, Common& c, bool with_config = true) {
    cmd->add_option("--study", c.study, "Study directory")->required();
    if (with_config) {
        cmd->add_option("--config", c.config, "key=value config file (default: the study's study.conf)");
        cmd->add_option("--set", c.overrides, "Override one config key, e.g. --set K=12");
    }
}

std::vector<double> evenly_spaced_scores(int n, double gap) {
    std::vector<double> mu(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) mu[static_cast<std::size_t>(i)] = gap * (i - (n - 1) / 2.0);
    return mu;
}

std::vector<double> parse_scores(const std::string& s) {
    std::vector<double> mu;
    for (auto f : text::split(s)) mu.push_back(text::parse_double(f, "--mu"));
    return mu;
}

int serve(const StudyPaths& paths, const ServeOptions& options) {
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    StudyService service(paths, options);
    const int port = service.bind();
    std::printf("listening on http://%s:%d\n", options.address.c_str(), port);
    std::fflush(stdout);

    std::jthread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        service.stop();
    });
    service.run();
    pthread_kill(waiter.native_handle(), SIGTERM);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Select maximally discriminating test images for pairs of enhancement methods, "
                 "run a two-alternative forced-choice study, and rank the methods."};
    app.require_subcommand(1);

    Common common;

    std::string pool_dir, methods_file;
    auto* ingest = app.add_subcommand("ingest", "Index a pool directory into a new study");
    add_common(ingest, common);
    ingest->add_option("--pool", pool_dir, "Pool directory with inputs/ and one directory per method")->required();
    ingest->add_option("--methods", methods_file, "Methods manifest (name[,directory] per line)")->required();

    std::string rejections;
    auto* select = app.add_subcommand("select", "Pick the top-K candidates for every method pair");
    add_common(select, common);
    select->add_option("--rejections", rejections, "candidate_id,reason list of screened-out candidates");

    auto* schedule = app.add_subcommand("schedule", "Build the trial schedule and open the study");
    add_common(schedule, common);

    std::optional<std::string> address;
    std::optional<int> port;
    std::string ui_dir;
    auto* serve_cmd = app.add_subcommand("serve", "Run the rater HTTP service");
    add_common(serve_cmd, common, false);
    serve_cmd->add_option("--address", address, "Listen address (env MADEVAL_ADDRESS, default 127.0.0.1)");
    serve_cmd->add_option("--port", port, "Listen port, 0 for any (env MADEVAL_PORT, default 8080)");
    serve_cmd->add_option("--ui-dir", ui_dir, "Directory holding the rater UI bundle");

    auto* close_cmd = app.add_subcommand("close", "Stop accepting votes");
    add_common(close_cmd, common, false);

    auto* status = app.add_subcommand("status", "Print the study phase and vote count");
    add_common(status, common, false);

    bool preliminary = false;
    auto* tally_cmd = app.add_subcommand("tally", "Write the count matrix");
    auto* rank_cmd = app.add_subcommand("rank", "Write the count matrix and the ranking report");
    auto* report_cmd = app.add_subcommand("report", "Write counts, ranking and the top-K stability curve");
    for (auto* cmd : {tally_cmd, rank_cmd, report_cmd}) {
        add_common(cmd, common);
        cmd->add_flag("--preliminary", preliminary, "Allow while the study is still open");
    }

    std::string mu_text;
    double gap = 0.25;
    int subjects = 25;
    std::uint64_t sim_seed = 1;
    int synthetic_methods = 0;
    int synthetic_k = 12;
    auto* simulate = app.add_subcommand("simulate", "Append votes from simulated Thurstone observers");
    add_common(simulate, common);
    simulate->add_option("--mu", mu_text, "Comma-separated zero-sum ground-truth scores");
    simulate->add_option("--gap", gap, "Evenly spaced ground truth with this gap (when --mu is absent)");
    simulate->add_option("--subjects", subjects, "Number of simulated subjects");
    simulate->add_option("--seed", sim_seed, "Simulation seed");
    simulate->add_option("--synthetic-methods", synthetic_methods,
                         "Create an image-free synthetic study with this many methods first");
    simulate->add_option("--synthetic-k", synthetic_k, "Picks per pair for --synthetic-methods");

    CLI11_PARSE(app, argc, argv);

    try {
        const StudyPaths paths{common.study};
        if (ingest->parsed()) {
            const auto pool = cli_ingest(paths, pool_dir, methods_file, load_config(common));
            std::cout << "ingested " << pool.candidates.size() << " candidates x " << pool.methods.size()
                      << " methods into " << paths.pool().string() << '\n';
        } else if (select->parsed()) {
            std::optional<fs::path> rej;
            if (!rejections.empty()) rej = rejections;
            const auto summary = cli_select(paths, load_config(common), rej);
            std::cout << "wrote " << summary.files.size() << " selection files, " << summary.total_picks
                      << " picks, " << summary.total_rejections << " rejections\n";
        } else if (schedule->parsed()) {
            const auto s = cli_schedule(paths, load_config(common));
            std::cout << "scheduled " << s.trials().size() << " trials; study is open\n";
        } else if (serve_cmd->parsed()) {
            return serve(paths, resolve_serve_options(address, port, ui_dir));
        } else if (close_cmd->parsed()) {
            cli_close(paths);
            std::cout << "study closed\n";
        } else if (status->parsed()) {
            const auto state = StudyState::load(paths);
            std::cout << "study " << state.study_id << ": " << phase_name(state.phase) << '\n';
            if (fs::exists(paths.votes())) std::cout << "votes: " << read_vote_log(paths.votes(), true).size() << '\n';
        } else if (tally_cmd->parsed() || rank_cmd->parsed() || report_cmd->parsed()) {
            const bool rank = !tally_cmd->parsed();
            const bool stability = report_cmd->parsed();
            const auto cfg = load_config(common);
            const auto out = cli_tally_rank_report(paths, cfg, preliminary, rank, stability);
            std::cout << "votes tallied: " << out.counts.total() << '\n';
            if (out.ranking) {
                std::cout << "ranking written to " << paths.ranking().string()
                          << (out.ranking->converged ? "" : " (fit did NOT converge)") << '\n';
            }
            if (!out.stability.empty()) std::cout << "stability curve written to " << paths.stability().string() << '\n';
        } else if (simulate->parsed()) {
            const auto cfg = load_config(common);
            if (synthetic_methods > 0) create_synthetic_study(paths, synthetic_methods, synthetic_k, cfg);
            const auto schedule_file = read_schedule_file(paths.schedule());
            const auto mu = mu_text.empty() ? evenly_spaced_scores(schedule_file.method_count(), gap)
                                            : parse_scores(mu_text);
            const auto n = cli_simulate(paths, mu, subjects, sim_seed);
            std::cout << "appended " << n << " simulated votes\n";
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
