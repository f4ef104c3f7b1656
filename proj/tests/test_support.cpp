#include <png.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "test_util.hpp"

namespace madeval::testing {

void write_png(const std::filesystem::path& path, const RasterImage& img) {
    std::filesystem::create_directories(path.parent_path());
    png_image out{};
    out.version = PNG_IMAGE_VERSION;
    out.width = static_cast<png_uint_32>(img.width());
    out.height = static_cast<png_uint_32>(img.height());
    out.format = img.channels() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&out, path.c_str(), 0, img.samples().data(), 0, nullptr)) {
        throw std::runtime_error("png write failed: " + path.string());
    }
}

RasterImage random_rgb(std::mt19937_64& rng, int w, int h, double noise) {
    std::uniform_real_distribution<double> u(0.0, 255.0);
    std::normal_distribution<double> g(0.0, noise);
    double base[3], dx[3], dy[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = u(rng);
        dx[c] = (u(rng) - 127.5) / w;
        dy[c] = (u(rng) - 127.5) / h;
    }
    std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = base[c] + dx[c] * x + dy[c] * y + g(rng);
                px[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }
    return RasterImage(w, h, 3, std::move(px));
}

namespace {

RasterImage degrade(const RasterImage& in, std::mt19937_64& rng, double noise, int radius) {
    const int w = in.width(), h = in.height();
    std::normal_distribution<double> g(0.0, noise);
    std::vector<std::uint8_t> px(in.samples().size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                int n = 0;
                for (int yy = std::max(0, y - radius); yy <= std::min(h - 1, y + radius); ++yy) {
                    for (int xx = std::max(0, x - radius); xx <= std::min(w - 1, x + radius); ++xx) {
                        acc += in.at(xx, yy, c);
                        ++n;
                    }
                }
                const double v = acc / n + g(rng);
                px[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }
    return RasterImage(w, h, 3, std::move(px));
}

}  // namespace

CandidatePool make_disk_pool(const std::filesystem::path& dir, const std::vector<std::string>& methods, int count,
                             std::uint64_t seed, int w, int h, const std::string& prefix) {
    std::mt19937_64 rng(seed);
    std::vector<MethodEntry> entries;
    for (const auto& m : methods) entries.push_back({m, m});
    for (int i = 0; i < count; ++i) {
        char name[64];
        std::snprintf(name, sizeof name, "%s%03d", prefix.c_str(), i);
        const auto input = random_rgb(rng, w, h);
        write_png(dir / "inputs" / (std::string(name) + ".png"), input);
        for (std::size_t m = 0; m < methods.size(); ++m) {
            const double noise = std::uniform_real_distribution<double>(1.0, 30.0)(rng);
            const int radius = static_cast<int>((m + static_cast<std::size_t>(i)) % 3);
            write_png(dir / methods[m] / (std::string(name) + ".png"), degrade(input, rng, noise, radius));
        }
    }
    return ingest_pool(dir, entries);
}

ChildServer::ChildServer(const std::filesystem::path& study) {
    int out[2];
    if (::pipe(out) != 0) throw std::runtime_error("pipe failed");
    pid_ = ::fork();
    if (pid_ < 0) throw std::runtime_error("fork failed");
    if (pid_ == 0) {
        ::dup2(out[1], STDOUT_FILENO);
        ::close(out[0]);
        ::close(out[1]);
        const std::string study_arg = study.string();
        ::execl(MADEVAL_CLI, MADEVAL_CLI, "serve", "--study", study_arg.c_str(), "--address", "127.0.0.1", "--port",
                "0", static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::close(out[1]);
    // "listening on http://127.0.0.1:<port>\n"
    std::string line;
    char ch;
    while (::read(out[0], &ch, 1) == 1 && ch != '\n') line.push_back(ch);
    ::close(out[0]);
    const auto colon = line.rfind(':');
    if (line.rfind("listening on", 0) != 0 || colon == std::string::npos) {
        kill_hard();
        throw std::runtime_error("server did not start: '" + line + "'");
    }
    port_ = std::stoi(line.substr(colon + 1));
}

ChildServer::~ChildServer() {
    if (pid_ > 0) {
        ::kill(pid_, SIGTERM);
        ::waitpid(pid_, nullptr, 0);
    }
}

void ChildServer::kill_hard() {
    if (pid_ <= 0) return;
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
    pid_ = -1;
}

}  // namespace madeval::testing
