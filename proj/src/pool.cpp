#include "madeval/pool.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>

#include "madeval/error.hpp"
#include "madeval/text_io.hpp"

namespace fs = std::filesystem;

namespace madeval {

std::vector<std::string> CandidatePool::ids() const {
    std::vector<std::string> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) out.push_back(c.id);
    return out;
}

void CandidatePool::validate() const {
    if (methods.size() < 2) throw Error(Errc::ValidationError, "pool needs at least two methods");
    std::set<std::string> names(methods.begin(), methods.end());
    if (names.size() != methods.size()) throw Error(Errc::ValidationError, "duplicate method name");
    std::set<std::string> seen;
    for (const auto& c : candidates) {
        if (c.id.empty() || c.id.find(',') != std::string::npos) {
            throw Error(Errc::ValidationError, "invalid candidate id '" + c.id + "'");
        }
        if (!seen.insert(c.id).second) throw Error(Errc::ValidationError, "duplicate candidate id " + c.id);
        if (c.outputs.size() != methods.size()) {
            throw Error(Errc::MissingOutputs, c.id + " lacks outputs for some methods");
        }
    }
}

CandidatePool read_pool_manifest(const fs::path& path) {
    const auto lines = text::read_lines(path);
    fs::path root = path.parent_path();
    CandidatePool pool;
    bool have_methods = false;
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        const std::string where = path.string() + ":" + std::to_string(ln + 1);
        const auto line = text::trim(lines[ln]);
        if (line.empty() || line.front() == '#') continue;
        const auto fields = text::split(line);
        if (fields[0] == "root" && !have_methods) {
            if (fields.size() != 2) throw Error(Errc::ValidationError, where + ": root,<dir>");
            root = fs::path(std::string(fields[1]));
            continue;
        }
        if (fields[0] == "methods" && !have_methods) {
            for (std::size_t i = 1; i < fields.size(); ++i) pool.methods.emplace_back(text::trim(fields[i]));
            have_methods = true;
            continue;
        }
        if (!have_methods) throw Error(Errc::ValidationError, where + ": methods line must come first");
        if (fields.size() != pool.methods.size() + 2) {
            throw Error(Errc::MissingOutputs, where + ": candidate " + std::string(fields[0]) +
                                                  " must list an input and " + std::to_string(pool.methods.size()) +
                                                  " outputs");
        }
        Candidate c;
        c.id = std::string(text::trim(fields[0]));
        auto resolve = [&](std::string_view p) {
            fs::path q{std::string(p)};
            return q.is_absolute() ? q : root / q;
        };
        c.input = resolve(fields[1]);
        for (std::size_t i = 2; i < fields.size(); ++i) c.outputs.push_back(resolve(fields[i]));
        pool.candidates.push_back(std::move(c));
    }
    if (!have_methods) throw Error(Errc::ValidationError, path.string() + ": missing methods line");
    std::sort(pool.candidates.begin(), pool.candidates.end(),
              [](const Candidate& a, const Candidate& b) { return a.id < b.id; });
    pool.validate();
    return pool;
}

void write_pool_manifest(const fs::path& path, const CandidatePool& pool) {
    pool.validate();
    const fs::path root = fs::absolute(path).parent_path();
    auto rel = [&](const fs::path& p) {
        auto r = fs::absolute(p).lexically_relative(root);
        const std::string s = (r.empty() || *r.begin() == "..") ? fs::absolute(p).string() : r.string();
        if (s.find(',') != std::string::npos) throw Error(Errc::ValidationError, "path contains a comma: " + s);
        return s;
    };
    std::ostringstream os;
    os << "methods";
    for (const auto& m : pool.methods) os << ',' << m;
    os << '\n';
    for (const auto& c : pool.candidates) {
        os << c.id << ',' << rel(c.input);
        for (const auto& o : c.outputs) os << ',' << rel(o);
        os << '\n';
    }
    text::write_file_atomic(path, os.str());
}

std::vector<MethodEntry> read_methods_manifest(const fs::path& path) {
    std::vector<MethodEntry> out;
    for (const auto& raw : text::read_lines(path)) {
        const auto line = text::trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto fields = text::split(line);
        if (fields.size() > 2) throw Error(Errc::ValidationError, path.string() + ": expected name[,directory]");
        MethodEntry e;
        e.name = std::string(text::trim(fields[0]));
        e.directory = fields.size() == 2 ? std::string(text::trim(fields[1])) : e.name;
        out.push_back(std::move(e));
    }
    return out;
}

namespace {

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::map<std::string, fs::path> scan_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error(Errc::UnreadableFile, "not a directory: " + dir.string());
    std::map<std::string, fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
        auto stem = entry.path().stem().string();
        if (!out.emplace(stem, entry.path()).second) {
            throw Error(Errc::ValidationError, "two images share the stem '" + stem + "' in " + dir.string());
        }
    }
    return out;
}

}  // namespace

CandidatePool ingest_pool(const fs::path& pool_dir, const std::vector<MethodEntry>& methods) {
    CandidatePool pool;
    for (const auto& m : methods) pool.methods.push_back(m.name);
    const auto inputs = scan_images(pool_dir / "inputs");
    if (inputs.empty()) throw Error(Errc::EmptyPool, "no input images under " + (pool_dir / "inputs").string());

    std::vector<std::map<std::string, fs::path>> outputs;
    for (const auto& m : methods) outputs.push_back(scan_images(pool_dir / m.directory));

    std::vector<std::string> missing;
    for (const auto& [id, input] : inputs) {
        Candidate c{id, input, {}};
        std::vector<std::string> lacking;
        for (std::size_t j = 0; j < methods.size(); ++j) {
            auto it = outputs[j].find(id);
            if (it == outputs[j].end()) {
                lacking.push_back(methods[j].name);
            } else {
                c.outputs.push_back(it->second);
            }
        }
        if (!lacking.empty()) {
            std::string entry = id + " (";
            for (std::size_t k = 0; k < lacking.size(); ++k) entry += (k ? " " : "") + lacking[k];
            missing.push_back(entry + ")");
            continue;
        }
        pool.candidates.push_back(std::move(c));
    }
    if (!missing.empty()) {
        std::string msg = std::to_string(missing.size()) + " candidate(s) missing outputs:";
        for (const auto& m : missing) msg += " " + m;
        throw Error(Errc::MissingOutputs, msg);
    }
    pool.validate();
    return pool;
}

}  // namespace madeval
