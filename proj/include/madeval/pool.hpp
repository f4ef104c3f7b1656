#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace madeval {

struct Candidate {
    std::string id;
    std::filesystem::path input;
    std::vector<std::filesystem::path> outputs;  // one per method, same order as CandidatePool::methods
};

/// Input images plus every method's output for each of them. Candidate ids are
/// unique and candidates are kept in ascending id order.
struct CandidatePool {
    std::vector<std::string> methods;
    std::vector<Candidate> candidates;

    std::vector<std::string> ids() const;
    void validate() const;
};

// Manifest layout:
//   [root,<directory relative paths resolve against>]   optional
//   methods,<name_0>,...,<name_{N-1}>
//   <candidate_id>,<input>,<output_0>,...,<output_{N-1}>
CandidatePool read_pool_manifest(const std::filesystem::path& path);
void write_pool_manifest(const std::filesystem::path& path, const CandidatePool& pool);

struct MethodEntry {
    std::string name;
    std::string directory;  // relative to the pool directory
};

/// Methods manifest: one `name` or `name,directory` per line; `#` comments.
std::vector<MethodEntry> read_methods_manifest(const std::filesystem::path& path);

/// Scans `<pool_dir>/inputs/` and each method directory for PNG/JPEG files
/// and matches them by file stem. Throws MissingOutputs listing every candidate
/// lacking at least one output, EmptyPool if there are no inputs.
CandidatePool ingest_pool(const std::filesystem::path& pool_dir, const std::vector<MethodEntry>& methods);

}  // namespace madeval
