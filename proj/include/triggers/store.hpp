#ifndef TRIGGERS_STORE_HPP
#define TRIGGERS_STORE_HPP

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace triggers {

struct RunRecord {
    std::string id;          // content hash of the run's config
    std::string timestamp;   // ISO-8601 UTC; lives only here, never in outputs
    std::string config_hash; // same as id for content-addressed runs
    std::vector<std::string> artifacts;

    nlohmann::json to_json() const;
    static RunRecord from_json(const nlohmann::json& j);
};

/// Content-addressed run persistence: runs/<hash>/manifest.json plus copies
/// of the artifacts. Storing the same config twice is an error rather than a
/// silent overwrite. Writes serialize on an exclusive lock file.
class RunStore {
public:
    explicit RunStore(std::string root);

    /// Store rooted at $TRIGGERS_RUN_STORE, or nothing if the variable is
    /// unset or empty.
    static std::optional<RunStore> from_env();

    const std::string& root() const { return root_; }

    /// Copies artifacts under runs/<hash>/ and appends to the index. Returns
    /// the run id.
    std::string store_run(const nlohmann::json& config,
                          const std::vector<std::string>& artifact_paths);

    std::vector<RunRecord> list() const;

private:
    std::string root_;
};

} // namespace triggers

#endif
