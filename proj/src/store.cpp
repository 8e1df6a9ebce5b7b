#include "triggers/store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>

#include "triggers/errors.hpp"
#include "triggers/io.hpp"

namespace fs = std::filesystem;

namespace triggers {

namespace {

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// flock-based exclusive lock, released on destruction.
class ManifestLock {
public:
    explicit ManifestLock(const std::string& path) {
        fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
        if (fd_ < 0 || ::flock(fd_, LOCK_EX) != 0)
            throw DataError("cannot lock run store: " + path);
    }
    ~ManifestLock() {
        if (fd_ >= 0) {
            ::flock(fd_, LOCK_UN);
            ::close(fd_);
        }
    }
    ManifestLock(const ManifestLock&) = delete;
    ManifestLock& operator=(const ManifestLock&) = delete;

private:
    int fd_ = -1;
};

} // namespace

nlohmann::json RunRecord::to_json() const {
    nlohmann::json j;
    j["id"] = id;
    j["timestamp"] = timestamp;
    j["config_hash"] = config_hash;
    j["artifacts"] = artifacts;
    return j;
}

RunRecord RunRecord::from_json(const nlohmann::json& j) {
    RunRecord r;
    r.id = j.at("id").get<std::string>();
    r.timestamp = j.at("timestamp").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    return r;
}

RunStore::RunStore(std::string root) : root_(std::move(root)) {
    fs::create_directories(fs::path(root_) / "runs");
}

std::optional<RunStore> RunStore::from_env() {
    const char* path = std::getenv("TRIGGERS_RUN_STORE");
    if (path == nullptr || *path == '\0')
        return std::nullopt;
    return RunStore(path);
}

std::string RunStore::store_run(const nlohmann::json& config,
                                const std::vector<std::string>& artifact_paths) {
    const std::string id = fnv1a64_hex(config.dump());
    const fs::path runs = fs::path(root_) / "runs";
    ManifestLock lock((runs / ".lock").string());

    const fs::path dir = runs / id;
    if (fs::exists(dir))
        throw DataError("duplicate run id: " + id);
    fs::create_directories(dir);

    RunRecord record;
    record.id = id;
    record.config_hash = id;
    record.timestamp = utc_now();
    for (const std::string& src : artifact_paths) {
        const fs::path from(src);
        if (!fs::exists(from))
            throw DataError("missing artifact: " + src);
        const fs::path to = dir / from.filename();
        fs::copy_file(from, to, fs::copy_options::overwrite_existing);
        record.artifacts.push_back(from.filename().string());
    }

    nlohmann::json manifest;
    manifest["config"] = config;
    manifest["record"] = record.to_json();
    atomic_write((dir / "manifest.json").string(), manifest.dump(2) + "\n");

    const fs::path index_path = runs / "index.json";
    nlohmann::json index = nlohmann::json::array();
    if (fs::exists(index_path))
        index = nlohmann::json::parse(read_file(index_path.string()));
    index.push_back(record.to_json());
    atomic_write(index_path.string(), index.dump(2) + "\n");
    return id;
}

std::vector<RunRecord> RunStore::list() const {
    const fs::path index_path = fs::path(root_) / "runs" / "index.json";
    std::vector<RunRecord> out;
    if (!fs::exists(index_path))
        return out;
    for (const auto& entry : nlohmann::json::parse(read_file(index_path.string())))
        out.push_back(RunRecord::from_json(entry));
    return out;
}

} // namespace triggers
