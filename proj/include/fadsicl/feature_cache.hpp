#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace fadsicl {

// On-disk feature cache, little-endian binary:
//   magic "FADC" | version u32=1 | dim u32 | record count u32
//   per record: key length u16 | UTF-8 key | dim x f32
// Record order is insertion order and round-trips bit-exactly. A JSON sidecar
// (<path>.meta.json) carries backend/model/template metadata.
class FeatureCacheFile {
public:
    FeatureCacheFile() = default;
    explicit FeatureCacheFile(std::filesystem::path path);

    // Loads the file when it exists; otherwise starts empty.
    void load();
    void save() const;

    // Returns a copy; the backing storage may move under concurrent writers.
    std::optional<std::vector<float>> lookup(const std::string& key) const;
    // First insert fixes the record dim; later mismatches throw. Writers are
    // serialized internally.
    void insert(const std::string& key, std::span<const float> values);

    std::uint32_t dim() const { return dim_; }
    std::size_t size() const;
    const std::filesystem::path& path() const { return path_; }
    bool dirty() const { return dirty_; }

    nlohmann::json& metadata() { return metadata_; }
    const nlohmann::json& metadata() const { return metadata_; }

private:
    std::filesystem::path path_;
    std::uint32_t dim_ = 0;
    std::vector<std::string> keys_;         // insertion order
    std::vector<float> values_;             // keys_.size() * dim_
    std::unordered_map<std::string, std::size_t> index_;
    nlohmann::json metadata_ = nlohmann::json::object();
    mutable bool dirty_ = false;
    mutable std::mutex mutex_;
};

// Directory of cache files, one per (backend, template, feature kind)
// fingerprint. Flushes dirty files on destruction.
class FeatureCacheStore {
public:
    explicit FeatureCacheStore(std::filesystem::path dir);
    ~FeatureCacheStore();

    FeatureCacheStore(const FeatureCacheStore&) = delete;
    FeatureCacheStore& operator=(const FeatureCacheStore&) = delete;

    FeatureCacheFile& open(const std::string& backend_id, const std::string& template_hash,
                           const std::string& kind_tag, nlohmann::json metadata);
    void flush();

private:
    std::filesystem::path dir_;
    std::mutex mutex_;
    std::unordered_map<std::string, std::unique_ptr<FeatureCacheFile>> files_;
};

}  // namespace fadsicl
