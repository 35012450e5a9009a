#include "fadsicl/feature_cache.hpp"

#include <cstring>
#include <fstream>

#include "fadsicl/encoding.hpp"
#include "fadsicl/error.hpp"

namespace fadsicl {

namespace {

constexpr char kMagic[4] = {'F', 'A', 'D', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

class Reader {
public:
    Reader(const char* data, std::size_t size) : data_(data), size_(size) {}

    std::uint16_t u16() {
        need(2);
        const auto v = static_cast<std::uint16_t>(byte(0) | (byte(1) << 8));
        pos_ += 2;
        return v;
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte(i)) << (8 * i);
        pos_ += 4;
        return v;
    }

    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string out(data_ + pos_, n);
        pos_ += n;
        return out;
    }

    bool at_end() const { return pos_ == size_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > size_) throw_data("CorruptCache", "truncated feature cache file");
    }
    unsigned byte(std::size_t offset) const {
        return static_cast<unsigned char>(data_[pos_ + offset]);
    }

    const char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

}  // namespace

FeatureCacheFile::FeatureCacheFile(std::filesystem::path path) : path_(std::move(path)) {
    load();
}

void FeatureCacheFile::load() {
    keys_.clear();
    values_.clear();
    index_.clear();
    dim_ = 0;
    dirty_ = false;
    if (path_.empty() || !std::filesystem::exists(path_)) return;

    std::ifstream in(path_, std::ios::binary);
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (!in.good() && !in.eof()) throw_data("CorruptCache", "cannot read " + path_.string());

    Reader r(blob.data(), blob.size());
    if (r.bytes(4) != std::string(kMagic, 4)) {
        throw_data("CorruptCache", path_.string() + ": bad magic");
    }
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw_data("CorruptCache",
                   path_.string() + ": unsupported version " + std::to_string(version));
    }
    dim_ = r.u32();
    const std::uint32_t count = r.u32();
    keys_.reserve(count);
    values_.reserve(static_cast<std::size_t>(count) * dim_);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t key_len = r.u16();
        std::string key = r.bytes(key_len);
        index_.emplace(key, keys_.size());
        keys_.push_back(std::move(key));
        for (std::uint32_t j = 0; j < dim_; ++j) values_.push_back(r.f32());
    }
    if (!r.at_end()) throw_data("CorruptCache", path_.string() + ": trailing bytes");

    const auto sidecar = path_.string() + ".meta.json";
    if (std::filesystem::exists(sidecar)) {
        std::ifstream meta(sidecar);
        meta >> metadata_;
    }
}

void FeatureCacheFile::save() const {
    if (path_.empty()) throw_config("BadConfig", "feature cache has no path");
    std::lock_guard<std::mutex> lock(mutex_);
    std::string blob;
    blob.reserve(16 + values_.size() * 4 + keys_.size() * 80);
    blob.append(kMagic, 4);
    put_u32(blob, kVersion);
    put_u32(blob, dim_);
    put_u32(blob, static_cast<std::uint32_t>(keys_.size()));
    for (std::size_t i = 0; i < keys_.size(); ++i) {
        if (keys_[i].size() > 0xffff) throw_data("CorruptCache", "cache key too long");
        put_u16(blob, static_cast<std::uint16_t>(keys_[i].size()));
        blob.append(keys_[i]);
        for (std::uint32_t j = 0; j < dim_; ++j) put_f32(blob, values_[i * dim_ + j]);
    }
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::binary | std::ios::trunc);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out.good()) throw_data("CacheWriteFailed", "cannot write " + path_.string());

    std::ofstream meta(path_.string() + ".meta.json", std::ios::trunc);
    meta << metadata_.dump(2) << "\n";
    dirty_ = false;
}

std::optional<std::vector<float>> FeatureCacheFile::lookup(const std::string& key) const {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    return std::vector<float>(values_.begin() + static_cast<std::ptrdiff_t>(it->second * dim_),
                              values_.begin() +
                                  static_cast<std::ptrdiff_t>((it->second + 1) * dim_));
}

void FeatureCacheFile::insert(const std::string& key, std::span<const float> values) {
    std::lock_guard<std::mutex> lock(mutex_);
    if (dim_ == 0 && keys_.empty()) {
        dim_ = static_cast<std::uint32_t>(values.size());
    }
    if (values.size() != dim_) {
        throw_backend("DimensionMismatch",
                      "cache " + path_.string() + " holds dim " + std::to_string(dim_) +
                          ", got record of dim " + std::to_string(values.size()));
    }
    const auto it = index_.find(key);
    if (it != index_.end()) return;  // same content-addressed key, keep first
    index_.emplace(key, keys_.size());
    keys_.push_back(key);
    values_.insert(values_.end(), values.begin(), values.end());
    dirty_ = true;
}

std::size_t FeatureCacheFile::size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return keys_.size();
}

FeatureCacheStore::FeatureCacheStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

FeatureCacheStore::~FeatureCacheStore() {
    try {
        flush();
    } catch (...) {
        // Destructor flush is best effort; callers needing errors call flush().
    }
}

FeatureCacheFile& FeatureCacheStore::open(const std::string& backend_id,
                                          const std::string& template_hash,
                                          const std::string& kind_tag, nlohmann::json metadata) {
    const std::string fingerprint =
        sha256_hex(backend_id + "\x1f" + template_hash + "\x1f" + kind_tag).substr(0, 16);
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = files_.find(fingerprint);
    if (it == files_.end()) {
        auto path = dir_ / ("features-" + fingerprint + ".fadc");
        it = files_.emplace(fingerprint, std::make_unique<FeatureCacheFile>(path)).first;
        if (it->second->metadata().empty()) it->second->metadata() = std::move(metadata);
    }
    return *it->second;
}

void FeatureCacheStore::flush() {
    std::lock_guard<std::mutex> lock(mutex_);
    for (auto& [fingerprint, file] : files_) {
        if (file->dirty()) file->save();
    }
}

}  // namespace fadsicl
