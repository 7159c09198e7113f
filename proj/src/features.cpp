#include "mtn/features.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "mtn/error.hpp"

namespace mtn {

namespace {

constexpr char kMagic[4] = {'M', 'T', 'N', 'F'};
constexpr uint16_t kVersion = 1;

[[noreturn]] void format_error(const std::string& path, const std::string& what, size_t offset) {
    throw DataError("feature file " + path + ": " + what + " at byte offset " +
                    std::to_string(offset));
}

template <typename T>
T read_le(std::ifstream& in, const std::string& path, size_t& offset) {
    unsigned char buf[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(buf), sizeof(T)))
        format_error(path, "truncated payload", offset);
    T value = 0;
    for (size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(buf[i]) << (8 * i);
    offset += sizeof(T);
    return value;
}

template <typename T>
void write_le(std::ofstream& out, T value) {
    unsigned char buf[sizeof(T)];
    for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(value >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

}  // namespace

ModalityFeatures load_features(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open feature file " + path);
    size_t offset = 0;
    char magic[4];
    if (!in.read(magic, 4)) format_error(path, "truncated payload", offset);
    if (std::memcmp(magic, kMagic, 4) != 0) format_error(path, "bad magic", 0);
    offset = 4;
    const uint16_t version = read_le<uint16_t>(in, path, offset);
    if (version != kVersion)
        format_error(path, "unsupported version " + std::to_string(version), 4);
    const uint32_t rows = read_le<uint32_t>(in, path, offset);
    const uint32_t cols = read_le<uint32_t>(in, path, offset);
    if (rows == 0 || cols == 0) format_error(path, "zero dimension", 6);

    ModalityFeatures f;
    f.rows = rows;
    f.cols = cols;
    f.data.resize(static_cast<size_t>(rows) * cols);
    for (auto& v : f.data) {
        const uint32_t bits = read_le<uint32_t>(in, path, offset);
        std::memcpy(&v, &bits, sizeof(float));
    }
    char extra;
    if (in.read(&extra, 1))
        format_error(path, "trailing bytes beyond declared payload", offset);
    return f;
}

void save_features(const std::string& path, const ModalityFeatures& features) {
    if (features.rows <= 0 || features.cols <= 0)
        throw ContractError("feature matrix must have positive dimensions");
    if (static_cast<int64_t>(features.data.size()) != features.rows * features.cols)
        throw ContractError("feature payload does not match declared dimensions");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write feature file " + path);
    out.write(kMagic, 4);
    write_le<uint16_t>(out, kVersion);
    write_le<uint32_t>(out, static_cast<uint32_t>(features.rows));
    write_le<uint32_t>(out, static_cast<uint32_t>(features.cols));
    for (float v : features.data) {
        uint32_t bits;
        std::memcpy(&bits, &v, sizeof(float));
        write_le<uint32_t>(out, bits);
    }
    if (!out) throw DataError("short write to feature file " + path);
}

void FeatureStore::put(const std::string& video_id, ModalityFeatures features) {
    by_video_[video_id][features.modality] = std::move(features);
}

const ModalityFeatures* FeatureStore::find(const std::string& video_id,
                                           const std::string& modality) const {
    auto vit = by_video_.find(video_id);
    if (vit == by_video_.end()) return nullptr;
    auto mit = vit->second.find(modality);
    return mit == vit->second.end() ? nullptr : &mit->second;
}

const ModalityFeatures& FeatureStore::get(const std::string& video_id,
                                          const std::string& modality) const {
    const auto* f = find(video_id, modality);
    if (!f)
        throw DataError("missing " + modality + " features for video " + video_id);
    return *f;
}

FeatureStore FeatureStore::load_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("feature directory not found: " + dir);
    FeatureStore store;
    for (const auto& modality_dir : fs::directory_iterator(dir)) {
        if (!modality_dir.is_directory()) continue;
        const std::string modality = modality_dir.path().filename().string();
        for (const auto& file : fs::directory_iterator(modality_dir.path())) {
            if (file.path().extension() != ".mtnf") continue;
            auto f = load_features(file.path().string());
            f.modality = modality;
            store.put(file.path().stem().string(), std::move(f));
        }
    }
    return store;
}

void FeatureStore::write_dir(const std::string& dir) const {
    namespace fs = std::filesystem;
    for (const auto& [video, mods] : by_video_)
        for (const auto& [modality, f] : mods) {
            const fs::path mdir = fs::path(dir) / modality;
            fs::create_directories(mdir);
            save_features((mdir / (video + ".mtnf")).string(), f);
        }
}

void FeatureStore::zero_all() {
    for (auto& [video, mods] : by_video_)
        for (auto& [modality, f] : mods) std::fill(f.data.begin(), f.data.end(), 0.0f);
}

}  // namespace mtn
