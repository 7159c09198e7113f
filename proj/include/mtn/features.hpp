#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mtn {

// One video's feature matrix for one modality: numSeqs rows of d_m values.
struct ModalityFeatures {
    std::string modality;
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<float> data;  // row-major rows x cols

    float at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols + c)]; }
};

// MTNF binary format (little-endian): magic "MTNF", version u16 = 1,
// rows u32, cols u32, then rows*cols IEEE-754 f32 values row-major.
ModalityFeatures load_features(const std::string& path);
void save_features(const std::string& path, const ModalityFeatures& features);

// In-memory feature lookup keyed by (video_id, modality). Directory layout on
// disk is <dir>/<modality>/<video_id>.mtnf.
class FeatureStore {
  public:
    void put(const std::string& video_id, ModalityFeatures features);
    const ModalityFeatures* find(const std::string& video_id, const std::string& modality) const;
    const ModalityFeatures& get(const std::string& video_id, const std::string& modality) const;

    // Loads every .mtnf file under <dir>/<modality>/ for each immediate
    // subdirectory of dir.
    static FeatureStore load_dir(const std::string& dir);
    void write_dir(const std::string& dir) const;

    // Replaces every stored value with zero (feature-ablation control).
    void zero_all();

    bool empty() const { return by_video_.empty(); }
    const std::map<std::string, std::map<std::string, ModalityFeatures>>& all() const {
        return by_video_;
    }

  private:
    std::map<std::string, std::map<std::string, ModalityFeatures>> by_video_;
};

}  // namespace mtn
