#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dassl {

// Patch class labels as stored on disk (int8).
enum class PatchClass : int8_t { tumor = 0, normal = 1, artifact = 2 };

// One slide's worth of patch embeddings plus metadata. Immutable after
// construction; filters return new bags.
struct FeatureBag {
    std::string slide_id;
    std::string patient_id;
    std::string center_id;
    int target = 0;  // responder=1 / non-responder=0

    Eigen::MatrixXf features;            // N x d
    Eigen::MatrixXf coords;              // N x 2, slide coordinates
    std::vector<int8_t> patch_class;     // length N, values in {0,1,2}

    // Rows dropped by load-time non-finite filtering (0 for in-memory bags).
    int64_t removed_rows = 0;

    int64_t n() const { return features.rows(); }
    int64_t dim() const { return features.cols(); }
};

struct ManifestRow {
    std::string slide_id;
    std::string patient_id;
    std::string center_id;
    int target = 0;
    std::string file_path;   // resolved path when loaded from disk
    int fold_id = -1;        // -1 when absent
};

struct CohortManifest {
    std::vector<ManifestRow> rows;

    bool has_folds() const {
        if (rows.empty()) return false;
        for (const auto& r : rows)
            if (r.fold_id < 0) return false;
        return true;
    }
};

}  // namespace dassl
