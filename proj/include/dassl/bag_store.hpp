#pragma once
// Feature-bag container I/O and cohort manifests.
//
// Bag file layout (HDF5, dataset names are part of the contract):
//   /features     N x d  float32
//   /coords       N x 2  float32
//   /patch_class  N      int8   {0=tumor, 1=normal, 2=artifact}
//   attributes on the root group: slide_id, patient_id, center_id (strings),
//   target (int8, 0/1)
//
// Manifest: UTF-8 CSV, header
//   slide_id,patient_id,center_id,target,file_path[,fold_id]
// file_path entries may be relative; they are resolved against the
// manifest's directory at load time.

#include <string>

#include "dassl/bag.hpp"

namespace dassl {

// Reads a bag and drops every row containing a non-finite feature value
// (drop-entire-row policy, never imputation). Remaining rows keep file
// order; the drop count lands in FeatureBag::removed_rows.
FeatureBag read_bag(const std::string& path);

// Writes a bag. read_bag(write_bag(bag)) is the identity for finite bags.
void write_bag(const FeatureBag& bag, const std::string& path);

// Keeps tumor rows when enabled; identity when disabled (ablation arm).
FeatureBag filter_tumor(const FeatureBag& bag, bool enabled);

// Parses and validates a manifest CSV. Rejects duplicate slide ids and
// patients with conflicting targets; checks every bag file is readable.
CohortManifest load_manifest(const std::string& path);

// Writes rows as-is (paths are not rewritten).
void write_manifest(const CohortManifest& manifest, const std::string& path);

}  // namespace dassl
