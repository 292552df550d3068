#include "dassl/bag_store.hpp"

#include <hdf5.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <vector>

#include "dassl/error.hpp"

namespace dassl {

namespace {

namespace fs = std::filesystem;

// HDF5 sections run under one lock; concurrent bag I/O on distinct files
// stays safe against a non-threadsafe HDF5 build.
std::mutex hdf5_mutex;

using RowMajorF =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Minimal RAII handle for hid_t. close_fn is one of H5Fclose, H5Dclose, ...
struct Hid {
    hid_t id = H5I_INVALID_HID;
    herr_t (*close_fn)(hid_t) = nullptr;

    Hid(hid_t i, herr_t (*fn)(hid_t)) : id(i), close_fn(fn) {}
    ~Hid() {
        if (id >= 0 && close_fn) close_fn(id);
    }
    Hid(const Hid&) = delete;
    Hid& operator=(const Hid&) = delete;

    bool ok() const { return id >= 0; }
    operator hid_t() const { return id; }
};

struct SilenceHdf5Errors {
    H5E_auto2_t old_fn = nullptr;
    void* old_data = nullptr;
    SilenceHdf5Errors() {
        H5Eget_auto2(H5E_DEFAULT, &old_fn, &old_data);
        H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr);
    }
    ~SilenceHdf5Errors() { H5Eset_auto2(H5E_DEFAULT, old_fn, old_data); }
};

void write_string_attr(hid_t loc, const char* name, const std::string& value) {
    Hid type(H5Tcopy(H5T_C_S1), H5Tclose);
    H5Tset_size(type, std::max<size_t>(1, value.size()));
    H5Tset_strpad(type, H5T_STR_NULLPAD);
    Hid space(H5Screate(H5S_SCALAR), H5Sclose);
    Hid attr(H5Acreate2(loc, name, type, space, H5P_DEFAULT, H5P_DEFAULT), H5Aclose);
    require(attr.ok(), ErrorCode::io_failure, std::string("cannot create attribute ") + name);
    std::string buf = value.empty() ? std::string(1, '\0') : value;
    require(H5Awrite(attr, type, buf.data()) >= 0, ErrorCode::io_failure,
            std::string("cannot write attribute ") + name);
}

std::string read_string_attr(hid_t loc, const char* name) {
    if (H5Aexists(loc, name) <= 0)
        fail(ErrorCode::missing_attribute, std::string("attribute not found: ") + name);
    Hid attr(H5Aopen(loc, name, H5P_DEFAULT), H5Aclose);
    require(attr.ok(), ErrorCode::io_failure, std::string("cannot open attribute ") + name);
    Hid type(H5Aget_type(attr), H5Tclose);
    if (H5Tis_variable_str(type) > 0) {
        char* p = nullptr;
        Hid mem(H5Tcopy(H5T_C_S1), H5Tclose);
        H5Tset_size(mem, H5T_VARIABLE);
        require(H5Aread(attr, mem, &p) >= 0, ErrorCode::io_failure,
                std::string("cannot read attribute ") + name);
        std::string out = p ? p : "";
        H5free_memory(p);
        return out;
    }
    const size_t n = H5Tget_size(type);
    std::vector<char> buf(n + 1, '\0');
    require(H5Aread(attr, type, buf.data()) >= 0, ErrorCode::io_failure,
            std::string("cannot read attribute ") + name);
    return std::string(buf.data(), strnlen(buf.data(), n));
}

int read_int_attr(hid_t loc, const char* name) {
    if (H5Aexists(loc, name) <= 0)
        fail(ErrorCode::missing_attribute, std::string("attribute not found: ") + name);
    Hid attr(H5Aopen(loc, name, H5P_DEFAULT), H5Aclose);
    require(attr.ok(), ErrorCode::io_failure, std::string("cannot open attribute ") + name);
    int v = 0;
    require(H5Aread(attr, H5T_NATIVE_INT, &v) >= 0, ErrorCode::io_failure,
            std::string("cannot read attribute ") + name);
    return v;
}

// Contiguous dataset with timestamp tracking off, so identical content
// produces identical bytes.
void write_dataset(hid_t file, const char* name, hid_t disk_type, hid_t mem_type,
                   int rank, const hsize_t* dims, const void* data) {
    Hid space(H5Screate_simple(rank, dims, nullptr), H5Sclose);
    Hid dcpl(H5Pcreate(H5P_DATASET_CREATE), H5Pclose);
    H5Pset_obj_track_times(dcpl, false);
    H5Pset_layout(dcpl, H5D_CONTIGUOUS);
    Hid dset(H5Dcreate2(file, name, disk_type, space, H5P_DEFAULT, dcpl, H5P_DEFAULT),
             H5Dclose);
    require(dset.ok(), ErrorCode::io_failure, std::string("cannot create dataset ") + name);
    require(H5Dwrite(dset, mem_type, H5S_ALL, H5S_ALL, H5P_DEFAULT, data) >= 0,
            ErrorCode::io_failure, std::string("cannot write dataset ") + name);
}

std::vector<hsize_t> dataset_dims(hid_t dset, const char* name) {
    Hid space(H5Dget_space(dset), H5Sclose);
    const int rank = H5Sget_simple_extent_ndims(space);
    require(rank >= 0, ErrorCode::io_failure, std::string("bad dataspace for ") + name);
    std::vector<hsize_t> dims(static_cast<size_t>(rank));
    H5Sget_simple_extent_dims(space, dims.data(), nullptr);
    return dims;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

}  // namespace

FeatureBag read_bag(const std::string& path) {
    RowMajorF features;
    RowMajorF coords;
    std::vector<int8_t> patch_class;
    FeatureBag bag;
    int64_t n = 0;
    int64_t d = 0;
    {
        std::lock_guard<std::mutex> lock(hdf5_mutex);
        SilenceHdf5Errors quiet;
        Hid file(H5Fopen(path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT), H5Fclose);
        require(file.ok(), ErrorCode::io_failure, "cannot open bag file: " + path);

        auto open_dataset = [&](const char* name) {
            if (H5Lexists(file, name, H5P_DEFAULT) <= 0)
                fail(ErrorCode::missing_dataset,
                     std::string("dataset not found: ") + name + " in " + path);
            return Hid(H5Dopen2(file, name, H5P_DEFAULT), H5Dclose);
        };

        Hid d_features = open_dataset("features");
        Hid d_coords = open_dataset("coords");
        Hid d_class = open_dataset("patch_class");

        const auto f_dims = dataset_dims(d_features, "features");
        const auto c_dims = dataset_dims(d_coords, "coords");
        const auto p_dims = dataset_dims(d_class, "patch_class");

        require(f_dims.size() == 2, ErrorCode::shape_mismatch,
                "features must be 2-D in " + path);
        require(c_dims.size() == 2 && c_dims[1] == 2, ErrorCode::shape_mismatch,
                "coords must be N x 2 in " + path);
        require(p_dims.size() == 1, ErrorCode::shape_mismatch,
                "patch_class must be 1-D in " + path);

        n = static_cast<int64_t>(f_dims[0]);
        d = static_cast<int64_t>(f_dims[1]);
        require(static_cast<int64_t>(c_dims[0]) == n && static_cast<int64_t>(p_dims[0]) == n,
                ErrorCode::shape_mismatch, "row counts disagree across datasets in " + path);
        require(d >= 1, ErrorCode::shape_mismatch,
                "features must have at least one column in " + path);

        features.resize(n, d);
        coords.resize(n, 2);
        patch_class.resize(static_cast<size_t>(n));
        if (n > 0) {
            require(H5Dread(d_features, H5T_NATIVE_FLOAT, H5S_ALL, H5S_ALL, H5P_DEFAULT,
                            features.data()) >= 0,
                    ErrorCode::io_failure, "cannot read features in " + path);
            require(H5Dread(d_coords, H5T_NATIVE_FLOAT, H5S_ALL, H5S_ALL, H5P_DEFAULT,
                            coords.data()) >= 0,
                    ErrorCode::io_failure, "cannot read coords in " + path);
            require(H5Dread(d_class, H5T_NATIVE_INT8, H5S_ALL, H5S_ALL, H5P_DEFAULT,
                            patch_class.data()) >= 0,
                    ErrorCode::io_failure, "cannot read patch_class in " + path);
        }

        bag.slide_id = read_string_attr(file, "slide_id");
        bag.patient_id = read_string_attr(file, "patient_id");
        bag.center_id = read_string_attr(file, "center_id");
        bag.target = read_int_attr(file, "target");
    }
    require(bag.target == 0 || bag.target == 1, ErrorCode::bad_value,
            "target attribute must be 0 or 1 in " + path);

    // Drop any row with a non-finite feature value, preserving order.
    std::vector<int64_t> keep;
    keep.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        bool finite = true;
        for (int64_t j = 0; j < d; ++j) {
            if (!std::isfinite(features(i, j))) {
                finite = false;
                break;
            }
        }
        if (finite) keep.push_back(i);
    }
    require(!keep.empty(), ErrorCode::empty_after_filter,
            "no finite feature rows left in " + path);

    bag.removed_rows = n - static_cast<int64_t>(keep.size());
    bag.features.resize(static_cast<int64_t>(keep.size()), d);
    bag.coords.resize(static_cast<int64_t>(keep.size()), 2);
    bag.patch_class.resize(keep.size());
    for (size_t r = 0; r < keep.size(); ++r) {
        const int8_t cls = patch_class[static_cast<size_t>(keep[r])];
        require(cls >= 0 && cls <= 2, ErrorCode::bad_value,
                "patch_class values must be in {0,1,2} in " + path);
        bag.features.row(static_cast<int64_t>(r)) = features.row(keep[r]);
        bag.coords.row(static_cast<int64_t>(r)) = coords.row(keep[r]);
        bag.patch_class[r] = cls;
    }
    return bag;
}

void write_bag(const FeatureBag& bag, const std::string& path) {
    const auto n = bag.features.rows();
    const auto d = bag.features.cols();
    require(n >= 1, ErrorCode::bad_argument, "refusing to write an empty bag");
    require(bag.coords.rows() == n && static_cast<int64_t>(bag.patch_class.size()) == n,
            ErrorCode::shape_mismatch, "bag row counts disagree");

    std::lock_guard<std::mutex> lock(hdf5_mutex);
    SilenceHdf5Errors quiet;
    Hid fcpl(H5Pcreate(H5P_FILE_CREATE), H5Pclose);
    Hid file(H5Fcreate(path.c_str(), H5F_ACC_TRUNC, fcpl, H5P_DEFAULT), H5Fclose);
    require(file.ok(), ErrorCode::io_failure, "cannot create bag file: " + path);

    const RowMajorF features = bag.features;
    const RowMajorF coords = bag.coords;
    const hsize_t f_dims[2] = {static_cast<hsize_t>(n), static_cast<hsize_t>(d)};
    const hsize_t c_dims[2] = {static_cast<hsize_t>(n), 2};
    const hsize_t p_dims[1] = {static_cast<hsize_t>(n)};

    write_dataset(file, "features", H5T_IEEE_F32LE, H5T_NATIVE_FLOAT, 2, f_dims,
                  features.data());
    write_dataset(file, "coords", H5T_IEEE_F32LE, H5T_NATIVE_FLOAT, 2, c_dims, coords.data());
    write_dataset(file, "patch_class", H5T_STD_I8LE, H5T_NATIVE_INT8, 1, p_dims,
                  bag.patch_class.data());

    write_string_attr(file, "slide_id", bag.slide_id);
    write_string_attr(file, "patient_id", bag.patient_id);
    write_string_attr(file, "center_id", bag.center_id);
    const int8_t target = static_cast<int8_t>(bag.target);
    Hid space(H5Screate(H5S_SCALAR), H5Sclose);
    Hid attr(H5Acreate2(file, "target", H5T_STD_I8LE, space, H5P_DEFAULT, H5P_DEFAULT),
             H5Aclose);
    require(attr.ok(), ErrorCode::io_failure, "cannot create target attribute");
    require(H5Awrite(attr, H5T_NATIVE_INT8, &target) >= 0, ErrorCode::io_failure,
            "cannot write target attribute");
}

FeatureBag filter_tumor(const FeatureBag& bag, bool enabled) {
    if (!enabled) return bag;
    std::vector<int64_t> keep;
    keep.reserve(bag.patch_class.size());
    for (size_t i = 0; i < bag.patch_class.size(); ++i)
        if (bag.patch_class[i] == static_cast<int8_t>(PatchClass::tumor))
            keep.push_back(static_cast<int64_t>(i));
    require(!keep.empty(), ErrorCode::empty_after_filter,
            "no tumor rows in slide " + bag.slide_id);

    FeatureBag out;
    out.slide_id = bag.slide_id;
    out.patient_id = bag.patient_id;
    out.center_id = bag.center_id;
    out.target = bag.target;
    out.removed_rows = bag.removed_rows;
    out.features.resize(static_cast<int64_t>(keep.size()), bag.features.cols());
    out.coords.resize(static_cast<int64_t>(keep.size()), 2);
    out.patch_class.assign(keep.size(), static_cast<int8_t>(PatchClass::tumor));
    for (size_t r = 0; r < keep.size(); ++r) {
        out.features.row(static_cast<int64_t>(r)) = bag.features.row(keep[r]);
        out.coords.row(static_cast<int64_t>(r)) = bag.coords.row(keep[r]);
    }
    return out;
}

CohortManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::io_failure, "cannot open manifest: " + path);

    std::string header;
    require(static_cast<bool>(std::getline(in, header)), ErrorCode::parse_error,
            "manifest is empty: " + path);
    header = strip_cr(header);

    bool with_fold = false;
    if (header == "slide_id,patient_id,center_id,target,file_path,fold_id") {
        with_fold = true;
    } else {
        require(header == "slide_id,patient_id,center_id,target,file_path",
                ErrorCode::parse_error, "unexpected manifest header: " + header);
    }

    const fs::path base = fs::path(path).parent_path();
    CohortManifest manifest;
    std::map<std::string, int> patient_targets;
    std::map<std::string, bool> seen_slides;

    std::string line;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        const size_t expected = with_fold ? 6u : 5u;
        require(fields.size() == expected, ErrorCode::parse_error,
                "manifest line " + std::to_string(line_no) + ": expected " +
                    std::to_string(expected) + " fields");

        ManifestRow row;
        row.slide_id = fields[0];
        row.patient_id = fields[1];
        row.center_id = fields[2];
        try {
            row.target = std::stoi(fields[3]);
        } catch (const std::exception&) {
            fail(ErrorCode::parse_error,
                 "manifest line " + std::to_string(line_no) + ": bad target '" + fields[3] + "'");
        }
        require(row.target == 0 || row.target == 1, ErrorCode::parse_error,
                "manifest line " + std::to_string(line_no) + ": target must be 0 or 1");

        fs::path p(fields[4]);
        if (p.is_relative()) p = base / p;
        row.file_path = p.string();

        if (with_fold) {
            try {
                row.fold_id = std::stoi(fields[5]);
            } catch (const std::exception&) {
                fail(ErrorCode::parse_error,
                     "manifest line " + std::to_string(line_no) + ": bad fold_id");
            }
            require(row.fold_id >= 0, ErrorCode::parse_error,
                    "manifest line " + std::to_string(line_no) + ": fold_id must be >= 0");
        }

        require(!seen_slides.count(row.slide_id), ErrorCode::duplicate_slide,
                "duplicate slide_id: " + row.slide_id);
        seen_slides[row.slide_id] = true;

        auto it = patient_targets.find(row.patient_id);
        if (it == patient_targets.end()) {
            patient_targets[row.patient_id] = row.target;
        } else {
            require(it->second == row.target, ErrorCode::conflicting_target,
                    "patient " + row.patient_id + " has conflicting targets");
        }

        std::ifstream probe(row.file_path, std::ios::binary);
        require(probe.good(), ErrorCode::not_found,
                "bag file not readable: " + row.file_path);

        manifest.rows.push_back(std::move(row));
    }
    require(!manifest.rows.empty(), ErrorCode::parse_error, "manifest has no rows: " + path);
    return manifest;
}

void write_manifest(const CohortManifest& manifest, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), ErrorCode::io_failure, "cannot write manifest: " + path);
    const bool with_fold = manifest.has_folds();
    out << "slide_id,patient_id,center_id,target,file_path";
    if (with_fold) out << ",fold_id";
    out << "\n";
    for (const auto& r : manifest.rows) {
        out << r.slide_id << ',' << r.patient_id << ',' << r.center_id << ',' << r.target
            << ',' << r.file_path;
        if (with_fold) out << ',' << r.fold_id;
        out << "\n";
    }
    require(out.good(), ErrorCode::io_failure, "write failed: " + path);
}

}  // namespace dassl
