#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ope {

class ParseError : public std::runtime_error {
public:
    ParseError(int line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

// Sparse classification dataset in LIBSVM row form. Feature indices are
// 0-based dense positions internally; files use the 1-based convention.
struct ClassificationDataset {
    struct Row {
        int label = 0;  // 0-based class id after remapping
        std::vector<std::pair<int, double>> features;  // sorted by index
    };

    std::vector<Row> rows;
    int n_features = 0;
    int n_classes = 0;
    std::vector<long long> label_map;  // class id -> original label, first-seen order

    std::vector<double> dense_row(int i) const;
    int size() const { return static_cast<int>(rows.size()); }
};

// Parses `<label> <idx>:<val> ...` lines; indices strictly increasing per
// line. n_features is inferred as the max index seen and can be raised (never
// lowered) with min_features.
ClassificationDataset parse_libsvm(std::istream& in, int min_features = 0);
ClassificationDataset parse_libsvm_string(const std::string& text, int min_features = 0);
ClassificationDataset parse_libsvm_file(const std::string& path, int min_features = 0);

// Writes rows back in file convention (original labels, 1-based indices,
// shortest round-trip decimals). Zero-valued entries are dropped.
void serialize_libsvm(const ClassificationDataset& ds, std::ostream& out);
std::string serialize_libsvm_string(const ClassificationDataset& ds);

struct Standardization {
    std::vector<double> mean;
    std::vector<double> scale;  // 0 marks a constant column (output forced to 0)

    std::vector<double> apply(const std::vector<double>& dense) const;
};

// Per-column zero mean / unit variance over the dense view; constant columns
// map to all-zeros. Returns the transformed dataset and the parameters.
std::pair<ClassificationDataset, Standardization> standardize_features(
    const ClassificationDataset& ds);

// Deterministic Gaussian-blob dataset (one spherical cluster per class).
// Stands in for benchmark files when none are on disk.
ClassificationDataset make_gaussian_blobs(int n_rows, int n_features, int n_classes,
                                          double class_sep, std::uint64_t seed);

}  // namespace ope
