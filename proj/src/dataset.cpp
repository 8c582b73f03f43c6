#include "ope/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "ope/rng.hpp"
#include "ope/stats.hpp"

namespace ope {

namespace {

bool parse_ll(std::string_view tok, long long& out) {
    if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

bool parse_d(std::string_view tok, double& out) {
    if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last && std::isfinite(out);
}

}  // namespace

std::vector<double> ClassificationDataset::dense_row(int i) const {
    std::vector<double> out(static_cast<std::size_t>(n_features), 0.0);
    for (const auto& [idx, val] : rows[static_cast<std::size_t>(i)].features) {
        out[static_cast<std::size_t>(idx)] = val;
    }
    return out;
}

ClassificationDataset parse_libsvm(std::istream& in, int min_features) {
    ClassificationDataset ds;
    std::map<long long, int> label_ids;
    std::string line;
    int line_no = 0;
    int max_index = 0;

    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tok;
        if (!(ls >> tok)) continue;  // blank line

        long long raw_label;
        if (!parse_ll(tok, raw_label)) throw ParseError(line_no, "malformed label '" + tok + "'");
        auto [it, inserted] = label_ids.emplace(raw_label, static_cast<int>(ds.label_map.size()));
        if (inserted) ds.label_map.push_back(raw_label);

        ClassificationDataset::Row row;
        row.label = it->second;
        int prev_index = 0;
        while (ls >> tok) {
            const auto colon = tok.find(':');
            if (colon == std::string::npos || colon == 0 || colon + 1 == tok.size()) {
                throw ParseError(line_no, "malformed feature token '" + tok + "'");
            }
            long long idx;
            if (!parse_ll(std::string_view(tok).substr(0, colon), idx) || idx < 1) {
                throw ParseError(line_no, "malformed feature index in '" + tok + "'");
            }
            if (idx <= prev_index) {
                throw ParseError(line_no, "feature indices must be strictly increasing");
            }
            double val;
            if (!parse_d(std::string_view(tok).substr(colon + 1), val)) {
                throw ParseError(line_no, "non-numeric feature value in '" + tok + "'");
            }
            prev_index = static_cast<int>(idx);
            max_index = std::max(max_index, prev_index);
            row.features.emplace_back(static_cast<int>(idx) - 1, val);
        }
        ds.rows.push_back(std::move(row));
    }

    ds.n_features = std::max(max_index, min_features);
    ds.n_classes = static_cast<int>(ds.label_map.size());
    return ds;
}

ClassificationDataset parse_libsvm_string(const std::string& text, int min_features) {
    std::istringstream in(text);
    return parse_libsvm(in, min_features);
}

ClassificationDataset parse_libsvm_file(const std::string& path, int min_features) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return parse_libsvm(in, min_features);
}

void serialize_libsvm(const ClassificationDataset& ds, std::ostream& out) {
    for (const auto& row : ds.rows) {
        out << ds.label_map[static_cast<std::size_t>(row.label)];
        for (const auto& [idx, val] : row.features) {
            if (val == 0.0) continue;
            out << ' ' << (idx + 1) << ':' << format_double(val);
        }
        out << '\n';
    }
}

std::string serialize_libsvm_string(const ClassificationDataset& ds) {
    std::ostringstream out;
    serialize_libsvm(ds, out);
    return out.str();
}

std::vector<double> Standardization::apply(const std::vector<double>& dense) const {
    std::vector<double> out(dense.size(), 0.0);
    for (std::size_t j = 0; j < dense.size(); ++j) {
        out[j] = scale[j] > 0.0 ? (dense[j] - mean[j]) / scale[j] : 0.0;
    }
    return out;
}

std::pair<ClassificationDataset, Standardization> standardize_features(
    const ClassificationDataset& ds) {
    if (ds.rows.empty()) throw std::invalid_argument("standardize_features: empty dataset");
    const std::size_t d = static_cast<std::size_t>(ds.n_features);
    const double n = static_cast<double>(ds.size());

    std::vector<double> sum(d, 0.0), sumsq(d, 0.0);
    for (int i = 0; i < ds.size(); ++i) {
        for (const auto& [idx, val] : ds.rows[static_cast<std::size_t>(i)].features) {
            sum[static_cast<std::size_t>(idx)] += val;
            sumsq[static_cast<std::size_t>(idx)] += val * val;
        }
    }

    Standardization st;
    st.mean.resize(d);
    st.scale.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        st.mean[j] = sum[j] / n;
        // Population sd; a single row or constant column gives 0 and is mapped
        // to the all-zeros convention.
        const double var = std::max(0.0, sumsq[j] / n - st.mean[j] * st.mean[j]);
        const double sd = std::sqrt(var);
        st.scale[j] = sd > 1e-12 ? sd : 0.0;
    }

    ClassificationDataset out;
    out.n_features = ds.n_features;
    out.n_classes = ds.n_classes;
    out.label_map = ds.label_map;
    out.rows.reserve(ds.rows.size());
    for (int i = 0; i < ds.size(); ++i) {
        ClassificationDataset::Row row;
        row.label = ds.rows[static_cast<std::size_t>(i)].label;
        const auto dense = st.apply(ds.dense_row(i));
        for (std::size_t j = 0; j < d; ++j) {
            if (dense[j] != 0.0) row.features.emplace_back(static_cast<int>(j), dense[j]);
        }
        out.rows.push_back(std::move(row));
    }
    return {std::move(out), std::move(st)};
}

ClassificationDataset make_gaussian_blobs(int n_rows, int n_features, int n_classes,
                                          double class_sep, std::uint64_t seed) {
    if (n_rows < n_classes || n_features < 1 || n_classes < 2) {
        throw std::invalid_argument("make_gaussian_blobs: bad shape");
    }
    Rng rng(seed);
    std::vector<std::vector<double>> centers(static_cast<std::size_t>(n_classes));
    for (auto& c : centers) {
        c.resize(static_cast<std::size_t>(n_features));
        for (auto& v : c) v = class_sep * rng.normal();
    }

    ClassificationDataset ds;
    ds.n_features = n_features;
    ds.n_classes = n_classes;
    for (int k = 0; k < n_classes; ++k) ds.label_map.push_back(k);
    ds.rows.reserve(static_cast<std::size_t>(n_rows));
    for (int i = 0; i < n_rows; ++i) {
        const int k = i % n_classes;  // balanced classes
        ClassificationDataset::Row row;
        row.label = k;
        for (int j = 0; j < n_features; ++j) {
            row.features.emplace_back(j, centers[static_cast<std::size_t>(k)]
                                             [static_cast<std::size_t>(j)] + rng.normal());
        }
        ds.rows.push_back(std::move(row));
    }
    return ds;
}

}  // namespace ope
