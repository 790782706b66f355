#include "nbvae/sparse_data.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace nbvae {

SparseCountMatrix::SparseCountMatrix(std::size_t n_rows, std::size_t n_cols)
    : n_rows_(n_rows), n_cols_(n_cols), rows_(n_rows), row_totals_(n_rows, 0) {}

void SparseCountMatrix::recompute_totals() {
    total_ = 0;
    for (std::size_t j = 0; j < n_rows_; ++j) {
        std::uint64_t t = 0;
        for (const auto& e : rows_[j]) t += e.count;
        row_totals_[j] = t;
        total_ += t;
    }
}

SparseCountMatrix matrix_from_rows(std::size_t n_rows, std::size_t n_cols,
                                   std::vector<std::vector<SparseCountMatrix::Entry>> rows) {
    SparseCountMatrix m(n_rows, n_cols);
    m.rows_ = std::move(rows);
    m.recompute_totals();
    return m;
}

SparseCountMatrix SparseCountMatrix::from_triplets(
    std::size_t n_rows, std::size_t n_cols,
    std::span<const std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>> triplets) {
    std::vector<std::map<std::uint32_t, std::uint64_t>> acc(n_rows);
    for (const auto& [r, c, v] : triplets) {
        if (r >= n_rows || c >= n_cols)
            throw LoadError("triplet index out of range: (" + std::to_string(r) + ", " + std::to_string(c) + ")");
        if (v == 0) throw LoadError("triplet count must be positive");
        acc[r][c] += v;
    }
    std::vector<std::vector<Entry>> rows(n_rows);
    for (std::size_t j = 0; j < n_rows; ++j) {
        rows[j].reserve(acc[j].size());
        for (const auto& [c, v] : acc[j]) {
            if (v > std::numeric_limits<std::uint32_t>::max())
                throw LoadError("summed count overflows 32 bits at column " + std::to_string(c));
            rows[j].push_back({c, static_cast<std::uint32_t>(v)});
        }
    }
    return matrix_from_rows(n_rows, n_cols, std::move(rows));
}

std::size_t SparseCountMatrix::nnz() const {
    std::size_t n = 0;
    for (const auto& r : rows_) n += r.size();
    return n;
}

void SparseCountMatrix::dense_row(std::size_t j, std::span<double> out) const {
    if (out.size() != n_cols_) throw DimensionError("dense_row: output span has wrong length");
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& e : rows_[j]) out[e.col] = static_cast<double>(e.count);
}

bool SparseCountMatrix::all_counts_one() const {
    for (const auto& r : rows_)
        for (const auto& e : r)
            if (e.count != 1) return false;
    return true;
}

BinaryMatrix::BinaryMatrix(SparseCountMatrix counts) : counts_(std::move(counts)) {
    if (!counts_.all_counts_one())
        throw ContractError("BinaryMatrix: all stored counts must equal 1");
}

BinaryMatrix BinaryMatrix::from_counts_clamped(const SparseCountMatrix& counts, std::size_t* clamped) {
    std::size_t n_clamped = 0;
    std::vector<std::vector<SparseCountMatrix::Entry>> rows(counts.n_rows());
    for (std::size_t j = 0; j < counts.n_rows(); ++j) {
        rows[j].reserve(counts.row(j).size());
        for (const auto& e : counts.row(j)) {
            if (e.count > 1) ++n_clamped;
            rows[j].push_back({e.col, 1});
        }
    }
    if (clamped) *clamped = n_clamped;
    return BinaryMatrix(matrix_from_rows(counts.n_rows(), counts.n_cols(), std::move(rows)));
}

void FeatureMatrix::dense_row(std::size_t j, std::span<double> out) const {
    if (out.size() != n_dims) throw DimensionError("dense_row: output span has wrong length");
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& [i, v] : rows[j]) out[i] = v;
}

void FeatureMatrix::validate() const {
    if (rows.size() != n_rows) throw ContractError("FeatureMatrix: row count mismatch");
    for (const auto& r : rows) {
        std::uint32_t prev = 0;
        bool first = true;
        for (const auto& [i, v] : r) {
            if (i >= n_dims) throw ContractError("FeatureMatrix: feature index out of range");
            if (!first && i <= prev) throw ContractError("FeatureMatrix: indices must strictly increase");
            if (!std::isfinite(v)) throw ContractError("FeatureMatrix: non-finite feature value");
            prev = i;
            first = false;
        }
    }
}

namespace {

[[noreturn]] void load_fail(const std::filesystem::path& path, std::size_t line_no, const std::string& what) {
    throw LoadError(path.string() + ":" + std::to_string(line_no) + ": " + what);
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open " + path.string());
    return in;
}

}  // namespace

SparseCountMatrix load_bow(const std::filesystem::path& path) {
    std::ifstream in = open_or_throw(path);
    std::string line;
    std::size_t line_no = 0;

    std::uint64_t n_rows = 0, n_cols = 0, n_triplets = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream hs(line);
        if (!(hs >> n_rows >> n_cols >> n_triplets)) load_fail(path, line_no, "malformed header, expected 'N V NNZ'");
        std::string extra;
        if (hs >> extra) load_fail(path, line_no, "trailing tokens after header");
        break;
    }
    if (line_no == 0) throw LoadError(path.string() + ": empty file");

    std::vector<std::map<std::uint32_t, std::uint64_t>> acc(n_rows);
    std::uint64_t seen = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        long long doc = 0, word = 0, count = 0;
        if (!(ls >> doc >> word >> count)) load_fail(path, line_no, "malformed triplet line");
        std::string extra;
        if (ls >> extra) load_fail(path, line_no, "trailing tokens on triplet line");
        if (doc < 1 || static_cast<std::uint64_t>(doc) > n_rows)
            load_fail(path, line_no, "document id " + std::to_string(doc) + " outside [1, " + std::to_string(n_rows) + "]");
        if (word < 1 || static_cast<std::uint64_t>(word) > n_cols)
            load_fail(path, line_no, "word id " + std::to_string(word) + " outside [1, " + std::to_string(n_cols) + "]");
        if (count < 1) load_fail(path, line_no, "count must be positive, got " + std::to_string(count));
        acc[static_cast<std::size_t>(doc - 1)][static_cast<std::uint32_t>(word - 1)] +=
            static_cast<std::uint64_t>(count);
        ++seen;
    }
    if (seen != n_triplets)
        throw LoadError(path.string() + ": header declares " + std::to_string(n_triplets) + " triplets, found " + std::to_string(seen));

    std::vector<std::vector<SparseCountMatrix::Entry>> rows(n_rows);
    for (std::size_t j = 0; j < n_rows; ++j) {
        rows[j].reserve(acc[j].size());
        for (const auto& [c, v] : acc[j]) {
            if (v > std::numeric_limits<std::uint32_t>::max())
                throw LoadError(path.string() + ": summed count overflows 32 bits in row " + std::to_string(j + 1));
            rows[j].push_back({c, static_cast<std::uint32_t>(v)});
        }
    }
    return matrix_from_rows(n_rows, n_cols, std::move(rows));
}

BinaryMatrix load_binary(const std::filesystem::path& path) {
    SparseCountMatrix counts = load_bow(path);
    std::size_t clamped = 0;
    BinaryMatrix b = BinaryMatrix::from_counts_clamped(counts, &clamped);
    if (clamped > 0)
        std::cerr << "warning: " << path.string() << ": clamped " << clamped << " counts > 1 to 1\n";
    return b;
}

void save_bow(const std::filesystem::path& path, const SparseCountMatrix& m) {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write " + path.string());
    out << m.n_rows() << ' ' << m.n_cols() << ' ' << m.nnz() << '\n';
    for (std::size_t j = 0; j < m.n_rows(); ++j)
        for (const auto& e : m.row(j))
            out << (j + 1) << ' ' << (e.col + 1) << ' ' << e.count << '\n';
    if (!out) throw LoadError("write failed for " + path.string());
}

std::pair<FeatureMatrix, BinaryMatrix> load_multilabel(const std::filesystem::path& path) {
    std::ifstream in = open_or_throw(path);
    std::string line;
    std::size_t line_no = 0;

    std::uint64_t n_rows = 0, n_dims = 0, n_labels = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream hs(line);
        if (!(hs >> n_rows >> n_dims >> n_labels)) load_fail(path, line_no, "malformed header, expected 'N D L'");
        break;
    }
    if (line_no == 0) throw LoadError(path.string() + ": empty file");

    FeatureMatrix features;
    features.n_rows = n_rows;
    features.n_dims = n_dims;
    features.rows.resize(n_rows);
    std::vector<std::vector<SparseCountMatrix::Entry>> label_rows(n_rows);

    std::size_t row = 0;
    while (std::getline(in, line) && row < n_rows) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos && line.empty()) continue;

        std::istringstream ls(line);
        std::string tok;
        bool first_token = true;
        std::vector<std::uint32_t> labels;
        auto& feats = features.rows[row];

        while (ls >> tok) {
            auto colon = tok.find(':');
            if (first_token && colon == std::string::npos) {
                // comma-separated label list
                std::istringstream lab(tok);
                std::string piece;
                while (std::getline(lab, piece, ',')) {
                    if (piece.empty()) load_fail(path, line_no, "empty label id in list");
                    long long l = 0;
                    try {
                        l = std::stoll(piece);
                    } catch (const std::exception&) {
                        load_fail(path, line_no, "malformed label id '" + piece + "'");
                    }
                    if (l < 0 || static_cast<std::uint64_t>(l) >= n_labels)
                        load_fail(path, line_no, "label id " + std::to_string(l) + " >= declared label count " + std::to_string(n_labels));
                    labels.push_back(static_cast<std::uint32_t>(l));
                }
            } else {
                if (colon == std::string::npos) load_fail(path, line_no, "expected 'index:value', got '" + tok + "'");
                long long idx = 0;
                double val = 0;
                try {
                    idx = std::stoll(tok.substr(0, colon));
                    val = std::stod(tok.substr(colon + 1));
                } catch (const std::exception&) {
                    load_fail(path, line_no, "malformed feature token '" + tok + "'");
                }
                if (idx < 0 || static_cast<std::uint64_t>(idx) >= n_dims)
                    load_fail(path, line_no, "feature index " + std::to_string(idx) + " >= declared dimension " + std::to_string(n_dims));
                if (!std::isfinite(val)) load_fail(path, line_no, "non-finite feature value");
                if (!feats.empty() && static_cast<std::uint32_t>(idx) <= feats.back().first)
                    load_fail(path, line_no, "feature indices must strictly increase");
                feats.emplace_back(static_cast<std::uint32_t>(idx), val);
            }
            first_token = false;
        }

        std::sort(labels.begin(), labels.end());
        labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
        for (std::uint32_t l : labels) label_rows[row].push_back({l, 1});
        ++row;
    }
    if (row != n_rows)
        throw LoadError(path.string() + ": header declares " + std::to_string(n_rows) + " rows, found " + std::to_string(row));

    features.validate();
    BinaryMatrix labels(matrix_from_rows(n_rows, n_labels, std::move(label_rows)));
    return {std::move(features), std::move(labels)};
}

HeldoutSplit split_heldout(const SparseCountMatrix& m, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ContractError("split_heldout: fraction must lie strictly in (0, 1)");

    std::vector<std::vector<SparseCountMatrix::Entry>> obs_rows(m.n_rows());
    std::vector<std::vector<SparseCountMatrix::Entry>> held_rows(m.n_rows());
    for (std::size_t j = 0; j < m.n_rows(); ++j) {
        RandomStream rng(derive_seed(seed, j));
        for (const auto& e : m.row(j)) {
            std::uint32_t held = 0;
            for (std::uint32_t t = 0; t < e.count; ++t)
                if (rng.uniform() < fraction) ++held;
            if (held > 0) held_rows[j].push_back({e.col, held});
            if (held < e.count) obs_rows[j].push_back({e.col, e.count - held});
        }
    }
    HeldoutSplit split{matrix_from_rows(m.n_rows(), m.n_cols(), std::move(obs_rows)),
                       matrix_from_rows(m.n_rows(), m.n_cols(), std::move(held_rows)), seed, fraction};
    return split;
}

std::vector<std::vector<std::size_t>> minibatch_indices(std::size_t n_rows, std::size_t batch_size,
                                                        std::uint64_t seed) {
    if (batch_size == 0) throw ContractError("minibatches: batch_size must be >= 1");
    std::vector<std::size_t> perm(n_rows);
    for (std::size_t i = 0; i < n_rows; ++i) perm[i] = i;
    RandomStream rng(seed);
    for (std::size_t i = n_rows; i > 1; --i) {
        std::size_t k = static_cast<std::size_t>(rng.uniform_int(i));
        std::swap(perm[i - 1], perm[k]);
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n_rows; start += batch_size) {
        std::size_t end = std::min(n_rows, start + batch_size);
        batches.emplace_back(perm.begin() + start, perm.begin() + end);
    }
    return batches;
}

}  // namespace nbvae
