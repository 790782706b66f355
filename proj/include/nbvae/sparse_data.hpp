#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "nbvae/common.hpp"

namespace nbvae {

/// Documents/users as sparse integer rows over a vocabulary/item set.
/// Immutable after construction; per-row entries are sorted by column with
/// strictly increasing indices and counts >= 1 (zeros are never stored).
/// Counts are 32-bit, row totals and the grand total 64-bit.
class SparseCountMatrix {
  public:
    struct Entry {
        std::uint32_t col;
        std::uint32_t count;
        bool operator==(const Entry&) const = default;
    };

    SparseCountMatrix(std::size_t n_rows, std::size_t n_cols);

    /// Builds from (row, col, count) triplets; duplicates sum. Triplets with
    /// out-of-range indices or zero counts throw LoadError.
    static SparseCountMatrix from_triplets(
        std::size_t n_rows, std::size_t n_cols,
        std::span<const std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>> triplets);

    std::size_t n_rows() const { return n_rows_; }
    std::size_t n_cols() const { return n_cols_; }
    std::size_t nnz() const;

    const std::vector<Entry>& row(std::size_t j) const { return rows_[j]; }
    std::uint64_t row_total(std::size_t j) const { return row_totals_[j]; }
    std::uint64_t total() const { return total_; }

    /// Writes row j as a dense double vector of length n_cols into out.
    void dense_row(std::size_t j, std::span<double> out) const;

    bool all_counts_one() const;

    bool operator==(const SparseCountMatrix&) const = default;

  private:
    std::size_t n_rows_ = 0;
    std::size_t n_cols_ = 0;
    std::vector<std::vector<Entry>> rows_;
    std::vector<std::uint64_t> row_totals_;
    std::uint64_t total_ = 0;

    void recompute_totals();
    friend SparseCountMatrix matrix_from_rows(std::size_t, std::size_t,
                                              std::vector<std::vector<Entry>>);
};

/// A SparseCountMatrix whose stored counts are all exactly 1.
class BinaryMatrix {
  public:
    /// Validates the all-ones invariant; throws ContractError otherwise.
    explicit BinaryMatrix(SparseCountMatrix counts);

    /// Clamps counts > 1 down to 1. Returns the number of clamped entries
    /// (callers warn when nonzero).
    static BinaryMatrix from_counts_clamped(const SparseCountMatrix& counts,
                                            std::size_t* clamped = nullptr);

    const SparseCountMatrix& counts() const { return counts_; }
    std::size_t n_rows() const { return counts_.n_rows(); }
    std::size_t n_cols() const { return counts_.n_cols(); }

  private:
    SparseCountMatrix counts_;
};

/// Per-row sparse real-valued feature vectors.
struct FeatureMatrix {
    std::size_t n_rows = 0;
    std::size_t n_dims = 0;
    std::vector<std::vector<std::pair<std::uint32_t, double>>> rows;

    void dense_row(std::size_t j, std::span<double> out) const;
    void validate() const;
};

/// Token-level split of a count matrix: observed + heldout reconstruct the
/// source exactly and the split is a pure function of (source, seed,
/// fraction).
struct HeldoutSplit {
    SparseCountMatrix observed;
    SparseCountMatrix heldout;
    std::uint64_t seed = 0;
    double fraction = 0.0;
};

/// Loads the "N V NNZ" + "docID wordID count" triplet text format
/// (1-based IDs on disk, 0-based in memory). Duplicate triplets sum.
SparseCountMatrix load_bow(const std::filesystem::path& path);

/// Same format, counts > 1 clamped to 1 with a warning on stderr.
BinaryMatrix load_binary(const std::filesystem::path& path);

/// Writes the triplet format back out (1-based IDs, rows in order).
void save_bow(const std::filesystem::path& path, const SparseCountMatrix& m);

/// Loads the "N D L" + "l1,l2,...  i1:v1 i2:v2 ..." multi-label format
/// (0-based indices). The label field may be empty.
std::pair<FeatureMatrix, BinaryMatrix> load_multilabel(const std::filesystem::path& path);

/// Assigns each word token of each row to heldout with probability
/// `fraction`. The per-row stream is derived from (seed, row index), tokens
/// drawn in column order.
HeldoutSplit split_heldout(const SparseCountMatrix& m, double fraction, std::uint64_t seed);

/// A seeded permutation of {0..n_rows-1} cut into consecutive chunks of
/// batch_size (last may be short). Every row appears exactly once.
std::vector<std::vector<std::size_t>> minibatch_indices(std::size_t n_rows,
                                                        std::size_t batch_size,
                                                        std::uint64_t seed);

inline std::vector<std::vector<std::size_t>> minibatches(const SparseCountMatrix& m,
                                                         std::size_t batch_size,
                                                         std::uint64_t seed) {
    return minibatch_indices(m.n_rows(), batch_size, seed);
}

}  // namespace nbvae
