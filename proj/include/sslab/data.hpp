#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sslab/tensor.hpp"

namespace sslab {

/// One batch of examples: inputs (n x d), per-row label (-1 when unlabeled)
/// and the labeled mask (true iff the label is a valid class id).
struct Batch {
    Tensor inputs;
    std::vector<int> labels;
    std::vector<bool> labeled_mask;

    std::size_t n() const { return labels.size(); }
    std::size_t n_labeled() const;
    void validate(std::size_t n_classes) const;
};

struct SslDataset {
    Batch labeled;
    Batch unlabeled;
    Batch test;
    std::size_t n_classes = 2;
    std::size_t dim = 2;
};

/// Two interleaved half-circles; n train points plus n test points,
/// class-balanced labeled subset of size n_labeled (must be even).
SslDataset make_two_moons(std::size_t n, double noise_sigma, std::size_t n_labeled,
                          std::uint64_t seed);

/// Two concentric rings of radius 1 (class 0) and 2 (class 1).
SslDataset make_rings(std::size_t n, double noise_sigma, std::size_t n_labeled,
                      std::uint64_t seed);

// ---- ZCA whitening -------------------------------------------------------

struct ZcaTransform {
    Tensor mean;       // (d,)
    Tensor whitening;  // (d x d), symmetric
    double epsilon = 1e-5;
};

/// Fits W = E (Lambda + eps I)^{-1/2} E^T from the covariance eigendecomposition.
ZcaTransform fit_zca(const Tensor& X, double epsilon = 1e-5);

Tensor apply_zca(const ZcaTransform& t, const Tensor& X);

// ---- augmentation / sampling ----------------------------------------------

Tensor augment_gaussian(const Tensor& inputs, double sigma, std::mt19937_64& rng);
Batch augment_gaussian(const Batch& batch, double sigma, std::mt19937_64& rng);

/// Draws batches with an exact labeled:unlabeled composition; each pool is
/// cycled in shuffled epochs so small labeled sets are reused evenly.
class BatchSampler {
public:
    BatchSampler(const SslDataset& data, std::size_t n_labeled_per_batch,
                 std::size_t n_unlabeled_per_batch, std::uint64_t seed);
    Batch next();

private:
    std::size_t draw(std::vector<std::size_t>& order, std::size_t& cursor, std::size_t pool,
                     std::mt19937_64& rng);
    const SslDataset& data_;
    std::size_t nl_, nu_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> labeled_order_, unlabeled_order_;
    std::size_t labeled_cursor_ = 0, unlabeled_cursor_ = 0;
};

/// Median over rows of the distance to the nearest other row.
double median_nn_distance(const Tensor& X);

/// Median of all pairwise distances; the geometry-scale anchor for the
/// default virtual point radius.
double median_pairwise_distance(const Tensor& X);

// ---- CSV dump/load ---------------------------------------------------------
// Header row: x0,...,x{d-1},label,split with split in {labeled,unlabeled,test};
// rows keep generation order.

void save_dataset_csv(const std::string& path, const SslDataset& data);
SslDataset load_dataset_csv(const std::string& path);

}  // namespace sslab
