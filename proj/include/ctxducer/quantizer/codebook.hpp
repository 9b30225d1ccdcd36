#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace ctxducer {

// Row-major view over N frames of `dim` reals.
struct FrameView {
    std::span<const double> data;
    std::size_t rows = 0;
    std::size_t dim = 0;

    FrameView() = default;
    FrameView(std::span<const double> d, std::size_t r, std::size_t c);
    std::span<const double> row(std::size_t i) const { return data.subspan(i * dim, dim); }
};

struct Codebook {
    std::size_t K = 0;
    std::size_t dim = 0;
    std::vector<double> centroids;  // K×dim
    std::size_t trained_iters = 0;
    double final_distortion = 0.0;
    // Distortion measured after each assignment step; non-increasing.
    std::vector<double> distortion_history;

    std::span<const double> centroid(std::size_t k) const { return {centroids.data() + k * dim, dim}; }
};

struct KMeansOptions {
    std::size_t K = 64;
    std::size_t max_iters = 50;
    std::uint64_t seed = 0;
};

// Lloyd's algorithm from k-means++ seeding. Throws DataError when N < K.
Codebook train_codebook(const FrameView& frames, const KMeansOptions& opts);

// Lloyd iterations starting from given centroids (no seeding).
Codebook refine_codebook(const FrameView& frames, const Codebook& init, std::size_t max_iters);

// Nearest centroid by Euclidean distance; ties go to the lowest index.
std::vector<int> quantize(const FrameView& frames, const Codebook& cb);

// Mean squared distance of each frame to its nearest centroid.
double distortion(const FrameView& frames, const Codebook& cb);

// Phone-normalised mutual information I(label; token) / H(label), natural log.
// Throws DataError on length mismatch, empty input or zero label entropy.
double pnmi(std::span<const int> labels, std::span<const int> tokens);

// "CTXK" v1 little-endian format; centroids round-trip bit-exactly.
void save_codebook(const Codebook& cb, const std::filesystem::path& path);
Codebook load_codebook(const std::filesystem::path& path);

} // namespace ctxducer
