#include "ctxducer/quantizer/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "ctxducer/binary_io.hpp"
#include "ctxducer/errors.hpp"
#include "ctxducer/rng.hpp"

namespace ctxducer {

FrameView::FrameView(std::span<const double> d, std::size_t r, std::size_t c) : data(d), rows(r), dim(c) {
    if (r * c != d.size()) {
        throw DimensionError("FrameView: " + std::to_string(d.size()) + " values for " + std::to_string(r) + "×" +
                             std::to_string(c));
    }
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

struct Nearest {
    int index;
    double dist;
};

Nearest nearest(std::span<const double> x, const Codebook& cb) {
    Nearest best{0, sq_dist(x, cb.centroid(0))};
    for (std::size_t k = 1; k < cb.K; ++k) {
        const double d = sq_dist(x, cb.centroid(k));
        if (d < best.dist) {
            best = {static_cast<int>(k), d};
        }
    }
    return best;
}

// Uniform double in [0, 1) from the top 53 bits; portable across standard libraries.
double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void check_input(const FrameView& frames, std::size_t K) {
    if (K == 0) {
        throw DataError("k-means: K must be >= 1");
    }
    if (frames.dim == 0) {
        throw DataError("k-means: frames have zero dimensionality");
    }
    if (frames.rows < K) {
        throw DataError("k-means: insufficient data, " + std::to_string(frames.rows) + " frames for K=" +
                        std::to_string(K));
    }
}

void lloyd(const FrameView& frames, Codebook& cb, std::size_t max_iters) {
    const std::size_t N = frames.rows, D = frames.dim, K = cb.K;
    std::vector<int> assign(N, -1);
    std::vector<double> dist(N, 0.0);
    cb.distortion_history.clear();
    cb.trained_iters = 0;
    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        double total = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
            const auto nn = nearest(frames.row(n), cb);
            if (nn.index != assign[n]) {
                changed = true;
                assign[n] = nn.index;
            }
            dist[n] = nn.dist;
            total += nn.dist;
        }
        cb.distortion_history.push_back(total / static_cast<double>(N));
        if (!changed) {
            break;
        }
        ++cb.trained_iters;
        // Update: per-cluster sums accumulated in frame order.
        std::vector<double> sums(K * D, 0.0);
        std::vector<std::size_t> counts(K, 0);
        for (std::size_t n = 0; n < N; ++n) {
            const auto k = static_cast<std::size_t>(assign[n]);
            ++counts[k];
            const auto x = frames.row(n);
            for (std::size_t d = 0; d < D; ++d) {
                sums[k * D + d] += x[d];
            }
        }
        std::vector<bool> taken(N, false);
        for (std::size_t k = 0; k < K; ++k) {
            if (counts[k] > 0) {
                for (std::size_t d = 0; d < D; ++d) {
                    cb.centroids[k * D + d] = sums[k * D + d] / static_cast<double>(counts[k]);
                }
                continue;
            }
            // Empty cluster: move to the frame farthest from its centroid (lowest index on ties).
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t n = 0; n < N; ++n) {
                if (!taken[n] && dist[n] > far_d) {
                    far_d = dist[n];
                    far = n;
                }
            }
            taken[far] = true;
            std::copy_n(frames.row(far).begin(), D, cb.centroids.begin() + static_cast<std::ptrdiff_t>(k * D));
        }
    }
    cb.final_distortion = distortion(frames, cb);
}

} // namespace

Codebook train_codebook(const FrameView& frames, const KMeansOptions& opts) {
    check_input(frames, opts.K);
    const std::size_t N = frames.rows, D = frames.dim, K = opts.K;
    Rng rng(derive_seed(opts.seed, {0x6b6d65616e73ULL}));
    Codebook cb;
    cb.K = K;
    cb.dim = D;
    cb.centroids.assign(K * D, 0.0);

    // k-means++ seeding.
    std::size_t first = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(N));
    std::copy_n(frames.row(first).begin(), D, cb.centroids.begin());
    std::vector<double> d2(N);
    for (std::size_t n = 0; n < N; ++n) {
        d2[n] = sq_dist(frames.row(n), cb.centroid(0));
    }
    for (std::size_t k = 1; k < K; ++k) {
        double total = 0.0;
        for (double v : d2) {
            total += v;
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            const double target = uniform01(rng) * total;
            double acc = 0.0;
            pick = N - 1;
            for (std::size_t n = 0; n < N; ++n) {
                acc += d2[n];
                if (target < acc && d2[n] > 0.0) {
                    pick = n;
                    break;
                }
            }
        } else {
            pick = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(N));
        }
        std::copy_n(frames.row(pick).begin(), D, cb.centroids.begin() + static_cast<std::ptrdiff_t>(k * D));
        for (std::size_t n = 0; n < N; ++n) {
            d2[n] = std::min(d2[n], sq_dist(frames.row(n), cb.centroid(k)));
        }
    }
    lloyd(frames, cb, opts.max_iters);
    return cb;
}

Codebook refine_codebook(const FrameView& frames, const Codebook& init, std::size_t max_iters) {
    check_input(frames, init.K);
    if (init.dim != frames.dim) {
        throw DimensionError("refine_codebook: dim mismatch");
    }
    Codebook cb = init;
    lloyd(frames, cb, max_iters);
    return cb;
}

std::vector<int> quantize(const FrameView& frames, const Codebook& cb) {
    if (frames.dim != cb.dim) {
        throw DimensionError("quantize: frame dim " + std::to_string(frames.dim) + " vs codebook dim " +
                             std::to_string(cb.dim));
    }
    std::vector<int> tokens(frames.rows);
    for (std::size_t n = 0; n < frames.rows; ++n) {
        tokens[n] = nearest(frames.row(n), cb).index;
    }
    return tokens;
}

double distortion(const FrameView& frames, const Codebook& cb) {
    if (frames.dim != cb.dim) {
        throw DimensionError("distortion: dim mismatch");
    }
    double total = 0.0;
    for (std::size_t n = 0; n < frames.rows; ++n) {
        total += nearest(frames.row(n), cb).dist;
    }
    return frames.rows ? total / static_cast<double>(frames.rows) : 0.0;
}

double pnmi(std::span<const int> labels, std::span<const int> tokens) {
    if (labels.size() != tokens.size()) {
        throw DataError("pnmi: label and token sequences differ in length");
    }
    if (labels.empty()) {
        throw DataError("pnmi: empty input");
    }
    const double n = static_cast<double>(labels.size());
    std::map<int, double> pl, pt;
    std::map<std::pair<int, int>, double> joint;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        pl[labels[i]] += 1.0;
        pt[tokens[i]] += 1.0;
        joint[{labels[i], tokens[i]}] += 1.0;
    }
    double h = 0.0;
    for (const auto& [l, c] : pl) {
        const double p = c / n;
        h -= p * std::log(p);
    }
    if (h <= 0.0) {
        throw DataError("pnmi: undefined metric, label entropy is zero");
    }
    double mi = 0.0;
    for (const auto& [lt, c] : joint) {
        const double p = c / n;
        mi += p * std::log(p / ((pl[lt.first] / n) * (pt[lt.second] / n)));
    }
    return std::clamp(mi / h, 0.0, 1.0);
}

void save_codebook(const Codebook& cb, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw FormatError("cannot open " + path.string() + " for writing");
    }
    binio::write_magic(os, "CTXK");
    binio::write_u32(os, 1);
    binio::write_u32(os, static_cast<std::uint32_t>(cb.K));
    binio::write_u32(os, static_cast<std::uint32_t>(cb.dim));
    for (double v : cb.centroids) {
        binio::write_f64(os, v);
    }
    if (!os) {
        throw FormatError("write failed: " + path.string());
    }
}

Codebook load_codebook(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw FormatError("cannot open codebook " + path.string());
    }
    binio::expect_magic(is, "CTXK", "codebook");
    binio::expect_version(is, 1, "codebook");
    Codebook cb;
    cb.K = binio::read_u32(is, "codebook");
    cb.dim = binio::read_u32(is, "codebook");
    if (cb.K == 0 || cb.dim == 0) {
        throw FormatError("codebook with zero extent");
    }
    cb.centroids.resize(cb.K * cb.dim);
    for (auto& v : cb.centroids) {
        v = binio::read_f64(is, "codebook");
        if (!std::isfinite(v)) {
            throw FormatError("non-finite centroid in " + path.string());
        }
    }
    binio::expect_eof(is, "codebook");
    return cb;
}

} // namespace ctxducer
