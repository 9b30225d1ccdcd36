#include "ctxducer/loss/rnnt.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "ctxducer/errors.hpp"

namespace ctxducer {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
    if (a == kNegInf) {
        return b;
    }
    if (b == kNegInf) {
        return a;
    }
    const double m = a > b ? a : b;
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

} // namespace

bool in_band(std::size_t t, std::size_t u, std::size_t T, std::size_t U, std::size_t band) {
    if (band == kFullBand) {
        return true;
    }
    const std::size_t diag = (U * t) / T;
    const std::size_t diff = u > diag ? u - diag : diag - u;
    return diff <= band;
}

TransducerLattice build_lattice(std::span<const double> logits, std::size_t T, std::span<const int> labels,
                                std::size_t classes, std::size_t band) {
    if (T == 0) {
        throw DataError("rnnt_loss: T must be >= 1");
    }
    if (classes < 2) {
        throw DataError("rnnt_loss: need blank plus at least one label class");
    }
    if (band == 0) {
        throw DataError("rnnt_loss_pruned: band must be >= 1");
    }
    const std::size_t U = labels.size();
    if (logits.size() != T * (U + 1) * classes) {
        throw DimensionError("rnnt_loss: logits size " + std::to_string(logits.size()) + " != T×(U+1)×classes");
    }
    for (int y : labels) {
        if (y < 1 || static_cast<std::size_t>(y) >= classes) {
            throw DataError("rnnt_loss: label " + std::to_string(y) + " out of range");
        }
    }
    TransducerLattice lat;
    lat.T = T;
    lat.U = U;
    lat.classes = classes;
    lat.log_probs.resize(logits.size());
    for (std::size_t cell = 0; cell < T * (U + 1); ++cell) {
        const double* z = logits.data() + cell * classes;
        double m = z[0];
        for (std::size_t k = 1; k < classes; ++k) {
            m = std::max(m, z[k]);
        }
        double s = 0.0;
        for (std::size_t k = 0; k < classes; ++k) {
            s += std::exp(z[k] - m);
        }
        const double lse = m + std::log(s);
        for (std::size_t k = 0; k < classes; ++k) {
            lat.log_probs[cell * classes + k] = z[k] - lse;
        }
    }

    const std::size_t W = U + 1;
    lat.alpha.assign(T * W, kNegInf);
    lat.beta.assign(T * W, kNegInf);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t u = 0; u <= U; ++u) {
            if (!in_band(t, u, T, U, band)) {
                continue;
            }
            if (t == 0 && u == 0) {
                lat.alpha[0] = 0.0;
                continue;
            }
            double v = kNegInf;
            if (t > 0 && lat.alpha[(t - 1) * W + u] != kNegInf) {
                v = lat.alpha[(t - 1) * W + u] + lat.lp(t - 1, u, kBlank);
            }
            if (u > 0 && lat.alpha[t * W + u - 1] != kNegInf) {
                v = log_add(v, lat.alpha[t * W + u - 1] + lat.lp(t, u - 1, static_cast<std::size_t>(labels[u - 1])));
            }
            lat.alpha[t * W + u] = v;
        }
    }
    for (std::size_t t = T; t-- > 0;) {
        for (std::size_t u = U + 1; u-- > 0;) {
            if (!in_band(t, u, T, U, band)) {
                continue;
            }
            if (t == T - 1 && u == U) {
                lat.beta[t * W + u] = lat.lp(t, u, kBlank);
                continue;
            }
            double v = kNegInf;
            if (t + 1 < T && lat.beta[(t + 1) * W + u] != kNegInf) {
                v = lat.beta[(t + 1) * W + u] + lat.lp(t, u, kBlank);
            }
            if (u < U && lat.beta[t * W + u + 1] != kNegInf) {
                v = log_add(v, lat.beta[t * W + u + 1] + lat.lp(t, u, static_cast<std::size_t>(labels[u])));
            }
            lat.beta[t * W + u] = v;
        }
    }
    const double terminal = lat.alpha[(T - 1) * W + U];
    if (terminal == kNegInf) {
        throw NumericError("rnnt_loss_pruned: band " + std::to_string(band) + " excludes every alignment");
    }
    lat.log_likelihood = terminal + lat.lp(T - 1, U, kBlank);
    lat.nll = -lat.log_likelihood;
    return lat;
}

namespace {

TransducerLoss loss_with_grad(std::span<const double> logits, std::size_t T, std::span<const int> labels,
                              std::size_t classes, std::size_t band) {
    TransducerLoss out;
    out.lattice = build_lattice(logits, T, labels, classes, band);
    const auto& lat = out.lattice;
    out.nll = lat.nll;
    const std::size_t U = lat.U, W = U + 1;
    const double logp = lat.log_likelihood;
    out.grad.assign(logits.size(), 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t u = 0; u <= U; ++u) {
            const double a = lat.alpha[t * W + u];
            if (a == kNegInf) {
                continue;
            }
            // Posterior mass on each outgoing edge of (t,u).
            double e_blank = 0.0;
            if (t + 1 < T) {
                const double b = lat.beta[(t + 1) * W + u];
                if (b != kNegInf) {
                    e_blank = std::exp(a + lat.lp(t, u, kBlank) + b - logp);
                }
            } else if (u == U) {
                e_blank = std::exp(a + lat.lp(t, u, kBlank) - logp);
            }
            double e_emit = 0.0;
            std::size_t y = 0;
            if (u < U) {
                y = static_cast<std::size_t>(labels[u]);
                const double b = lat.beta[t * W + u + 1];
                if (b != kNegInf) {
                    e_emit = std::exp(a + lat.lp(t, u, y) + b - logp);
                }
            }
            const double occ = e_blank + e_emit;
            if (occ == 0.0) {
                continue;
            }
            double* g = out.grad.data() + (t * W + u) * classes;
            for (std::size_t k = 0; k < classes; ++k) {
                g[k] = std::exp(lat.lp(t, u, k)) * occ;
            }
            g[kBlank] -= e_blank;
            if (u < U) {
                g[y] -= e_emit;
            }
        }
    }
    return out;
}

} // namespace

TransducerLoss rnnt_loss(std::span<const double> logits, std::size_t T, std::span<const int> labels,
                         std::size_t classes) {
    return loss_with_grad(logits, T, labels, classes, kFullBand);
}

TransducerLoss rnnt_loss_pruned(std::span<const double> logits, std::size_t T, std::span<const int> labels,
                                std::size_t classes, std::size_t band) {
    return loss_with_grad(logits, T, labels, classes, band);
}

Tensor rnnt_loss(const Tensor& logits, std::span<const int> labels, std::size_t band) {
    if (logits.rank() != 3 || logits.dim(1) != labels.size() + 1) {
        throw DimensionError("rnnt_loss: logits must be T×(U+1)×classes, got " + shape_str(logits.shape()));
    }
    auto result = std::make_shared<TransducerLoss>(
        loss_with_grad(logits.values(), logits.dim(0), labels, logits.dim(2), band));
    const double nll = result->nll;
    return detail::make_result("rnnt_loss", {1}, {nll}, {&logits}, [result](detail::Node& out) {
        auto& parent = *out.parents[0];
        if (!parent.requires_grad) {
            return;
        }
        parent.ensure_grad();
        const double go = out.grad[0];
        for (std::size_t i = 0; i < parent.grad.size(); ++i) {
            parent.grad[i] += go * result->grad[i];
        }
    });
}

std::uint64_t alignment_count(std::size_t T, std::size_t U) {
    if (T == 0) {
        return 0;
    }
    // C(T-1+U, U) computed incrementally; exact while it fits in 64 bits.
    std::uint64_t c = 1;
    for (std::size_t k = 1; k <= U; ++k) {
        c = c * (T - 1 + k) / k;
    }
    return c;
}

std::vector<Alignment> enumerate_alignments(std::size_t T, std::size_t U, std::uint64_t max_paths) {
    if (T == 0) {
        throw DataError("enumerate_alignments: T must be >= 1");
    }
    if (alignment_count(T, U) > max_paths) {
        throw DataError("enumerate_alignments: instance too large (" + std::to_string(alignment_count(T, U)) +
                        " paths)");
    }
    std::vector<Alignment> paths;
    Alignment cur;
    // Interleave T-1 blanks with U emissions, then close with the final blank.
    auto rec = [&](auto&& self, std::size_t blanks_left, std::size_t emits_left) -> void {
        if (blanks_left == 0 && emits_left == 0) {
            Alignment p = cur;
            p.push_back(0);
            paths.push_back(std::move(p));
            return;
        }
        if (emits_left > 0) {
            cur.push_back(1);
            self(self, blanks_left, emits_left - 1);
            cur.pop_back();
        }
        if (blanks_left > 0) {
            cur.push_back(0);
            self(self, blanks_left - 1, emits_left);
            cur.pop_back();
        }
    };
    rec(rec, T - 1, U);
    return paths;
}

} // namespace ctxducer
