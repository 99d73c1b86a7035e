#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "glp/linalg.hpp"
#include "glp/matrix.hpp"
#include "glp/source_sim.hpp"

namespace glp {

// ---------------------------------------------------------------------------
// Gaussian summaries and Frechet distance.

struct GaussianSummary {
    Matrix mean;  // 1 x d
    Matrix cov;   // d x d, symmetric by construction
};

/// Mean and POPULATION covariance (divide by n); the convention used by the
/// distributional metrics. PCA uses the sample covariance instead.
inline GaussianSummary summarize_gaussian(const Matrix& x) {
    GLP_REQUIRE(x.rows >= 2, "summarize_gaussian: need at least 2 rows");
    const std::size_t d = x.cols;
    GaussianSummary g;
    g.mean = Matrix(1, d);
    const double inv_n = 1.0 / static_cast<double>(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* r = x.row(i);
        for (std::size_t j = 0; j < d; ++j) g.mean.data[j] += r[j];
    }
    for (std::size_t j = 0; j < d; ++j) g.mean.data[j] *= inv_n;
    g.cov = Matrix(d, d);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* r = x.row(i);
        for (std::size_t a = 0; a < d; ++a) {
            const double da = r[a] - g.mean.data[a];
            double* crow = g.cov.row(a);
            for (std::size_t b = a; b < d; ++b) crow[b] += da * (r[b] - g.mean.data[b]);
        }
    }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            g.cov(a, b) *= inv_n;
            g.cov(b, a) = g.cov(a, b);
        }
    return g;
}

/// Squared Frechet distance between Gaussian summaries:
///   |mu1-mu2|^2 + tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2}).
/// The cross term uses the symmetrized similar product, which has the same
/// trace as the textbook (S1 S2)^{1/2} but stays symmetric numerically.
inline double frechet_squared_analytic(const GaussianSummary& g1,
                                       const GaussianSummary& g2) {
    GLP_REQUIRE(g1.mean.cols == g2.mean.cols,
                "frechet distance: dimension mismatch");
    const std::size_t d = g1.mean.cols;
    double fd2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double dm = g1.mean.data[j] - g2.mean.data[j];
        fd2 += dm * dm;
    }
    for (std::size_t j = 0; j < d; ++j) fd2 += g1.cov(j, j) + g2.cov(j, j);

    const Matrix s1_half = psd_sqrt(g1.cov);
    Matrix inner(d, d);
    {
        Matrix tmp(d, d);
        gemm(tmp, s1_half, false, g2.cov, false);
        gemm(inner, tmp, false, s1_half, false);
    }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a + 1; b < d; ++b) {
            const double avg = 0.5 * (inner(a, b) + inner(b, a));
            inner(a, b) = avg;
            inner(b, a) = avg;
        }
    fd2 -= 2.0 * trace_psd_sqrt(inner);
    return fd2;
}

inline double frechet_gaussian_analytic(const GaussianSummary& g1,
                                        const GaussianSummary& g2) {
    return std::sqrt(std::max(0.0, frechet_squared_analytic(g1, g2)));
}

inline double frechet_squared(const Matrix& x, const Matrix& y) {
    GLP_REQUIRE(x.cols == y.cols, "frechet distance: dimension mismatch");
    return frechet_squared_analytic(summarize_gaussian(x), summarize_gaussian(y));
}

/// Frechet distance (not squared) between two activation sets, matching the
/// magnitudes reported for generated-vs-real comparisons.
inline double frechet_distance(const Matrix& x, const Matrix& y) {
    return std::sqrt(std::max(0.0, frechet_squared(x, y)));
}

// ---------------------------------------------------------------------------
// PCA diagnostics.

struct PcaModel {
    Matrix components;              // k x d, orthonormal rows
    Matrix mean;                    // 1 x d
    std::vector<double> variances;  // explained (sample) variances, descending
};

/// Top-k principal components of the SAMPLE covariance (divide by n-1).
/// Deterministic sign convention: each component's largest-magnitude entry
/// (lowest index on ties) is made positive.
inline PcaModel pca_top_k(const Matrix& x, std::size_t k) {
    const std::size_t d = x.cols;
    GLP_REQUIRE(k >= 1 && k <= d, "pca_top_k: k out of range");
    GLP_REQUIRE(x.rows > k, "pca_top_k: need more rows than components");

    PcaModel m;
    m.mean = Matrix(1, d);
    const double inv_n = 1.0 / static_cast<double>(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* r = x.row(i);
        for (std::size_t j = 0; j < d; ++j) m.mean.data[j] += r[j];
    }
    for (std::size_t j = 0; j < d; ++j) m.mean.data[j] *= inv_n;

    Matrix cov(d, d);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* r = x.row(i);
        for (std::size_t a = 0; a < d; ++a) {
            const double da = r[a] - m.mean.data[a];
            double* crow = cov.row(a);
            for (std::size_t b = a; b < d; ++b) crow[b] += da * (r[b] - m.mean.data[b]);
        }
    }
    const double inv_nm1 = 1.0 / static_cast<double>(x.rows - 1);
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            cov(a, b) *= inv_nm1;
            cov(b, a) = cov(a, b);
        }

    const EighResult eig = jacobi_eigh(cov);
    m.components = Matrix(k, d);
    m.variances.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
        m.variances[c] = eig.eigenvalues[c];
        double* row = m.components.row(c);
        for (std::size_t j = 0; j < d; ++j) row[j] = eig.eigenvectors(j, c);
        std::size_t arg = 0;
        for (std::size_t j = 1; j < d; ++j)
            if (std::abs(row[j]) > std::abs(row[arg])) arg = j;
        if (row[arg] < 0.0)
            for (std::size_t j = 0; j < d; ++j) row[j] = -row[j];
    }
    return m;
}

/// Coordinates of x in the component basis: (x - mean) C^T, n x k.
inline Matrix pca_project(const PcaModel& m, const Matrix& x) {
    GLP_REQUIRE(x.cols == m.mean.cols, "pca_project: dimension mismatch");
    Matrix centered = x;
    for (std::size_t i = 0; i < x.rows; ++i) {
        double* r = centered.row(i);
        for (std::size_t j = 0; j < x.cols; ++j) r[j] -= m.mean.data[j];
    }
    Matrix z(x.rows, m.components.rows);
    gemm(z, centered, false, m.components, true);
    return z;
}

/// Back-projection mean + z C, n x d.
inline Matrix pca_reconstruct(const PcaModel& m, const Matrix& z) {
    GLP_REQUIRE(z.cols == m.components.rows, "pca_reconstruct: dimension mismatch");
    Matrix x(z.rows, m.mean.cols);
    gemm(x, z, false, m.components, false);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double* r = x.row(i);
        for (std::size_t j = 0; j < x.cols; ++j) r[j] += m.mean.data[j];
    }
    return x;
}

// ---------------------------------------------------------------------------
// ROC-AUC.

/// Mann-Whitney AUC with midrank tie handling (ties count half). Labels are
/// 0/1; both classes must be present.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    GLP_REQUIRE(scores.size() == labels.size(), "roc_auc: size mismatch");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int l : labels) {
        GLP_REQUIRE(l == 0 || l == 1, "roc_auc: labels must be 0 or 1");
        n_pos += static_cast<std::size_t>(l);
    }
    const std::size_t n_neg = n - n_pos;
    GLP_REQUIRE(n_pos > 0 && n_neg > 0, "roc_auc: both classes must be present");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Midranks over tie groups; rank sums of halves stay exact in doubles.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t t = i; t <= j; ++t)
            if (labels[order[t]] == 1) rank_sum_pos += midrank;
        i = j + 1;
    }
    const double np = static_cast<double>(n_pos);
    return (rank_sum_pos - np * (np + 1.0) * 0.5) /
           (np * static_cast<double>(n_neg));
}

// ---------------------------------------------------------------------------
// Delta LM loss: how much worse the source model gets when its hook
// activations are replaced by reconstructions.

using HookReconstructor = std::function<Matrix(const Matrix&)>;

/// Mean NLL under injected reconstructions minus mean NLL of the clean run,
/// over all prediction positions except the first of each document (the
/// near-empty beginning-of-sequence window). The identity reconstructor
/// yields exactly 0.
inline double delta_lm_loss(const SourceLM& lm, const std::vector<Document>& docs,
                            const HookReconstructor& reconstruct) {
    GLP_REQUIRE(!docs.empty(), "delta_lm_loss: empty corpus");
    double clean_acc = 0.0, injected_acc = 0.0;
    std::size_t n = 0;
    for (const Document& doc : docs) {
        const SourceForwardResult clean = source_forward(lm, doc.tokens);
        Matrix recon = reconstruct(clean.hook);
        GLP_REQUIRE(recon.same_shape(clean.hook),
                    "delta_lm_loss: reconstructor changed activation shape");
        const SourceForwardResult injected = source_forward(lm, doc.tokens, &recon);
        for (std::size_t p = 1; p < clean.nll.size(); ++p) {
            clean_acc += clean.nll[p];
            injected_acc += injected.nll[p];
            ++n;
        }
    }
    GLP_REQUIRE(n > 0, "delta_lm_loss: no scored positions");
    return (injected_acc - clean_acc) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Metric report rows.

struct MetricRow {
    std::string metric;
    std::string config_hash;
    double value = 0.0;
};

inline void write_metrics_csv(const std::string& path,
                              const std::vector<MetricRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "metric,config_hash,value\n";
    char buf[64];
    for (const MetricRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%.17g", r.value);
        out << r.metric << ',' << r.config_hash << ',' << buf << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace glp
