#pragma once

// Independent reference implementations used only by tests. Everything here
// is derived from first principles (closed forms, pair counting, naive
// loops) so library code can be checked against it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "glp/matrix.hpp"
#include "glp/rng.hpp"

namespace oracle {

using glp::Matrix;
using glp::Rng;

/// Gaussian N(mu, Q diag(lam) Q^T) expressed in its eigenbasis. Rows are
/// samples: z = mu + (x .* sqrt(lam)) Q^T with x ~ N(0, I).
struct GaussianSpec {
    Matrix mu;                 // 1 x d
    Matrix q;                  // d x d, orthonormal columns
    std::vector<double> lam;   // eigenvalues, length d
};

inline Matrix sample_gaussian(const GaussianSpec& g, std::size_t n, Rng& rng) {
    const std::size_t d = g.mu.cols;
    Matrix x = rng.normal_matrix(n, d);
    Matrix z(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x.row(i);
        double* zi = z.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k)
                acc += g.q(j, k) * std::sqrt(g.lam[k]) * xi[k];
            zi[j] = g.mu.data[j] + acc;
        }
    }
    return z;
}

inline Matrix covariance_of(const GaussianSpec& g) {
    const std::size_t d = g.mu.cols;
    Matrix s(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) acc += g.q(i, k) * g.lam[k] * g.q(j, k);
            s(i, j) = acc;
        }
    return s;
}

/// Closed-form optimal flow-matching velocity for Gaussian data under the
/// linear interpolation path z_t = (1-t) z0 + t eps:
///   u*(z_t, t) = E[eps - z0 | z_t]
///              = [t I - (1-t) Sigma] S_t^{-1} (z_t - (1-t) mu) - mu,
/// with S_t = (1-t)^2 Sigma + t^2 I. Evaluated in the eigenbasis of Sigma,
/// where S_t is diagonal.
inline Matrix gaussian_flow_velocity(const GaussianSpec& g, const Matrix& z_t,
                                     double t) {
    const std::size_t d = g.mu.cols;
    const double omt = 1.0 - t;
    Matrix u(z_t.rows, d);
    std::vector<double> w(d), coef(d);
    for (std::size_t k = 0; k < d; ++k) {
        const double st = omt * omt * g.lam[k] + t * t;
        coef[k] = (t - omt * g.lam[k]) / st;
    }
    for (std::size_t i = 0; i < z_t.rows; ++i) {
        const double* zi = z_t.row(i);
        for (std::size_t k = 0; k < d; ++k) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j)
                acc += g.q(j, k) * (zi[j] - omt * g.mu.data[j]);
            w[k] = coef[k] * acc;
        }
        double* ui = u.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) acc += g.q(j, k) * w[k];
            ui[j] = acc - g.mu.data[j];
        }
    }
    return u;
}

/// Monte-Carlo estimate of the irreducible flow-matching loss (per-entry
/// MSE between the optimal field and the conditional target eps - z0).
inline double irreducible_flow_loss(const GaussianSpec& g, std::size_t draws,
                                    Rng& rng) {
    const std::size_t d = g.mu.cols;
    double acc = 0.0;
    for (std::size_t i = 0; i < draws; ++i) {
        Matrix z0 = sample_gaussian(g, 1, rng);
        Matrix eps = rng.normal_matrix(1, d);
        const double t = rng.uniform();
        Matrix zt(1, d);
        for (std::size_t j = 0; j < d; ++j)
            zt.data[j] = (1.0 - t) * z0.data[j] + t * eps.data[j];
        Matrix u = gaussian_flow_velocity(g, zt, t);
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = u.data[j] - (eps.data[j] - z0.data[j]);
            acc += diff * diff;
        }
    }
    return acc / static_cast<double>(draws * d);
}

/// O(n^2) pair-counting AUC with half credit for ties.
inline double pair_counting_auc(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
    double wins = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == 1) {
            ++n_pos;
            for (std::size_t j = 0; j < scores.size(); ++j) {
                if (labels[j] == 1) continue;
                if (scores[i] > scores[j]) wins += 1.0;
                else if (scores[i] == scores[j]) wins += 0.5;
            }
        } else {
            ++n_neg;
        }
    }
    return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Monte-Carlo entropy rate of a Markov chain: simulate one long walk from
/// a uniform start and average -ln P(next | prev) over its transitions.
inline double mc_entropy_rate(const Matrix& p, std::size_t n_steps, Rng& rng) {
    const std::size_t v = p.rows;
    std::size_t state = rng.below(v);
    // Burn-in toward stationarity before accumulating.
    auto step = [&](std::size_t s) {
        double u = rng.uniform();
        for (std::size_t j = 0; j + 1 < v; ++j) {
            u -= p(s, j);
            if (u < 0.0) return j;
        }
        return v - 1;
    };
    for (std::size_t i = 0; i < 1000; ++i) state = step(state);
    double acc = 0.0;
    for (std::size_t i = 0; i < n_steps; ++i) {
        const std::size_t nxt = step(state);
        acc -= std::log(p(state, nxt));
        state = nxt;
    }
    return acc / static_cast<double>(n_steps);
}

/// Squared Frechet distance between Gaussians whose covariances commute
/// (shared eigenbasis): |mu1-mu2|^2 + sum_k (sqrt(l1_k) - sqrt(l2_k))^2.
inline double commuting_frechet_sq(const Matrix& mu1, const std::vector<double>& l1,
                                   const Matrix& mu2, const std::vector<double>& l2) {
    double acc = 0.0;
    for (std::size_t j = 0; j < mu1.cols; ++j) {
        const double dm = mu1.data[j] - mu2.data[j];
        acc += dm * dm;
    }
    for (std::size_t k = 0; k < l1.size(); ++k) {
        const double ds = std::sqrt(l1[k]) - std::sqrt(l2[k]);
        acc += ds * ds;
    }
    return acc;
}

}  // namespace oracle
