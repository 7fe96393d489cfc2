// SPDX-License-Identifier: Apache-2.0

#include "cspsim/transforms.hpp"

#include <cmath>
#include <numeric>

namespace cspsim {

namespace {

constexpr double kTolerance = 1e-8;
constexpr int kMaxIterations = 10000;

double norm(const std::vector<double>& v) { return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0)); }

// Deflated operator: A = W - sum_j s_j u_j v_j^T.
struct Deflated {
    const FloatWeights& w;
    const std::vector<std::vector<double>>& us;
    const std::vector<std::vector<double>>& vs;
    const std::vector<double>& ss;

    std::vector<double> apply(const std::vector<double>& x) const {
        std::vector<double> y(static_cast<size_t>(w.n_out), 0.0);
        const size_t n_in = static_cast<size_t>(w.n_in);
        for (int o = 0; o < w.n_out; ++o) {
            const float* row = w.data.data() + o * n_in;
            double acc = 0;
            for (size_t i = 0; i < n_in; ++i) acc += row[i] * x[i];
            y[o] = acc;
        }
        for (size_t j = 0; j < ss.size(); ++j) {
            const double d = ss[j] * std::inner_product(vs[j].begin(), vs[j].end(), x.begin(), 0.0);
            for (size_t o = 0; o < y.size(); ++o) y[o] -= d * us[j][o];
        }
        return y;
    }

    std::vector<double> apply_t(const std::vector<double>& y) const {
        const size_t n_in = static_cast<size_t>(w.n_in);
        std::vector<double> x(n_in, 0.0);
        for (int o = 0; o < w.n_out; ++o) {
            const float* row = w.data.data() + o * n_in;
            for (size_t i = 0; i < n_in; ++i) x[i] += row[i] * y[o];
        }
        for (size_t j = 0; j < ss.size(); ++j) {
            const double d = ss[j] * std::inner_product(us[j].begin(), us[j].end(), y.begin(), 0.0);
            for (size_t i = 0; i < n_in; ++i) x[i] -= d * vs[j][i];
        }
        return x;
    }
};

}  // namespace

LowRankFactors svd_factorize(const FloatWeights& w, int rank) {
    if (w.kh != 1 || w.kw != 1 || !w.consistent()) throw ValidationError("svd_factorize expects an FC weight matrix");
    if (rank < 1) throw ValidationError("svd_factorize: rank must be at least 1");
    const size_t n_in = static_cast<size_t>(w.n_in);
    const size_t n_out = static_cast<size_t>(w.n_out);

    std::vector<std::vector<double>> us, vs;
    std::vector<double> ss;
    const Deflated op{w, us, vs, ss};

    for (int k = 0; k < rank; ++k) {
        // Deterministic start vector, not orthogonal to typical data.
        std::vector<double> v(n_in);
        for (size_t i = 0; i < n_in; ++i) v[i] = 1.0 + 0.5 * std::sin(1.0 + double(i) * (k + 1));
        for (const auto& prev : vs) {
            const double d = std::inner_product(prev.begin(), prev.end(), v.begin(), 0.0);
            for (size_t i = 0; i < n_in; ++i) v[i] -= d * prev[i];
        }
        double nv = norm(v);
        if (nv == 0) break;
        for (auto& x : v) x /= nv;

        for (int it = 0; it < kMaxIterations; ++it) {
            std::vector<double> next = op.apply_t(op.apply(v));
            // Keep numerical drift out of the already-found subspace.
            for (const auto& prev : vs) {
                const double d = std::inner_product(prev.begin(), prev.end(), next.begin(), 0.0);
                for (size_t i = 0; i < n_in; ++i) next[i] -= d * prev[i];
            }
            const double nn = norm(next);
            if (nn == 0) {
                v.assign(n_in, 0.0);
                break;
            }
            double delta = 0;
            for (size_t i = 0; i < n_in; ++i) {
                next[i] /= nn;
                delta = std::max(delta, std::abs(next[i] - v[i]));
            }
            v = std::move(next);
            if (delta < kTolerance) break;
        }

        std::vector<double> u = op.apply(v);
        const double s = norm(u);
        if (s <= 1e-300) {
            u.assign(n_out, 0.0);
            v.assign(n_in, 0.0);
            us.push_back(std::move(u));
            vs.push_back(std::move(v));
            ss.push_back(0.0);
            continue;
        }
        for (auto& x : u) x /= s;
        us.push_back(std::move(u));
        vs.push_back(std::move(v));
        ss.push_back(s);
    }

    LowRankFactors f;
    f.v = FloatWeights(rank, w.n_in, 1, 1);
    f.u = FloatWeights(w.n_out, rank, 1, 1);
    for (size_t k = 0; k < ss.size(); ++k) {
        for (size_t i = 0; i < n_in; ++i) f.v.at(static_cast<int>(k), static_cast<int>(i), 0, 0) = static_cast<float>(vs[k][i]);
        for (size_t o = 0; o < n_out; ++o)
            f.u.at(static_cast<int>(o), static_cast<int>(k), 0, 0) = static_cast<float>(ss[k] * us[k][o]);
    }
    f.u.bias = w.bias;
    f.singular_values = ss;
    return f;
}

}  // namespace cspsim
