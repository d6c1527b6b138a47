#include "prer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "prer/error.hpp"

namespace prer::metrics {

ScoreMatrix::ScoreMatrix(std::size_t tasks)
    : m_(tasks), cells_(tasks * tasks, std::numeric_limits<double>::quiet_NaN()) {
    if (tasks == 0) throw ContractError("score matrix needs at least one task");
}

ScoreMatrix ScoreMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
    ScoreMatrix r(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() < i + 1) throw DimensionError("score row " + std::to_string(i) + " too short");
        for (std::size_t j = 0; j <= i; ++j) r.set(i, j, rows[i][j]);
    }
    return r;
}

double ScoreMatrix::at(std::size_t i, std::size_t j) const {
    if (i >= m_ || j >= m_) throw ContractError("score index out of range");
    return cells_[i * m_ + j];
}

void ScoreMatrix::set(std::size_t i, std::size_t j, double value) {
    if (i >= m_ || j >= m_) throw ContractError("score index out of range");
    if (j > i) throw ContractError("task j is not trained yet after task i");
    if (!(value >= 0.0 && value <= 1.0)) throw DomainError("score must lie in [0, 1]");
    cells_[i * m_ + j] = value;
}

bool ScoreMatrix::filled(std::size_t i, std::size_t j) const { return !std::isnan(at(i, j)); }

std::vector<double> ScoreMatrix::final_row() const {
    std::vector<double> out(m_);
    for (std::size_t j = 0; j < m_; ++j) out[j] = at(m_ - 1, j);
    return out;
}

std::string ScoreMatrix::to_csv() const {
    std::string out;
    char buf[32];
    for (std::size_t i = 0; i < m_; ++i) {
        for (std::size_t j = 0; j < m_; ++j) {
            if (j) out += ',';
            if (filled(i, j)) {
                std::snprintf(buf, sizeof buf, "%.6f", at(i, j));
                out += buf;
            }
        }
        out += '\n';
    }
    return out;
}

namespace {

void require_lower_filled(const ScoreMatrix& r) {
    for (std::size_t i = 0; i < r.tasks(); ++i)
        for (std::size_t j = 0; j <= i; ++j)
            if (!r.filled(i, j))
                throw ContractError("score matrix entry (" + std::to_string(i) + "," + std::to_string(j) +
                                    ") is missing");
}

}  // namespace

double accuracy_metric(const ScoreMatrix& r) {
    require_lower_filled(r);
    const double m = static_cast<double>(r.tasks());
    double s = 0.0;
    for (std::size_t i = 0; i < r.tasks(); ++i)
        for (std::size_t j = 0; j <= i; ++j) s += r.at(i, j);
    return s / (0.5 * m * (m + 1.0));
}

BwtResult bwt_metric(const ScoreMatrix& r) {
    require_lower_filled(r);
    if (r.tasks() < 2) return {0.0, false};
    const double m = static_cast<double>(r.tasks());
    double s = 0.0;
    for (std::size_t i = 1; i < r.tasks(); ++i)
        for (std::size_t j = 0; j < i; ++j) s += r.at(i, j) - r.at(j, j);
    return {s / (0.5 * m * (m - 1.0)), true};
}

Method parse_method(const std::string& name) {
    for (Method m : {Method::naive, Method::prer, Method::lwf, Method::ewc, Method::gem, Method::er})
        if (to_string(m) == name) return m;
    throw ContractError("unknown method '" + name + "'");
}

std::string to_string(Method m) {
    switch (m) {
        case Method::naive: return "naive";
        case Method::prer: return "prer";
        case Method::lwf: return "lwf";
        case Method::ewc: return "ewc";
        case Method::gem: return "gem";
        case Method::er: return "er";
    }
    return "?";
}

namespace {

double need(const std::optional<double>& v, const char* name) {
    if (!v) throw ContractError(std::string("memory_footprint: missing size '") + name + "'");
    if (!(std::isfinite(*v) && *v >= 0.0)) throw ContractError(std::string("memory_footprint: bad size '") + name + "'");
    return *v;
}

}  // namespace

double memory_footprint(Method method, const MemorySizes& s) {
    switch (method) {
        case Method::naive: return 0.0;
        case Method::prer: return need(s.flow_decoder, "NF") + need(s.encoder, "N");
        case Method::lwf:
            return need(s.tasks, "M") * need(s.samples, "S") *
                   (need(s.classes_per_task, "c_m") + need(s.image_size, "IM"));
        case Method::ewc: return need(s.tasks, "M") * need(s.encoder, "N");
        case Method::gem: return need(s.tasks, "M") * need(s.samples, "S") * need(s.image_size, "IM");
        case Method::er:
            return need(s.tasks, "M") * need(s.samples, "S") *
                   (need(s.embedding_size, "E") + need(s.image_size, "IM"));
    }
    return 0.0;
}

MetricsReport make_report(const ScoreMatrix& r, std::size_t memory_floats) {
    MetricsReport rep;
    rep.accuracy = accuracy_metric(r);
    const auto b = bwt_metric(r);
    rep.bwt = b.value;
    rep.bwt_defined = b.defined;
    rep.memory_floats = memory_floats;
    rep.per_task_final = r.final_row();
    return rep;
}

// --- PCA ---------------------------------------------------------------------

namespace {

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b) { return std::inner_product(a.begin(), a.end(), b.begin(), 0.0); }

// Modified Gram-Schmidt; returns the column norms before normalisation.
Vec orthonormalise(std::vector<Vec>& q) {
    Vec norms(q.size());
    for (std::size_t k = 0; k < q.size(); ++k) {
        for (std::size_t j = 0; j < k; ++j) {
            const double c = dot(q[j], q[k]);
            for (std::size_t i = 0; i < q[k].size(); ++i) q[k][i] -= c * q[j][i];
        }
        norms[k] = std::sqrt(dot(q[k], q[k]));
        if (norms[k] > 0.0)
            for (double& v : q[k]) v /= norms[k];
    }
    return norms;
}

Vec matvec(const std::vector<Vec>& c, const Vec& x) {
    Vec y(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = dot(c[i], x);
    return y;
}

// Jacobi eigen-decomposition of a small symmetric matrix, descending order.
void small_eigen(std::vector<Vec> a, Vec& values, std::vector<Vec>& vectors) {
    const std::size_t k = a.size();
    vectors.assign(k, Vec(k, 0.0));
    for (std::size_t i = 0; i < k; ++i) vectors[i][i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < k; ++p)
            for (std::size_t q = p + 1; q < k; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < k; ++p)
            for (std::size_t q = p + 1; q < k; ++q) {
                if (a[p][q] == 0.0) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t r = 0; r < k; ++r) {
                    const double arp = a[r][p], arq = a[r][q];
                    a[r][p] = c * arp - s * arq;
                    a[r][q] = s * arp + c * arq;
                }
                for (std::size_t r = 0; r < k; ++r) {
                    const double apr = a[p][r], aqr = a[q][r];
                    a[p][r] = c * apr - s * aqr;
                    a[q][r] = s * apr + c * aqr;
                }
                for (std::size_t r = 0; r < k; ++r) {
                    const double vrp = vectors[r][p], vrq = vectors[r][q];
                    vectors[r][p] = c * vrp - s * vrq;
                    vectors[r][q] = s * vrp + c * vrq;
                }
            }
    }
    values.resize(k);
    for (std::size_t i = 0; i < k; ++i) values[i] = a[i][i];
    // sort descending
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return values[x] > values[y]; });
    Vec sv(k);
    std::vector<Vec> svec(k, Vec(k));
    for (std::size_t i = 0; i < k; ++i) {
        sv[i] = values[order[i]];
        for (std::size_t r = 0; r < k; ++r) svec[r][i] = vectors[r][order[i]];
    }
    values = sv;
    vectors = svec;
}

}  // namespace

PcaResult pca_project(const Tensor& embeddings, std::size_t components, double tolerance, int max_iterations) {
    if (embeddings.rank() != 2) throw DimensionError("pca_project expects a matrix");
    const std::size_t n = embeddings.rows(), d = embeddings.cols();
    if (components == 0 || components > d) throw ContractError("pca_project: bad component count");
    if (n <= components) throw ContractError("pca_project needs more rows than components");
    const auto x = embeddings.values();

    PcaResult res;
    res.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) res.mean[k] += x[i * d + k];
    for (double& m : res.mean) m /= static_cast<double>(n);

    // Sample covariance, d x d.
    std::vector<Vec> cov(d, Vec(d, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < d; ++a) {
            const double xa = x[i * d + a] - res.mean[a];
            if (xa == 0.0) continue;
            for (std::size_t b = a; b < d; ++b) cov[a][b] += xa * (x[i * d + b] - res.mean[b]);
        }
    double trace = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = a; b < d; ++b) {
            cov[a][b] /= static_cast<double>(n - 1);
            cov[b][a] = cov[a][b];
        }
        trace += cov[a][a];
    }

    // Deterministic, non-degenerate starting block.
    std::vector<Vec> q(components, Vec(d));
    for (std::size_t k = 0; k < components; ++k)
        for (std::size_t i = 0; i < d; ++i) q[k][i] = 1.0 / (1.0 + static_cast<double>((i * (k + 3) + k) % (d + 1))) + (i == k ? 1.0 : 0.0);
    orthonormalise(q);

    Vec prev(components, 0.0);
    Vec values;
    std::vector<Vec> rot;
    for (int it = 1; it <= max_iterations; ++it) {
        res.iterations = it;
        for (auto& v : q) v = matvec(cov, v);
        orthonormalise(q);
        // Rayleigh-Ritz on span(q).
        std::vector<Vec> small(components, Vec(components));
        std::vector<Vec> cq(components);
        for (std::size_t a = 0; a < components; ++a) cq[a] = matvec(cov, q[a]);
        for (std::size_t a = 0; a < components; ++a)
            for (std::size_t b = 0; b < components; ++b) small[a][b] = dot(q[a], cq[b]);
        small_eigen(small, values, rot);
        std::vector<Vec> rq(components, Vec(d, 0.0));
        for (std::size_t c = 0; c < components; ++c)
            for (std::size_t a = 0; a < components; ++a)
                for (std::size_t i = 0; i < d; ++i) rq[c][i] += rot[a][c] * q[a][i];
        q = rq;
        double change = 0.0;
        for (std::size_t c = 0; c < components; ++c) change = std::max(change, std::abs(values[c] - prev[c]));
        prev = values;
        const double scale = std::max(trace, 1e-300);
        // Residual check: |C q - lambda q| small relative to the spectrum.
        double resid = 0.0;
        for (std::size_t c = 0; c < components; ++c) {
            const Vec cqc = matvec(cov, q[c]);
            double r2 = 0.0;
            for (std::size_t i = 0; i < d; ++i) r2 += (cqc[i] - values[c] * q[c][i]) * (cqc[i] - values[c] * q[c][i]);
            resid = std::max(resid, std::sqrt(r2));
        }
        if (it > 1 && change <= tolerance * scale && resid <= std::sqrt(tolerance) * scale) break;
    }

    const double rank_floor = 1e-12 * std::max(trace, 1e-300);
    for (std::size_t c = 0; c < components; ++c) {
        if (!(values[c] > rank_floor)) {
            res.degenerate = true;
            values[c] = 0.0;
            std::fill(q[c].begin(), q[c].end(), 0.0);
        }
    }
    // Fix sign: largest-magnitude coordinate positive.
    for (auto& v : q) {
        auto it = std::max_element(v.begin(), v.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
        if (it != v.end() && *it < 0.0)
            for (double& e : v) e = -e;
    }
    res.components = q;
    res.variances = values;

    std::vector<double> proj(n * components, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < components; ++c) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += (x[i * d + k] - res.mean[k]) * q[c][k];
            proj[i * components + c] = s;
        }
    res.projection = Tensor({n, components}, std::move(proj));
    return res;
}

}  // namespace prer::metrics
