#include "graphfm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "graphfm/error.hpp"
#include "graphfm/parallel.hpp"

namespace graphfm {

namespace {

bool track(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape.enabled()) return false;
    for (const Tensor* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

// Rows of the collapsed (L, D) view, D = last-axis extent.
int64_t last_dim(const Tensor& t) { return t.shape().back(); }
int64_t row_count(const Tensor& t) { return t.size() / last_dim(t); }

Shape drop_last(const Shape& s) {
    Shape out(s.begin(), s.end() - 1);
    if (out.empty()) out.push_back(1);
    return out;
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    bool rg = track(tape, {&a, &b});
    Tensor out = Tensor::zeros(a.shape(), rg);
    const int64_t n = a.size();
    for (int64_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] + b.values()[i];
    if (rg) {
        tape.record([a, b, out]() {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    bool rg = track(tape, {&a, &b});
    Tensor out = Tensor::zeros(a.shape(), rg);
    const int64_t n = a.size();
    for (int64_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] - b.values()[i];
    if (rg) {
        tape.record([a, b, out]() {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
    bool rg = track(tape, {&a});
    Tensor out = Tensor::zeros(a.shape(), rg);
    const int64_t n = a.size();
    for (int64_t i = 0; i < n; ++i) out.values()[i] = c * a.values()[i];
    if (rg) {
        tape.record([a, out, c]() {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
        });
    }
    return out;
}

Tensor hadamard(Tape& tape, const Tensor& a, const Tensor& b) {
    check_same_shape("hadamard", a, b);
    bool rg = track(tape, {&a, &b});
    Tensor out = Tensor::zeros(a.shape(), rg);
    const int64_t n = a.size();
    for (int64_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * b.values()[i];
    if (rg) {
        tape.record([a, b, out]() {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                const auto& bv = b.values();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                const auto& av = a.values();
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
            }
        });
    }
    return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
    bool rg = track(tape, {&x});
    Tensor out = Tensor::zeros(x.shape(), rg);
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) out.values()[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
    if (rg) {
        tape.record([x, out]() {
            const auto& g = out.grad();
            const auto& xv = x.values();
            auto& gx = x.grad();
            for (size_t i = 0; i < g.size(); ++i)
                if (xv[i] > 0.0) gx[i] += g[i];
        });
    }
    return out;
}

Tensor leaky_relu(Tape& tape, const Tensor& x, double slope) {
    bool rg = track(tape, {&x});
    Tensor out = Tensor::zeros(x.shape(), rg);
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) {
        double v = x.values()[i];
        out.values()[i] = v > 0.0 ? v : slope * v;
    }
    if (rg) {
        tape.record([x, out, slope]() {
            const auto& g = out.grad();
            const auto& xv = x.values();
            auto& gx = x.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (xv[i] > 0.0 ? 1.0 : slope);
        });
    }
    return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
    bool rg = track(tape, {&x});
    Tensor out = Tensor::zeros(x.shape(), rg);
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) out.values()[i] = stable_sigmoid(x.values()[i]);
    if (rg) {
        tape.record([x, out]() {
            const auto& g = out.grad();
            const auto& ov = out.values();
            auto& gx = x.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * ov[i] * (1.0 - ov[i]);
        });
    }
    return out;
}

Tensor elu(Tape& tape, const Tensor& x, double alpha) {
    bool rg = track(tape, {&x});
    Tensor out = Tensor::zeros(x.shape(), rg);
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) {
        double v = x.values()[i];
        out.values()[i] = v > 0.0 ? v : alpha * std::expm1(v);
    }
    if (rg) {
        tape.record([x, out, alpha]() {
            const auto& g = out.grad();
            const auto& xv = x.values();
            const auto& ov = out.values();
            auto& gx = x.grad();
            for (size_t i = 0; i < g.size(); ++i)
                gx[i] += g[i] * (xv[i] > 0.0 ? 1.0 : ov[i] + alpha);
        });
    }
    return out;
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimensionError("matmul: expected rank-2 operands, got " + a.shape_str() + " and " + b.shape_str());
    if (a.dim(1) != b.dim(0))
        throw DimensionError("matmul: inner dimensions differ, " + a.shape_str() + " vs " + b.shape_str());
    const int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
    bool rg = track(tape, {&a, &b});
    Tensor out = Tensor::zeros({M, N}, rg);
    {
        const double* av = a.values().data();
        const double* bv = b.values().data();
        double* ov = out.values().data();
        parallel_for(M, [&](int64_t i) {
            for (int64_t k = 0; k < K; ++k) {
                double aik = av[i * K + k];
                const double* brow = bv + k * N;
                double* orow = ov + i * N;
                for (int64_t j = 0; j < N; ++j) orow[j] += aik * brow[j];
            }
        });
    }
    if (rg) {
        tape.record([a, b, out, M, K, N]() {
            const double* g = out.grad().data();
            if (a.requires_grad()) {
                double* ga = a.grad().data();
                const double* bv = b.values().data();
                parallel_for(M, [&](int64_t i) {
                    for (int64_t k = 0; k < K; ++k) {
                        double acc = 0.0;
                        const double* brow = bv + k * N;
                        const double* grow = g + i * N;
                        for (int64_t j = 0; j < N; ++j) acc += grow[j] * brow[j];
                        ga[i * K + k] += acc;
                    }
                });
            }
            if (b.requires_grad()) {
                double* gb = b.grad().data();
                const double* av = a.values().data();
                parallel_for(K, [&](int64_t k) {
                    for (int64_t i = 0; i < M; ++i) {
                        double aik = av[i * K + k];
                        const double* grow = g + i * N;
                        double* gbrow = gb + k * N;
                        for (int64_t j = 0; j < N; ++j) gbrow[j] += aik * grow[j];
                    }
                });
            }
        });
    }
    return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (w.rank() != 2) throw DimensionError("linear: weight must be rank-2, got " + w.shape_str());
    const int64_t din = last_dim(x), dout = w.dim(0);
    if (w.dim(1) != din)
        throw DimensionError("linear: weight " + w.shape_str() + " does not accept features of width " +
                             std::to_string(din));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != dout))
        throw DimensionError("linear: bias " + bias.shape_str() + " vs output width " + std::to_string(dout));
    const int64_t L = row_count(x);
    Shape oshape = x.shape();
    oshape.back() = dout;
    bool rg = track(tape, {&x, &w, &bias});
    Tensor out = Tensor::zeros(oshape, rg);
    {
        const double* xv = x.values().data();
        const double* wv = w.values().data();
        const double* bv = bias.defined() ? bias.values().data() : nullptr;
        double* ov = out.values().data();
        parallel_for(L, [&](int64_t l) {
            const double* xrow = xv + l * din;
            double* orow = ov + l * dout;
            for (int64_t o = 0; o < dout; ++o) {
                const double* wrow = wv + o * din;
                double acc = bv ? bv[o] : 0.0;
                for (int64_t i = 0; i < din; ++i) acc += xrow[i] * wrow[i];
                orow[o] = acc;
            }
        });
    }
    if (rg) {
        tape.record([x, w, bias, out, L, din, dout]() {
            const double* g = out.grad().data();
            if (x.requires_grad()) {
                double* gx = x.grad().data();
                const double* wv = w.values().data();
                parallel_for(L, [&](int64_t l) {
                    const double* grow = g + l * dout;
                    double* gxrow = gx + l * din;
                    for (int64_t o = 0; o < dout; ++o) {
                        double go = grow[o];
                        const double* wrow = wv + o * din;
                        for (int64_t i = 0; i < din; ++i) gxrow[i] += go * wrow[i];
                    }
                });
            }
            if (w.requires_grad()) {
                double* gw = w.grad().data();
                const double* xv = x.values().data();
                parallel_for(dout, [&](int64_t o) {
                    double* gwrow = gw + o * din;
                    for (int64_t l = 0; l < L; ++l) {
                        double go = g[l * dout + o];
                        const double* xrow = xv + l * din;
                        for (int64_t i = 0; i < din; ++i) gwrow[i] += go * xrow[i];
                    }
                });
            }
            if (bias.defined() && bias.requires_grad()) {
                auto& gb = bias.grad();
                for (int64_t l = 0; l < L; ++l)
                    for (int64_t o = 0; o < dout; ++o) gb[static_cast<size_t>(o)] += g[l * dout + o];
            }
        });
    }
    return out;
}

Tensor project_lastdim(Tape& tape, const Tensor& x, const Tensor& p) {
    const int64_t d = last_dim(x);
    if (p.rank() != 1 || p.dim(0) != d)
        throw DimensionError("project_lastdim: vector " + p.shape_str() + " vs feature width " + std::to_string(d));
    const int64_t L = row_count(x);
    bool rg = track(tape, {&x, &p});
    Tensor out = Tensor::zeros(drop_last(x.shape()), rg);
    {
        const double* xv = x.values().data();
        const double* pv = p.values().data();
        double* ov = out.values().data();
        parallel_for(L, [&](int64_t l) {
            const double* xrow = xv + l * d;
            double acc = 0.0;
            for (int64_t i = 0; i < d; ++i) acc += xrow[i] * pv[i];
            ov[l] = acc;
        });
    }
    if (rg) {
        tape.record([x, p, out, L, d]() {
            const double* g = out.grad().data();
            if (x.requires_grad()) {
                double* gx = x.grad().data();
                const double* pv = p.values().data();
                parallel_for(L, [&](int64_t l) {
                    double gl = g[l];
                    double* gxrow = gx + l * d;
                    for (int64_t i = 0; i < d; ++i) gxrow[i] += gl * pv[i];
                });
            }
            if (p.requires_grad()) {
                auto& gp = p.grad();
                const double* xv = x.values().data();
                for (int64_t l = 0; l < L; ++l) {
                    double gl = g[l];
                    const double* xrow = xv + l * d;
                    for (int64_t i = 0; i < d; ++i) gp[static_cast<size_t>(i)] += gl * xrow[i];
                }
            }
        });
    }
    return out;
}

Tensor squeeze_lastdim(Tape& tape, const Tensor& x) {
    if (x.rank() < 2 || x.shape().back() != 1)
        throw DimensionError("squeeze_lastdim: trailing axis must have extent 1, got " + x.shape_str());
    bool rg = track(tape, {&x});
    Tensor out = Tensor::zeros(drop_last(x.shape()), rg);
    out.values() = x.values();
    if (rg) {
        tape.record([x, out]() {
            const auto& g = out.grad();
            auto& gx = x.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

Tensor concat_lastdim(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_lastdim: no inputs");
    if (parts.size() == 1) {
        // Still runs through the tape so callers can treat K=1 uniformly.
        return scale(tape, parts[0], 1.0);
    }
    const Shape lead = drop_last(parts[0].shape());
    int64_t total = 0;
    for (const Tensor& p : parts) {
        if (drop_last(p.shape()) != lead || p.rank() != parts[0].rank())
            throw DimensionError("concat_lastdim: leading axes differ, " + p.shape_str() + " vs " +
                                 parts[0].shape_str());
        total += last_dim(p);
    }
    Shape oshape = parts[0].shape();
    oshape.back() = total;
    bool rg = false;
    for (const Tensor& p : parts) rg = rg || track(tape, {&p});
    Tensor out = Tensor::zeros(oshape, rg);
    const int64_t L = row_count(out);
    {
        double* ov = out.values().data();
        int64_t off = 0;
        for (const Tensor& p : parts) {
            const int64_t d = last_dim(p);
            const double* pv = p.values().data();
            parallel_for(L, [&](int64_t l) {
                const double* src = pv + l * d;
                double* dst = ov + l * total + off;
                for (int64_t i = 0; i < d; ++i) dst[i] = src[i];
            });
            off += d;
        }
    }
    if (rg) {
        tape.record([parts, out, L, total]() {
            const double* g = out.grad().data();
            int64_t off = 0;
            for (const Tensor& p : parts) {
                const int64_t d = last_dim(p);
                if (p.requires_grad()) {
                    double* gp = p.grad().data();
                    parallel_for(L, [&](int64_t l) {
                        const double* src = g + l * total + off;
                        double* dst = gp + l * d;
                        for (int64_t i = 0; i < d; ++i) dst[i] += src[i];
                    });
                }
                off += d;
            }
        });
    }
    return out;
}

Tensor sum_all(Tape& tape, const Tensor& x) {
    bool rg = track(tape, {&x});
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    Tensor out = Tensor::scalar(acc, rg);
    if (rg) {
        tape.record([x, out]() {
            double g = out.grad()[0];
            auto& gx = x.grad();
            for (double& v : gx) v += g;
        });
    }
    return out;
}

Tensor mean_all(Tape& tape, const Tensor& x) {
    Tensor s = sum_all(tape, x);
    return scale(tape, s, 1.0 / static_cast<double>(x.size()));
}

Tensor sum_lastdim(Tape& tape, const Tensor& x) {
    const int64_t d = last_dim(x);
    const int64_t L = row_count(x);
    bool rg = track(tape, {&x});
    Tensor out = Tensor::zeros(drop_last(x.shape()), rg);
    {
        const double* xv = x.values().data();
        double* ov = out.values().data();
        parallel_for(L, [&](int64_t l) {
            const double* row = xv + l * d;
            double acc = 0.0;
            for (int64_t i = 0; i < d; ++i) acc += row[i];
            ov[l] = acc;
        });
    }
    if (rg) {
        tape.record([x, out, L, d]() {
            const double* g = out.grad().data();
            double* gx = x.grad().data();
            parallel_for(L, [&](int64_t l) {
                double gl = g[l];
                double* row = gx + l * d;
                for (int64_t i = 0; i < d; ++i) row[i] += gl;
            });
        });
    }
    return out;
}

namespace {

Tensor reduce_fields(Tape& tape, const Tensor& x, bool mean) {
    if (x.rank() != 3)
        throw DimensionError("field reduction expects B x n x F, got " + x.shape_str());
    const int64_t B = x.dim(0), n = x.dim(1), F = x.dim(2);
    const double inv = mean ? 1.0 / static_cast<double>(n) : 1.0;
    bool rg = track(tape, {&x});
    Tensor out = Tensor::zeros({B, F}, rg);
    {
        const double* xv = x.values().data();
        double* ov = out.values().data();
        parallel_for(B, [&](int64_t b) {
            double* orow = ov + b * F;
            for (int64_t i = 0; i < n; ++i) {
                const double* xrow = xv + (b * n + i) * F;
                for (int64_t f = 0; f < F; ++f) orow[f] += xrow[f];
            }
            if (mean)
                for (int64_t f = 0; f < F; ++f) orow[f] *= inv;
        });
    }
    if (rg) {
        tape.record([x, out, B, n, F, inv]() {
            const double* g = out.grad().data();
            double* gx = x.grad().data();
            parallel_for(B, [&](int64_t b) {
                const double* grow = g + b * F;
                for (int64_t i = 0; i < n; ++i) {
                    double* gxrow = gx + (b * n + i) * F;
                    for (int64_t f = 0; f < F; ++f) gxrow[f] += grow[f] * inv;
                }
            });
        });
    }
    return out;
}

}  // namespace

Tensor sum_fields(Tape& tape, const Tensor& x) { return reduce_fields(tape, x, false); }
Tensor mean_fields(Tape& tape, const Tensor& x) { return reduce_fields(tape, x, true); }

Tensor pair_hadamard(Tape& tape, const Tensor& e) {
    if (e.rank() != 3) throw DimensionError("pair_hadamard expects B x n x d, got " + e.shape_str());
    const int64_t B = e.dim(0), n = e.dim(1), d = e.dim(2);
    bool rg = track(tape, {&e});
    Tensor out = Tensor::zeros({B, n, n, d}, rg);
    {
        const double* ev = e.values().data();
        double* ov = out.values().data();
        parallel_for(B * n, [&](int64_t bi) {
            const int64_t b = bi / n, i = bi % n;
            const double* ei = ev + (b * n + i) * d;
            for (int64_t j = 0; j < n; ++j) {
                const double* ej = ev + (b * n + j) * d;
                double* orow = ov + ((bi * n) + j) * d;
                for (int64_t f = 0; f < d; ++f) orow[f] = ei[f] * ej[f];
            }
        });
    }
    if (rg) {
        tape.record([e, out, B, n, d]() {
            const double* g = out.grad().data();
            const double* ev = e.values().data();
            double* ge = e.grad().data();
            // d(out[b,i,j]) hits e[b,i] via e[b,j] and d(out[b,j,i]) hits e[b,i]
            // via e[b,j] as well; batch rows are independent.
            parallel_for(B, [&](int64_t b) {
                for (int64_t i = 0; i < n; ++i) {
                    double* gei = ge + (b * n + i) * d;
                    for (int64_t j = 0; j < n; ++j) {
                        const double* ej = ev + (b * n + j) * d;
                        const double* gij = g + (((b * n + i) * n) + j) * d;
                        const double* gji = g + (((b * n + j) * n) + i) * d;
                        for (int64_t f = 0; f < d; ++f) gei[f] += (gij[f] + gji[f]) * ej[f];
                    }
                }
            });
        });
    }
    return out;
}

Tensor masked_softmax(Tape& tape, const Tensor& x, const Tensor& mask) {
    if (!mask.defined()) throw ContractError("masked_softmax: mask is required");
    check_same_shape("masked_softmax", x, mask);
    if (mask.requires_grad())
        throw ContractError("masked_softmax: mask is a constant and must not require grad");
    const int64_t d = last_dim(x);
    const int64_t L = row_count(x);
    // Row validation happens before any allocation so the error is clean.
    for (int64_t l = 0; l < L; ++l) {
        bool any = false;
        for (int64_t i = 0; i < d; ++i)
            if (mask.values()[static_cast<size_t>(l * d + i)] != 0.0) { any = true; break; }
        if (!any)
            throw ContractError("masked_softmax: row " + std::to_string(l) +
                                " has every position masked (empty neighborhood)");
    }
    bool rg = track(tape, {&x});
    Tensor out = Tensor::zeros(x.shape(), rg);
    {
        const double* xv = x.values().data();
        const double* mv = mask.values().data();
        double* ov = out.values().data();
        parallel_for(L, [&](int64_t l) {
            const double* row = xv + l * d;
            const double* mrow = mv + l * d;
            double* orow = ov + l * d;
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t i = 0; i < d; ++i)
                if (mrow[i] != 0.0 && row[i] > mx) mx = row[i];
            double total = 0.0;
            for (int64_t i = 0; i < d; ++i) {
                if (mrow[i] != 0.0) {
                    orow[i] = std::exp(row[i] - mx);
                    total += orow[i];
                }
            }
            double inv = 1.0 / total;
            for (int64_t i = 0; i < d; ++i)
                if (mrow[i] != 0.0) orow[i] *= inv;
        });
    }
    if (rg) {
        tape.record([x, out, L, d]() {
            const double* g = out.grad().data();
            const double* ov = out.values().data();
            double* gx = x.grad().data();
            parallel_for(L, [&](int64_t l) {
                const double* grow = g + l * d;
                const double* orow = ov + l * d;
                double* gxrow = gx + l * d;
                double dot = 0.0;
                for (int64_t i = 0; i < d; ++i) dot += grow[i] * orow[i];
                // Masked positions have orow == 0, so they receive nothing.
                for (int64_t i = 0; i < d; ++i) gxrow[i] += orow[i] * (grow[i] - dot);
            });
        });
    }
    return out;
}

Tensor attend_pairs(Tape& tape, const Tensor& w, const Tensor& t) {
    if (w.rank() != 3 || t.rank() != 4)
        throw DimensionError("attend_pairs: expected w B x n x n and t B x n x n x F, got " + w.shape_str() +
                             " and " + t.shape_str());
    const int64_t B = w.dim(0), n = w.dim(1), F = t.dim(3);
    if (w.dim(2) != n || t.dim(0) != B || t.dim(1) != n || t.dim(2) != n)
        throw DimensionError("attend_pairs: shape mismatch " + w.shape_str() + " vs " + t.shape_str());
    bool rg = track(tape, {&w, &t});
    Tensor out = Tensor::zeros({B, n, F}, rg);
    {
        const double* wv = w.values().data();
        const double* tv = t.values().data();
        double* ov = out.values().data();
        parallel_for(B * n, [&](int64_t bi) {
            double* orow = ov + bi * F;
            for (int64_t j = 0; j < n; ++j) {
                double wij = wv[bi * n + j];
                if (wij == 0.0) continue;
                const double* trow = tv + (bi * n + j) * F;
                for (int64_t f = 0; f < F; ++f) orow[f] += wij * trow[f];
            }
        });
    }
    if (rg) {
        tape.record([w, t, out, B, n, F]() {
            const double* g = out.grad().data();
            if (w.requires_grad()) {
                double* gw = w.grad().data();
                const double* tv = t.values().data();
                parallel_for(B * n, [&](int64_t bi) {
                    const double* grow = g + bi * F;
                    for (int64_t j = 0; j < n; ++j) {
                        const double* trow = tv + (bi * n + j) * F;
                        double acc = 0.0;
                        for (int64_t f = 0; f < F; ++f) acc += grow[f] * trow[f];
                        gw[bi * n + j] += acc;
                    }
                });
            }
            if (t.requires_grad()) {
                double* gt = t.grad().data();
                const double* wv = w.values().data();
                parallel_for(B * n, [&](int64_t bi) {
                    const double* grow = g + bi * F;
                    for (int64_t j = 0; j < n; ++j) {
                        double wij = wv[bi * n + j];
                        if (wij == 0.0) continue;
                        double* trow = gt + (bi * n + j) * F;
                        for (int64_t f = 0; f < F; ++f) trow[f] += wij * grow[f];
                    }
                });
            }
        });
    }
    return out;
}

Tensor attend_nodes(Tape& tape, const Tensor& w, const Tensor& t) {
    if (w.rank() != 3 || t.rank() != 3)
        throw DimensionError("attend_nodes: expected w B x n x n and t B x n x F, got " + w.shape_str() +
                             " and " + t.shape_str());
    const int64_t B = w.dim(0), n = w.dim(1), F = t.dim(2);
    if (w.dim(2) != n || t.dim(0) != B || t.dim(1) != n)
        throw DimensionError("attend_nodes: shape mismatch " + w.shape_str() + " vs " + t.shape_str());
    bool rg = track(tape, {&w, &t});
    Tensor out = Tensor::zeros({B, n, F}, rg);
    {
        const double* wv = w.values().data();
        const double* tv = t.values().data();
        double* ov = out.values().data();
        parallel_for(B * n, [&](int64_t bi) {
            const int64_t b = bi / n;
            double* orow = ov + bi * F;
            for (int64_t j = 0; j < n; ++j) {
                double wij = wv[bi * n + j];
                if (wij == 0.0) continue;
                const double* trow = tv + (b * n + j) * F;
                for (int64_t f = 0; f < F; ++f) orow[f] += wij * trow[f];
            }
        });
    }
    if (rg) {
        tape.record([w, t, out, B, n, F]() {
            const double* g = out.grad().data();
            if (w.requires_grad()) {
                double* gw = w.grad().data();
                const double* tv = t.values().data();
                parallel_for(B * n, [&](int64_t bi) {
                    const int64_t b = bi / n;
                    const double* grow = g + bi * F;
                    for (int64_t j = 0; j < n; ++j) {
                        const double* trow = tv + (b * n + j) * F;
                        double acc = 0.0;
                        for (int64_t f = 0; f < F; ++f) acc += grow[f] * trow[f];
                        gw[bi * n + j] += acc;
                    }
                });
            }
            if (t.requires_grad()) {
                // t[b,j,:] collects from every i in the same batch row; keep the
                // i-loop serial inside each b so writes stay disjoint.
                double* gt = t.grad().data();
                const double* wv = w.values().data();
                parallel_for(B, [&](int64_t b) {
                    for (int64_t i = 0; i < n; ++i) {
                        const double* grow = g + (b * n + i) * F;
                        for (int64_t j = 0; j < n; ++j) {
                            double wij = wv[(b * n + i) * n + j];
                            if (wij == 0.0) continue;
                            double* trow = gt + (b * n + j) * F;
                            for (int64_t f = 0; f < F; ++f) trow[f] += wij * grow[f];
                        }
                    }
                });
            }
        });
    }
    return out;
}

Tensor add_scalar_param(Tape& tape, const Tensor& x, const Tensor& b) {
    if (b.size() != 1) throw DimensionError("add_scalar_param: bias must be scalar, got " + b.shape_str());
    bool rg = track(tape, {&x, &b});
    Tensor out = Tensor::zeros(x.shape(), rg);
    const double bv = b.values()[0];
    for (int64_t i = 0; i < x.size(); ++i) out.values()[i] = x.values()[i] + bv;
    if (rg) {
        tape.record([x, b, out]() {
            const auto& g = out.grad();
            if (x.requires_grad()) {
                auto& gx = x.grad();
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (b.requires_grad()) {
                double acc = 0.0;
                for (double v : g) acc += v;
                b.grad()[0] += acc;
            }
        });
    }
    return out;
}

Tensor topm_row_mask(const Tensor& x, int64_t m) {
    const int64_t d = last_dim(x);
    if (m < 1) throw ConfigError("top-m selection needs m >= 1, got m=" + std::to_string(m));
    if (m > d)
        throw ConfigError("top-m selection with m=" + std::to_string(m) + " but only " + std::to_string(d) +
                          " candidates per row");
    const int64_t L = row_count(x);
    Tensor mask = Tensor::zeros(x.shape(), false);
    const double* xv = x.values().data();
    double* mv = mask.values().data();
    parallel_for(L, [&](int64_t l) {
        const double* row = xv + l * d;
        std::vector<int64_t> idx(static_cast<size_t>(d));
        std::iota(idx.begin(), idx.end(), 0);
        // Larger value first; ties go to the smaller column index.
        std::partial_sort(idx.begin(), idx.begin() + m, idx.end(), [&](int64_t a, int64_t b) {
            if (row[a] != row[b]) return row[a] > row[b];
            return a < b;
        });
        for (int64_t k = 0; k < m; ++k) mv[l * d + idx[static_cast<size_t>(k)]] = 1.0;
    });
    return mask;
}

}  // namespace graphfm
