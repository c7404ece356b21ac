#include "adcsl/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "adcsl/errors.hpp"

namespace adcsl {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap cmap(const double* p, std::size_t rows, std::size_t cols) {
    return ConstMap(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MutMap mmap(double* p, std::size_t rows, std::size_t cols) {
    return MutMap(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

enum class MatmulKind { plain, broadcast_rhs, batched };

struct MatmulDims {
    MatmulKind kind;
    std::size_t batch, m, p, q;
};

MatmulDims matmul_dims(const Shape& a, const Shape& b) {
    auto fail = [&] {
        throw DimensionError("matmul shape mismatch: " + shape_string(a) + " . " + shape_string(b));
    };
    if (a.size() == 2 && b.size() == 2) {
        if (a[1] != b[0]) fail();
        return {MatmulKind::plain, 1, a[0], a[1], b[1]};
    }
    if (a.size() == 3 && b.size() == 2) {
        if (a[2] != b[0]) fail();
        return {MatmulKind::broadcast_rhs, a[0], a[1], a[2], b[1]};
    }
    if (a.size() == 3 && b.size() == 3) {
        if (a[0] != b[0] || a[2] != b[1]) fail();
        return {MatmulKind::batched, a[0], a[1], a[2], b[2]};
    }
    fail();
    return {};
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + " shape mismatch: " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
}

void require_rank_at_least(const Tensor& a, std::size_t r, const char* op) {
    if (a.rank() < r) throw DimensionError(std::string(op) + " needs rank >= " + std::to_string(r));
}

// Number of rows when the last axis is treated as the vector axis.
std::size_t outer_count(const Tensor& a) { return a.size() / a.dim(-1); }

Shape with_last_dim(Shape s, std::size_t last) {
    s.back() = last;
    return s;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

namespace kernel {

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto d = matmul_dims(a.shape(), b.shape());
    switch (d.kind) {
        case MatmulKind::plain: {
            Tensor out({d.m, d.q});
            mmap(out.data().data(), d.m, d.q).noalias() = cmap(a.data().data(), d.m, d.p) * cmap(b.data().data(), d.p, d.q);
            return out;
        }
        case MatmulKind::broadcast_rhs: {
            Tensor out({d.batch, d.m, d.q});
            mmap(out.data().data(), d.batch * d.m, d.q).noalias() =
                cmap(a.data().data(), d.batch * d.m, d.p) * cmap(b.data().data(), d.p, d.q);
            return out;
        }
        case MatmulKind::batched: {
            Tensor out({d.batch, d.m, d.q});
            for (std::size_t i = 0; i < d.batch; ++i) {
                mmap(out.data().data() + i * d.m * d.q, d.m, d.q).noalias() =
                    cmap(a.data().data() + i * d.m * d.p, d.m, d.p) * cmap(b.data().data() + i * d.p * d.q, d.p, d.q);
            }
            return out;
        }
    }
    return {};
}

Tensor transpose(const Tensor& a) {
    require_rank_at_least(a, 2, "transpose");
    const std::size_t rows = a.dim(-2), cols = a.dim(-1);
    const std::size_t batch = a.size() / (rows * cols);
    Shape s = a.shape();
    std::swap(s[s.size() - 1], s[s.size() - 2]);
    Tensor out(s);
    for (std::size_t b = 0; b < batch; ++b) {
        mmap(out.data().data() + b * rows * cols, cols, rows) = cmap(a.data().data() + b * rows * cols, rows, cols).transpose();
    }
    return out;
}

Tensor softmax_rows(const Tensor& a) {
    const std::size_t n = a.dim(-1);
    const std::size_t rows = outer_count(a);
    Tensor out(a.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.data().data() + r * n;
        double* y = out.data().data() + r * n;
        const double mx = *std::max_element(x, x + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (std::size_t j = 0; j < n; ++j) y[j] /= z;
    }
    return out;
}

}  // namespace kernel

Var matmul(const Var& a, const Var& b) {
    const auto d = matmul_dims(a.shape(), b.shape());
    Tensor out = kernel::matmul(a.value(), b.value());
    return a.tape().record(std::move(out), {a, b}, [a, b, d](Tape& tape, const Tensor& g) {
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        if (Tensor* ga = tape.grad_buffer(a)) {
            if (d.kind == MatmulKind::batched) {
                for (std::size_t i = 0; i < d.batch; ++i) {
                    mmap(ga->data().data() + i * d.m * d.p, d.m, d.p).noalias() +=
                        cmap(g.data().data() + i * d.m * d.q, d.m, d.q) *
                        cmap(bv.data().data() + i * d.p * d.q, d.p, d.q).transpose();
                }
            } else {
                const std::size_t rows = d.batch * d.m;
                mmap(ga->data().data(), rows, d.p).noalias() +=
                    cmap(g.data().data(), rows, d.q) * cmap(bv.data().data(), d.p, d.q).transpose();
            }
        }
        if (Tensor* gb = tape.grad_buffer(b)) {
            if (d.kind == MatmulKind::batched) {
                for (std::size_t i = 0; i < d.batch; ++i) {
                    mmap(gb->data().data() + i * d.p * d.q, d.p, d.q).noalias() +=
                        cmap(av.data().data() + i * d.m * d.p, d.m, d.p).transpose() *
                        cmap(g.data().data() + i * d.m * d.q, d.m, d.q);
                }
            } else {
                const std::size_t rows = d.batch * d.m;
                mmap(gb->data().data(), d.p, d.q).noalias() +=
                    cmap(av.data().data(), rows, d.p).transpose() * cmap(g.data().data(), rows, d.q);
            }
        }
    });
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
        tape.accumulate(a, g);
        tape.accumulate(b, g);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
        tape.accumulate(a, g);
        if (Tensor* gb = tape.grad_buffer(b)) {
            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
        if (Tensor* ga = tape.grad_buffer(a)) {
            const auto& bv = b.value();
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
        }
        if (Tensor* gb = tape.grad_buffer(b)) {
            const auto& av = a.value();
            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.data()) v *= s;
    return a.tape().record(std::move(out), {a}, [a, s](Tape& tape, const Tensor& g) {
        if (Tensor* ga = tape.grad_buffer(a)) {
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * s;
        }
    });
}

Var add_bias(const Var& a, const Var& bias) {
    const std::size_t d = a.value().dim(-1);
    if (bias.value().rank() != 1 || bias.value().size() != d) {
        throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " vs input " + shape_string(a.shape()));
    }
    Tensor out = a.value();
    const auto bv = bias.value().data();
    const std::size_t rows = outer_count(out);
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = out.data().data() + r * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += bv[j];
    }
    return a.tape().record(std::move(out), {a, bias}, [a, bias, rows, d](Tape& tape, const Tensor& g) {
        tape.accumulate(a, g);
        if (Tensor* gb = tape.grad_buffer(bias)) {
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < d; ++j) (*gb)[j] += g[r * d + j];
            }
        }
    });
}

Var embedding_add(const Var& a, const Var& table) {
    const auto& t = table.value();
    if (a.value().rank() != 3 || t.rank() != 2 || t.dim(0) != a.value().dim(1) || t.dim(1) != a.value().dim(2)) {
        throw DimensionError("embedding_add: table " + shape_string(t.shape()) + " vs input " + shape_string(a.shape()));
    }
    Tensor out = a.value();
    const std::size_t block = t.size();
    const std::size_t batch = out.dim(0);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < block; ++i) out[b * block + i] += t[i];
    }
    return a.tape().record(std::move(out), {a, table}, [a, table, block, batch](Tape& tape, const Tensor& g) {
        tape.accumulate(a, g);
        if (Tensor* gt = tape.grad_buffer(table)) {
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t i = 0; i < block; ++i) (*gt)[i] += g[b * block + i];
            }
        }
    });
}

Var transpose(const Var& a) {
    return a.tape().record(kernel::transpose(a.value()), {a}, [a](Tape& tape, const Tensor& g) {
        tape.accumulate(a, kernel::transpose(g));
    });
}

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return a.tape().record(std::move(out), {a}, [a](Tape& tape, const Tensor& g) {
        tape.accumulate(a, g.reshaped(a.shape()));
    });
}

Var concat_last_dim(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimensionError("concat_last_dim of nothing");
    const Tensor& first = parts.front().value();
    const std::size_t rows = outer_count(first);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        const auto& v = p.value();
        if (v.rank() != first.rank() || outer_count(v) != rows ||
            !std::equal(v.shape().begin(), v.shape().end() - 1, first.shape().begin())) {
            throw DimensionError("concat_last_dim: incompatible part " + shape_string(v.shape()) + " vs " +
                                 shape_string(first.shape()));
        }
        widths.push_back(v.dim(-1));
        total += v.dim(-1);
    }
    Tensor out(with_last_dim(first.shape(), total));
    std::size_t col = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& v = parts[k].value();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(v.data().data() + r * widths[k], widths[k], out.data().data() + r * total + col);
        }
        col += widths[k];
    }
    return parts.front().tape().record(std::move(out), parts,
        [parts, widths, rows, total](Tape& tape, const Tensor& g) {
            std::size_t col = 0;
            for (std::size_t k = 0; k < parts.size(); ++k) {
                if (Tensor* gp = tape.grad_buffer(parts[k])) {
                    for (std::size_t r = 0; r < rows; ++r) {
                        const double* src = g.data().data() + r * total + col;
                        double* dst = gp->data().data() + r * widths[k];
                        for (std::size_t j = 0; j < widths[k]; ++j) dst[j] += src[j];
                    }
                }
                col += widths[k];
            }
        });
}

Var slice_last_dim(const Var& a, std::size_t start, std::size_t length) {
    const std::size_t width = a.value().dim(-1);
    if (length == 0 || start + length > width) {
        throw DimensionError("slice_last_dim [" + std::to_string(start) + ", +" + std::to_string(length) +
                             ") out of range for " + shape_string(a.shape()));
    }
    const std::size_t rows = outer_count(a.value());
    Tensor out(with_last_dim(a.shape(), length));
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(a.value().data().data() + r * width + start, length, out.data().data() + r * length);
    }
    return a.tape().record(std::move(out), {a}, [a, start, length, width, rows](Tape& tape, const Tensor& g) {
        if (Tensor* ga = tape.grad_buffer(a)) {
            for (std::size_t r = 0; r < rows; ++r) {
                double* dst = ga->data().data() + r * width + start;
                const double* src = g.data().data() + r * length;
                for (std::size_t j = 0; j < length; ++j) dst[j] += src[j];
            }
        }
    });
}

Var gather_rows(const Var& a, const std::vector<std::vector<std::size_t>>& rows) {
    const auto& v = a.value();
    if (v.rank() != 3) throw DimensionError("gather_rows expects [B x n x d], got " + shape_string(v.shape()));
    const std::size_t batch = v.dim(0), n = v.dim(1), d = v.dim(2);
    if (rows.size() != batch) throw DimensionError("gather_rows: one row list per batch element required");
    const std::size_t k = rows.empty() ? 0 : rows.front().size();
    if (k == 0) throw DimensionError("gather_rows: empty row list");
    for (const auto& r : rows) {
        if (r.size() != k) throw DimensionError("gather_rows: ragged row lists");
        for (auto i : r) {
            if (i >= n) throw DimensionError("gather_rows: row index " + std::to_string(i) + " >= " + std::to_string(n));
        }
    }
    Tensor out({batch, k, d});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < k; ++j) {
            std::copy_n(v.data().data() + (b * n + rows[b][j]) * d, d, out.data().data() + (b * k + j) * d);
        }
    }
    return a.tape().record(std::move(out), {a}, [a, rows, n, k, d](Tape& tape, const Tensor& g) {
        if (Tensor* ga = tape.grad_buffer(a)) {
            for (std::size_t b = 0; b < rows.size(); ++b) {
                for (std::size_t j = 0; j < k; ++j) {
                    double* dst = ga->data().data() + (b * n + rows[b][j]) * d;
                    const double* src = g.data().data() + (b * k + j) * d;
                    for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                }
            }
        }
    });
}

Var gather_rows(const Var& a, const std::vector<std::size_t>& rows) {
    if (a.value().rank() != 3) throw DimensionError("gather_rows expects [B x n x d], got " + shape_string(a.shape()));
    return gather_rows(a, std::vector<std::vector<std::size_t>>(a.value().dim(0), rows));
}

Var mean_rows(const Var& a) {
    const auto& v = a.value();
    require_rank_at_least(v, 2, "mean_rows");
    const std::size_t n = v.dim(-2), d = v.dim(-1);
    const std::size_t outer = v.size() / (n * d);
    Shape s(v.shape().begin(), v.shape().end() - 2);
    s.push_back(d);
    Tensor out(s);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < n; ++i) {
            const double* src = v.data().data() + (o * n + i) * d;
            for (std::size_t c = 0; c < d; ++c) out[o * d + c] += src[c];
        }
        for (std::size_t c = 0; c < d; ++c) out[o * d + c] *= inv;
    }
    return a.tape().record(std::move(out), {a}, [a, outer, n, d, inv](Tape& tape, const Tensor& g) {
        if (Tensor* ga = tape.grad_buffer(a)) {
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < n; ++i) {
                    double* dst = ga->data().data() + (o * n + i) * d;
                    for (std::size_t c = 0; c < d; ++c) dst[c] += g[o * d + c] * inv;
                }
            }
        }
    });
}

Var prepend_row(const Var& a, const Var& row) {
    const auto& v = a.value();
    const auto& r = row.value();
    if (v.rank() != 3 || r.size() != v.dim(2)) {
        throw DimensionError("prepend_row: row " + shape_string(r.shape()) + " vs input " + shape_string(v.shape()));
    }
    const std::size_t batch = v.dim(0), m = v.dim(1), d = v.dim(2);
    Tensor out({batch, m + 1, d});
    for (std::size_t b = 0; b < batch; ++b) {
        double* dst = out.data().data() + b * (m + 1) * d;
        std::copy_n(r.data().data(), d, dst);
        std::copy_n(v.data().data() + b * m * d, m * d, dst + d);
    }
    return a.tape().record(std::move(out), {a, row}, [a, row, batch, m, d](Tape& tape, const Tensor& g) {
        if (Tensor* ga = tape.grad_buffer(a)) {
            for (std::size_t b = 0; b < batch; ++b) {
                const double* src = g.data().data() + (b * (m + 1) + 1) * d;
                double* dst = ga->data().data() + b * m * d;
                for (std::size_t i = 0; i < m * d; ++i) dst[i] += src[i];
            }
        }
        if (Tensor* gr = tape.grad_buffer(row)) {
            for (std::size_t b = 0; b < batch; ++b) {
                const double* src = g.data().data() + b * (m + 1) * d;
                for (std::size_t c = 0; c < d; ++c) (*gr)[c] += src[c];
            }
        }
    });
}

Var segment_mean(const Var& a, const std::vector<std::size_t>& segment_of, std::size_t segments) {
    const auto& v = a.value();
    require_rank_at_least(v, 1, "segment_mean");
    const std::size_t batch = v.dim(0);
    if (segment_of.size() != batch) throw DimensionError("segment_mean: one segment id per batch element required");
    std::vector<std::size_t> counts(segments, 0);
    for (auto s : segment_of) {
        if (s >= segments) throw DimensionError("segment_mean: segment id out of range");
        ++counts[s];
    }
    for (auto c : counts) {
        if (c == 0) throw ContractError("segment_mean: empty segment");
    }
    const std::size_t block = v.size() / batch;
    Shape shape = v.shape();
    shape[0] = segments;
    Tensor out(shape);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* src = v.data().data() + b * block;
        double* dst = out.data().data() + segment_of[b] * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
    }
    for (std::size_t s = 0; s < segments; ++s) {
        const double inv = 1.0 / static_cast<double>(counts[s]);
        for (std::size_t i = 0; i < block; ++i) out[s * block + i] *= inv;
    }
    return a.tape().record(std::move(out), {a}, [a, segment_of, counts, block](Tape& tape, const Tensor& g) {
        if (Tensor* ga = tape.grad_buffer(a)) {
            for (std::size_t b = 0; b < segment_of.size(); ++b) {
                const double inv = 1.0 / static_cast<double>(counts[segment_of[b]]);
                const double* src = g.data().data() + segment_of[b] * block;
                double* dst = ga->data().data() + b * block;
                for (std::size_t i = 0; i < block; ++i) dst[i] += src[i] * inv;
            }
        }
    });
}

Var softmax_rows(const Var& a) {
    Tensor out = kernel::softmax_rows(a.value());
    const std::size_t n = out.dim(-1);
    const std::size_t rows = outer_count(out);
    Tensor probs = out;
    return a.tape().record(std::move(out), {a}, [a, probs = std::move(probs), n, rows](Tape& tape, const Tensor& g) {
        Tensor* ga = tape.grad_buffer(a);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* yr = probs.data().data() + r * n;
            const double* gr = g.data().data() + r * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += gr[j] * yr[j];
            double* dst = ga->data().data() + r * n;
            for (std::size_t j = 0; j < n; ++j) dst[j] += yr[j] * (gr[j] - s);
        }
    });
}

Var log_softmax_rows(const Var& a) {
    const auto& x = a.value();
    const std::size_t n = x.dim(-1);
    const std::size_t rows = outer_count(x);
    Tensor out(x.shape());
    Tensor probs(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data().data() + r * n;
        const double mx = *std::max_element(xr, xr + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(xr[j] - mx);
        const double lz = std::log(z);
        for (std::size_t j = 0; j < n; ++j) {
            out[r * n + j] = xr[j] - mx - lz;
            probs[r * n + j] = std::exp(out[r * n + j]);
        }
    }
    return a.tape().record(std::move(out), {a}, [a, probs = std::move(probs), n, rows](Tape& tape, const Tensor& g) {
        Tensor* ga = tape.grad_buffer(a);
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += g[r * n + j];
            for (std::size_t j = 0; j < n; ++j) (*ga)[r * n + j] += g[r * n + j] - probs[r * n + j] * s;
        }
    });
}

Var layernorm(const Var& a, const Var& gain, const Var& bias, double eps) {
    const auto& x = a.value();
    const std::size_t d = x.dim(-1);
    if (gain.value().size() != d || bias.value().size() != d) {
        throw DimensionError("layernorm: affine params must have " + std::to_string(d) + " entries");
    }
    const std::size_t rows = outer_count(x);
    Tensor xhat(x.shape());
    std::vector<double> inv_std(rows);
    Tensor out(x.shape());
    const auto gv = gain.value().data();
    const auto bv = bias.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data().data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (xr[j] - mean) * inv_std[r];
            xhat[r * d + j] = h;
            out[r * d + j] = h * gv[j] + bv[j];
        }
    }
    return a.tape().record(std::move(out), {a, gain, bias},
        [a, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](Tape& tape, const Tensor& g) {
            const auto gv = gain.value().data();
            Tensor* gg = tape.grad_buffer(gain);
            Tensor* gb = tape.grad_buffer(bias);
            Tensor* ga = tape.grad_buffer(a);
            std::vector<double> gh(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.data().data() + r * d;
                const double* hr = xhat.data().data() + r * d;
                double mean_gh = 0.0, mean_ghh = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    if (gg) (*gg)[j] += gr[j] * hr[j];
                    if (gb) (*gb)[j] += gr[j];
                    gh[j] = gr[j] * gv[j];
                    mean_gh += gh[j];
                    mean_ghh += gh[j] * hr[j];
                }
                if (!ga) continue;
                mean_gh /= static_cast<double>(d);
                mean_ghh /= static_cast<double>(d);
                double* dst = ga->data().data() + r * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += inv_std[r] * (gh[j] - mean_gh - hr[j] * mean_ghh);
            }
        });
}

Var gelu(const Var& a) {
    const auto& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
    }
    return a.tape().record(std::move(out), {a}, [a](Tape& tape, const Tensor& g) {
        Tensor* ga = tape.grad_buffer(a);
        const auto& x = a.value();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double v = x[i];
            const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
            const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
            (*ga)[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
        }
    });
}

Var sum(const Var& a) {
    return a.tape().record(Tensor::scalar(adcsl::sum(a.value())), {a}, [a](Tape& tape, const Tensor& g) {
        if (Tensor* ga = tape.grad_buffer(a)) {
            for (auto& v : ga->data()) v += g[0];
        }
    });
}

}  // namespace adcsl
