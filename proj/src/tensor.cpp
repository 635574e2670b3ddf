#include "marl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace marl {

std::string Shape::str() const {
    std::ostringstream os;
    os << "[";
    for (int i = 0; i < rank; ++i) os << d[i] << (i + 1 < rank ? "," : "");
    os << "]";
    return os.str();
}

Tensor Tensor::full(const Shape& s, double value) {
    Tensor t(s);
    std::fill_n(t.mutable_data(), s.size(), value);
    return t;
}

Tensor Tensor::scalar(double value) {
    Tensor t(Shape::of(1));
    t.mutable_data()[0] = value;
    return t;
}

Tensor Tensor::vec(std::initializer_list<double> xs) {
    Tensor t(Shape::of(static_cast<int>(xs.size())));
    std::copy(xs.begin(), xs.end(), t.mutable_data());
    return t;
}

Tensor Tensor::mat(std::initializer_list<std::initializer_list<double>> rows) {
    const int m = static_cast<int>(rows.size());
    const int n = static_cast<int>(rows.begin()->size());
    Tensor t(Shape::of(m, n));
    double* p = t.mutable_data();
    for (const auto& r : rows) {
        if (static_cast<int>(r.size()) != n) throw ShapeMismatch("ragged matrix literal");
        p = std::copy(r.begin(), r.end(), p);
    }
    return t;
}

Tensor Tensor::uniform(const Shape& s, double lo, double hi, std::mt19937_64& rng) {
    Tensor t(s);
    std::uniform_real_distribution<double> dist(lo, hi);
    double* p = t.mutable_data();
    for (long i = 0; i < s.size(); ++i) p[i] = dist(rng);
    return t;
}

double* Tensor::mutable_data() {
    if (!v_) throw Error("write to empty tensor");
    if (v_.use_count() > 1) v_ = std::make_shared<std::vector<double>>(*v_);
    return v_->data();
}

double Tensor::item() const {
    if (size() != 1) throw ShapeMismatch("item() on tensor of shape " + shape_.str());
    return (*v_)[0];
}

bool Tensor::all_finite() const {
    const double* p = data();
    for (long i = 0; i < size(); ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

const Tensor& GradMap::of(const Tensor& leaf) const {
    if (leaf.leaf_index() < 0 || leaf.leaf_index() >= static_cast<int>(leaf_grads.size()))
        throw Error("GradMap::of: tensor is not a registered leaf");
    return leaf_grads[leaf.leaf_index()];
}

Tensor Tape::leaf(const Tensor& value) {
    Tensor t = value.detached();
    t.tape_ = this;
    t.node_ = emit(t.shape(), {});
    t.leaf_ = static_cast<int>(leaves_.size());
    leaves_.push_back(t.node_);
    return t;
}

int Tape::emit(const Shape& out_shape, std::function<void(Tape&, const Tensor&)> back) {
    recs_.push_back(Rec{out_shape, std::move(back)});
    grads_.emplace_back();
    return static_cast<int>(recs_.size()) - 1;
}

Tensor& Tape::grad_slot(int node) {
    if (grads_[node].empty()) grads_[node] = Tensor::zeros(recs_[node].shape);
    return grads_[node];
}

const Tensor* Tape::grad_if(int node) const {
    return grads_[node].empty() ? nullptr : &grads_[node];
}

GradMap Tape::backward(const Tensor& root) {
    if (root.tape() != this || root.node() < 0 ||
        root.node() >= static_cast<int>(recs_.size()))
        throw DetachedRoot("backward: root is not connected to this tape");
    if (root.size() != 1) throw NotScalar("backward: root has shape " + root.shape().str());

    grad_slot(root.node()).mutable_data()[0] = 1.0;
    for (int id = root.node(); id >= 0; --id) {
        if (grads_[id].empty()) continue;
        if (recs_[id].back) recs_[id].back(*this, grads_[id]);
        if (recs_[id].back) grads_[id] = Tensor();  // free non-leaf grads eagerly
    }

    GradMap out;
    out.leaf_grads.reserve(leaves_.size());
    for (int node : leaves_) {
        if (grads_[node].empty())
            out.leaf_grads.push_back(Tensor::zeros(recs_[node].shape));
        else
            out.leaf_grads.push_back(std::move(grads_[node]));
    }
    recs_.clear();
    grads_.clear();
    leaves_.clear();
    return out;
}

// ---------------------------------------------------------------------------
// Op helpers
// ---------------------------------------------------------------------------

namespace {

Tape* pick_tape(const Tensor& a, const Tensor& b) {
    Tape* ta = a.node() >= 0 ? a.tape() : nullptr;
    Tape* tb = b.node() >= 0 ? b.tape() : nullptr;
    if (ta && tb && ta != tb) throw Error("operands recorded on different tapes");
    return ta ? ta : tb;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeMismatch(std::string(op) + ": " + a.shape().str() + " vs " + b.shape().str());
}

void axpy(Tensor& dst, const Tensor& src, double c) {
    double* d = dst.mutable_data();
    const double* s = src.data();
    for (long i = 0; i < dst.size(); ++i) d[i] += c * s[i];
}

// c[m,n] (+)= a[m,k] * b[k,n]
void mm(double* c, const double* a, const double* b, int m, int k, int n, bool acc) {
    if (!acc) std::fill_n(c, static_cast<long>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<long>(i) * k;
        double* ci = c + static_cast<long>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + static_cast<long>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m,n] (+)= a[m,k] * b[n,k]^T
void mm_nt(double* c, const double* a, const double* b, int m, int k, int n, bool acc) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<long>(i) * k;
        double* ci = c + static_cast<long>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<long>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] = acc ? ci[j] + s : s;
        }
    }
}

// c[m,n] (+)= a[k,m]^T * b[k,n]
void mm_tn(double* c, const double* a, const double* b, int m, int k, int n, bool acc) {
    if (!acc) std::fill_n(c, static_cast<long>(m) * n, 0.0);
    for (int p = 0; p < k; ++p) {
        const double* ap = a + static_cast<long>(p) * m;
        const double* bp = b + static_cast<long>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double av = ap[i];
            double* ci = c + static_cast<long>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

template <typename Fwd, typename Bwd>
Tensor elementwise(const Tensor& a, Fwd fwd, Bwd make_back) {
    Tensor out(a.shape());
    {
        const double* s = a.data();
        double* d = out.mutable_data();
        for (long i = 0; i < a.size(); ++i) d[i] = fwd(s[i]);
    }
    if (a.node() < 0) return out;
    Tape* tp = a.tape();
    return tp->bind(out, tp->emit(out.shape(), make_back(a.node(), a.detached(), out.detached())));
}

}  // namespace

// ---------------------------------------------------------------------------
// Arithmetic
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    {
        const double* pa = a.data();
        const double* pb = b.data();
        double* d = out.mutable_data();
        for (long i = 0; i < a.size(); ++i) d[i] = pa[i] + pb[i];
    }
    Tape* tp = pick_tape(a, b);
    if (!tp) return out;
    const int an = a.node(), bn = b.node();
    return tp->bind(out, tp->emit(out.shape(), [an, bn](Tape& t, const Tensor& g) {
        if (an >= 0) axpy(t.grad_slot(an), g, 1.0);
        if (bn >= 0) axpy(t.grad_slot(bn), g, 1.0);
    }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    {
        const double* pa = a.data();
        const double* pb = b.data();
        double* d = out.mutable_data();
        for (long i = 0; i < a.size(); ++i) d[i] = pa[i] - pb[i];
    }
    Tape* tp = pick_tape(a, b);
    if (!tp) return out;
    const int an = a.node(), bn = b.node();
    return tp->bind(out, tp->emit(out.shape(), [an, bn](Tape& t, const Tensor& g) {
        if (an >= 0) axpy(t.grad_slot(an), g, 1.0);
        if (bn >= 0) axpy(t.grad_slot(bn), g, -1.0);
    }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    {
        const double* pa = a.data();
        const double* pb = b.data();
        double* d = out.mutable_data();
        for (long i = 0; i < a.size(); ++i) d[i] = pa[i] * pb[i];
    }
    Tape* tp = pick_tape(a, b);
    if (!tp) return out;
    const int an = a.node(), bn = b.node();
    const Tensor av = a.detached(), bv = b.detached();
    return tp->bind(out, tp->emit(out.shape(), [an, bn, av, bv](Tape& t, const Tensor& g) {
        if (an >= 0) {
            Tensor& ga = t.grad_slot(an);
            double* d = ga.mutable_data();
            const double* pg = g.data();
            const double* pb = bv.data();
            for (long i = 0; i < ga.size(); ++i) d[i] += pg[i] * pb[i];
        }
        if (bn >= 0) {
            Tensor& gb = t.grad_slot(bn);
            double* d = gb.mutable_data();
            const double* pg = g.data();
            const double* pa = av.data();
            for (long i = 0; i < gb.size(); ++i) d[i] += pg[i] * pa[i];
        }
    }));
}

Tensor scale(const Tensor& a, double c) { return affine_const(a, c, 0.0); }

Tensor affine_const(const Tensor& x, double a, double b) {
    Tensor out(x.shape());
    {
        const double* s = x.data();
        double* d = out.mutable_data();
        for (long i = 0; i < x.size(); ++i) d[i] = a * s[i] + b;
    }
    if (x.node() < 0) return out;
    Tape* tp = x.tape();
    const int xn = x.node();
    return tp->bind(out, tp->emit(out.shape(), [xn, a](Tape& t, const Tensor& g) {
        axpy(t.grad_slot(xn), g, a);
    }));
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (bias.shape().rank != 1 || bias.shape().d[0] != x.shape().last())
        throw ShapeMismatch("add_bias: " + x.shape().str() + " vs " + bias.shape().str());
    const int n = x.shape().last();
    const long rows = x.shape().rows();
    Tensor out(x.shape());
    {
        const double* s = x.data();
        const double* pb = bias.data();
        double* d = out.mutable_data();
        for (long r = 0; r < rows; ++r)
            for (int j = 0; j < n; ++j) d[r * n + j] = s[r * n + j] + pb[j];
    }
    Tape* tp = pick_tape(x, bias);
    if (!tp) return out;
    const int xn = x.node(), bn = bias.node();
    return tp->bind(out, tp->emit(out.shape(), [xn, bn, rows, n](Tape& t, const Tensor& g) {
        if (xn >= 0) axpy(t.grad_slot(xn), g, 1.0);
        if (bn >= 0) {
            Tensor& gb = t.grad_slot(bn);
            double* d = gb.mutable_data();
            const double* pg = g.data();
            for (long r = 0; r < rows; ++r)
                for (int j = 0; j < n; ++j) d[j] += pg[r * n + j];
        }
    }));
}

// ---------------------------------------------------------------------------
// Matmul family
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    Shape so;
    int batch = 1, m = 0, k = 0, n = 0;
    bool batched_b = false;
    if (sa.rank == 2 && sb.rank == 2) {
        m = sa.d[0];
        k = sa.d[1];
        n = sb.d[1];
        if (sb.d[0] != k) throw ShapeMismatch("matmul: " + sa.str() + " x " + sb.str());
        so = Shape::of(m, n);
    } else if (sa.rank == 3 && sb.rank == 2) {
        batch = sa.d[0];
        m = sa.d[1];
        k = sa.d[2];
        n = sb.d[1];
        if (sb.d[0] != k) throw ShapeMismatch("matmul: " + sa.str() + " x " + sb.str());
        so = Shape::of(batch, m, n);
    } else if (sa.rank == 3 && sb.rank == 3) {
        batch = sa.d[0];
        m = sa.d[1];
        k = sa.d[2];
        n = sb.d[2];
        if (sb.d[0] != batch || sb.d[1] != k)
            throw ShapeMismatch("matmul: " + sa.str() + " x " + sb.str());
        so = Shape::of(batch, m, n);
        batched_b = true;
    } else {
        throw ShapeMismatch("matmul: unsupported ranks " + sa.str() + " x " + sb.str());
    }

    Tensor out(so);
    {
        const double* pa = a.data();
        const double* pb = b.data();
        double* pc = out.mutable_data();
        const long a_step = static_cast<long>(m) * k;
        const long b_step = batched_b ? static_cast<long>(k) * n : 0;
        const long c_step = static_cast<long>(m) * n;
        for (int bi = 0; bi < batch; ++bi)
            mm(pc + bi * c_step, pa + bi * a_step, pb + bi * b_step, m, k, n, false);
    }

    Tape* tp = pick_tape(a, b);
    if (!tp) return out;
    const int an = a.node(), bn = b.node();
    const Tensor av = a.detached(), bv = b.detached();
    return tp->bind(out, tp->emit(so, [=](Tape& t, const Tensor& g) {
        const long a_step = static_cast<long>(m) * k;
        const long b_step = batched_b ? static_cast<long>(k) * n : 0;
        const long c_step = static_cast<long>(m) * n;
        if (an >= 0) {
            Tensor& ga = t.grad_slot(an);
            double* d = ga.mutable_data();
            for (int bi = 0; bi < batch; ++bi)
                mm_nt(d + bi * a_step, g.data() + bi * c_step, bv.data() + bi * b_step, m, n, k,
                      true);
        }
        if (bn >= 0) {
            Tensor& gb = t.grad_slot(bn);
            double* d = gb.mutable_data();
            for (int bi = 0; bi < batch; ++bi)
                mm_tn(d + bi * b_step, av.data() + bi * a_step, g.data() + bi * c_step, k, m, n,
                      true);
        }
    }));
}

Tensor transpose_last2(const Tensor& a) {
    const Shape& s = a.shape();
    if (s.rank < 2) throw ShapeMismatch("transpose_last2: rank " + s.str());
    const int batch = s.rank == 3 ? s.d[0] : 1;
    const int m = s.d[s.rank - 2];
    const int n = s.d[s.rank - 1];
    Shape so = s.rank == 3 ? Shape::of(batch, n, m) : Shape::of(n, m);
    Tensor out(so);
    {
        const double* src = a.data();
        double* dst = out.mutable_data();
        const long step = static_cast<long>(m) * n;
        for (int bi = 0; bi < batch; ++bi)
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    dst[bi * step + static_cast<long>(j) * m + i] =
                        src[bi * step + static_cast<long>(i) * n + j];
    }
    if (a.node() < 0) return out;
    Tape* tp = a.tape();
    const int an = a.node();
    return tp->bind(out, tp->emit(so, [an, batch, m, n](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_slot(an);
        double* d = ga.mutable_data();
        const double* pg = g.data();
        const long step = static_cast<long>(m) * n;
        for (int bi = 0; bi < batch; ++bi)
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < m; ++i)
                    d[bi * step + static_cast<long>(i) * n + j] +=
                        pg[bi * step + static_cast<long>(j) * m + i];
    }));
}

Tensor reshape(const Tensor& a, const Shape& s) {
    if (s.size() != a.size())
        throw ShapeMismatch("reshape: " + a.shape().str() + " -> " + s.str());
    Tensor shaped(s);
    std::memcpy(shaped.mutable_data(), a.data(), sizeof(double) * a.size());
    if (a.node() < 0) return shaped;
    Tape* tp = a.tape();
    const int an = a.node();
    return tp->bind(shaped, tp->emit(s, [an](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_slot(an);
        double* d = ga.mutable_data();
        const double* pg = g.data();
        for (long i = 0; i < ga.size(); ++i) d[i] += pg[i];
    }));
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

Tensor sigmoid(const Tensor& a) {
    return elementwise(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](int an, const Tensor&, const Tensor& out) {
            return [an, out](Tape& t, const Tensor& g) {
                Tensor& ga = t.grad_slot(an);
                double* d = ga.mutable_data();
                const double* pg = g.data();
                const double* po = out.data();
                for (long i = 0; i < ga.size(); ++i) d[i] += pg[i] * po[i] * (1.0 - po[i]);
            };
        });
}

Tensor tanh_act(const Tensor& a) {
    return elementwise(
        a, [](double x) { return std::tanh(x); },
        [](int an, const Tensor&, const Tensor& out) {
            return [an, out](Tape& t, const Tensor& g) {
                Tensor& ga = t.grad_slot(an);
                double* d = ga.mutable_data();
                const double* pg = g.data();
                const double* po = out.data();
                for (long i = 0; i < ga.size(); ++i) d[i] += pg[i] * (1.0 - po[i] * po[i]);
            };
        });
}

Tensor relu(const Tensor& a) {
    return elementwise(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](int an, const Tensor&, const Tensor& out) {
            return [an, out](Tape& t, const Tensor& g) {
                Tensor& ga = t.grad_slot(an);
                double* d = ga.mutable_data();
                const double* pg = g.data();
                const double* po = out.data();
                for (long i = 0; i < ga.size(); ++i) d[i] += po[i] > 0.0 ? pg[i] : 0.0;
            };
        });
}

Tensor elu(const Tensor& a) {
    return elementwise(
        a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
        [](int an, const Tensor&, const Tensor& out) {
            return [an, out](Tape& t, const Tensor& g) {
                Tensor& ga = t.grad_slot(an);
                double* d = ga.mutable_data();
                const double* pg = g.data();
                const double* po = out.data();
                for (long i = 0; i < ga.size(); ++i)
                    d[i] += pg[i] * (po[i] > 0.0 ? 1.0 : po[i] + 1.0);
            };
        });
}

Tensor abs_act(const Tensor& a) {
    return elementwise(
        a, [](double x) { return std::fabs(x); },
        [](int an, const Tensor& in, const Tensor&) {
            return [an, in](Tape& t, const Tensor& g) {
                Tensor& ga = t.grad_slot(an);
                double* d = ga.mutable_data();
                const double* pg = g.data();
                const double* pi = in.data();
                for (long i = 0; i < ga.size(); ++i)
                    d[i] += pg[i] * (pi[i] > 0.0 ? 1.0 : (pi[i] < 0.0 ? -1.0 : 0.0));
            };
        });
}

// ---------------------------------------------------------------------------
// Row transforms
// ---------------------------------------------------------------------------

namespace {

void check_row_input(const Tensor& z, const char* op) {
    if (z.shape().rank < 1) throw ShapeMismatch(std::string(op) + ": empty input");
    if (!z.all_finite()) throw NonFinite(std::string(op) + ": non-finite input");
}

}  // namespace

Tensor softmax_rows(const Tensor& z) {
    check_row_input(z, "softmax_rows");
    const int n = z.shape().last();
    const long rows = z.shape().rows();
    Tensor out(z.shape());
    {
        const double* s = z.data();
        double* d = out.mutable_data();
        for (long r = 0; r < rows; ++r) {
            const double* zr = s + r * n;
            double* pr = d + r * n;
            double mx = zr[0];
            for (int j = 1; j < n; ++j) mx = std::max(mx, zr[j]);
            double sum = 0.0;
            for (int j = 0; j < n; ++j) {
                pr[j] = std::exp(zr[j] - mx);
                sum += pr[j];
            }
            for (int j = 0; j < n; ++j) pr[j] /= sum;
        }
    }
    if (z.node() < 0) return out;
    Tape* tp = z.tape();
    const int zn = z.node();
    const Tensor ov = out.detached();
    return tp->bind(out, tp->emit(z.shape(), [zn, ov, rows, n](Tape& t, const Tensor& g) {
        Tensor& gz = t.grad_slot(zn);
        double* d = gz.mutable_data();
        const double* pg = g.data();
        const double* po = ov.data();
        for (long r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += pg[r * n + j] * po[r * n + j];
            for (int j = 0; j < n; ++j)
                d[r * n + j] += po[r * n + j] * (pg[r * n + j] - dot);
        }
    }));
}

namespace {

// In-place simplex projection of one row; scratch must hold n doubles.
void sparsemax_row(const double* z, double* out, double* scratch, int n) {
    std::copy(z, z + n, scratch);
    std::sort(scratch, scratch + n, std::greater<double>());
    double prefix = 0.0, support_prefix = 0.0;
    int support = 0;
    for (int j = 0; j < n; ++j) {
        prefix += scratch[j];
        if (1.0 + (j + 1) * scratch[j] > prefix) {
            support = j + 1;
            support_prefix = prefix;
        }
    }
    const double tau = (support_prefix - 1.0) / support;
    for (int j = 0; j < n; ++j) out[j] = std::max(0.0, z[j] - tau);
}

}  // namespace

Tensor sparsemax_rows(const Tensor& z) {
    check_row_input(z, "sparsemax_rows");
    const int n = z.shape().last();
    const long rows = z.shape().rows();
    Tensor out(z.shape());
    {
        std::vector<double> scratch(n);
        const double* s = z.data();
        double* d = out.mutable_data();
        for (long r = 0; r < rows; ++r) sparsemax_row(s + r * n, d + r * n, scratch.data(), n);
    }
    if (z.node() < 0) return out;
    Tape* tp = z.tape();
    const int zn = z.node();
    const Tensor ov = out.detached();
    return tp->bind(out, tp->emit(z.shape(), [zn, ov, rows, n](Tape& t, const Tensor& g) {
        Tensor& gz = t.grad_slot(zn);
        double* d = gz.mutable_data();
        const double* pg = g.data();
        const double* po = ov.data();
        for (long r = 0; r < rows; ++r) {
            double sum = 0.0;
            int cnt = 0;
            for (int j = 0; j < n; ++j) {
                if (po[r * n + j] > 0.0) {
                    sum += pg[r * n + j];
                    ++cnt;
                }
            }
            const double mean = sum / cnt;
            for (int j = 0; j < n; ++j)
                if (po[r * n + j] > 0.0) d[r * n + j] += pg[r * n + j] - mean;
        }
    }));
}

Tensor sparsemax_backward(const Tensor& row_out, const Tensor& upstream) {
    require_same_shape(row_out, upstream, "sparsemax_backward");
    const long n = row_out.size();
    double sum = 0.0;
    int cnt = 0;
    const double* po = row_out.data();
    const double* pu = upstream.data();
    for (long j = 0; j < n; ++j) {
        if (po[j] > 0.0) {
            sum += pu[j];
            ++cnt;
        }
    }
    if (cnt == 0) throw EmptySupport("sparsemax_backward: all-zero output row");
    const double mean = sum / cnt;
    Tensor g(row_out.shape());
    double* d = g.mutable_data();
    for (long j = 0; j < n; ++j) d[j] = po[j] > 0.0 ? pu[j] - mean : 0.0;
    return g;
}

Tensor mask_keys(const Tensor& z, const Tensor& alive, MaskMode mode, double shift) {
    const Shape& s = z.shape();
    if (s.rank < 2) throw ShapeMismatch("mask_keys: rank " + s.str());
    const int batch = s.rank == 3 ? s.d[0] : 1;
    const int m = s.d[s.rank - 2];
    const int n = s.d[s.rank - 1];
    const Shape expect = s.rank == 3 ? Shape::of(batch, n) : Shape::of(n);
    if (alive.shape() != expect)
        throw ShapeMismatch("mask_keys: alive " + alive.shape().str() + " for logits " + s.str());

    Tensor out(s);
    {
        const double* src = z.data();
        const double* pa = alive.data();
        double* dst = out.mutable_data();
        const long step = static_cast<long>(m) * n;
        for (int bi = 0; bi < batch; ++bi) {
            const double* arow = pa + static_cast<long>(bi) * n;
            for (int q = 0; q < m; ++q) {
                const double* zr = src + bi * step + static_cast<long>(q) * n;
                double* pr = dst + bi * step + static_cast<long>(q) * n;
                double fill = -1e30;
                if (mode == MaskMode::RowMinShift) {
                    double lo = 0.0;
                    bool any = false;
                    for (int j = 0; j < n; ++j) {
                        if (arow[j] != 0.0 && (!any || zr[j] < lo)) {
                            lo = zr[j];
                            any = true;
                        }
                    }
                    fill = any ? lo - shift : 0.0;
                }
                for (int j = 0; j < n; ++j) pr[j] = arow[j] != 0.0 ? zr[j] : fill;
            }
        }
    }
    if (z.node() < 0) return out;
    Tape* tp = z.tape();
    const int zn = z.node();
    const Tensor av = alive.detached();
    return tp->bind(out, tp->emit(s, [zn, av, batch, m, n](Tape& t, const Tensor& g) {
        Tensor& gz = t.grad_slot(zn);
        double* d = gz.mutable_data();
        const double* pg = g.data();
        const double* pa = av.data();
        const long step = static_cast<long>(m) * n;
        for (int bi = 0; bi < batch; ++bi) {
            const double* arow = pa + static_cast<long>(bi) * n;
            for (int q = 0; q < m; ++q)
                for (int j = 0; j < n; ++j)
                    if (arow[j] != 0.0)
                        d[bi * step + static_cast<long>(q) * n + j] +=
                            pg[bi * step + static_cast<long>(q) * n + j];
        }
    }));
}

// ---------------------------------------------------------------------------
// Reductions and reassembly
// ---------------------------------------------------------------------------

Tensor mean_rows(const Tensor& a) {
    const Shape& s = a.shape();
    if (s.rank < 2) throw ShapeMismatch("mean_rows: rank " + s.str());
    const int batch = s.rank == 3 ? s.d[0] : 1;
    const int m = s.d[s.rank - 2];
    const int n = s.d[s.rank - 1];
    Shape so = s.rank == 3 ? Shape::of(batch, n) : Shape::of(n);
    Tensor out(so);
    {
        const double* src = a.data();
        double* dst = out.mutable_data();
        const double inv = 1.0 / m;
        for (int bi = 0; bi < batch; ++bi) {
            double* po = dst + static_cast<long>(bi) * n;
            for (int i = 0; i < m; ++i) {
                const double* pr = src + (static_cast<long>(bi) * m + i) * n;
                for (int j = 0; j < n; ++j) po[j] += pr[j] * inv;
            }
        }
    }
    if (a.node() < 0) return out;
    Tape* tp = a.tape();
    const int an = a.node();
    return tp->bind(out, tp->emit(so, [an, batch, m, n](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_slot(an);
        double* d = ga.mutable_data();
        const double* pg = g.data();
        const double inv = 1.0 / m;
        for (int bi = 0; bi < batch; ++bi)
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    d[(static_cast<long>(bi) * m + i) * n + j] +=
                        pg[static_cast<long>(bi) * n + j] * inv;
    }));
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.rank != sb.rank || sa.rank < 1 || sa.rank > 2)
        throw ShapeMismatch("concat_last: " + sa.str() + " + " + sb.str());
    if (sa.rank == 2 && sa.d[0] != sb.d[0])
        throw ShapeMismatch("concat_last: " + sa.str() + " + " + sb.str());
    const int rows = sa.rank == 2 ? sa.d[0] : 1;
    const int na = sa.last(), nb = sb.last();
    Shape so = sa.rank == 2 ? Shape::of(rows, na + nb) : Shape::of(na + nb);
    Tensor out(so);
    {
        const double* pa = a.data();
        const double* pb = b.data();
        double* d = out.mutable_data();
        for (int r = 0; r < rows; ++r) {
            std::memcpy(d + static_cast<long>(r) * (na + nb), pa + static_cast<long>(r) * na,
                        sizeof(double) * na);
            std::memcpy(d + static_cast<long>(r) * (na + nb) + na, pb + static_cast<long>(r) * nb,
                        sizeof(double) * nb);
        }
    }
    Tape* tp = pick_tape(a, b);
    if (!tp) return out;
    const int an = a.node(), bn = b.node();
    return tp->bind(out, tp->emit(so, [an, bn, rows, na, nb](Tape& t, const Tensor& g) {
        const double* pg = g.data();
        if (an >= 0) {
            Tensor& ga = t.grad_slot(an);
            double* d = ga.mutable_data();
            for (int r = 0; r < rows; ++r)
                for (int j = 0; j < na; ++j)
                    d[static_cast<long>(r) * na + j] += pg[static_cast<long>(r) * (na + nb) + j];
        }
        if (bn >= 0) {
            Tensor& gb = t.grad_slot(bn);
            double* d = gb.mutable_data();
            for (int r = 0; r < rows; ++r)
                for (int j = 0; j < nb; ++j)
                    d[static_cast<long>(r) * nb + j] +=
                        pg[static_cast<long>(r) * (na + nb) + na + j];
        }
    }));
}

Tensor gather_cols(const Tensor& x, const std::vector<int>& idx) {
    const Shape& s = x.shape();
    if (s.rank != 2) throw ShapeMismatch("gather_cols: rank " + s.str());
    const int rows = s.d[0], n = s.d[1];
    if (static_cast<int>(idx.size()) != rows)
        throw ShapeMismatch("gather_cols: index count mismatch");
    Tensor out(Shape::of(rows));
    {
        const double* src = x.data();
        double* d = out.mutable_data();
        for (int r = 0; r < rows; ++r) {
            if (idx[r] < 0 || idx[r] >= n) throw ShapeMismatch("gather_cols: index out of range");
            d[r] = src[static_cast<long>(r) * n + idx[r]];
        }
    }
    if (x.node() < 0) return out;
    Tape* tp = x.tape();
    const int xn = x.node();
    const std::vector<int> ix = idx;
    return tp->bind(out, tp->emit(out.shape(), [xn, ix, n](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_slot(xn);
        double* d = gx.mutable_data();
        const double* pg = g.data();
        for (size_t r = 0; r < ix.size(); ++r) d[r * n + ix[r]] += pg[r];
    }));
}

Tensor sum_all(const Tensor& a) {
    Tensor out(Shape::of(1));
    {
        const double* s = a.data();
        double acc = 0.0;
        for (long i = 0; i < a.size(); ++i) acc += s[i];
        out.mutable_data()[0] = acc;
    }
    if (a.node() < 0) return out;
    Tape* tp = a.tape();
    const int an = a.node();
    return tp->bind(out, tp->emit(out.shape(), [an](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_slot(an);
        double* d = ga.mutable_data();
        const double gv = g.data()[0];
        for (long i = 0; i < ga.size(); ++i) d[i] += gv;
    }));
}

// ---------------------------------------------------------------------------
// GRU
// ---------------------------------------------------------------------------

GruParams GruParams::init(int in_dim, int hidden_dim, std::mt19937_64& rng) {
    const double bx = 1.0 / std::sqrt(static_cast<double>(in_dim));
    const double bh = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    GruParams p;
    p.wr = Tensor::uniform(Shape::of(in_dim, hidden_dim), -bx, bx, rng);
    p.wu = Tensor::uniform(Shape::of(in_dim, hidden_dim), -bx, bx, rng);
    p.wh = Tensor::uniform(Shape::of(in_dim, hidden_dim), -bx, bx, rng);
    p.ur = Tensor::uniform(Shape::of(hidden_dim, hidden_dim), -bh, bh, rng);
    p.uu = Tensor::uniform(Shape::of(hidden_dim, hidden_dim), -bh, bh, rng);
    p.uh = Tensor::uniform(Shape::of(hidden_dim, hidden_dim), -bh, bh, rng);
    p.br = Tensor::zeros(Shape::of(hidden_dim));
    p.bu = Tensor::zeros(Shape::of(hidden_dim));
    p.bh = Tensor::zeros(Shape::of(hidden_dim));
    return p;
}

Tensor gru_cell(const Tensor& x_in, const Tensor& h_in, const GruParams& p) {
    const bool vec_mode = x_in.shape().rank == 1;
    if (x_in.shape().rank != h_in.shape().rank)
        throw ShapeMismatch("gru_cell: x rank " + x_in.shape().str() + " vs h " +
                            h_in.shape().str());
    Tensor x = vec_mode ? reshape(x_in, Shape::of(1, x_in.shape().d[0])) : x_in;
    Tensor h = vec_mode ? reshape(h_in, Shape::of(1, h_in.shape().d[0])) : h_in;
    if (x.shape().d[1] != p.wr.shape().d[0] || h.shape().d[1] != p.ur.shape().d[0])
        throw ShapeMismatch("gru_cell: input dims do not match params");

    Tensor r = sigmoid(add_bias(add(matmul(x, p.wr), matmul(h, p.ur)), p.br));
    Tensor u = sigmoid(add_bias(add(matmul(x, p.wu), matmul(h, p.uu)), p.bu));
    Tensor cand = tanh_act(add_bias(add(matmul(x, p.wh), matmul(mul(r, h), p.uh)), p.bh));
    Tensor out = add(mul(affine_const(u, -1.0, 1.0), h), mul(u, cand));
    return vec_mode ? reshape(out, Shape::of(out.shape().d[1])) : out;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

namespace {
constexpr double kRmsPropDelta = 1e-5;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
}  // namespace

void rmsprop_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                  RmsPropState& state, double lr, double smoothing) {
    if (params.size() != grads.size()) throw ShapeMismatch("rmsprop_step: count mismatch");
    if (state.accum.empty()) {
        state.accum.reserve(params.size());
        for (const Tensor* p : params) state.accum.push_back(Tensor::zeros(p->shape()));
    }
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        if (p.shape() != g.shape())
            throw ShapeMismatch("rmsprop_step: param " + p.shape().str() + " vs grad " +
                                g.shape().str());
        double* acc = state.accum[i].mutable_data();
        double* pv = p.mutable_data();
        const double* gv = g.data();
        for (long j = 0; j < p.size(); ++j) {
            acc[j] = smoothing * acc[j] + (1.0 - smoothing) * gv[j] * gv[j];
            pv[j] -= lr * gv[j] / (std::sqrt(acc[j]) + kRmsPropDelta);
        }
    }
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr) {
    if (params.size() != grads.size()) throw ShapeMismatch("adam_step: count mismatch");
    if (state.m.empty()) {
        for (const Tensor* p : params) {
            state.m.push_back(Tensor::zeros(p->shape()));
            state.v.push_back(Tensor::zeros(p->shape()));
        }
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        if (p.shape() != g.shape()) throw ShapeMismatch("adam_step: shape mismatch");
        double* m = state.m[i].mutable_data();
        double* v = state.v[i].mutable_data();
        double* pv = p.mutable_data();
        const double* gv = g.data();
        for (long j = 0; j < p.size(); ++j) {
            m[j] = kAdamBeta1 * m[j] + (1.0 - kAdamBeta1) * gv[j];
            v[j] = kAdamBeta2 * v[j] + (1.0 - kAdamBeta2) * gv[j] * gv[j];
            pv[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + kAdamEps);
        }
    }
}

double global_norm(const std::vector<Tensor>& grads) {
    double sq = 0.0;
    for (const Tensor& g : grads) {
        const double* p = g.data();
        for (long i = 0; i < g.size(); ++i) sq += p[i] * p[i];
    }
    return std::sqrt(sq);
}

void clip_gradients(std::vector<Tensor>& grads, double max_norm) {
    const double norm = global_norm(grads);
    if (norm <= max_norm || norm == 0.0) return;
    const double c = max_norm / norm;
    for (Tensor& g : grads) {
        double* p = g.mutable_data();
        for (long i = 0; i < g.size(); ++i) p[i] *= c;
    }
}

}  // namespace marl
