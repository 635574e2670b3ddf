#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "marl/errors.hpp"

namespace marl {

// Dense row-major shape, rank 0..3. Rank 0 is reserved for "empty".
struct Shape {
    std::array<int, 3> d{1, 1, 1};
    int rank = 0;

    static Shape of(int a) { return Shape{{a, 1, 1}, 1}; }
    static Shape of(int a, int b) { return Shape{{a, b, 1}, 2}; }
    static Shape of(int a, int b, int c) { return Shape{{a, b, c}, 3}; }

    long size() const {
        long n = 1;
        for (int i = 0; i < rank; ++i) n *= d[i];
        return rank == 0 ? 0 : n;
    }
    int last() const { return rank == 0 ? 0 : d[rank - 1]; }
    // Number of length-`last()` rows when the tensor is viewed row-wise.
    long rows() const { return rank == 0 ? 0 : size() / last(); }

    bool operator==(const Shape& o) const {
        if (rank != o.rank) return false;
        for (int i = 0; i < rank; ++i)
            if (d[i] != o.d[i]) return false;
        return true;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }
    std::string str() const;
};

class Tape;

// Dense 64-bit tensor with value semantics. The buffer is shared between
// copies and detached on first write, which keeps tape closures cheap.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(const Shape& s)
        : shape_(s), v_(std::make_shared<std::vector<double>>(s.size(), 0.0)) {}

    static Tensor zeros(const Shape& s) { return Tensor(s); }
    static Tensor full(const Shape& s, double value);
    static Tensor scalar(double value);
    static Tensor vec(std::initializer_list<double> xs);
    static Tensor mat(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor uniform(const Shape& s, double lo, double hi, std::mt19937_64& rng);

    const Shape& shape() const { return shape_; }
    long size() const { return shape_.size(); }
    bool empty() const { return shape_.rank == 0; }

    const double* data() const { return v_ ? v_->data() : nullptr; }
    double* mutable_data();

    double at(int i) const { return (*v_)[i]; }
    double at(int i, int j) const { return (*v_)[static_cast<long>(i) * shape_.d[1] + j]; }
    double at(int i, int j, int k) const {
        return (*v_)[(static_cast<long>(i) * shape_.d[1] + j) * shape_.d[2] + k];
    }
    void set(int i, double x) { mutable_data()[i] = x; }
    void set(int i, int j, double x) {
        mutable_data()[static_cast<long>(i) * shape_.d[1] + j] = x;
    }

    // Value of a size-1 tensor.
    double item() const;

    bool requires_grad() const { return node_ >= 0; }
    int node() const { return node_; }
    int leaf_index() const { return leaf_; }
    Tape* tape() const { return tape_; }

    // Same buffer, no tape participation.
    Tensor detached() const {
        Tensor t;
        t.shape_ = shape_;
        t.v_ = v_;
        return t;
    }

    bool all_finite() const;

private:
    friend class Tape;
    Shape shape_{};
    std::shared_ptr<std::vector<double>> v_;
    Tape* tape_ = nullptr;
    int node_ = -1;
    int leaf_ = -1;
};

// Leaf gradients keyed by leaf registration order.
struct GradMap {
    std::vector<Tensor> leaf_grads;
    const Tensor& of(const Tensor& leaf) const;
};

// Single-owner record of forward ops; backward() consumes the tape.
class Tape {
public:
    Tensor leaf(const Tensor& value);
    GradMap backward(const Tensor& root);

    size_t num_nodes() const { return recs_.size(); }
    size_t num_leaves() const { return leaves_.size(); }

    // Internal op plumbing.
    int emit(const Shape& out_shape, std::function<void(Tape&, const Tensor&)> back);
    Tensor bind(Tensor t, int node) {
        t.tape_ = this;
        t.node_ = node;
        return t;
    }
    Tensor& grad_slot(int node);
    const Tensor* grad_if(int node) const;

private:
    struct Rec {
        Shape shape;
        std::function<void(Tape&, const Tensor&)> back;
    };
    std::vector<Rec> recs_;
    std::vector<Tensor> grads_;
    std::vector<int> leaves_;
};

// ---------------------------------------------------------------------------
// Tape-aware ops. Each records a backward closure when any input has a node.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// a*x + b, scalars applied elementwise.
Tensor affine_const(const Tensor& x, double a, double b);
// Bias broadcast over the last dimension.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// [m,k]x[k,n]; [B,m,k]x[k,n] (shared right); [B,m,k]x[B,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& a);
Tensor reshape(const Tensor& a, const Shape& s);

Tensor sigmoid(const Tensor& a);
Tensor tanh_act(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor elu(const Tensor& a);
Tensor abs_act(const Tensor& a);

// Row transforms over the last dimension. Throw NonFinite on NaN/Inf input.
Tensor softmax_rows(const Tensor& z);
Tensor sparsemax_rows(const Tensor& z);
// Jacobian-vector product of the simplex projection at a forward output row.
Tensor sparsemax_backward(const Tensor& row_out, const Tensor& upstream);

enum class MaskMode { NegInf, RowMinShift };
// Overwrites logits of non-alive key columns; gradient stops at masked entries.
Tensor mask_keys(const Tensor& z, const Tensor& alive, MaskMode mode, double shift = 2.0);

// Mean over the second-to-last dimension: [B,M,d] -> [B,d], [M,d] -> [d].
Tensor mean_rows(const Tensor& a);
Tensor concat_last(const Tensor& a, const Tensor& b);
// Picks x[b, idx[b]] -> rank-1 [B].
Tensor gather_cols(const Tensor& x, const std::vector<int>& idx);
Tensor sum_all(const Tensor& a);

// ---------------------------------------------------------------------------
// GRU cell (shared by both utility heads).
// ---------------------------------------------------------------------------

struct GruParams {
    Tensor wr, wu, wh;  // input weights  [d_in, d_h]
    Tensor ur, uu, uh;  // hidden weights [d_h, d_h]
    Tensor br, bu, bh;  // biases         [d_h]
    static GruParams init(int in_dim, int hidden_dim, std::mt19937_64& rng);
};

// x: [d_in] or [B,d_in]; h_prev: matching rank. Returns h of the same rank.
Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruParams& p);

// ---------------------------------------------------------------------------
// Optimizers over flat parameter lists (visit order).
// ---------------------------------------------------------------------------

struct RmsPropState {
    std::vector<Tensor> accum;
};
void rmsprop_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                  RmsPropState& state, double lr, double smoothing);

struct AdamState {
    std::vector<Tensor> m, v;
    long step = 0;
};
void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr);

double global_norm(const std::vector<Tensor>& grads);
void clip_gradients(std::vector<Tensor>& grads, double max_norm);

}  // namespace marl
