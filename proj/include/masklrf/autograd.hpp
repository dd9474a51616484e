#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <vector>

#include "masklrf/types.hpp"

// A small tape-based reverse-mode differentiation engine over row-major
// matrices. Nodes are appended in evaluation order, so reverse creation order
// is a valid topological order for backward().
namespace masklrf::ag {

struct Var {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t id = npos;
    bool valid() const { return id != npos; }
};

/// Sparse attention targets. targets[i] lists key indices for query i; when a
/// relative-pose matrix is given, pair_rows[i][j] is the row holding R for
/// (i, targets[i][j]).
struct AttentionPattern {
    std::vector<std::vector<std::size_t>> targets;
    std::vector<std::vector<std::size_t>> pair_rows;
};

class Graph {
public:
    /// Constant input, never differentiated.
    Var constant(Matrix value);
    /// Owned leaf that receives a gradient.
    Var variable(Matrix value);
    /// Non-owning leaf over an external tensor (parameters). The tensor must
    /// outlive the graph.
    Var parameter(const Matrix& value, bool requires_grad = true);

    const Matrix& value(Var v) const;
    /// Null when no gradient reached v.
    const Matrix* grad(Var v) const;
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Seeds d(root)/d(root) = 1 and propagates. Root must be 1x1.
    void backward(Var root);

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    /// a + row broadcast over every row of a.
    Var add_row(Var a, Var row);
    Var scale(Var a, double s);
    Var gelu(Var a);
    Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-6);
    /// Column-wise max over consecutive blocks of `group` rows.
    Var segment_max(Var a, std::size_t group);
    /// Repeats each row `group` times.
    Var segment_broadcast(Var a, std::size_t group);
    Var concat_cols(Var a, Var b);
    Var concat_rows(Var a, Var b);
    Var gather_rows(Var a, std::vector<std::size_t> rows);
    Var mean_rows(Var a);
    Var sum(Var a);
    /// sum((a - target)^2) as a 1x1 node.
    Var sum_sq_diff(Var a, const Matrix& target);
    /// Multi-head attention over sparse targets with optional relative-pose
    /// terms: e_ij = q_i.(k_j + r_ij)/sqrt(d_h), softmax over targets,
    /// out_i = sum_j a_ij (v_j + r_ij), per contiguous head slice.
    /// Pass an invalid Var for r to get plain attention.
    Var sparse_attention(Var q, Var k, Var v, Var r, const AttentionPattern& pattern, std::size_t heads,
                         std::vector<Matrix>* weights_out = nullptr);

private:
    struct Node {
        Matrix owned;
        const Matrix* external = nullptr;
        Matrix grad;
        bool requires_grad = false;
        bool has_grad = false;
        std::function<void(Graph&, const Matrix& out_grad)> backward;

        const Matrix& value() const { return external ? *external : owned; }
    };

    Var push(Matrix value, bool requires_grad, std::function<void(Graph&, const Matrix&)> bw);
    Matrix& grad_acc(Var v);
    bool needs(Var v) const { return v.valid() && nodes_[v.id].requires_grad; }

    std::deque<Node> nodes_;
};

double gelu(double x);
double gelu_grad(double x);

}  // namespace masklrf::ag
