#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nsync/param_set.hpp"
#include "nsync/tensor.hpp"

namespace nsync {

// Define-by-run reverse-mode graph over Tensor-valued nodes. A graph is built
// fresh for every forward pass; reset() keeps node and buffer storage alive so
// steady-state passes allocate nothing. Leaf nodes referencing external
// tensors (input/param) only borrow them: the tensors must stay alive and
// unmodified until the pass, including backward, is done.
class Graph {
  public:
    using Var = int32_t;

    // Borrowed constant leaf.
    Var input(const Tensor& t);
    // Borrowed named leaf; gradient is tracked when trainable is true.
    Var param(const std::string& name, const Tensor& t, bool trainable);
    // Owned constant leaf.
    Var constant(const Tensor& t);

    Var add(Var a, Var b);
    Var add_n(const std::vector<Var>& xs);
    Var sub(Var a, Var b);
    Var emul(Var a, Var b);
    Var scale(Var a, double c);
    // w is (m,n), x is (n); result is (m).
    Var matvec(Var w, Var x);
    // Row r of a (m,n) tensor as an (n) vector.
    Var row(Var w, int64_t r);
    Var silu(Var a);
    Var concat(const std::vector<Var>& xs);
    Var square(Var a);
    Var sum(Var a);
    Var mean(Var a);

    const Tensor& value(Var v) const { return tensor_of(v); }
    double scalar_value(Var v) const;
    // Valid after backward() for nodes that track gradients.
    const Tensor& grad_of(Var v) const;

    void reset();
    size_t live_nodes() const { return active_; }

    // d(loss)/d(p) for every trainable parameter registered in this graph, in
    // the layout of params. Trainable parameters that were never registered
    // get zero slices. Rejects a non-scalar loss; rejects non-finite gradients
    // naming the offending parameter.
    GradVector backward(Var loss, const ParamSet& params);

  private:
    enum class Op : uint8_t {
        Leaf,
        Add,
        AddN,
        Sub,
        EMul,
        Scale,
        MatVec,
        Row,
        Silu,
        Concat,
        Square,
        Sum,
        Mean
    };

    struct Node {
        Op op = Op::Leaf;
        bool requires_grad = false;
        double coef = 0.0;
        int64_t aux = 0;
        std::vector<Var> parents;
        const Tensor* external = nullptr;
        Tensor value;
        Tensor grad;
    };

    Node& fresh_node(Op op, bool requires_grad);
    Var make_elementwise(Op op, Var a, Var b);
    const Tensor& tensor_of(Var v) const;
    Node& node(Var v);
    const Tensor& check_var(Var v) const;
    void run_backward(Var loss);

    std::vector<Node> nodes_;
    size_t active_ = 0;
    std::vector<std::pair<std::string, Var>> registered_;
};

using Var = Graph::Var;

}  // namespace nsync
