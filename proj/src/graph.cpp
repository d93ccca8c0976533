#include "nsync/graph.hpp"

#include <cmath>

namespace nsync {

namespace {
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void resize_like(Tensor& t, const std::vector<int64_t>& shape) {
    t.shape = shape;
    t.data.resize(static_cast<size_t>(shape_numel(shape)));
}
}  // namespace

Graph::Node& Graph::fresh_node(Op op, bool requires_grad) {
    if (active_ == nodes_.size()) nodes_.emplace_back();
    Node& nd = nodes_[active_++];
    nd.op = op;
    nd.requires_grad = requires_grad;
    nd.coef = 0.0;
    nd.aux = 0;
    nd.parents.clear();
    nd.external = nullptr;
    return nd;
}

Graph::Node& Graph::node(Var v) { return nodes_[static_cast<size_t>(v)]; }

const Tensor& Graph::tensor_of(Var v) const {
    const Node& nd = nodes_[static_cast<size_t>(v)];
    return nd.external ? *nd.external : nd.value;
}

const Tensor& Graph::check_var(Var v) const {
    NSYNC_CHECK(v >= 0 && static_cast<size_t>(v) < active_, "invalid graph node id ", v);
    return tensor_of(v);
}

void Graph::reset() {
    active_ = 0;
    registered_.clear();
}

Var Graph::input(const Tensor& t) {
    Node& nd = fresh_node(Op::Leaf, false);
    nd.external = &t;
    return static_cast<Var>(active_ - 1);
}

Var Graph::param(const std::string& name, const Tensor& t, bool trainable) {
    Node& nd = fresh_node(Op::Leaf, trainable);
    nd.external = &t;
    Var v = static_cast<Var>(active_ - 1);
    registered_.emplace_back(name, v);
    return v;
}

Var Graph::constant(const Tensor& t) {
    Node& nd = fresh_node(Op::Leaf, false);
    resize_like(nd.value, t.shape);
    nd.value.data = t.data;
    return static_cast<Var>(active_ - 1);
}

Var Graph::make_elementwise(Op op, Var a, Var b) {
    const Tensor& ta = check_var(a);
    const Tensor& tb = check_var(b);
    NSYNC_CHECK(ta.same_shape(tb), "elementwise op shape mismatch: ", shape_str(ta.shape), " vs ",
                shape_str(tb.shape));
    // fresh_node may reallocate node storage; keep the shape by value.
    const std::vector<int64_t> shape = ta.shape;
    bool rg = node(a).requires_grad || node(b).requires_grad;
    Node& nd = fresh_node(op, rg);
    nd.parents = {a, b};
    resize_like(nd.value, shape);
    return static_cast<Var>(active_ - 1);
}

Var Graph::add(Var a, Var b) {
    Var v = make_elementwise(Op::Add, a, b);
    const Tensor& ta = tensor_of(a);
    const Tensor& tb = tensor_of(b);
    Tensor& out = node(v).value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] + tb.data[i];
    return v;
}

Var Graph::add_n(const std::vector<Var>& xs) {
    NSYNC_CHECK(!xs.empty(), "add_n needs at least one operand");
    const std::vector<int64_t> shape = check_var(xs[0]).shape;
    bool rg = false;
    for (Var x : xs) {
        NSYNC_CHECK(check_var(x).shape == shape, "add_n operand shape mismatch");
        rg = rg || node(x).requires_grad;
    }
    Node& nd = fresh_node(Op::AddN, rg);
    nd.parents = xs;
    resize_like(nd.value, shape);
    Var v = static_cast<Var>(active_ - 1);
    Tensor& out = node(v).value;
    std::fill(out.data.begin(), out.data.end(), 0.0);
    for (Var x : xs) {
        const Tensor& tx = tensor_of(x);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tx.data[i];
    }
    return v;
}

Var Graph::sub(Var a, Var b) {
    Var v = make_elementwise(Op::Sub, a, b);
    const Tensor& ta = tensor_of(a);
    const Tensor& tb = tensor_of(b);
    Tensor& out = node(v).value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] - tb.data[i];
    return v;
}

Var Graph::emul(Var a, Var b) {
    Var v = make_elementwise(Op::EMul, a, b);
    const Tensor& ta = tensor_of(a);
    const Tensor& tb = tensor_of(b);
    Tensor& out = node(v).value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] * tb.data[i];
    return v;
}

Var Graph::scale(Var a, double c) {
    const std::vector<int64_t> shape = check_var(a).shape;
    Node& nd = fresh_node(Op::Scale, node(a).requires_grad);
    nd.parents = {a};
    nd.coef = c;
    resize_like(nd.value, shape);
    Var v = static_cast<Var>(active_ - 1);
    Tensor& out = node(v).value;
    const double* in = tensor_of(a).data.data();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = c * in[i];
    return v;
}

Var Graph::matvec(Var w, Var x) {
    const Tensor& tw = check_var(w);
    const Tensor& tx = check_var(x);
    NSYNC_CHECK(tw.shape.size() == 2, "matvec weight must be 2-D, got ", shape_str(tw.shape));
    NSYNC_CHECK(tx.shape.size() == 1 && tx.shape[0] == tw.shape[1], "matvec shapes incompatible: ",
                shape_str(tw.shape), " x ", shape_str(tx.shape));
    int64_t m = tw.shape[0], n = tw.shape[1];
    Node& nd = fresh_node(Op::MatVec, node(w).requires_grad || node(x).requires_grad);
    nd.parents = {w, x};
    resize_like(nd.value, {m});
    Var v = static_cast<Var>(active_ - 1);
    Tensor& out = node(v).value;
    const double* W = tensor_of(w).data.data();
    const double* X = tensor_of(x).data.data();
    for (int64_t i = 0; i < m; ++i) {
        double acc = 0.0;
        const double* wr = W + i * n;
        for (int64_t j = 0; j < n; ++j) acc += wr[j] * X[j];
        out.data[static_cast<size_t>(i)] = acc;
    }
    return v;
}

Var Graph::row(Var w, int64_t r) {
    const Tensor& tw = check_var(w);
    NSYNC_CHECK(tw.shape.size() == 2, "row source must be 2-D, got ", shape_str(tw.shape));
    NSYNC_CHECK(r >= 0 && r < tw.shape[0], "row index ", r, " out of range for ",
                shape_str(tw.shape));
    int64_t n = tw.shape[1];
    Node& nd = fresh_node(Op::Row, node(w).requires_grad);
    nd.parents = {w};
    nd.aux = r;
    resize_like(nd.value, {n});
    Var v = static_cast<Var>(active_ - 1);
    const double* src = tensor_of(w).data.data() + r * n;
    std::copy(src, src + n, node(v).value.data.begin());
    return v;
}

Var Graph::silu(Var a) {
    const std::vector<int64_t> shape = check_var(a).shape;
    Node& nd = fresh_node(Op::Silu, node(a).requires_grad);
    nd.parents = {a};
    resize_like(nd.value, shape);
    Var v = static_cast<Var>(active_ - 1);
    Tensor& out = node(v).value;
    const double* in = tensor_of(a).data.data();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = in[i] * sigmoid(in[i]);
    return v;
}

Var Graph::concat(const std::vector<Var>& xs) {
    NSYNC_CHECK(!xs.empty(), "concat needs at least one operand");
    int64_t total = 0;
    bool rg = false;
    for (Var x : xs) {
        const Tensor& tx = check_var(x);
        NSYNC_CHECK(tx.shape.size() == 1, "concat operands must be 1-D");
        total += tx.shape[0];
        rg = rg || node(x).requires_grad;
    }
    Node& nd = fresh_node(Op::Concat, rg);
    nd.parents = xs;
    resize_like(nd.value, {total});
    Var v = static_cast<Var>(active_ - 1);
    double* out = node(v).value.data.data();
    for (Var x : xs) {
        const Tensor& tx = tensor_of(x);
        out = std::copy(tx.data.begin(), tx.data.end(), out);
    }
    return v;
}

Var Graph::square(Var a) {
    const std::vector<int64_t> shape = check_var(a).shape;
    Node& nd = fresh_node(Op::Square, node(a).requires_grad);
    nd.parents = {a};
    resize_like(nd.value, shape);
    Var v = static_cast<Var>(active_ - 1);
    Tensor& out = node(v).value;
    const double* in = tensor_of(a).data.data();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = in[i] * in[i];
    return v;
}

Var Graph::sum(Var a) {
    check_var(a);
    Node& nd = fresh_node(Op::Sum, node(a).requires_grad);
    nd.parents = {a};
    resize_like(nd.value, {1});
    Var v = static_cast<Var>(active_ - 1);
    double acc = 0.0;
    for (double x : tensor_of(a).data) acc += x;
    node(v).value.data[0] = acc;
    return v;
}

Var Graph::mean(Var a) {
    const Tensor& ta = check_var(a);
    Node& nd = fresh_node(Op::Mean, node(a).requires_grad);
    nd.parents = {a};
    resize_like(nd.value, {1});
    Var v = static_cast<Var>(active_ - 1);
    double acc = 0.0;
    for (double x : ta.data) acc += x;
    node(v).value.data[0] = acc / static_cast<double>(ta.numel());
    return v;
}

double Graph::scalar_value(Var v) const {
    const Tensor& t = check_var(v);
    NSYNC_CHECK(t.numel() == 1, "node is not scalar, shape ", shape_str(t.shape));
    return t.data[0];
}

const Tensor& Graph::grad_of(Var v) const {
    const Node& nd = nodes_[static_cast<size_t>(v)];
    NSYNC_CHECK(nd.requires_grad, "node does not track gradients");
    return nd.grad;
}

void Graph::run_backward(Var loss) {
    const Tensor& lt = check_var(loss);
    NSYNC_CHECK(lt.numel() == 1, "backward needs a scalar loss, got shape ", shape_str(lt.shape));

    auto idx = static_cast<size_t>(loss);
    for (size_t i = 0; i <= idx; ++i) {
        Node& nd = nodes_[i];
        if (!nd.requires_grad) continue;
        resize_like(nd.grad, tensor_of(static_cast<Var>(i)).shape);
        std::fill(nd.grad.data.begin(), nd.grad.data.end(), 0.0);
    }
    node(loss).grad.data[0] = 1.0;

    for (size_t ii = idx + 1; ii-- > 0;) {
        Node& nd = nodes_[ii];
        if (!nd.requires_grad || nd.op == Op::Leaf) continue;
        const std::vector<double>& g = nd.grad.data;
        switch (nd.op) {
            case Op::Add:
            case Op::Sub: {
                double sgn[2] = {1.0, nd.op == Op::Add ? 1.0 : -1.0};
                for (int k = 0; k < 2; ++k) {
                    Node& p = node(nd.parents[static_cast<size_t>(k)]);
                    if (!p.requires_grad) continue;
                    for (size_t i = 0; i < g.size(); ++i) p.grad.data[i] += sgn[k] * g[i];
                }
                break;
            }
            case Op::AddN: {
                for (Var pv : nd.parents) {
                    Node& p = node(pv);
                    if (!p.requires_grad) continue;
                    for (size_t i = 0; i < g.size(); ++i) p.grad.data[i] += g[i];
                }
                break;
            }
            case Op::EMul: {
                Node& pa = node(nd.parents[0]);
                Node& pb = node(nd.parents[1]);
                const Tensor& ta = tensor_of(nd.parents[0]);
                const Tensor& tb = tensor_of(nd.parents[1]);
                if (pa.requires_grad)
                    for (size_t i = 0; i < g.size(); ++i) pa.grad.data[i] += g[i] * tb.data[i];
                if (pb.requires_grad)
                    for (size_t i = 0; i < g.size(); ++i) pb.grad.data[i] += g[i] * ta.data[i];
                break;
            }
            case Op::Scale: {
                Node& p = node(nd.parents[0]);
                if (p.requires_grad)
                    for (size_t i = 0; i < g.size(); ++i) p.grad.data[i] += nd.coef * g[i];
                break;
            }
            case Op::MatVec: {
                Node& pw = node(nd.parents[0]);
                Node& px = node(nd.parents[1]);
                const Tensor& tw = tensor_of(nd.parents[0]);
                const Tensor& tx = tensor_of(nd.parents[1]);
                int64_t m = tw.shape[0], n = tw.shape[1];
                if (px.requires_grad) {
                    double* gx = px.grad.data.data();
                    const double* W = tw.data.data();
                    for (int64_t i = 0; i < m; ++i) {
                        double gi = g[static_cast<size_t>(i)];
                        if (gi == 0.0) continue;
                        const double* wr = W + i * n;
                        for (int64_t j = 0; j < n; ++j) gx[j] += gi * wr[j];
                    }
                }
                if (pw.requires_grad) {
                    double* gw = pw.grad.data.data();
                    const double* X = tx.data.data();
                    for (int64_t i = 0; i < m; ++i) {
                        double gi = g[static_cast<size_t>(i)];
                        if (gi == 0.0) continue;
                        double* gr = gw + i * n;
                        for (int64_t j = 0; j < n; ++j) gr[j] += gi * X[j];
                    }
                }
                break;
            }
            case Op::Row: {
                Node& p = node(nd.parents[0]);
                if (p.requires_grad) {
                    int64_t n = tensor_of(nd.parents[0]).shape[1];
                    double* dst = p.grad.data.data() + nd.aux * n;
                    for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                }
                break;
            }
            case Op::Silu: {
                Node& p = node(nd.parents[0]);
                if (p.requires_grad) {
                    const double* in = tensor_of(nd.parents[0]).data.data();
                    for (size_t i = 0; i < g.size(); ++i) {
                        double s = sigmoid(in[i]);
                        p.grad.data[i] += g[i] * (s + in[i] * s * (1.0 - s));
                    }
                }
                break;
            }
            case Op::Concat: {
                size_t off = 0;
                for (Var pv : nd.parents) {
                    Node& p = node(pv);
                    size_t n = tensor_of(pv).data.size();
                    if (p.requires_grad)
                        for (size_t i = 0; i < n; ++i) p.grad.data[i] += g[off + i];
                    off += n;
                }
                break;
            }
            case Op::Square: {
                Node& p = node(nd.parents[0]);
                if (p.requires_grad) {
                    const double* in = tensor_of(nd.parents[0]).data.data();
                    for (size_t i = 0; i < g.size(); ++i) p.grad.data[i] += 2.0 * in[i] * g[i];
                }
                break;
            }
            case Op::Sum: {
                Node& p = node(nd.parents[0]);
                if (p.requires_grad) {
                    double g0 = g[0];
                    for (double& gi : p.grad.data) gi += g0;
                }
                break;
            }
            case Op::Mean: {
                Node& p = node(nd.parents[0]);
                if (p.requires_grad) {
                    double g0 = g[0] / static_cast<double>(p.grad.data.size());
                    for (double& gi : p.grad.data) gi += g0;
                }
                break;
            }
            case Op::Leaf:
                break;
        }
    }
}

GradVector Graph::backward(Var loss, const ParamSet& params) {
    const Tensor& lt = check_var(loss);
    NSYNC_CHECK(lt.numel() == 1, "backward needs a scalar loss, got shape ", shape_str(lt.shape));
    GradVector out = GradVector::zeros(params.trainable_layout());
    // A loss with no trainable ancestors has an all-zero gradient.
    if (!node(loss).requires_grad) return out;
    run_backward(loss);
    for (const auto& [name, v] : registered_) {
        const Node& nd = nodes_[static_cast<size_t>(v)];
        if (!nd.requires_grad) continue;
        const GradEntry* entry = nullptr;
        for (const auto& e : out.layout.entries)
            if (e.name == name) {
                entry = &e;
                break;
            }
        if (entry == nullptr) continue;
        NSYNC_CHECK(entry->shape == tensor_of(v).shape, "registered param ", name,
                    " shape does not match trainable layout");
        // Accumulate, so a tensor registered via several leaves sums its slices.
        for (size_t i = 0; i < nd.grad.data.size(); ++i)
            out.values[entry->offset + i] += nd.grad.data[i];
    }
    std::string bad = out.first_non_finite();
    NSYNC_CHECK_NUM(bad.empty(), "non-finite gradient for parameter ", bad);
    return out;
}

}  // namespace nsync
