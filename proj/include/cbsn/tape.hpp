#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cbsn/tensor.hpp"

namespace cbsn {

/// Handle to a value recorded on a Tape.
struct Var {
    std::int32_t i = -1;
    bool valid() const { return i >= 0; }
};

/// Ordered record of executed operations for reverse-mode differentiation.
/// Ops are appended in execution order, which is a topological order by
/// construction; backward() replays them once, in reverse.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, Var out)>;

    /// Leaf value. Parameters pass needs_grad=true, plain inputs false.
    Var leaf(Tensor<T> value, bool needs_grad) {
        nodes_.push_back(Node{std::move(value), Tensor<T>(), needs_grad, false});
        return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
    }

    /// Record an op result together with its backward rule. Called by the op
    /// implementations, not by users.
    Var record(Tensor<T> value, bool needs_grad, BackwardFn backward) {
        if (check_finite_ && !value.all_finite())
            throw std::runtime_error("tape: non-finite value produced in forward pass");
        nodes_.push_back(Node{std::move(value), Tensor<T>(), needs_grad, false});
        Var out{static_cast<std::int32_t>(nodes_.size() - 1)};
        ops_.push_back(OpRec{out, std::move(backward)});
        return out;
    }

    const Tensor<T>& value(Var v) const { return nodes_[idx(v)].value; }

    bool needs_grad(Var v) const { return nodes_[idx(v)].needs_grad; }

    bool has_grad(Var v) const { return nodes_[idx(v)].has_grad; }

    /// Gradient buffer for v, allocated as zeros on first touch.
    Tensor<T>& grad(Var v) {
        Node& n = nodes_[idx(v)];
        if (!n.has_grad) {
            n.grad = Tensor<T>(n.value.shape);
            n.has_grad = true;
        }
        return n.grad;
    }

    /// Reverse accumulation from a scalar loss. Every op's backward rule runs
    /// at most once; ops whose output never received a gradient (everything
    /// upstream of a stop_gradient, or branches that feed no-grad leaves
    /// only) are skipped.
    void backward(Var loss) {
        if (value(loss).numel() != 1) throw std::invalid_argument("backward: loss must be a scalar tensor");
        grad(loss).data[0] = T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
            if (!nodes_[idx(it->out)].has_grad) continue;
            it->backward(*this, it->out);
        }
        if (check_finite_) {
            for (const Node& n : nodes_)
                if (n.has_grad && !n.grad.all_finite())
                    throw std::runtime_error("tape: non-finite gradient produced in backward pass");
        }
    }

    void set_check_finite(bool on) { check_finite_ = on; }
    bool check_finite() const { return check_finite_; }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool needs_grad = false;
        bool has_grad = false;
    };
    struct OpRec {
        Var out;
        BackwardFn backward;
    };

    static std::size_t idx(Var v) {
        if (!v.valid()) throw std::invalid_argument("use of invalid tape handle");
        return static_cast<std::size_t>(v.i);
    }

    std::vector<Node> nodes_;
    std::vector<OpRec> ops_;
    bool check_finite_ = false;
};

}  // namespace cbsn
