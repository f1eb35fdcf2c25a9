// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation on a linear tape. Every forward
// operation appends a node; Tape::backward walks the tape in reverse and
// calls each node's pullback. Ops cover what the de-raining search space
// needs: 2-D convolution (strided, grouped), bilinear resize, pooling,
// elementwise math with limited broadcasting, reductions and softmax.

#pragma once

#include <cmath>
#include <cstring>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "manas/tensor.hpp"

namespace manas {

template <typename T>
class Tape;

// Lightweight handle into a tape. Copyable; identity is (tape, id).
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor<T>& val() const;
    const ShapeVec& shape() const { return val().shape; }
};

// A learnable parameter: value plus accumulated gradient, identified by a
// stable path string used in checkpoints and diagnostics.
template <typename T>
struct Param {
    std::string path;
    Tensor<T> value;
    Tensor<T> grad;

    Param() = default;
    Param(std::string p, ShapeVec shape) : path(std::move(p)), value(shape), grad(std::move(shape)) {}

    void zero_grad() { grad.fill(T(0)); }
    std::size_t size() const { return value.size(); }
};

template <typename T>
class Tape {
public:
    struct Node {
        Tensor<T> val;
        Tensor<T> grad;                  // allocated lazily
        bool needs_grad = false;
        Tensor<T>* sink = nullptr;       // external accumulation target (Param::grad)
        std::function<void(Tape&, Node&)> back;
    };

    // When false, parameter leaves join the graph as constants (inference).
    bool train_mode = true;

    // Constant: participates in forward only.
    Var<T> value(Tensor<T> t) { return push(std::move(t), false, nullptr, nullptr); }

    // Differentiable leaf; gradient readable via grad_of after backward().
    Var<T> input(Tensor<T> t) { return push(std::move(t), true, nullptr, nullptr); }

    // Parameter leaf. When trainable, backward() accumulates into p.grad.
    Var<T> use(Param<T>& p, bool trainable = true) {
        if (trainable && train_mode) return push(p.value, true, &p.grad, nullptr);
        return push(p.value, false, nullptr, nullptr);
    }

    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    bool wants_grad(int id) const { return node(id).needs_grad; }
    std::size_t size() const { return nodes_.size(); }

    Tensor<T>& grad_of(int id) {
        Node& n = node(id);
        if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.val.shape);
        return n.grad;
    }

    // Runs reverse accumulation from a scalar root. Leaves with sinks have
    // their external grads incremented; other leaf grads stay on the tape.
    void backward(Var<T> root) {
        if (!root.valid() || root.tape != this) throw std::invalid_argument("backward: foreign root");
        Node& r = node(root.id);
        if (r.val.size() != 1) throw std::invalid_argument("backward: root must be scalar");
        if (!r.needs_grad) return;
        grad_of(root.id)[0] += T(1);
        for (int i = root.id; i >= 0; --i) {
            Node& n = node(i);
            if (!n.needs_grad || n.grad.empty()) continue;
            if (n.back) n.back(*this, n);
            if (n.sink) {
                for (std::size_t k = 0; k < n.grad.size(); ++k) (*n.sink)[k] += n.grad[k];
            }
        }
    }

    Var<T> push(Tensor<T> val, bool needs_grad, Tensor<T>* sink,
                std::function<void(Tape&, Node&)> back) {
        Node n;
        n.val = std::move(val);
        n.needs_grad = needs_grad;
        n.sink = sink;
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Var<T>{this, static_cast<int>(nodes_.size() - 1)};
    }

    Var<T> make(Tensor<T> val, std::initializer_list<Var<T>> parents,
                std::function<void(Tape&, Node&)> back) {
        bool ng = false;
        for (const Var<T>& p : parents) ng = ng || wants_grad(p.id);
        return push(std::move(val), ng, nullptr, ng ? std::move(back) : nullptr);
    }

    Var<T> make(Tensor<T> val, const std::vector<Var<T>>& parents,
                std::function<void(Tape&, Node&)> back) {
        bool ng = false;
        for (const Var<T>& p : parents) ng = ng || wants_grad(p.id);
        return push(std::move(val), ng, nullptr, ng ? std::move(back) : nullptr);
    }

private:
    // Deque keeps node references stable while new ops are pushed, so ops
    // may hold shape/value references across graph construction.
    std::deque<Node> nodes_;
};

template <typename T>
inline const Tensor<T>& Var<T>::val() const {
    return tape->node(id).val;
}

namespace detail {

inline void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and broadcasting ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> relu(Var<T> x) {
    Tensor<T> out = x.val();
    for (auto& e : out.v) e = e > T(0) ? e : T(0);
    int xid = x.id;
    return x.tape->make(std::move(out), {x}, [xid](Tape<T>& tp, typename Tape<T>::Node& self) {
        if (!tp.wants_grad(xid)) return;
        const Tensor<T>& xin = tp.node(xid).val;
        Tensor<T>& gx = tp.grad_of(xid);
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (xin[i] > T(0)) gx[i] += self.grad[i];
    });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
    Tensor<T> out = x.val();
    for (auto& e : out.v) e = T(1) / (T(1) + std::exp(-e));
    int xid = x.id;
    return x.tape->make(std::move(out), {x}, [xid](Tape<T>& tp, typename Tape<T>::Node& self) {
        if (!tp.wants_grad(xid)) return;
        Tensor<T>& gx = tp.grad_of(xid);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            T y = self.val[i];
            gx[i] += self.grad[i] * y * (T(1) - y);
        }
    });
}

template <typename T>
Var<T> log_(Var<T> x) {
    Tensor<T> out = x.val();
    for (auto& e : out.v) e = std::log(e);
    int xid = x.id;
    return x.tape->make(std::move(out), {x}, [xid](Tape<T>& tp, typename Tape<T>::Node& self) {
        if (!tp.wants_grad(xid)) return;
        const Tensor<T>& xin = tp.node(xid).val;
        Tensor<T>& gx = tp.grad_of(xid);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] / xin[i];
    });
}

// Gradient passes through wherever lo <= x <= hi.
template <typename T>
Var<T> clamp(Var<T> x, T lo, T hi) {
    Tensor<T> out = x.val();
    for (auto& e : out.v) e = std::min(hi, std::max(lo, e));
    int xid = x.id;
    return x.tape->make(std::move(out), {x}, [xid, lo, hi](Tape<T>& tp, typename Tape<T>::Node& self) {
        if (!tp.wants_grad(xid)) return;
        const Tensor<T>& xin = tp.node(xid).val;
        Tensor<T>& gx = tp.grad_of(xid);
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (xin[i] >= lo && xin[i] <= hi) gx[i] += self.grad[i];
    });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    detail::require(a.val().same_shape(b.val()), "add: shape mismatch");
    Tensor<T> out = a.val();
    const Tensor<T>& bv = b.val();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    int aid = a.id, bid = b.id;
    return a.tape->make(std::move(out), {a, b}, [aid, bid](Tape<T>& tp, typename Tape<T>::Node& self) {
        if (tp.wants_grad(aid)) {
            Tensor<T>& ga = tp.grad_of(aid);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
        }
        if (tp.wants_grad(bid)) {
            Tensor<T>& gb = tp.grad_of(bid);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i];
        }
    });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    detail::require(a.val().same_shape(b.val()), "sub: shape mismatch");
    Tensor<T> out = a.val();
    const Tensor<T>& bv = b.val();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    int aid = a.id, bid = b.id;
    return a.tape->make(std::move(out), {a, b}, [aid, bid](Tape<T>& tp, typename Tape<T>::Node& self) {
        if (tp.wants_grad(aid)) {
            Tensor<T>& ga = tp.grad_of(aid);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
        }
        if (tp.wants_grad(bid)) {
            Tensor<T>& gb = tp.grad_of(bid);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
        }
    });
}

namespace detail {

// Shapes are right-aligned and padded with leading 1s; a dim must match or
// be 1 on one side.
inline ShapeVec broadcast_shape(const ShapeVec& a, const ShapeVec& b) {
    std::size_t r = std::max(a.size(), b.size());
    ShapeVec out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        int da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        int db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        require(da == db || da == 1 || db == 1, "broadcast: incompatible shapes");
        out[i] = std::max(da, db);
    }
    return out;
}

inline std::vector<std::size_t> broadcast_strides(const ShapeVec& shape, const ShapeVec& out) {
    std::size_t r = out.size();
    std::vector<std::size_t> strides(r, 0);
    std::size_t stride = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        std::size_t ri = shape.size() - 1 - i;       // index into shape, right to left
        std::size_t ro = r - 1 - i;                  // matching index into out
        strides[ro] = (shape[ri] == 1 && out[ro] != 1) ? 0 : stride;
        stride *= static_cast<std::size_t>(shape[ri]);
    }
    return strides;
}

// Iterates the broadcast output space, yielding flat offsets into out, a, b.
template <typename Fn>
inline void for_each_broadcast(const ShapeVec& out, const std::vector<std::size_t>& sa,
                               const std::vector<std::size_t>& sb, Fn&& fn) {
    std::size_t r = out.size();
    std::vector<int> idx(r, 0);
    std::size_t total = numel_of(out);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t oa = 0, ob = 0;
        for (std::size_t i = 0; i < r; ++i) {
            oa += static_cast<std::size_t>(idx[i]) * sa[i];
            ob += static_cast<std::size_t>(idx[i]) * sb[i];
        }
        fn(flat, oa, ob);
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out[i]) break;
            idx[i] = 0;
        }
    }
}

}  // namespace detail

// Elementwise multiply with numpy-style broadcasting over size-1 dims.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    ShapeVec os = detail::broadcast_shape(a.shape(), b.shape());
    auto sa = detail::broadcast_strides(a.shape(), os);
    auto sb = detail::broadcast_strides(b.shape(), os);
    Tensor<T> out(os);
    const Tensor<T>&av = a.val(), &bv = b.val();
    detail::for_each_broadcast(os, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        out[o] = av[ia] * bv[ib];
    });
    int aid = a.id, bid = b.id;
    return a.tape->make(std::move(out), {a, b},
                        [aid, bid, os, sa, sb](Tape<T>& tp, typename Tape<T>::Node& self) {
        const Tensor<T>& av = tp.node(aid).val;
        const Tensor<T>& bv = tp.node(bid).val;
        bool ga = tp.wants_grad(aid), gb = tp.wants_grad(bid);
        Tensor<T>* gat = ga ? &tp.grad_of(aid) : nullptr;
        Tensor<T>* gbt = gb ? &tp.grad_of(bid) : nullptr;
        detail::for_each_broadcast(os, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
            T g = self.grad[o];
            if (ga) (*gat)[ia] += g * bv[ib];
            if (gb) (*gbt)[ib] += g * av[ia];
        });
    });
}

// Elementwise divide, same broadcasting rules as mul.
template <typename T>
Var<T> divide(Var<T> a, Var<T> b) {
    ShapeVec os = detail::broadcast_shape(a.shape(), b.shape());
    auto sa = detail::broadcast_strides(a.shape(), os);
    auto sb = detail::broadcast_strides(b.shape(), os);
    Tensor<T> out(os);
    const Tensor<T>&av = a.val(), &bv = b.val();
    detail::for_each_broadcast(os, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        out[o] = av[ia] / bv[ib];
    });
    int aid = a.id, bid = b.id;
    return a.tape->make(std::move(out), {a, b},
                        [aid, bid, os, sa, sb](Tape<T>& tp, typename Tape<T>::Node& self) {
        const Tensor<T>& av = tp.node(aid).val;
        const Tensor<T>& bv = tp.node(bid).val;
        bool ga = tp.wants_grad(aid), gb = tp.wants_grad(bid);
        Tensor<T>* gat = ga ? &tp.grad_of(aid) : nullptr;
        Tensor<T>* gbt = gb ? &tp.grad_of(bid) : nullptr;
        detail::for_each_broadcast(os, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
            T g = self.grad[o];
            T inv = T(1) / bv[ib];
            if (ga) (*gat)[ia] += g * inv;
            if (gb) (*gbt)[ib] -= g * av[ia] * inv * inv;
        });
    });
}

template <typename T>
Var<T> scale(Var<T> x, T c) {
    Tensor<T> out = x.val();
    for (auto& e : out.v) e *= c;
    int xid = x.id;
    return x.tape->make(std::move(out), {x}, [xid, c](Tape<T>& tp, typename Tape<T>::Node& self) {
        if (!tp.wants_grad(xid)) return;
        Tensor<T>& gx = tp.grad_of(xid);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * c;
    });
}

template <typename T>
Var<T> add_const(Var<T> x, T c) {
    Tensor<T> out = x.val();
    for (auto& e : out.v) e += c;
    int xid = x.id;
    return x.tape->make(std::move(out), {x}, [xid](Tape<T>& tp, typename Tape<T>::Node& self) {
        if (!tp.wants_grad(xid)) return;
        Tensor<T>& gx = tp.grad_of(xid);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    });
}

template <typename T>
Var<T> neg(Var<T> x) {
    return scale(x, T(-1));
}

// ---------------------------------------------------------------------------
// Reductions, softmax, indexing
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum(Var<T> x) {
    T acc = T(0);
    for (const auto& e : x.val().v) acc += e;
    int xid = x.id;
    return x.tape->make(Tensor<T>::scalar(acc), {x}, [xid](Tape<T>& tp, typename Tape<T>::Node& self) {
        if (!tp.wants_grad(xid)) return;
        T g = self.grad[0];
        Tensor<T>& gx = tp.grad_of(xid);
        for (auto& e : gx.v) e += g;
    });
}

template <typename T>
Var<T> mean(Var<T> x) {
    std::size_t n = x.val().size();
    detail::require(n > 0, "mean: empty tensor");
    T acc = T(0);
    for (const auto& e : x.val().v) acc += e;
    T inv = T(1) / static_cast<T>(n);
    int xid = x.id;
    return x.tape->make(Tensor<T>::scalar(acc * inv), {x},
                        [xid, inv](Tape<T>& tp, typename Tape<T>::Node& self) {
        if (!tp.wants_grad(xid)) return;
        T g = self.grad[0] * inv;
        Tensor<T>& gx = tp.grad_of(xid);
        for (auto& e : gx.v) e += g;
    });
}

// Softmax over a rank-1 tensor.
template <typename T>
Var<T> softmax(Var<T> x) {
    detail::require(x.val().rank() == 1, "softmax: expects rank-1 input");
    const Tensor<T>& xv = x.val();
    T mx = xv[0];
    for (const auto& e : xv.v) mx = std::max(mx, e);
    Tensor<T> out(xv.shape);
    T z = T(0);
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = std::exp(xv[i] - mx);
        z += out[i];
    }
    for (auto& e : out.v) e /= z;
    int xid = x.id;
    return x.tape->make(std::move(out), {x}, [xid](Tape<T>& tp, typename Tape<T>::Node& self) {
        if (!tp.wants_grad(xid)) return;
        T dot = T(0);
        for (std::size_t i = 0; i < self.val.size(); ++i) dot += self.grad[i] * self.val[i];
        Tensor<T>& gx = tp.grad_of(xid);
        for (std::size_t i = 0; i < gx.size(); ++i)
            gx[i] += self.val[i] * (self.grad[i] - dot);
    });
}

// Picks element i of a rank-1 tensor as a scalar.
template <typename T>
Var<T> index(Var<T> x, int i) {
    detail::require(x.val().rank() == 1 && i >= 0 && i < x.val().dim(0), "index: out of range");
    int xid = x.id;
    return x.tape->make(Tensor<T>::scalar(x.val()[static_cast<std::size_t>(i)]), {x},
                        [xid, i](Tape<T>& tp, typename Tape<T>::Node& self) {
        if (!tp.wants_grad(xid)) return;
        tp.grad_of(xid)[static_cast<std::size_t>(i)] += self.grad[0];
    });
}

// ---------------------------------------------------------------------------
// Shape ops: channel concat / slice
// ---------------------------------------------------------------------------

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
    detail::require(!parts.empty(), "concat_channels: empty input");
    const ShapeVec& s0 = parts[0].shape();
    detail::require(s0.size() == 3, "concat_channels: expects [C,H,W]");
    int ctot = 0;
    for (const auto& p : parts) {
        detail::require(p.shape().size() == 3 && p.shape()[1] == s0[1] && p.shape()[2] == s0[2],
                        "concat_channels: spatial mismatch");
        ctot += p.shape()[0];
    }
    Tensor<T> out({ctot, s0[1], s0[2]});
    std::size_t off = 0;
    for (const auto& p : parts) {
        const Tensor<T>& pv = p.val();
        std::memcpy(out.data() + off, pv.data(), pv.size() * sizeof(T));
        off += pv.size();
    }
    std::vector<int> ids;
    ids.reserve(parts.size());
    for (const auto& p : parts) ids.push_back(p.id);
    return parts[0].tape->make(std::move(out), parts,
                               [ids](Tape<T>& tp, typename Tape<T>::Node& self) {
        std::size_t off = 0;
        for (int id : ids) {
            std::size_t n = tp.node(id).val.size();
            if (tp.wants_grad(id)) {
                Tensor<T>& g = tp.grad_of(id);
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
            }
            off += n;
        }
    });
}

// Channels [c0, c1) of a [C,H,W] tensor.
template <typename T>
Var<T> slice_channels(Var<T> x, int c0, int c1) {
    const ShapeVec& s = x.shape();
    detail::require(s.size() == 3 && 0 <= c0 && c0 < c1 && c1 <= s[0], "slice_channels: bad range");
    std::size_t plane = static_cast<std::size_t>(s[1]) * s[2];
    Tensor<T> out({c1 - c0, s[1], s[2]});
    std::memcpy(out.data(), x.val().data() + static_cast<std::size_t>(c0) * plane,
                out.size() * sizeof(T));
    int xid = x.id;
    return x.tape->make(std::move(out), {x},
                        [xid, c0, plane](Tape<T>& tp, typename Tape<T>::Node& self) {
        if (!tp.wants_grad(xid)) return;
        Tensor<T>& gx = tp.grad_of(xid);
        std::size_t base = static_cast<std::size_t>(c0) * plane;
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[base + i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

// [C,H,W] -> [C,1,1], spatial mean per channel.
template <typename T>
Var<T> global_avg_pool(Var<T> x) {
    const ShapeVec& s = x.shape();
    detail::require(s.size() == 3, "global_avg_pool: expects [C,H,W]");
    std::size_t plane = static_cast<std::size_t>(s[1]) * s[2];
    Tensor<T> out({s[0], 1, 1});
    const Tensor<T>& xv = x.val();
    for (int c = 0; c < s[0]; ++c) {
        T acc = T(0);
        for (std::size_t i = 0; i < plane; ++i) acc += xv[c * plane + i];
        out[static_cast<std::size_t>(c)] = acc / static_cast<T>(plane);
    }
    int xid = x.id;
    return x.tape->make(std::move(out), {x}, [xid, plane](Tape<T>& tp, typename Tape<T>::Node& self) {
        if (!tp.wants_grad(xid)) return;
        Tensor<T>& gx = tp.grad_of(xid);
        T inv = T(1) / static_cast<T>(plane);
        for (std::size_t c = 0; c < self.grad.size(); ++c) {
            T g = self.grad[c] * inv;
            for (std::size_t i = 0; i < plane; ++i) gx[c * plane + i] += g;
        }
    });
}

// [C,H,W] -> [C,1,1], spatial max per channel; grad routes to first argmax.
template <typename T>
Var<T> global_max_pool(Var<T> x) {
    const ShapeVec& s = x.shape();
    detail::require(s.size() == 3, "global_max_pool: expects [C,H,W]");
    std::size_t plane = static_cast<std::size_t>(s[1]) * s[2];
    Tensor<T> out({s[0], 1, 1});
    auto arg = std::make_shared<std::vector<std::size_t>>(static_cast<std::size_t>(s[0]));
    const Tensor<T>& xv = x.val();
    for (int c = 0; c < s[0]; ++c) {
        std::size_t best = c * plane;
        for (std::size_t i = 1; i < plane; ++i)
            if (xv[c * plane + i] > xv[best]) best = c * plane + i;
        out[static_cast<std::size_t>(c)] = xv[best];
        (*arg)[static_cast<std::size_t>(c)] = best;
    }
    int xid = x.id;
    return x.tape->make(std::move(out), {x}, [xid, arg](Tape<T>& tp, typename Tape<T>::Node& self) {
        if (!tp.wants_grad(xid)) return;
        Tensor<T>& gx = tp.grad_of(xid);
        for (std::size_t c = 0; c < self.grad.size(); ++c) gx[(*arg)[c]] += self.grad[c];
    });
}

// [C,H,W] -> [1,H,W], mean across channels.
template <typename T>
Var<T> channel_mean(Var<T> x) {
    const ShapeVec& s = x.shape();
    detail::require(s.size() == 3, "channel_mean: expects [C,H,W]");
    std::size_t plane = static_cast<std::size_t>(s[1]) * s[2];
    Tensor<T> out({1, s[1], s[2]});
    const Tensor<T>& xv = x.val();
    T inv = T(1) / static_cast<T>(s[0]);
    for (std::size_t i = 0; i < plane; ++i) {
        T acc = T(0);
        for (int c = 0; c < s[0]; ++c) acc += xv[c * plane + i];
        out[i] = acc * inv;
    }
    int xid = x.id;
    int C = s[0];
    return x.tape->make(std::move(out), {x},
                        [xid, plane, C, inv](Tape<T>& tp, typename Tape<T>::Node& self) {
        if (!tp.wants_grad(xid)) return;
        Tensor<T>& gx = tp.grad_of(xid);
        for (std::size_t i = 0; i < plane; ++i) {
            T g = self.grad[i] * inv;
            for (int c = 0; c < C; ++c) gx[c * plane + i] += g;
        }
    });
}

// [C,H,W] -> [1,H,W], max across channels; grad to first argmax channel.
template <typename T>
Var<T> channel_max(Var<T> x) {
    const ShapeVec& s = x.shape();
    detail::require(s.size() == 3, "channel_max: expects [C,H,W]");
    std::size_t plane = static_cast<std::size_t>(s[1]) * s[2];
    Tensor<T> out({1, s[1], s[2]});
    auto arg = std::make_shared<std::vector<int>>(plane);
    const Tensor<T>& xv = x.val();
    for (std::size_t i = 0; i < plane; ++i) {
        int best = 0;
        for (int c = 1; c < s[0]; ++c)
            if (xv[c * plane + i] > xv[best * plane + i]) best = c;
        out[i] = xv[static_cast<std::size_t>(best) * plane + i];
        (*arg)[i] = best;
    }
    int xid = x.id;
    return x.tape->make(std::move(out), {x},
                        [xid, plane, arg](Tape<T>& tp, typename Tape<T>::Node& self) {
        if (!tp.wants_grad(xid)) return;
        Tensor<T>& gx = tp.grad_of(xid);
        for (std::size_t i = 0; i < plane; ++i)
            gx[static_cast<std::size_t>((*arg)[i]) * plane + i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace detail {

struct ConvDims {
    int ci, h, w;        // input
    int co, cig, kh, kw; // weight
    int groups, stride, pad;
    int ho, wo;
    int cog;
};

inline ConvDims conv_dims(const ShapeVec& xs, const ShapeVec& ws, int stride, int pad, int groups) {
    require(xs.size() == 3 && ws.size() == 4, "conv2d: expects x[C,H,W], w[O,I,KH,KW]");
    ConvDims d;
    d.ci = xs[0]; d.h = xs[1]; d.w = xs[2];
    d.co = ws[0]; d.cig = ws[1]; d.kh = ws[2]; d.kw = ws[3];
    d.groups = groups; d.stride = stride; d.pad = pad;
    require(groups >= 1 && d.ci % groups == 0 && d.co % groups == 0, "conv2d: bad group count");
    require(d.cig == d.ci / groups, "conv2d: weight channel mismatch");
    d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
    require(d.ho > 0 && d.wo > 0, "conv2d: output would be empty");
    d.cog = d.co / groups;
    return d;
}

// Valid output-column range for a given kernel column: 0 <= ox*s - p + kx < w.
inline void ox_range(int kx, int s, int p, int w, int wo, int& lo, int& hi) {
    lo = 0;
    int off = kx - p;
    if (off < 0) lo = (-off + s - 1) / s;
    hi = wo - 1;
    int max_num = w - 1 - off;
    if (max_num < 0) { hi = -1; return; }
    hi = std::min(hi, max_num / s);
}

}  // namespace detail

// conv2d with optional bias; pass an invalid Var to omit the bias term.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad, int groups = 1) {
    detail::ConvDims d = detail::conv_dims(x.shape(), w.shape(), stride, pad, groups);
    bool has_bias = b.valid();
    if (has_bias)
        detail::require(b.val().rank() == 1 && b.val().dim(0) == d.co, "conv2d: bias shape");

    const Tensor<T>& xv = x.val();
    const Tensor<T>& wv = w.val();
    Tensor<T> out({d.co, d.ho, d.wo});

    for (int co = 0; co < d.co; ++co) {
        int g = co / d.cog;
        T bias = has_bias ? b.val()[static_cast<std::size_t>(co)] : T(0);
        for (int oy = 0; oy < d.ho; ++oy) {
            T* orow = out.data() + (static_cast<std::size_t>(co) * d.ho + oy) * d.wo;
            for (int ox = 0; ox < d.wo; ++ox) orow[ox] = bias;
            for (int ky = 0; ky < d.kh; ++ky) {
                int iy = oy * d.stride - d.pad + ky;
                if (iy < 0 || iy >= d.h) continue;
                for (int cig = 0; cig < d.cig; ++cig) {
                    int ci = g * d.cig + cig;
                    const T* xrow = xv.data() + (static_cast<std::size_t>(ci) * d.h + iy) * d.w;
                    const T* wrow = wv.data() +
                        ((static_cast<std::size_t>(co) * d.cig + cig) * d.kh + ky) * d.kw;
                    for (int kx = 0; kx < d.kw; ++kx) {
                        T wgt = wrow[kx];
                        int lo, hi;
                        detail::ox_range(kx, d.stride, d.pad, d.w, d.wo, lo, hi);
                        int base = lo * d.stride - d.pad + kx;
                        for (int ox = lo; ox <= hi; ++ox, base += d.stride)
                            orow[ox] += wgt * xrow[base];
                    }
                }
            }
        }
    }

    int xid = x.id, wid = w.id, bid = has_bias ? b.id : -1;
    std::vector<Var<T>> parents{x, w};
    if (has_bias) parents.push_back(b);
    return x.tape->make(std::move(out), parents,
                        [xid, wid, bid, d](Tape<T>& tp, typename Tape<T>::Node& self) {
        const Tensor<T>& xv = tp.node(xid).val;
        const Tensor<T>& wv = tp.node(wid).val;
        bool need_x = tp.wants_grad(xid);
        bool need_w = tp.wants_grad(wid);
        bool need_b = bid >= 0 && tp.wants_grad(bid);
        Tensor<T>* gx = need_x ? &tp.grad_of(xid) : nullptr;
        Tensor<T>* gw = need_w ? &tp.grad_of(wid) : nullptr;
        Tensor<T>* gb = need_b ? &tp.grad_of(bid) : nullptr;
        if (!need_x && !need_w && !need_b) return;

        for (int co = 0; co < d.co; ++co) {
            int g = co / d.cog;
            for (int oy = 0; oy < d.ho; ++oy) {
                const T* grow = self.grad.data() + (static_cast<std::size_t>(co) * d.ho + oy) * d.wo;
                if (need_b) {
                    T acc = T(0);
                    for (int ox = 0; ox < d.wo; ++ox) acc += grow[ox];
                    (*gb)[static_cast<std::size_t>(co)] += acc;
                }
                if (!need_x && !need_w) continue;
                for (int ky = 0; ky < d.kh; ++ky) {
                    int iy = oy * d.stride - d.pad + ky;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int cig = 0; cig < d.cig; ++cig) {
                        int ci = g * d.cig + cig;
                        const T* xrow = xv.data() + (static_cast<std::size_t>(ci) * d.h + iy) * d.w;
                        std::size_t woff =
                            ((static_cast<std::size_t>(co) * d.cig + cig) * d.kh + ky) * d.kw;
                        T* gxrow = need_x
                            ? gx->data() + (static_cast<std::size_t>(ci) * d.h + iy) * d.w
                            : nullptr;
                        for (int kx = 0; kx < d.kw; ++kx) {
                            int lo, hi;
                            detail::ox_range(kx, d.stride, d.pad, d.w, d.wo, lo, hi);
                            int base = lo * d.stride - d.pad + kx;
                            if (need_w) {
                                T acc = T(0);
                                int bx = base;
                                for (int ox = lo; ox <= hi; ++ox, bx += d.stride)
                                    acc += grow[ox] * xrow[bx];
                                (*gw)[woff + kx] += acc;
                            }
                            if (need_x) {
                                T wgt = wv[woff + kx];
                                int bx = base;
                                for (int ox = lo; ox <= hi; ++ox, bx += d.stride)
                                    gxrow[bx] += wgt * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, int stride, int pad, int groups = 1) {
    return conv2d(x, w, Var<T>{}, stride, pad, groups);
}

// ---------------------------------------------------------------------------
// Bilinear resize (half-pixel centers, border clamped)
// ---------------------------------------------------------------------------

namespace detail {

struct ResizeAxis {
    std::vector<int> i0, i1;
    std::vector<double> f;
};

inline ResizeAxis resize_axis(int in, int out) {
    ResizeAxis a;
    a.i0.resize(static_cast<std::size_t>(out));
    a.i1.resize(static_cast<std::size_t>(out));
    a.f.resize(static_cast<std::size_t>(out));
    double s = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * s - 0.5;
        if (src < 0) src = 0;
        if (src > in - 1) src = in - 1;
        int lo = static_cast<int>(std::floor(src));
        a.i0[static_cast<std::size_t>(o)] = lo;
        a.i1[static_cast<std::size_t>(o)] = std::min(lo + 1, in - 1);
        a.f[static_cast<std::size_t>(o)] = src - lo;
    }
    return a;
}

}  // namespace detail

template <typename T>
Var<T> bilinear_resize(Var<T> x, int out_h, int out_w) {
    const ShapeVec& s = x.shape();
    detail::require(s.size() == 3 && out_h > 0 && out_w > 0, "bilinear_resize: bad args");
    auto ay = std::make_shared<detail::ResizeAxis>(detail::resize_axis(s[1], out_h));
    auto ax = std::make_shared<detail::ResizeAxis>(detail::resize_axis(s[2], out_w));
    int C = s[0], H = s[1], W = s[2];
    Tensor<T> out({C, out_h, out_w});
    const Tensor<T>& xv = x.val();
    for (int c = 0; c < C; ++c) {
        const T* plane = xv.data() + static_cast<std::size_t>(c) * H * W;
        T* oplane = out.data() + static_cast<std::size_t>(c) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
            int y0 = ay->i0[oy], y1 = ay->i1[oy];
            T fy = static_cast<T>(ay->f[oy]);
            for (int ox = 0; ox < out_w; ++ox) {
                int x0 = ax->i0[ox], x1 = ax->i1[ox];
                T fx = static_cast<T>(ax->f[ox]);
                T v00 = plane[y0 * W + x0], v01 = plane[y0 * W + x1];
                T v10 = plane[y1 * W + x0], v11 = plane[y1 * W + x1];
                T top = v00 + (v01 - v00) * fx;
                T bot = v10 + (v11 - v10) * fx;
                oplane[oy * out_w + ox] = top + (bot - top) * fy;
            }
        }
    }
    int xid = x.id;
    return x.tape->make(std::move(out), {x},
                        [xid, ay, ax, C, H, W, out_h, out_w](Tape<T>& tp, typename Tape<T>::Node& self) {
        if (!tp.wants_grad(xid)) return;
        Tensor<T>& gx = tp.grad_of(xid);
        for (int c = 0; c < C; ++c) {
            T* gplane = gx.data() + static_cast<std::size_t>(c) * H * W;
            const T* goplane = self.grad.data() + static_cast<std::size_t>(c) * out_h * out_w;
            for (int oy = 0; oy < out_h; ++oy) {
                int y0 = ay->i0[oy], y1 = ay->i1[oy];
                T fy = static_cast<T>(ay->f[oy]);
                for (int ox = 0; ox < out_w; ++ox) {
                    int x0 = ax->i0[ox], x1 = ax->i1[ox];
                    T fx = static_cast<T>(ax->f[ox]);
                    T g = goplane[oy * out_w + ox];
                    gplane[y0 * W + x0] += g * (T(1) - fy) * (T(1) - fx);
                    gplane[y0 * W + x1] += g * (T(1) - fy) * fx;
                    gplane[y1 * W + x0] += g * fy * (T(1) - fx);
                    gplane[y1 * W + x1] += g * fy * fx;
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Composite helpers
// ---------------------------------------------------------------------------

// Mean squared error over all elements.
template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
    Var<T> d = sub(a, b);
    return mean(mul(d, d));
}

// Multiplies a tensor by a scalar Var (shape [1]).
template <typename T>
Var<T> scale_by(Var<T> x, Var<T> s) {
    detail::require(s.val().size() == 1, "scale_by: scalar expected");
    return mul(x, s);
}

}  // namespace manas
