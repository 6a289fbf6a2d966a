#ifndef CHARDIFF_TAPE_HPP
#define CHARDIFF_TAPE_HPP

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "chardiff/tensor.hpp"

namespace chardiff {

// A named parameter: persistent value plus gradient accumulator and
// Adam moments. Parameters live in a ParamStore; tapes reference them.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;
    bool trainable = false;

    void zero_grad() { grad.fill(0.0); }
};

class ParamStore {
public:
    Param& add(const std::string& name, Tensor init);
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    std::vector<Param*> all();
    std::vector<const Param*> all() const;
    std::vector<Param*> trainable();
    size_t size() const { return params_.size(); }

private:
    std::deque<Param> params_;
    std::map<std::string, size_t> index_;
};

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. One tape per forward pass; nodes own their values,
// gradients are allocated lazily during backward().
class Tape {
public:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        bool has_grad = false;
        std::function<void(Tape&)> back;  // adds into parents' grads
        Param* param = nullptr;           // set for leaf() nodes
    };

    // --- node creation ---
    Var leaf(Param& p);                                  // tracked parameter
    Var input(const Tensor& t, bool needs_grad = false); // data / constants

    // --- elementwise / arithmetic ---
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var add_scalar(Var a, double c);
    Var mul_scalar_var(Var a, Var s);  // s is a {1} tensor, differentiable
    Var silu(Var a);
    Var gelu(Var a);
    Var sigmoid(Var a);
    Var exp(Var a);

    // --- linear algebra (2-D) ---
    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var add_rowvec(Var a, Var bias);  // bias shape {cols}
    Var mul_rowvec(Var a, Var g);
    Var softmax_rows(Var a);
    Var layer_norm_rows(Var a, double eps = 1e-5);
    Var sum_cols(Var a);  // (m x n) -> {m}

    // --- shape ops ---
    Var reshape(Var a, std::vector<int> shape);
    Var concat0(const std::vector<Var>& parts);         // along axis 0
    Var slice0(Var a, int start, int len);              // along axis 0
    Var concat_cols(Var a, Var b);                      // 2-D, channel concat
    Var slice_cols(Var a, int start, int len);          // 2-D

    // --- conv / spatial (tensors are (C,H,W)) ---
    Var conv2d(Var x, Var w, Var b, int stride, int pad);
    Var upsample_nearest2(Var x);
    Var group_norm_chw(Var x, int groups, double eps = 1e-5);
    Var add_chn(Var x, Var b);  // per-channel bias, b shape {C}
    Var mul_chn(Var x, Var g);

    // --- reductions / losses ---
    Var sum_all(Var a);
    Var mean_all(Var a);
    Var mse(Var a, Var b);                               // mean squared error
    Var softmax_xent(Var logits, const std::vector<int>& targets);

    // --- execution ---
    void backward(Var loss);
    void accumulate_param_grads();  // leaf grads -> Param::grad (trainable only)

    const Tensor& val(Var v) const { return nodes_[v.id].value; }
    const Tensor& grad(Var v) const;
    size_t size() const { return nodes_.size(); }

private:
    friend struct TapeOps;
    std::deque<Node> nodes_;

    int new_node(Tensor value, bool needs_grad, std::function<void(Tape&)> back = nullptr);
    Tensor& grad_buf(int id);
    Node& node(int id) { return nodes_[id]; }
};

}  // namespace chardiff

#endif
