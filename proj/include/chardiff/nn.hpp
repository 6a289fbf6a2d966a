#ifndef CHARDIFF_NN_HPP
#define CHARDIFF_NN_HPP

#include <string>

#include "chardiff/rng.hpp"
#include "chardiff/tape.hpp"

namespace chardiff {

Tensor randn_tensor(std::vector<int> shape, Rng& rng, double stddev);

// fan-in scaled gaussian init
Tensor init_linear_weight(int in, int out, Rng& rng);
Tensor init_conv_weight(int oc, int ic, int kh, int kw, Rng& rng);

struct Linear {
    Param* w = nullptr;  // (in x out)
    Param* b = nullptr;  // nullptr when bias-free

    static Linear create(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
                         bool bias = true);
    Var forward(Tape& tp, Var x) const;
    int in_dim() const { return w->value.rows(); }
    int out_dim() const { return w->value.cols(); }
};

struct LayerNorm {
    Param* gain = nullptr;
    Param* bias = nullptr;

    static LayerNorm create(ParamStore& ps, const std::string& name, int dim);
    Var forward(Tape& tp, Var x) const;
};

struct GroupNorm {
    Param* gain = nullptr;
    Param* bias = nullptr;
    int groups = 1;

    static GroupNorm create(ParamStore& ps, const std::string& name, int channels, int groups);
    Var forward(Tape& tp, Var x) const;
};

struct Conv2d {
    Param* w = nullptr;  // (oc, ic, kh, kw)
    Param* b = nullptr;
    int stride = 1;
    int pad = 0;

    static Conv2d create(ParamStore& ps, const std::string& name, int ic, int oc, int k,
                         int stride, int pad, Rng& rng, bool zero_init = false);
    Var forward(Tape& tp, Var x) const;
};

uint64_t fnv1a(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ULL);
uint64_t tensor_checksum(const Tensor& t);
std::string hex64(uint64_t x);

}  // namespace chardiff

#endif
