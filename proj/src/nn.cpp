#include "chardiff/nn.hpp"

#include <cmath>
#include <cstdio>

namespace chardiff {

Tensor randn_tensor(std::vector<int> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (double& x : t.v) x = rng.gaussian() * stddev;
    return t;
}

Tensor init_linear_weight(int in, int out, Rng& rng) {
    return randn_tensor({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
}

Tensor init_conv_weight(int oc, int ic, int kh, int kw, Rng& rng) {
    double fan_in = static_cast<double>(ic) * kh * kw;
    return randn_tensor({oc, ic, kh, kw}, rng, 1.0 / std::sqrt(fan_in));
}

Linear Linear::create(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
                      bool bias) {
    Linear l;
    l.w = &ps.add(name + ".w", init_linear_weight(in, out, rng));
    if (bias) l.b = &ps.add(name + ".b", Tensor({out}));
    return l;
}

Var Linear::forward(Tape& tp, Var x) const {
    Var y = tp.matmul(x, tp.leaf(*w));
    if (b) y = tp.add_rowvec(y, tp.leaf(*b));
    return y;
}

LayerNorm LayerNorm::create(ParamStore& ps, const std::string& name, int dim) {
    LayerNorm l;
    l.gain = &ps.add(name + ".g", Tensor::full({dim}, 1.0));
    l.bias = &ps.add(name + ".b", Tensor({dim}));
    return l;
}

Var LayerNorm::forward(Tape& tp, Var x) const {
    return tp.add_rowvec(tp.mul_rowvec(tp.layer_norm_rows(x), tp.leaf(*gain)), tp.leaf(*bias));
}

GroupNorm GroupNorm::create(ParamStore& ps, const std::string& name, int channels, int groups) {
    GroupNorm g;
    g.groups = groups;
    g.gain = &ps.add(name + ".g", Tensor::full({channels}, 1.0));
    g.bias = &ps.add(name + ".b", Tensor({channels}));
    return g;
}

Var GroupNorm::forward(Tape& tp, Var x) const {
    return tp.add_chn(tp.mul_chn(tp.group_norm_chw(x, groups), tp.leaf(*gain)), tp.leaf(*bias));
}

Conv2d Conv2d::create(ParamStore& ps, const std::string& name, int ic, int oc, int k, int stride,
                      int pad, Rng& rng, bool zero_init) {
    Conv2d c;
    c.stride = stride;
    c.pad = pad;
    c.w = &ps.add(name + ".w",
                  zero_init ? Tensor({oc, ic, k, k}) : init_conv_weight(oc, ic, k, k, rng));
    c.b = &ps.add(name + ".b", Tensor({oc}));
    return c;
}

Var Conv2d::forward(Tape& tp, Var x) const {
    return tp.conv2d(x, tp.leaf(*w), tp.leaf(*b), stride, pad);
}

uint64_t fnv1a(const void* data, size_t n, uint64_t seed) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t tensor_checksum(const Tensor& t) {
    uint64_t h = fnv1a(t.v.data(), t.v.size() * sizeof(double));
    return fnv1a(t.shape.data(), t.shape.size() * sizeof(int), h);
}

std::string hex64(uint64_t x) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(x));
    return std::string(buf);
}

}  // namespace chardiff
