#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "chardiff/nn.hpp"
#include "chardiff/rng.hpp"
#include "chardiff/tape.hpp"
#include "support/fd.hpp"

using namespace chardiff;
using chardiff::testing::fd_grad;
using chardiff::testing::grad_err;

namespace {

using OpBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Checks d(sum(op(xs) * w)) / d(xs[i]) against central differences for
// every input. w is a fixed random weighting so gradients are asymmetric.
void check_op_grads(const char* name, std::vector<Tensor> inputs, const OpBuilder& build,
                    double tol = 1e-6) {
    Rng rng(1234);
    Tensor w;
    {
        Tape tp;
        std::vector<Var> vars;
        for (auto& t : inputs) vars.push_back(tp.input(t, true));
        Var y = build(tp, vars);
        w = randn_tensor(tp.val(y).shape, rng, 1.0);
    }
    auto loss_val = [&](const std::vector<Tensor>& ins) {
        Tape tp;
        std::vector<Var> vars;
        for (auto& t : ins) vars.push_back(tp.input(t, true));
        Var y = build(tp, vars);
        return tp.val(tp.sum_all(tp.mul(y, tp.input(w)))).v[0];
    };
    // analytic grads
    Tape tp;
    std::vector<Var> vars;
    for (auto& t : inputs) vars.push_back(tp.input(t, true));
    Var y = build(tp, vars);
    Var loss = tp.sum_all(tp.mul(y, tp.input(w)));
    tp.backward(loss);
    for (size_t i = 0; i < inputs.size(); ++i) {
        auto f = [&](const Tensor& xi) {
            auto ins = inputs;
            ins[i] = xi;
            return loss_val(ins);
        };
        Tensor fd = fd_grad(inputs[i], f);
        double err = grad_err(tp.grad(vars[i]), fd);
        INFO(name << " input " << i << " grad err=" << err);
        CHECK(err < tol);
    }
}

Tensor rnd(std::vector<int> shape, uint64_t seed, double stddev = 1.0) {
    Rng rng(seed);
    return randn_tensor(std::move(shape), rng, stddev);
}

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
    check_op_grads("add", {rnd({3, 4}, 1), rnd({3, 4}, 2)},
                   [](Tape& t, const std::vector<Var>& v) { return t.add(v[0], v[1]); });
    check_op_grads("sub", {rnd({3, 4}, 3), rnd({3, 4}, 4)},
                   [](Tape& t, const std::vector<Var>& v) { return t.sub(v[0], v[1]); });
    check_op_grads("mul", {rnd({3, 4}, 5), rnd({3, 4}, 6)},
                   [](Tape& t, const std::vector<Var>& v) { return t.mul(v[0], v[1]); });
    check_op_grads("scale", {rnd({3, 4}, 7)},
                   [](Tape& t, const std::vector<Var>& v) { return t.scale(v[0], -1.7); });
    check_op_grads("add_scalar", {rnd({3, 4}, 8)},
                   [](Tape& t, const std::vector<Var>& v) { return t.add_scalar(v[0], 0.3); });
    check_op_grads("mul_scalar_var", {rnd({3, 4}, 9), rnd({1}, 10)},
                   [](Tape& t, const std::vector<Var>& v) { return t.mul_scalar_var(v[0], v[1]); });
    check_op_grads("silu", {rnd({3, 4}, 11)},
                   [](Tape& t, const std::vector<Var>& v) { return t.silu(v[0]); });
    check_op_grads("gelu", {rnd({3, 4}, 12)},
                   [](Tape& t, const std::vector<Var>& v) { return t.gelu(v[0]); });
    check_op_grads("sigmoid", {rnd({3, 4}, 13)},
                   [](Tape& t, const std::vector<Var>& v) { return t.sigmoid(v[0]); });
    check_op_grads("exp", {rnd({3, 4}, 14, 0.5)},
                   [](Tape& t, const std::vector<Var>& v) { return t.exp(v[0]); });
}

TEST_CASE("linear algebra op gradients match finite differences") {
    check_op_grads("matmul", {rnd({3, 5}, 21), rnd({5, 2}, 22)},
                   [](Tape& t, const std::vector<Var>& v) { return t.matmul(v[0], v[1]); });
    check_op_grads("transpose", {rnd({3, 5}, 23)},
                   [](Tape& t, const std::vector<Var>& v) { return t.transpose(v[0]); });
    check_op_grads("add_rowvec", {rnd({3, 5}, 24), rnd({5}, 25)},
                   [](Tape& t, const std::vector<Var>& v) { return t.add_rowvec(v[0], v[1]); });
    check_op_grads("mul_rowvec", {rnd({3, 5}, 26), rnd({5}, 27)},
                   [](Tape& t, const std::vector<Var>& v) { return t.mul_rowvec(v[0], v[1]); });
    check_op_grads("softmax_rows", {rnd({3, 5}, 28)},
                   [](Tape& t, const std::vector<Var>& v) { return t.softmax_rows(v[0]); });
    check_op_grads(
        "layer_norm_rows", {rnd({3, 5}, 29)},
        [](Tape& t, const std::vector<Var>& v) { return t.layer_norm_rows(v[0]); }, 1e-5);
    check_op_grads("sum_cols", {rnd({3, 5}, 30)},
                   [](Tape& t, const std::vector<Var>& v) { return t.sum_cols(v[0]); });
}

TEST_CASE("shape op gradients match finite differences") {
    check_op_grads("reshape", {rnd({3, 4}, 31)}, [](Tape& t, const std::vector<Var>& v) {
        return t.reshape(v[0], {2, 6});
    });
    check_op_grads("concat0", {rnd({2, 4}, 32), rnd({3, 4}, 33)},
                   [](Tape& t, const std::vector<Var>& v) { return t.concat0({v[0], v[1]}); });
    check_op_grads("slice0", {rnd({5, 4}, 34)},
                   [](Tape& t, const std::vector<Var>& v) { return t.slice0(v[0], 1, 3); });
    check_op_grads("concat_cols", {rnd({3, 2}, 35), rnd({3, 4}, 36)},
                   [](Tape& t, const std::vector<Var>& v) { return t.concat_cols(v[0], v[1]); });
    check_op_grads("slice_cols", {rnd({3, 6}, 37)},
                   [](Tape& t, const std::vector<Var>& v) { return t.slice_cols(v[0], 2, 3); });
}

TEST_CASE("conv and spatial op gradients match finite differences") {
    check_op_grads("conv2d s1p1", {rnd({3, 5, 5}, 41), rnd({4, 3, 3, 3}, 42, 0.4), rnd({4}, 43)},
                   [](Tape& t, const std::vector<Var>& v) {
                       return t.conv2d(v[0], v[1], v[2], 1, 1);
                   });
    check_op_grads("conv2d s2p1", {rnd({2, 6, 6}, 44), rnd({3, 2, 3, 3}, 45, 0.4), rnd({3}, 46)},
                   [](Tape& t, const std::vector<Var>& v) {
                       return t.conv2d(v[0], v[1], v[2], 2, 1);
                   });
    check_op_grads("conv2d k1", {rnd({3, 4, 4}, 47), rnd({2, 3, 1, 1}, 48), rnd({2}, 49)},
                   [](Tape& t, const std::vector<Var>& v) {
                       return t.conv2d(v[0], v[1], v[2], 1, 0);
                   });
    check_op_grads("upsample_nearest2", {rnd({2, 3, 3}, 50)},
                   [](Tape& t, const std::vector<Var>& v) { return t.upsample_nearest2(v[0]); });
    check_op_grads(
        "group_norm_chw", {rnd({4, 3, 3}, 51)},
        [](Tape& t, const std::vector<Var>& v) { return t.group_norm_chw(v[0], 2); }, 1e-5);
    check_op_grads("add_chn", {rnd({3, 4, 4}, 52), rnd({3}, 53)},
                   [](Tape& t, const std::vector<Var>& v) { return t.add_chn(v[0], v[1]); });
    check_op_grads("mul_chn", {rnd({3, 4, 4}, 54), rnd({3}, 55)},
                   [](Tape& t, const std::vector<Var>& v) { return t.mul_chn(v[0], v[1]); });
}

TEST_CASE("reduction op gradients match finite differences") {
    check_op_grads("sum_all", {rnd({3, 4}, 61)},
                   [](Tape& t, const std::vector<Var>& v) { return t.sum_all(v[0]); });
    check_op_grads("mean_all", {rnd({3, 4}, 62)},
                   [](Tape& t, const std::vector<Var>& v) { return t.mean_all(v[0]); });
    check_op_grads("mse", {rnd({3, 4}, 63), rnd({3, 4}, 64)},
                   [](Tape& t, const std::vector<Var>& v) { return t.mse(v[0], v[1]); });
    check_op_grads("softmax_xent", {rnd({3, 5}, 65)}, [](Tape& t, const std::vector<Var>& v) {
        return t.softmax_xent(v[0], {0, 2, 4});
    });
}

TEST_CASE("softmax rows sum to one") {
    Tape tp;
    Var p = tp.softmax_rows(tp.input(rnd({6, 9}, 71, 3.0)));
    const Tensor& tv = tp.val(p);
    for (int i = 0; i < tv.rows(); ++i) {
        double s = 0.0;
        for (int j = 0; j < tv.cols(); ++j) s += tv.at(i, j);
        CHECK(std::fabs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("matmul matches hand loop") {
    Tensor a = rnd({3, 4}, 72), b = rnd({4, 2}, 73);
    Tape tp;
    const Tensor& c = tp.val(tp.matmul(tp.input(a), tp.input(b)));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
            CHECK(std::fabs(c.at(i, j) - s) < 1e-12);
        }
}

TEST_CASE("param leaf accumulates gradient only when trainable") {
    ParamStore ps;
    Rng rng(7);
    Param& w = ps.add("w", randn_tensor({3, 3}, rng, 1.0));
    Param& frozen = ps.add("f", randn_tensor({3, 3}, rng, 1.0));
    w.trainable = true;
    frozen.trainable = false;
    Tape tp;
    Var y = tp.mul(tp.leaf(w), tp.leaf(frozen));
    tp.backward(tp.sum_all(y));
    tp.accumulate_param_grads();
    CHECK(w.grad.abs_max() > 0.0);
    CHECK(frozen.grad.abs_max() == 0.0);
}

TEST_CASE("rng serialization round-trips") {
    Rng a(42);
    for (int i = 0; i < 100; ++i) a.gaussian();
    std::string s = a.serialize();
    Rng b;
    b.deserialize(s);
    for (int i = 0; i < 50; ++i) CHECK(a.gaussian() == b.gaussian());
}

TEST_CASE("checksum is order and content sensitive") {
    Tensor a = rnd({4, 4}, 81), b = a;
    CHECK(tensor_checksum(a) == tensor_checksum(b));
    b.v[3] += 1e-12;
    CHECK(tensor_checksum(a) != tensor_checksum(b));
}
