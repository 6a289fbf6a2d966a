#include "chardiff/tape.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <memory>

namespace chardiff {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

std::string shape_str(const std::vector<int>& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

bool Tensor::all_finite() const {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

double Tensor::abs_max() const {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::fabs(x));
    return m;
}

// ---------------------------------------------------------------- ParamStore

Param& ParamStore::add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw std::invalid_argument("param already registered: " + name);
    params_.emplace_back();
    Param& p = params_.back();
    p.name = name;
    p.value = std::move(init);
    p.grad = Tensor(p.value.shape);
    index_[name] = params_.size() - 1;
    return p;
}

Param& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown param: " + name);
    return params_[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown param: " + name);
    return params_[it->second];
}

std::vector<Param*> ParamStore::all() {
    std::vector<Param*> out;
    for (auto& kv : index_) out.push_back(&params_[kv.second]);
    return out;
}

std::vector<const Param*> ParamStore::all() const {
    std::vector<const Param*> out;
    for (const auto& kv : index_) out.push_back(&params_[kv.second]);
    return out;
}

std::vector<Param*> ParamStore::trainable() {
    std::vector<Param*> out;
    for (auto& kv : index_)
        if (params_[kv.second].trainable) out.push_back(&params_[kv.second]);
    return out;
}

// ---------------------------------------------------------------------- Tape

int Tape::new_node(Tensor value, bool needs_grad, std::function<void(Tape&)> back) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Tape::grad_buf(int id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape);
        n.has_grad = true;
    }
    return n.grad;
}

const Tensor& Tape::grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (!n.has_grad) throw std::runtime_error("grad not computed for node");
    return n.grad;
}

Var Tape::leaf(Param& p) {
    int id = new_node(p.value, true);
    nodes_[id].param = &p;
    return {id};
}

Var Tape::input(const Tensor& t, bool needs_grad) {
    return {new_node(t, needs_grad)};
}

void Tape::backward(Var loss) {
    if (nodes_[loss.id].value.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar");
    grad_buf(loss.id).v[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (n.has_grad && n.back) n.back(*this);
    }
}

void Tape::accumulate_param_grads() {
    for (auto& n : nodes_) {
        if (n.param && n.param->trainable && n.has_grad) {
            auto& g = n.param->grad.v;
            for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad.v[i];
        }
    }
}

// ------------------------------------------------------------- elementwise

Var Tape::add(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    check_same_shape(ta, tb, "add");
    Tensor out = ta;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += tb.v[i];
    bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    int id = new_node(std::move(out), ng, [a, b, self = (int)nodes_.size()](Tape& t) {
        const Tensor& g = t.nodes_[self].grad;
        if (t.nodes_[a.id].needs_grad) {
            auto& ga = t.grad_buf(a.id).v;
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g.v[i];
        }
        if (t.nodes_[b.id].needs_grad) {
            auto& gb = t.grad_buf(b.id).v;
            for (size_t i = 0; i < gb.size(); ++i) gb[i] += g.v[i];
        }
    });
    return {id};
}

Var Tape::sub(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    check_same_shape(ta, tb, "sub");
    Tensor out = ta;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= tb.v[i];
    bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    int id = new_node(std::move(out), ng, [a, b, self = (int)nodes_.size()](Tape& t) {
        const Tensor& g = t.nodes_[self].grad;
        if (t.nodes_[a.id].needs_grad) {
            auto& ga = t.grad_buf(a.id).v;
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g.v[i];
        }
        if (t.nodes_[b.id].needs_grad) {
            auto& gb = t.grad_buf(b.id).v;
            for (size_t i = 0; i < gb.size(); ++i) gb[i] -= g.v[i];
        }
    });
    return {id};
}

Var Tape::mul(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    check_same_shape(ta, tb, "mul");
    Tensor out = ta;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= tb.v[i];
    bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    int id = new_node(std::move(out), ng, [a, b, self = (int)nodes_.size()](Tape& t) {
        const Tensor& g = t.nodes_[self].grad;
        const Tensor &va = t.val(a), &vb = t.val(b);
        if (t.nodes_[a.id].needs_grad) {
            auto& ga = t.grad_buf(a.id).v;
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g.v[i] * vb.v[i];
        }
        if (t.nodes_[b.id].needs_grad) {
            auto& gb = t.grad_buf(b.id).v;
            for (size_t i = 0; i < gb.size(); ++i) gb[i] += g.v[i] * va.v[i];
        }
    });
    return {id};
}

Var Tape::scale(Var a, double c) {
    Tensor out = val(a);
    for (double& x : out.v) x *= c;
    int id = new_node(std::move(out), nodes_[a.id].needs_grad,
                      [a, c, self = (int)nodes_.size()](Tape& t) {
                          if (!t.nodes_[a.id].needs_grad) return;
                          const Tensor& g = t.nodes_[self].grad;
                          auto& ga = t.grad_buf(a.id).v;
                          for (size_t i = 0; i < ga.size(); ++i) ga[i] += c * g.v[i];
                      });
    return {id};
}

Var Tape::add_scalar(Var a, double c) {
    Tensor out = val(a);
    for (double& x : out.v) x += c;
    int id = new_node(std::move(out), nodes_[a.id].needs_grad,
                      [a, self = (int)nodes_.size()](Tape& t) {
                          if (!t.nodes_[a.id].needs_grad) return;
                          const Tensor& g = t.nodes_[self].grad;
                          auto& ga = t.grad_buf(a.id).v;
                          for (size_t i = 0; i < ga.size(); ++i) ga[i] += g.v[i];
                      });
    return {id};
}

Var Tape::mul_scalar_var(Var a, Var s) {
    if (val(s).numel() != 1) throw std::invalid_argument("mul_scalar_var: scalar expected");
    double c = val(s).v[0];
    Tensor out = val(a);
    for (double& x : out.v) x *= c;
    bool ng = nodes_[a.id].needs_grad || nodes_[s.id].needs_grad;
    int id = new_node(std::move(out), ng, [a, s, c, self = (int)nodes_.size()](Tape& t) {
        const Tensor& g = t.nodes_[self].grad;
        const Tensor& va = t.val(a);
        if (t.nodes_[a.id].needs_grad) {
            auto& ga = t.grad_buf(a.id).v;
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += c * g.v[i];
        }
        if (t.nodes_[s.id].needs_grad) {
            double acc = 0.0;
            for (size_t i = 0; i < g.v.size(); ++i) acc += g.v[i] * va.v[i];
            t.grad_buf(s.id).v[0] += acc;
        }
    });
    return {id};
}

Var Tape::silu(Var a) {
    Tensor out = val(a);
    for (double& x : out.v) x = x / (1.0 + std::exp(-x));
    int id = new_node(std::move(out), nodes_[a.id].needs_grad,
                      [a, self = (int)nodes_.size()](Tape& t) {
                          if (!t.nodes_[a.id].needs_grad) return;
                          const Tensor& g = t.nodes_[self].grad;
                          const Tensor& va = t.val(a);
                          auto& ga = t.grad_buf(a.id).v;
                          for (size_t i = 0; i < ga.size(); ++i) {
                              double s = 1.0 / (1.0 + std::exp(-va.v[i]));
                              ga[i] += g.v[i] * s * (1.0 + va.v[i] * (1.0 - s));
                          }
                      });
    return {id};
}

Var Tape::gelu(Var a) {
    static const double inv_sqrt2 = 0.7071067811865476;
    static const double inv_sqrt2pi = 0.3989422804014327;
    Tensor out = val(a);
    for (double& x : out.v) x = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    int id = new_node(std::move(out), nodes_[a.id].needs_grad,
                      [a, self = (int)nodes_.size()](Tape& t) {
                          if (!t.nodes_[a.id].needs_grad) return;
                          const Tensor& g = t.nodes_[self].grad;
                          const Tensor& va = t.val(a);
                          auto& ga = t.grad_buf(a.id).v;
                          for (size_t i = 0; i < ga.size(); ++i) {
                              double x = va.v[i];
                              double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                              double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                              ga[i] += g.v[i] * (cdf + x * pdf);
                          }
                      });
    return {id};
}

Var Tape::sigmoid(Var a) {
    Tensor out = val(a);
    for (double& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
    int id = new_node(std::move(out), nodes_[a.id].needs_grad,
                      [a, self = (int)nodes_.size()](Tape& t) {
                          if (!t.nodes_[a.id].needs_grad) return;
                          const Tensor& g = t.nodes_[self].grad;
                          const Tensor& y = t.nodes_[self].value;
                          auto& ga = t.grad_buf(a.id).v;
                          for (size_t i = 0; i < ga.size(); ++i)
                              ga[i] += g.v[i] * y.v[i] * (1.0 - y.v[i]);
                      });
    return {id};
}

Var Tape::exp(Var a) {
    Tensor out = val(a);
    for (double& x : out.v) x = std::exp(x);
    int id = new_node(std::move(out), nodes_[a.id].needs_grad,
                      [a, self = (int)nodes_.size()](Tape& t) {
                          if (!t.nodes_[a.id].needs_grad) return;
                          const Tensor& g = t.nodes_[self].grad;
                          const Tensor& y = t.nodes_[self].value;
                          auto& ga = t.grad_buf(a.id).v;
                          for (size_t i = 0; i < ga.size(); ++i) ga[i] += g.v[i] * y.v[i];
                      });
    return {id};
}

// ------------------------------------------------------------ linear algebra

Var Tape::matmul(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows())
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(ta.shape) +
                                    " x " + shape_str(tb.shape));
    int m = ta.rows(), k = ta.cols(), n = tb.cols();
    Tensor out({m, n});
    ECMap A(ta.v.data(), m, k), B(tb.v.data(), k, n);
    EMap(out.v.data(), m, n).noalias() = A * B;
    bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    int id = new_node(std::move(out), ng, [a, b, m, k, n, self = (int)nodes_.size()](Tape& t) {
        const Tensor& g = t.nodes_[self].grad;
        ECMap G(g.v.data(), m, n);
        if (t.nodes_[a.id].needs_grad) {
            ECMap B(t.val(b).v.data(), k, n);
            EMap(t.grad_buf(a.id).v.data(), m, k).noalias() += G * B.transpose();
        }
        if (t.nodes_[b.id].needs_grad) {
            ECMap A(t.val(a).v.data(), m, k);
            EMap(t.grad_buf(b.id).v.data(), k, n).noalias() += A.transpose() * G;
        }
    });
    return {id};
}

Var Tape::transpose(Var a) {
    const Tensor& ta = val(a);
    if (ta.rank() != 2) throw std::invalid_argument("transpose: 2-D only");
    int m = ta.rows(), n = ta.cols();
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = ta.at(i, j);
    int id = new_node(std::move(out), nodes_[a.id].needs_grad,
                      [a, m, n, self = (int)nodes_.size()](Tape& t) {
                          if (!t.nodes_[a.id].needs_grad) return;
                          const Tensor& g = t.nodes_[self].grad;
                          Tensor& ga = t.grad_buf(a.id);
                          for (int i = 0; i < m; ++i)
                              for (int j = 0; j < n; ++j) ga.at(i, j) += g.at(j, i);
                      });
    return {id};
}

Var Tape::add_rowvec(Var a, Var bias) {
    const Tensor &ta = val(a), &tb = val(bias);
    if (ta.rank() != 2 || tb.numel() != static_cast<size_t>(ta.cols()))
        throw std::invalid_argument("add_rowvec: shape mismatch");
    Tensor out = ta;
    int m = ta.rows(), n = ta.cols();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) += tb.v[j];
    bool ng = nodes_[a.id].needs_grad || nodes_[bias.id].needs_grad;
    int id = new_node(std::move(out), ng, [a, bias, m, n, self = (int)nodes_.size()](Tape& t) {
        const Tensor& g = t.nodes_[self].grad;
        if (t.nodes_[a.id].needs_grad) {
            auto& ga = t.grad_buf(a.id).v;
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g.v[i];
        }
        if (t.nodes_[bias.id].needs_grad) {
            auto& gb = t.grad_buf(bias.id).v;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) gb[j] += g.at(i, j);
        }
    });
    return {id};
}

Var Tape::mul_rowvec(Var a, Var gvec) {
    const Tensor &ta = val(a), &tg = val(gvec);
    if (ta.rank() != 2 || tg.numel() != static_cast<size_t>(ta.cols()))
        throw std::invalid_argument("mul_rowvec: shape mismatch");
    int m = ta.rows(), n = ta.cols();
    Tensor out = ta;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) *= tg.v[j];
    bool ng = nodes_[a.id].needs_grad || nodes_[gvec.id].needs_grad;
    int id = new_node(std::move(out), ng, [a, gvec, m, n, self = (int)nodes_.size()](Tape& t) {
        const Tensor& g = t.nodes_[self].grad;
        const Tensor &va = t.val(a), &vg = t.val(gvec);
        if (t.nodes_[a.id].needs_grad) {
            Tensor& ga = t.grad_buf(a.id);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) ga.at(i, j) += g.at(i, j) * vg.v[j];
        }
        if (t.nodes_[gvec.id].needs_grad) {
            auto& gg = t.grad_buf(gvec.id).v;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) gg[j] += g.at(i, j) * va.at(i, j);
        }
    });
    return {id};
}

Var Tape::softmax_rows(Var a) {
    const Tensor& ta = val(a);
    if (ta.rank() != 2) throw std::invalid_argument("softmax_rows: 2-D only");
    int m = ta.rows(), n = ta.cols();
    Tensor out = ta;
    for (int i = 0; i < m; ++i) {
        double mx = out.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, out.at(i, j));
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            double e = std::exp(out.at(i, j) - mx);
            out.at(i, j) = e;
            z += e;
        }
        for (int j = 0; j < n; ++j) out.at(i, j) /= z;
    }
    int id = new_node(std::move(out), nodes_[a.id].needs_grad,
                      [a, m, n, self = (int)nodes_.size()](Tape& t) {
                          if (!t.nodes_[a.id].needs_grad) return;
                          const Tensor& g = t.nodes_[self].grad;
                          const Tensor& p = t.nodes_[self].value;
                          Tensor& ga = t.grad_buf(a.id);
                          for (int i = 0; i < m; ++i) {
                              double dot = 0.0;
                              for (int j = 0; j < n; ++j) dot += g.at(i, j) * p.at(i, j);
                              for (int j = 0; j < n; ++j)
                                  ga.at(i, j) += p.at(i, j) * (g.at(i, j) - dot);
                          }
                      });
    return {id};
}

Var Tape::layer_norm_rows(Var a, double eps) {
    const Tensor& ta = val(a);
    if (ta.rank() != 2) throw std::invalid_argument("layer_norm_rows: 2-D only");
    int m = ta.rows(), n = ta.cols();
    Tensor out({m, n});
    std::vector<double> inv_std(m);
    for (int i = 0; i < m; ++i) {
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += ta.at(i, j);
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            double d = ta.at(i, j) - mu;
            var += d * d;
        }
        var /= n;
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (int j = 0; j < n; ++j) out.at(i, j) = (ta.at(i, j) - mu) * is;
    }
    int id = new_node(std::move(out), nodes_[a.id].needs_grad,
                      [a, m, n, inv_std, self = (int)nodes_.size()](Tape& t) {
                          if (!t.nodes_[a.id].needs_grad) return;
                          const Tensor& g = t.nodes_[self].grad;
                          const Tensor& y = t.nodes_[self].value;
                          Tensor& ga = t.grad_buf(a.id);
                          for (int i = 0; i < m; ++i) {
                              double mg = 0.0, mgy = 0.0;
                              for (int j = 0; j < n; ++j) {
                                  mg += g.at(i, j);
                                  mgy += g.at(i, j) * y.at(i, j);
                              }
                              mg /= n;
                              mgy /= n;
                              for (int j = 0; j < n; ++j)
                                  ga.at(i, j) +=
                                      inv_std[i] * (g.at(i, j) - mg - y.at(i, j) * mgy);
                          }
                      });
    return {id};
}

Var Tape::sum_cols(Var a) {
    const Tensor& ta = val(a);
    if (ta.rank() != 2) throw std::invalid_argument("sum_cols: 2-D only");
    int m = ta.rows(), n = ta.cols();
    Tensor out({m});
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += ta.at(i, j);
        out.v[i] = s;
    }
    int id = new_node(std::move(out), nodes_[a.id].needs_grad,
                      [a, m, n, self = (int)nodes_.size()](Tape& t) {
                          if (!t.nodes_[a.id].needs_grad) return;
                          const Tensor& g = t.nodes_[self].grad;
                          Tensor& ga = t.grad_buf(a.id);
                          for (int i = 0; i < m; ++i)
                              for (int j = 0; j < n; ++j) ga.at(i, j) += g.v[i];
                      });
    return {id};
}

// ------------------------------------------------------------------ shape

Var Tape::reshape(Var a, std::vector<int> shape) {
    Tensor out = val(a).reshaped(shape);
    int id = new_node(std::move(out), nodes_[a.id].needs_grad,
                      [a, self = (int)nodes_.size()](Tape& t) {
                          if (!t.nodes_[a.id].needs_grad) return;
                          const Tensor& g = t.nodes_[self].grad;
                          auto& ga = t.grad_buf(a.id).v;
                          for (size_t i = 0; i < ga.size(); ++i) ga[i] += g.v[i];
                      });
    return {id};
}

Var Tape::concat0(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat0: empty");
    std::vector<int> shape = val(parts[0]).shape;
    size_t row_elems = val(parts[0]).numel() / shape[0];
    int total = 0;
    bool ng = false;
    for (Var p : parts) {
        const Tensor& tp = val(p);
        if (tp.numel() / tp.shape[0] != row_elems)
            throw std::invalid_argument("concat0: trailing dims mismatch");
        total += tp.shape[0];
        ng = ng || nodes_[p.id].needs_grad;
    }
    shape[0] = total;
    Tensor out(shape);
    size_t off = 0;
    for (Var p : parts) {
        const Tensor& tp = val(p);
        std::memcpy(out.v.data() + off, tp.v.data(), tp.numel() * sizeof(double));
        off += tp.numel();
    }
    auto parts_copy = parts;
    int id = new_node(std::move(out), ng, [parts_copy, self = (int)nodes_.size()](Tape& t) {
        const Tensor& g = t.nodes_[self].grad;
        size_t off = 0;
        for (Var p : parts_copy) {
            size_t n = t.val(p).numel();
            if (t.nodes_[p.id].needs_grad) {
                auto& gp = t.grad_buf(p.id).v;
                for (size_t i = 0; i < n; ++i) gp[i] += g.v[off + i];
            }
            off += n;
        }
    });
    return {id};
}

Var Tape::slice0(Var a, int start, int len) {
    const Tensor& ta = val(a);
    if (start < 0 || len <= 0 || start + len > ta.shape[0])
        throw std::invalid_argument("slice0: out of range");
    std::vector<int> shape = ta.shape;
    shape[0] = len;
    size_t row_elems = ta.numel() / ta.shape[0];
    Tensor out(shape);
    std::memcpy(out.v.data(), ta.v.data() + start * row_elems, out.numel() * sizeof(double));
    int id = new_node(std::move(out), nodes_[a.id].needs_grad,
                      [a, start, row_elems, self = (int)nodes_.size()](Tape& t) {
                          if (!t.nodes_[a.id].needs_grad) return;
                          const Tensor& g = t.nodes_[self].grad;
                          auto& ga = t.grad_buf(a.id).v;
                          size_t off = start * row_elems;
                          for (size_t i = 0; i < g.v.size(); ++i) ga[off + i] += g.v[i];
                      });
    return {id};
}

Var Tape::concat_cols(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.rows() != tb.rows())
        throw std::invalid_argument("concat_cols: shape mismatch");
    int m = ta.rows(), na = ta.cols(), nb = tb.cols();
    Tensor out({m, na + nb});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < na; ++j) out.at(i, j) = ta.at(i, j);
        for (int j = 0; j < nb; ++j) out.at(i, na + j) = tb.at(i, j);
    }
    bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    int id = new_node(std::move(out), ng, [a, b, m, na, nb, self = (int)nodes_.size()](Tape& t) {
        const Tensor& g = t.nodes_[self].grad;
        if (t.nodes_[a.id].needs_grad) {
            Tensor& ga = t.grad_buf(a.id);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < na; ++j) ga.at(i, j) += g.at(i, j);
        }
        if (t.nodes_[b.id].needs_grad) {
            Tensor& gb = t.grad_buf(b.id);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < nb; ++j) gb.at(i, j) += g.at(i, na + j);
        }
    });
    return {id};
}

Var Tape::slice_cols(Var a, int start, int len) {
    const Tensor& ta = val(a);
    if (ta.rank() != 2 || start < 0 || len <= 0 || start + len > ta.cols())
        throw std::invalid_argument("slice_cols: out of range");
    int m = ta.rows();
    Tensor out({m, len});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < len; ++j) out.at(i, j) = ta.at(i, start + j);
    int id = new_node(std::move(out), nodes_[a.id].needs_grad,
                      [a, start, len, m, self = (int)nodes_.size()](Tape& t) {
                          if (!t.nodes_[a.id].needs_grad) return;
                          const Tensor& g = t.nodes_[self].grad;
                          Tensor& ga = t.grad_buf(a.id);
                          for (int i = 0; i < m; ++i)
                              for (int j = 0; j < len; ++j) ga.at(i, start + j) += g.at(i, j);
                      });
    return {id};
}

// ---------------------------------------------------------------- conv ops

namespace {

// cols layout: (IC*KH*KW) x (OH*OW), so conv output = Wmat * cols.
void im2col(const Tensor& x, int kh, int kw, int stride, int pad, int oh, int ow,
            std::vector<double>& cols) {
    int ic = x.shape[0], h = x.shape[1], w = x.shape[2];
    int pcount = oh * ow;
    cols.assign(static_cast<size_t>(ic) * kh * kw * pcount, 0.0);
    for (int c = 0; c < ic; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                size_t row = (static_cast<size_t>(c) * kh + ky) * kw + kx;
                double* dst = cols.data() + row * pcount;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    const double* src = &x.v[(static_cast<size_t>(c) * h + iy) * w];
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= w) continue;
                        dst[oy * ow + ox] = src[ix];
                    }
                }
            }
        }
    }
}

void col2im_add(const std::vector<double>& cols, int ic, int h, int w, int kh, int kw,
                int stride, int pad, int oh, int ow, Tensor& dx) {
    int pcount = oh * ow;
    for (int c = 0; c < ic; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                size_t row = (static_cast<size_t>(c) * kh + ky) * kw + kx;
                const double* src = cols.data() + row * pcount;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    double* dst = &dx.v[(static_cast<size_t>(c) * h + iy) * w];
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= w) continue;
                        dst[ix] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Var Tape::conv2d(Var x, Var w, Var b, int stride, int pad) {
    const Tensor &tx = val(x), &tw = val(w), &tb = val(b);
    if (tx.rank() != 3 || tw.rank() != 4) throw std::invalid_argument("conv2d: bad ranks");
    int ic = tx.shape[0], h = tx.shape[1], wd = tx.shape[2];
    int oc = tw.shape[0], kh = tw.shape[2], kw = tw.shape[3];
    if (tw.shape[1] != ic) throw std::invalid_argument("conv2d: channel mismatch");
    if (tb.numel() != static_cast<size_t>(oc)) throw std::invalid_argument("conv2d: bias size");
    int oh = (h + 2 * pad - kh) / stride + 1;
    int ow = (wd + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output");
    int pcount = oh * ow, krows = ic * kh * kw;

    auto cols = std::make_shared<std::vector<double>>();
    im2col(tx, kh, kw, stride, pad, oh, ow, *cols);

    Tensor out({oc, oh, ow});
    {
        ECMap W(tw.v.data(), oc, krows);
        ECMap C(cols->data(), krows, pcount);
        EMap(out.v.data(), oc, pcount).noalias() = W * C;
    }
    for (int c = 0; c < oc; ++c) {
        double bias = tb.v[c];
        double* dst = out.v.data() + static_cast<size_t>(c) * pcount;
        for (int p = 0; p < pcount; ++p) dst[p] += bias;
    }
    bool ng = nodes_[x.id].needs_grad || nodes_[w.id].needs_grad || nodes_[b.id].needs_grad;
    int id = new_node(
        std::move(out), ng,
        [x, w, b, cols, stride, pad, ic, h, wd, oc, kh, kw, oh, ow, krows, pcount,
         self = (int)nodes_.size()](Tape& t) {
            const Tensor& g = t.nodes_[self].grad;
            ECMap G(g.v.data(), oc, pcount);
            if (t.nodes_[w.id].needs_grad) {
                ECMap C(cols->data(), krows, pcount);
                EMap(t.grad_buf(w.id).v.data(), oc, krows).noalias() += G * C.transpose();
            }
            if (t.nodes_[b.id].needs_grad) {
                auto& gb = t.grad_buf(b.id).v;
                for (int c = 0; c < oc; ++c) {
                    double s = 0.0;
                    const double* src = g.v.data() + static_cast<size_t>(c) * pcount;
                    for (int p = 0; p < pcount; ++p) s += src[p];
                    gb[c] += s;
                }
            }
            if (t.nodes_[x.id].needs_grad) {
                std::vector<double> dcols(static_cast<size_t>(krows) * pcount);
                ECMap W(t.val(w).v.data(), oc, krows);
                EMap(dcols.data(), krows, pcount).noalias() = W.transpose() * G;
                col2im_add(dcols, ic, h, wd, kh, kw, stride, pad, oh, ow, t.grad_buf(x.id));
            }
        });
    return {id};
}

Var Tape::upsample_nearest2(Var x) {
    const Tensor& tx = val(x);
    if (tx.rank() != 3) throw std::invalid_argument("upsample_nearest2: CHW only");
    int c = tx.shape[0], h = tx.shape[1], w = tx.shape[2];
    Tensor out({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx)
                out.at3(ch, y, xx) = tx.at3(ch, y / 2, xx / 2);
    int id = new_node(std::move(out), nodes_[x.id].needs_grad,
                      [x, c, h, w, self = (int)nodes_.size()](Tape& t) {
                          if (!t.nodes_[x.id].needs_grad) return;
                          const Tensor& g = t.nodes_[self].grad;
                          Tensor& gx = t.grad_buf(x.id);
                          for (int ch = 0; ch < c; ++ch)
                              for (int y = 0; y < 2 * h; ++y)
                                  for (int xx = 0; xx < 2 * w; ++xx)
                                      gx.at3(ch, y / 2, xx / 2) += g.at3(ch, y, xx);
                      });
    return {id};
}

Var Tape::group_norm_chw(Var x, int groups, double eps) {
    const Tensor& tx = val(x);
    if (tx.rank() != 3 || tx.shape[0] % groups != 0)
        throw std::invalid_argument("group_norm_chw: bad shape/groups");
    int c = tx.shape[0], h = tx.shape[1], w = tx.shape[2];
    size_t gsize = static_cast<size_t>(c / groups) * h * w;
    Tensor out(tx.shape);
    std::vector<double> inv_std(groups);
    for (int g = 0; g < groups; ++g) {
        const double* src = tx.v.data() + g * gsize;
        double mu = 0.0;
        for (size_t i = 0; i < gsize; ++i) mu += src[i];
        mu /= static_cast<double>(gsize);
        double var = 0.0;
        for (size_t i = 0; i < gsize; ++i) {
            double d = src[i] - mu;
            var += d * d;
        }
        var /= static_cast<double>(gsize);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[g] = is;
        double* dst = out.v.data() + g * gsize;
        for (size_t i = 0; i < gsize; ++i) dst[i] = (src[i] - mu) * is;
    }
    int id = new_node(std::move(out), nodes_[x.id].needs_grad,
                      [x, groups, gsize, inv_std, self = (int)nodes_.size()](Tape& t) {
                          if (!t.nodes_[x.id].needs_grad) return;
                          const Tensor& g = t.nodes_[self].grad;
                          const Tensor& y = t.nodes_[self].value;
                          Tensor& gx = t.grad_buf(x.id);
                          for (int gi = 0; gi < groups; ++gi) {
                              const double* gp = g.v.data() + gi * gsize;
                              const double* yp = y.v.data() + gi * gsize;
                              double mg = 0.0, mgy = 0.0;
                              for (size_t i = 0; i < gsize; ++i) {
                                  mg += gp[i];
                                  mgy += gp[i] * yp[i];
                              }
                              mg /= static_cast<double>(gsize);
                              mgy /= static_cast<double>(gsize);
                              double* dst = gx.v.data() + gi * gsize;
                              for (size_t i = 0; i < gsize; ++i)
                                  dst[i] += inv_std[gi] * (gp[i] - mg - yp[i] * mgy);
                          }
                      });
    return {id};
}

Var Tape::add_chn(Var x, Var b) {
    const Tensor &tx = val(x), &tb = val(b);
    if (tx.rank() != 3 || tb.numel() != static_cast<size_t>(tx.shape[0]))
        throw std::invalid_argument("add_chn: shape mismatch");
    int c = tx.shape[0];
    size_t hw = static_cast<size_t>(tx.shape[1]) * tx.shape[2];
    Tensor out = tx;
    for (int ch = 0; ch < c; ++ch) {
        double bias = tb.v[ch];
        double* dst = out.v.data() + ch * hw;
        for (size_t i = 0; i < hw; ++i) dst[i] += bias;
    }
    bool ng = nodes_[x.id].needs_grad || nodes_[b.id].needs_grad;
    int id = new_node(std::move(out), ng, [x, b, c, hw, self = (int)nodes_.size()](Tape& t) {
        const Tensor& g = t.nodes_[self].grad;
        if (t.nodes_[x.id].needs_grad) {
            auto& gx = t.grad_buf(x.id).v;
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += g.v[i];
        }
        if (t.nodes_[b.id].needs_grad) {
            auto& gb = t.grad_buf(b.id).v;
            for (int ch = 0; ch < c; ++ch) {
                double s = 0.0;
                const double* src = g.v.data() + ch * hw;
                for (size_t i = 0; i < hw; ++i) s += src[i];
                gb[ch] += s;
            }
        }
    });
    return {id};
}

Var Tape::mul_chn(Var x, Var gv) {
    const Tensor &tx = val(x), &tg = val(gv);
    if (tx.rank() != 3 || tg.numel() != static_cast<size_t>(tx.shape[0]))
        throw std::invalid_argument("mul_chn: shape mismatch");
    int c = tx.shape[0];
    size_t hw = static_cast<size_t>(tx.shape[1]) * tx.shape[2];
    Tensor out = tx;
    for (int ch = 0; ch < c; ++ch) {
        double gain = tg.v[ch];
        double* dst = out.v.data() + ch * hw;
        for (size_t i = 0; i < hw; ++i) dst[i] *= gain;
    }
    bool ng = nodes_[x.id].needs_grad || nodes_[gv.id].needs_grad;
    int id = new_node(std::move(out), ng, [x, gv, c, hw, self = (int)nodes_.size()](Tape& t) {
        const Tensor& g = t.nodes_[self].grad;
        const Tensor &vx = t.val(x), &vg = t.val(gv);
        if (t.nodes_[x.id].needs_grad) {
            auto& gx = t.grad_buf(x.id).v;
            for (int ch = 0; ch < c; ++ch) {
                double gain = vg.v[ch];
                for (size_t i = 0; i < hw; ++i) gx[ch * hw + i] += g.v[ch * hw + i] * gain;
            }
        }
        if (t.nodes_[gv.id].needs_grad) {
            auto& gg = t.grad_buf(gv.id).v;
            for (int ch = 0; ch < c; ++ch) {
                double s = 0.0;
                for (size_t i = 0; i < hw; ++i) s += g.v[ch * hw + i] * vx.v[ch * hw + i];
                gg[ch] += s;
            }
        }
    });
    return {id};
}

// ------------------------------------------------------------- reductions

Var Tape::sum_all(Var a) {
    const Tensor& ta = val(a);
    double s = 0.0;
    for (double x : ta.v) s += x;
    int id = new_node(Tensor::scalar(s), nodes_[a.id].needs_grad,
                      [a, self = (int)nodes_.size()](Tape& t) {
                          if (!t.nodes_[a.id].needs_grad) return;
                          double g = t.nodes_[self].grad.v[0];
                          auto& ga = t.grad_buf(a.id).v;
                          for (double& x : ga) x += g;
                      });
    return {id};
}

Var Tape::mean_all(Var a) {
    double n = static_cast<double>(val(a).numel());
    return scale(sum_all(a), 1.0 / n);
}

Var Tape::mse(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    check_same_shape(ta, tb, "mse");
    size_t n = ta.numel();
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double d = ta.v[i] - tb.v[i];
        s += d * d;
    }
    bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    int id = new_node(Tensor::scalar(s / static_cast<double>(n)), ng,
                      [a, b, n, self = (int)nodes_.size()](Tape& t) {
                          double g = t.nodes_[self].grad.v[0] * 2.0 / static_cast<double>(n);
                          const Tensor &va = t.val(a), &vb = t.val(b);
                          if (t.nodes_[a.id].needs_grad) {
                              auto& ga = t.grad_buf(a.id).v;
                              for (size_t i = 0; i < n; ++i)
                                  ga[i] += g * (va.v[i] - vb.v[i]);
                          }
                          if (t.nodes_[b.id].needs_grad) {
                              auto& gb = t.grad_buf(b.id).v;
                              for (size_t i = 0; i < n; ++i)
                                  gb[i] -= g * (va.v[i] - vb.v[i]);
                          }
                      });
    return {id};
}

Var Tape::softmax_xent(Var logits, const std::vector<int>& targets) {
    const Tensor& tl = val(logits);
    if (tl.rank() != 2 || tl.rows() != static_cast<int>(targets.size()))
        throw std::invalid_argument("softmax_xent: shape mismatch");
    int m = tl.rows(), n = tl.cols();
    Tensor probs({m, n});
    double loss = 0.0;
    for (int i = 0; i < m; ++i) {
        double mx = tl.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, tl.at(i, j));
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += std::exp(tl.at(i, j) - mx);
        double lz = std::log(z) + mx;
        for (int j = 0; j < n; ++j) probs.at(i, j) = std::exp(tl.at(i, j) - lz);
        loss += lz - tl.at(i, targets[i]);
    }
    loss /= m;
    int id = new_node(Tensor::scalar(loss), nodes_[logits.id].needs_grad,
                      [logits, targets, probs, m, n, self = (int)nodes_.size()](Tape& t) {
                          if (!t.nodes_[logits.id].needs_grad) return;
                          double g = t.nodes_[self].grad.v[0] / m;
                          Tensor& gl = t.grad_buf(logits.id);
                          for (int i = 0; i < m; ++i)
                              for (int j = 0; j < n; ++j)
                                  gl.at(i, j) +=
                                      g * (probs.at(i, j) - (targets[i] == j ? 1.0 : 0.0));
                      });
    return {id};
}

}  // namespace chardiff
