#include "msrlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "msrlab/params.hpp"

namespace msr {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

const char* op_name(Op op) {
    switch (op) {
        case Op::kConstant: return "constant";
        case Op::kParameter: return "parameter";
        case Op::kMatMul: return "matmul";
        case Op::kTranspose: return "transpose";
        case Op::kAdd: return "add";
        case Op::kMul: return "mul";
        case Op::kScalarMul: return "scalar-mul";
        case Op::kConcat: return "concat";
        case Op::kReshape: return "reshape";
        case Op::kGatherRows: return "gather-rows";
        case Op::kSigmoid: return "sigmoid";
        case Op::kRelu: return "relu";
        case Op::kExp: return "exp";
        case Op::kNeg: return "negate";
        case Op::kAbs: return "abs";
        case Op::kRowSqDist: return "row-sqdist";
        case Op::kSoftmax: return "softmax";
        case Op::kSum: return "sum";
        case Op::kMean: return "mean";
        case Op::kBce: return "bce";
        case Op::kAttnScores: return "attn-scores";
        case Op::kAttnMix: return "attn-mix";
    }
    return "?";
}

namespace {

[[noreturn]] void fail(Op op, const std::string& msg) {
    throw GraphError(std::string(op_name(op)) + ": " + msg);
}

void check_2d(Op op, const Shape& s, const char* which) {
    if (s.size() != 2) fail(op, std::string(which) + " must be 2-d, got " + shape_str(s));
}

constexpr double kBceEps = 1e-7;  // prediction clamp inside BCE

// c[n,m] += or = a[n,k] * b[k,m]
void matmul_nn(const double* a, const double* b, double* c, int64_t n, int64_t k, int64_t m,
               bool accumulate) {
    for (int64_t i = 0; i < n; ++i) {
        double* ci = c + i * m;
        if (!accumulate) std::memset(ci, 0, sizeof(double) * m);
        const double* ai = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * m;
            for (int64_t j = 0; j < m; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[n,k] += a[n,m] * b[k,m]^T
void matmul_nt_acc(const double* a, const double* b, double* c, int64_t n, int64_t m, int64_t k) {
    for (int64_t i = 0; i < n; ++i) {
        const double* ai = a + i * m;
        double* ci = c + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const double* bp = b + p * m;
            double acc = 0.0;
            for (int64_t j = 0; j < m; ++j) acc += ai[j] * bp[j];
            ci[p] += acc;
        }
    }
}

// c[k,m] += a[n,k]^T * b[n,m]
void matmul_tn_acc(const double* a, const double* b, double* c, int64_t n, int64_t k, int64_t m) {
    for (int64_t i = 0; i < n; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * m;
        for (int64_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            double* cp = c + p * m;
            for (int64_t j = 0; j < m; ++j) cp[j] += av * bi[j];
        }
    }
}

}  // namespace

int Graph::push(Node node) {
    nodes_.push_back(std::move(node));
    compute(nodes_.back());
    return static_cast<int>(nodes_.size()) - 1;
}

int Graph::constant(Shape shape, std::vector<double> value) {
    if (numel(shape) != static_cast<int64_t>(value.size()))
        fail(Op::kConstant, "value size " + std::to_string(value.size()) + " does not match shape " +
                                shape_str(shape));
    Node n;
    n.op = Op::kConstant;
    n.shape = std::move(shape);
    n.value = std::move(value);
    return push(std::move(n));
}

int Graph::constant_scalar(double v) { return constant({1}, {v}); }

int Graph::parameter(int param_index) {
    if (!params_) fail(Op::kParameter, "graph has no bound parameter store");
    const Param& p = params_->at(param_index);
    Node n;
    n.op = Op::kParameter;
    n.shape = p.shape;
    n.param = param_index;
    n.requires_grad = p.trainable;
    return push(std::move(n));
}

int Graph::parameter(const std::string& name) {
    if (!params_) fail(Op::kParameter, "graph has no bound parameter store");
    int idx = params_->index_of(name);
    if (idx < 0) fail(Op::kParameter, "unknown parameter '" + name + "'");
    return parameter(idx);
}

int Graph::matmul(int a, int b) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    check_2d(Op::kMatMul, sa, "lhs");
    check_2d(Op::kMatMul, sb, "rhs");
    if (sa[1] != sb[0])
        fail(Op::kMatMul, "inner extents differ: " + shape_str(sa) + " x " + shape_str(sb));
    Node n;
    n.op = Op::kMatMul;
    n.shape = {sa[0], sb[1]};
    n.inputs = {a, b};
    n.requires_grad = at(a).requires_grad || at(b).requires_grad;
    return push(std::move(n));
}

int Graph::transpose(int a) {
    const Shape& s = shape(a);
    check_2d(Op::kTranspose, s, "input");
    Node n;
    n.op = Op::kTranspose;
    n.shape = {s[1], s[0]};
    n.inputs = {a};
    n.requires_grad = at(a).requires_grad;
    return push(std::move(n));
}

int Graph::add(int a, int b) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    bool same = sa == sb;
    // bias broadcast: b is [m] or [1,m], a has trailing extent m
    int64_t m = sb.empty() ? 0 : sb.back();
    bool bias = !same && numel(sb) == m && !sa.empty() && sa.back() == m;
    if (!same && !bias)
        fail(Op::kAdd, "incompatible shapes " + shape_str(sa) + " + " + shape_str(sb));
    Node n;
    n.op = Op::kAdd;
    n.shape = sa;
    n.inputs = {a, b};
    n.requires_grad = at(a).requires_grad || at(b).requires_grad;
    return push(std::move(n));
}

int Graph::mul(int a, int b) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    if (sa != sb && numel(sb) != 1)
        fail(Op::kMul, "incompatible shapes " + shape_str(sa) + " * " + shape_str(sb));
    Node n;
    n.op = Op::kMul;
    n.shape = sa;
    n.inputs = {a, b};
    n.requires_grad = at(a).requires_grad || at(b).requires_grad;
    return push(std::move(n));
}

int Graph::scalar_mul(int a, double s) {
    Node n;
    n.op = Op::kScalarMul;
    n.shape = shape(a);
    n.inputs = {a};
    n.scalar = s;
    n.requires_grad = at(a).requires_grad;
    return push(std::move(n));
}

int Graph::concat(std::vector<int> parts, int axis) {
    if (parts.empty()) fail(Op::kConcat, "no inputs");
    if (axis != 0 && axis != 1) fail(Op::kConcat, "axis must be 0 or 1");
    const Shape& first = shape(parts[0]);
    check_2d(Op::kConcat, first, "input");
    int64_t fixed = axis == 0 ? first[1] : first[0];
    int64_t total = 0;
    for (int p : parts) {
        const Shape& s = shape(p);
        check_2d(Op::kConcat, s, "input");
        int64_t f = axis == 0 ? s[1] : s[0];
        if (f != fixed)
            fail(Op::kConcat, "extent mismatch along axis " + std::to_string(1 - axis) + ": " +
                                  shape_str(first) + " vs " + shape_str(s));
        total += axis == 0 ? s[0] : s[1];
    }
    Node n;
    n.op = Op::kConcat;
    n.shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
    n.group = axis;
    bool rg = false;
    for (int p : parts) rg = rg || at(p).requires_grad;
    n.requires_grad = rg;
    n.inputs.assign(parts.begin(), parts.end());
    return push(std::move(n));
}

int Graph::reshape(int a, Shape target) {
    if (numel(target) != numel(shape(a)))
        fail(Op::kReshape, "cannot reshape " + shape_str(shape(a)) + " to " + shape_str(target));
    Node n;
    n.op = Op::kReshape;
    n.shape = std::move(target);
    n.inputs = {a};
    n.requires_grad = at(a).requires_grad;
    return push(std::move(n));
}

int Graph::gather_rows(int a, std::vector<int32_t> rows) {
    const Shape& s = shape(a);
    check_2d(Op::kGatherRows, s, "input");
    if (rows.empty()) fail(Op::kGatherRows, "empty index list");
    for (int32_t r : rows)
        if (r < 0 || r >= s[0])
            fail(Op::kGatherRows,
                 "row index " + std::to_string(r) + " out of range for " + shape_str(s));
    Node n;
    n.op = Op::kGatherRows;
    n.shape = {static_cast<int64_t>(rows.size()), s[1]};
    n.inputs = {a};
    n.indices = std::move(rows);
    n.requires_grad = at(a).requires_grad;
    return push(std::move(n));
}

namespace {
Node unary(Op op, int a, const Shape& s, bool rg) {
    Node n;
    n.op = op;
    n.shape = s;
    n.inputs = {a};
    n.requires_grad = rg;
    return n;
}
}  // namespace

int Graph::sigmoid(int a) { return push(unary(Op::kSigmoid, a, shape(a), at(a).requires_grad)); }
int Graph::relu(int a) { return push(unary(Op::kRelu, a, shape(a), at(a).requires_grad)); }
int Graph::exp(int a) { return push(unary(Op::kExp, a, shape(a), at(a).requires_grad)); }
int Graph::neg(int a) { return push(unary(Op::kNeg, a, shape(a), at(a).requires_grad)); }
int Graph::abs(int a) { return push(unary(Op::kAbs, a, shape(a), at(a).requires_grad)); }

int Graph::row_sqdist(int a, int b) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    check_2d(Op::kRowSqDist, sa, "lhs");
    check_2d(Op::kRowSqDist, sb, "rhs");
    if (sa != sb)
        fail(Op::kRowSqDist, "shapes differ: " + shape_str(sa) + " vs " + shape_str(sb));
    Node n;
    n.op = Op::kRowSqDist;
    n.shape = {sa[0]};
    n.inputs = {a, b};
    n.requires_grad = at(a).requires_grad || at(b).requires_grad;
    return push(std::move(n));
}

int Graph::softmax(int a) {
    const Shape& s = shape(a);
    if (s.empty()) fail(Op::kSoftmax, "scalar input");
    Node n;
    n.op = Op::kSoftmax;
    n.shape = s;
    n.inputs = {a};
    n.requires_grad = at(a).requires_grad;
    return push(std::move(n));
}

int Graph::sum(int a) { return push(unary(Op::kSum, a, {1}, at(a).requires_grad)); }
int Graph::mean(int a) { return push(unary(Op::kMean, a, {1}, at(a).requires_grad)); }

int Graph::bce(int probs, int labels) {
    const Shape& sp = shape(probs);
    const Shape& sl = shape(labels);
    if (sp != sl)
        fail(Op::kBce, "prediction/label shapes differ: " + shape_str(sp) + " vs " + shape_str(sl));
    if (at(labels).requires_grad) fail(Op::kBce, "labels must not require gradients");
    Node n;
    n.op = Op::kBce;
    n.shape = sp;
    n.inputs = {probs, labels};
    n.requires_grad = at(probs).requires_grad;
    return push(std::move(n));
}

int Graph::attn_scores(int query, int keys, int group) {
    const Shape& sq = shape(query);
    const Shape& sk = shape(keys);
    check_2d(Op::kAttnScores, sq, "query");
    check_2d(Op::kAttnScores, sk, "keys");
    if (group < 1) fail(Op::kAttnScores, "group size must be >= 1");
    if (sk[0] != sq[0] * group || sk[1] != sq[1])
        fail(Op::kAttnScores, "keys " + shape_str(sk) + " do not match query " + shape_str(sq) +
                                  " with group " + std::to_string(group));
    Node n;
    n.op = Op::kAttnScores;
    n.shape = {sq[0], group};
    n.inputs = {query, keys};
    n.group = group;
    n.requires_grad = at(query).requires_grad || at(keys).requires_grad;
    return push(std::move(n));
}

int Graph::attn_mix(int weights, int values, int group) {
    const Shape& sw = shape(weights);
    const Shape& sv = shape(values);
    check_2d(Op::kAttnMix, sw, "weights");
    check_2d(Op::kAttnMix, sv, "values");
    if (group < 1) fail(Op::kAttnMix, "group size must be >= 1");
    if (sw[1] != group || sv[0] != sw[0] * group)
        fail(Op::kAttnMix, "values " + shape_str(sv) + " do not match weights " + shape_str(sw) +
                               " with group " + std::to_string(group));
    Node n;
    n.op = Op::kAttnMix;
    n.shape = {sw[0], sv[1]};
    n.inputs = {weights, values};
    n.group = group;
    n.requires_grad = at(weights).requires_grad || at(values).requires_grad;
    return push(std::move(n));
}

double Graph::scalar_value(int id) const {
    const Node& n = nodes_[id];
    if (n.value.size() != 1) throw GraphError("node is not scalar");
    return n.value[0];
}

void Graph::compute(Node& n) {
    switch (n.op) {
        case Op::kConstant:
            break;
        case Op::kParameter:
            n.value = params_->at(n.param).value;
            break;
        case Op::kMatMul: {
            const Node& a = nodes_[n.inputs[0]];
            const Node& b = nodes_[n.inputs[1]];
            n.value.assign(numel(n.shape), 0.0);
            matmul_nn(a.value.data(), b.value.data(), n.value.data(), a.shape[0], a.shape[1],
                      b.shape[1], true);
            break;
        }
        case Op::kTranspose: {
            const Node& a = nodes_[n.inputs[0]];
            int64_t r = a.shape[0], c = a.shape[1];
            n.value.resize(r * c);
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) n.value[j * r + i] = a.value[i * c + j];
            break;
        }
        case Op::kAdd: {
            const Node& a = nodes_[n.inputs[0]];
            const Node& b = nodes_[n.inputs[1]];
            n.value = a.value;
            if (a.shape == b.shape) {
                for (size_t i = 0; i < n.value.size(); ++i) n.value[i] += b.value[i];
            } else {
                int64_t m = b.shape.back();
                int64_t rows = numel(a.shape) / m;
                for (int64_t i = 0; i < rows; ++i) {
                    double* row = n.value.data() + i * m;
                    for (int64_t j = 0; j < m; ++j) row[j] += b.value[j];
                }
            }
            break;
        }
        case Op::kMul: {
            const Node& a = nodes_[n.inputs[0]];
            const Node& b = nodes_[n.inputs[1]];
            n.value = a.value;
            if (b.value.size() == 1) {
                double s = b.value[0];
                for (double& v : n.value) v *= s;
            } else {
                for (size_t i = 0; i < n.value.size(); ++i) n.value[i] *= b.value[i];
            }
            break;
        }
        case Op::kScalarMul: {
            const Node& a = nodes_[n.inputs[0]];
            n.value = a.value;
            for (double& v : n.value) v *= n.scalar;
            break;
        }
        case Op::kConcat: {
            n.value.resize(numel(n.shape));
            if (n.group == 0) {
                double* out = n.value.data();
                for (int p : n.inputs) {
                    const Node& a = nodes_[p];
                    std::memcpy(out, a.value.data(), sizeof(double) * a.value.size());
                    out += a.value.size();
                }
            } else {
                int64_t rows = n.shape[0];
                int64_t total = n.shape[1];
                int64_t off = 0;
                for (int p : n.inputs) {
                    const Node& a = nodes_[p];
                    int64_t w = a.shape[1];
                    for (int64_t i = 0; i < rows; ++i)
                        std::memcpy(n.value.data() + i * total + off, a.value.data() + i * w,
                                    sizeof(double) * w);
                    off += w;
                }
            }
            break;
        }
        case Op::kReshape:
            n.value = nodes_[n.inputs[0]].value;
            break;
        case Op::kGatherRows: {
            const Node& a = nodes_[n.inputs[0]];
            int64_t d = a.shape[1];
            n.value.resize(n.indices.size() * d);
            for (size_t i = 0; i < n.indices.size(); ++i)
                std::memcpy(n.value.data() + i * d, a.value.data() + n.indices[i] * d,
                            sizeof(double) * d);
            break;
        }
        case Op::kSigmoid: {
            const Node& a = nodes_[n.inputs[0]];
            n.value.resize(a.value.size());
            for (size_t i = 0; i < a.value.size(); ++i)
                n.value[i] = 1.0 / (1.0 + std::exp(-a.value[i]));
            break;
        }
        case Op::kRelu: {
            const Node& a = nodes_[n.inputs[0]];
            n.value.resize(a.value.size());
            for (size_t i = 0; i < a.value.size(); ++i)
                n.value[i] = a.value[i] > 0.0 ? a.value[i] : 0.0;
            break;
        }
        case Op::kExp: {
            const Node& a = nodes_[n.inputs[0]];
            n.value.resize(a.value.size());
            for (size_t i = 0; i < a.value.size(); ++i) n.value[i] = std::exp(a.value[i]);
            break;
        }
        case Op::kNeg: {
            const Node& a = nodes_[n.inputs[0]];
            n.value.resize(a.value.size());
            for (size_t i = 0; i < a.value.size(); ++i) n.value[i] = -a.value[i];
            break;
        }
        case Op::kAbs: {
            const Node& a = nodes_[n.inputs[0]];
            n.value.resize(a.value.size());
            for (size_t i = 0; i < a.value.size(); ++i) n.value[i] = std::fabs(a.value[i]);
            break;
        }
        case Op::kRowSqDist: {
            const Node& a = nodes_[n.inputs[0]];
            const Node& b = nodes_[n.inputs[1]];
            int64_t rows = a.shape[0], d = a.shape[1];
            n.value.resize(rows);
            for (int64_t i = 0; i < rows; ++i) {
                const double* ai = a.value.data() + i * d;
                const double* bi = b.value.data() + i * d;
                double acc = 0.0;
                for (int64_t j = 0; j < d; ++j) {
                    double diff = ai[j] - bi[j];
                    acc += diff * diff;
                }
                n.value[i] = acc;
            }
            break;
        }
        case Op::kSoftmax: {
            const Node& a = nodes_[n.inputs[0]];
            int64_t m = n.shape.back();
            int64_t rows = numel(n.shape) / m;
            n.value.resize(a.value.size());
            for (int64_t i = 0; i < rows; ++i) {
                const double* in = a.value.data() + i * m;
                double* out = n.value.data() + i * m;
                double mx = in[0];
                for (int64_t j = 1; j < m; ++j) mx = std::max(mx, in[j]);
                double z = 0.0;
                for (int64_t j = 0; j < m; ++j) {
                    out[j] = std::exp(in[j] - mx);
                    z += out[j];
                }
                for (int64_t j = 0; j < m; ++j) out[j] /= z;
            }
            break;
        }
        case Op::kSum: {
            const Node& a = nodes_[n.inputs[0]];
            double acc = 0.0;
            for (double v : a.value) acc += v;
            n.value = {acc};
            break;
        }
        case Op::kMean: {
            const Node& a = nodes_[n.inputs[0]];
            double acc = 0.0;
            for (double v : a.value) acc += v;
            n.value = {acc / static_cast<double>(a.value.size())};
            break;
        }
        case Op::kBce: {
            const Node& p = nodes_[n.inputs[0]];
            const Node& y = nodes_[n.inputs[1]];
            n.value.resize(p.value.size());
            for (size_t i = 0; i < p.value.size(); ++i) {
                double ph = std::clamp(p.value[i], kBceEps, 1.0 - kBceEps);
                n.value[i] = -(y.value[i] * std::log(ph) + (1.0 - y.value[i]) * std::log(1.0 - ph));
            }
            break;
        }
        case Op::kAttnScores: {
            const Node& q = nodes_[n.inputs[0]];
            const Node& k = nodes_[n.inputs[1]];
            int64_t rows = q.shape[0], d = q.shape[1], g = n.group;
            n.value.resize(rows * g);
            for (int64_t i = 0; i < rows; ++i) {
                const double* qi = q.value.data() + i * d;
                for (int64_t t = 0; t < g; ++t) {
                    const double* kt = k.value.data() + (i * g + t) * d;
                    double acc = 0.0;
                    for (int64_t j = 0; j < d; ++j) acc += qi[j] * kt[j];
                    n.value[i * g + t] = acc;
                }
            }
            break;
        }
        case Op::kAttnMix: {
            const Node& w = nodes_[n.inputs[0]];
            const Node& v = nodes_[n.inputs[1]];
            int64_t rows = w.shape[0], g = n.group, d = v.shape[1];
            n.value.assign(rows * d, 0.0);
            for (int64_t i = 0; i < rows; ++i) {
                double* out = n.value.data() + i * d;
                for (int64_t t = 0; t < g; ++t) {
                    double wt = w.value[i * g + t];
                    const double* vt = v.value.data() + (i * g + t) * d;
                    for (int64_t j = 0; j < d; ++j) out[j] += wt * vt[j];
                }
            }
            break;
        }
    }
}

void Graph::recompute() {
    for (Node& n : nodes_) compute(n);
}

void Graph::backward(int loss, GradientMap& grads) {
    if (numel(nodes_[loss].shape) != 1)
        throw GraphError("backward: loss must be scalar, got " + shape_str(nodes_[loss].shape));
    for (Node& n : nodes_) {
        if (n.requires_grad)
            n.grad.assign(n.value.size(), 0.0);
        else
            n.grad.clear();
    }
    Node& root = nodes_[loss];
    if (!root.requires_grad) return;
    root.grad[0] = 1.0;

    for (int id = loss; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.requires_grad || n.grad.empty()) continue;
        const std::vector<double>& g = n.grad;
        switch (n.op) {
            case Op::kConstant:
                break;
            case Op::kParameter: {
                std::vector<double>& acc = grads[n.param];
                for (size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
                break;
            }
            case Op::kMatMul: {
                Node& a = nodes_[n.inputs[0]];
                Node& b = nodes_[n.inputs[1]];
                // dA += g * B^T ; dB += A^T * g
                if (a.requires_grad)
                    matmul_nt_acc(g.data(), b.value.data(), a.grad.data(), a.shape[0], b.shape[1],
                                  a.shape[1]);
                if (b.requires_grad)
                    matmul_tn_acc(a.value.data(), g.data(), b.grad.data(), a.shape[0], a.shape[1],
                                  b.shape[1]);
                break;
            }
            case Op::kTranspose: {
                Node& a = nodes_[n.inputs[0]];
                if (!a.requires_grad) break;
                int64_t r = a.shape[0], c = a.shape[1];
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < c; ++j) a.grad[i * c + j] += g[j * r + i];
                break;
            }
            case Op::kAdd: {
                Node& a = nodes_[n.inputs[0]];
                Node& b = nodes_[n.inputs[1]];
                if (a.requires_grad)
                    for (size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i];
                if (b.requires_grad) {
                    if (a.shape == b.shape) {
                        for (size_t i = 0; i < g.size(); ++i) b.grad[i] += g[i];
                    } else {
                        int64_t m = b.shape.back();
                        int64_t rows = static_cast<int64_t>(g.size()) / m;
                        for (int64_t i = 0; i < rows; ++i)
                            for (int64_t j = 0; j < m; ++j) b.grad[j] += g[i * m + j];
                    }
                }
                break;
            }
            case Op::kMul: {
                Node& a = nodes_[n.inputs[0]];
                Node& b = nodes_[n.inputs[1]];
                if (b.value.size() == 1) {
                    double s = b.value[0];
                    if (a.requires_grad)
                        for (size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i] * s;
                    if (b.requires_grad) {
                        double acc = 0.0;
                        for (size_t i = 0; i < g.size(); ++i) acc += g[i] * a.value[i];
                        b.grad[0] += acc;
                    }
                } else {
                    if (a.requires_grad)
                        for (size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i] * b.value[i];
                    if (b.requires_grad)
                        for (size_t i = 0; i < g.size(); ++i) b.grad[i] += g[i] * a.value[i];
                }
                break;
            }
            case Op::kScalarMul: {
                Node& a = nodes_[n.inputs[0]];
                if (a.requires_grad)
                    for (size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i] * n.scalar;
                break;
            }
            case Op::kConcat: {
                if (n.group == 0) {
                    int64_t off = 0;
                    for (int p : n.inputs) {
                        Node& a = nodes_[p];
                        if (a.requires_grad)
                            for (size_t i = 0; i < a.value.size(); ++i) a.grad[i] += g[off + i];
                        off += a.value.size();
                    }
                } else {
                    int64_t rows = n.shape[0];
                    int64_t total = n.shape[1];
                    int64_t off = 0;
                    for (int p : n.inputs) {
                        Node& a = nodes_[p];
                        int64_t w = a.shape[1];
                        if (a.requires_grad)
                            for (int64_t i = 0; i < rows; ++i)
                                for (int64_t j = 0; j < w; ++j)
                                    a.grad[i * w + j] += g[i * total + off + j];
                        off += w;
                    }
                }
                break;
            }
            case Op::kReshape: {
                Node& a = nodes_[n.inputs[0]];
                if (a.requires_grad)
                    for (size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i];
                break;
            }
            case Op::kGatherRows: {
                Node& a = nodes_[n.inputs[0]];
                if (!a.requires_grad) break;
                int64_t d = a.shape[1];
                for (size_t i = 0; i < n.indices.size(); ++i) {
                    double* dst = a.grad.data() + n.indices[i] * d;
                    const double* src = g.data() + i * d;
                    for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                }
                break;
            }
            case Op::kSigmoid: {
                Node& a = nodes_[n.inputs[0]];
                if (a.requires_grad)
                    for (size_t i = 0; i < g.size(); ++i)
                        a.grad[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
                break;
            }
            case Op::kRelu: {
                Node& a = nodes_[n.inputs[0]];
                // subgradient 0 at exactly 0
                if (a.requires_grad)
                    for (size_t i = 0; i < g.size(); ++i)
                        a.grad[i] += a.value[i] > 0.0 ? g[i] : 0.0;
                break;
            }
            case Op::kExp: {
                Node& a = nodes_[n.inputs[0]];
                if (a.requires_grad)
                    for (size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i] * n.value[i];
                break;
            }
            case Op::kNeg: {
                Node& a = nodes_[n.inputs[0]];
                if (a.requires_grad)
                    for (size_t i = 0; i < g.size(); ++i) a.grad[i] -= g[i];
                break;
            }
            case Op::kAbs: {
                Node& a = nodes_[n.inputs[0]];
                // subgradient 0 at exactly 0
                if (a.requires_grad)
                    for (size_t i = 0; i < g.size(); ++i) {
                        double x = a.value[i];
                        a.grad[i] += x > 0.0 ? g[i] : (x < 0.0 ? -g[i] : 0.0);
                    }
                break;
            }
            case Op::kRowSqDist: {
                Node& a = nodes_[n.inputs[0]];
                Node& b = nodes_[n.inputs[1]];
                int64_t rows = a.shape[0], d = a.shape[1];
                for (int64_t i = 0; i < rows; ++i) {
                    double gi = g[i];
                    if (gi == 0.0) continue;
                    const double* av = a.value.data() + i * d;
                    const double* bv = b.value.data() + i * d;
                    for (int64_t j = 0; j < d; ++j) {
                        double diff = 2.0 * (av[j] - bv[j]) * gi;
                        if (a.requires_grad) a.grad[i * d + j] += diff;
                        if (b.requires_grad) b.grad[i * d + j] -= diff;
                    }
                }
                break;
            }
            case Op::kSoftmax: {
                Node& a = nodes_[n.inputs[0]];
                if (!a.requires_grad) break;
                int64_t m = n.shape.back();
                int64_t rows = static_cast<int64_t>(g.size()) / m;
                for (int64_t i = 0; i < rows; ++i) {
                    const double* y = n.value.data() + i * m;
                    const double* gi = g.data() + i * m;
                    double dot = 0.0;
                    for (int64_t j = 0; j < m; ++j) dot += gi[j] * y[j];
                    double* da = a.grad.data() + i * m;
                    for (int64_t j = 0; j < m; ++j) da[j] += y[j] * (gi[j] - dot);
                }
                break;
            }
            case Op::kSum: {
                Node& a = nodes_[n.inputs[0]];
                if (a.requires_grad)
                    for (size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += g[0];
                break;
            }
            case Op::kMean: {
                Node& a = nodes_[n.inputs[0]];
                if (a.requires_grad) {
                    double s = g[0] / static_cast<double>(a.value.size());
                    for (size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += s;
                }
                break;
            }
            case Op::kBce: {
                Node& p = nodes_[n.inputs[0]];
                const Node& y = nodes_[n.inputs[1]];
                if (!p.requires_grad) break;
                for (size_t i = 0; i < g.size(); ++i) {
                    double pv = p.value[i];
                    if (pv <= kBceEps || pv >= 1.0 - kBceEps) continue;  // clamp plateau
                    p.grad[i] += g[i] * (pv - y.value[i]) / (pv * (1.0 - pv));
                }
                break;
            }
            case Op::kAttnScores: {
                Node& q = nodes_[n.inputs[0]];
                Node& k = nodes_[n.inputs[1]];
                int64_t rows = q.shape[0], d = q.shape[1], gr = n.group;
                for (int64_t i = 0; i < rows; ++i) {
                    const double* qi = q.value.data() + i * d;
                    for (int64_t t = 0; t < gr; ++t) {
                        double gv = g[i * gr + t];
                        if (gv == 0.0) continue;
                        const double* kt = k.value.data() + (i * gr + t) * d;
                        if (q.requires_grad) {
                            double* dq = q.grad.data() + i * d;
                            for (int64_t j = 0; j < d; ++j) dq[j] += gv * kt[j];
                        }
                        if (k.requires_grad) {
                            double* dk = k.grad.data() + (i * gr + t) * d;
                            for (int64_t j = 0; j < d; ++j) dk[j] += gv * qi[j];
                        }
                    }
                }
                break;
            }
            case Op::kAttnMix: {
                Node& w = nodes_[n.inputs[0]];
                Node& v = nodes_[n.inputs[1]];
                int64_t rows = w.shape[0], gr = n.group, d = v.shape[1];
                for (int64_t i = 0; i < rows; ++i) {
                    const double* gi = g.data() + i * d;
                    for (int64_t t = 0; t < gr; ++t) {
                        const double* vt = v.value.data() + (i * gr + t) * d;
                        if (w.requires_grad) {
                            double acc = 0.0;
                            for (int64_t j = 0; j < d; ++j) acc += gi[j] * vt[j];
                            w.grad[i * gr + t] += acc;
                        }
                        if (v.requires_grad) {
                            double wt = w.value[i * gr + t];
                            double* dv = v.grad.data() + (i * gr + t) * d;
                            for (int64_t j = 0; j < d; ++j) dv[j] += wt * gi[j];
                        }
                    }
                }
                break;
            }
        }
    }
}

}  // namespace msr
