#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace msr {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Shape-rule violations and malformed graphs.
struct GraphError : std::runtime_error {
    explicit GraphError(const std::string& what) : std::runtime_error(what) {}
};

class ParamStore;
class GradientMap;

enum class Op : uint8_t {
    kConstant,
    kParameter,
    kMatMul,
    kTranspose,
    kAdd,         // same shape, or second input broadcast as a row over leading axes
    kMul,         // same shape, or second input a single scalar
    kScalarMul,   // multiply by a fixed constant
    kConcat,      // axis 0 or 1, 2-d inputs
    kReshape,
    kGatherRows,
    kSigmoid,
    kRelu,
    kExp,
    kNeg,
    kAbs,
    kRowSqDist,   // rowwise squared euclidean distance, [n,d] x [n,d] -> [n]
    kSoftmax,     // last axis
    kSum,         // full reduction -> [1]
    kMean,        // full reduction -> [1]
    kBce,         // elementwise binary cross entropy against constant labels
    kAttnScores,  // [n,d] x [n*g,d] -> [n,g]; per-row dot products against g grouped rows
    kAttnMix,     // [n,g] x [n*g,d] -> [n,d]; per-row weighted sum of g grouped rows
};

const char* op_name(Op op);

struct Node {
    Op op = Op::kConstant;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;          // sized during backward
    std::vector<int32_t> inputs;
    double scalar = 0.0;               // kScalarMul factor
    int32_t group = 0;                 // kConcat axis; kAttnScores/kAttnMix group size
    int32_t param = -1;                // kParameter: index into the bound store
    std::vector<int32_t> indices;      // kGatherRows
    bool requires_grad = false;
};

// Define-by-run computation graph over dense float64 tensors. Node values are
// computed eagerly as nodes are created; backward() walks the recorded nodes
// in reverse. A graph lives for one batch and is then discarded.
class Graph {
public:
    explicit Graph(const ParamStore* params = nullptr) : params_(params) {}

    int constant(Shape shape, std::vector<double> value);
    int constant_scalar(double v);
    int parameter(int param_index);
    int parameter(const std::string& name);

    int matmul(int a, int b);
    int transpose(int a);
    int add(int a, int b);
    int mul(int a, int b);
    int scalar_mul(int a, double s);
    int concat(std::vector<int> parts, int axis);
    int reshape(int a, Shape shape);
    int gather_rows(int a, std::vector<int32_t> rows);
    int sigmoid(int a);
    int relu(int a);
    int exp(int a);
    int neg(int a);
    int abs(int a);
    int row_sqdist(int a, int b);
    int softmax(int a);
    int sum(int a);
    int mean(int a);
    int bce(int probs, int labels);
    int attn_scores(int query, int keys, int group);
    int attn_mix(int weights, int values, int group);

    const Shape& shape(int id) const { return nodes_[id].shape; }
    const std::vector<double>& value(int id) const { return nodes_[id].value; }
    double scalar_value(int id) const;
    size_t node_count() const { return nodes_.size(); }
    const ParamStore* params() const { return params_; }

    // Re-runs every forward rule in creation order, re-reading parameter
    // values from the bound store. Used by the finite-difference checker.
    void recompute();

    // Accumulates d(loss)/d(param) into `grads` for every trainable
    // parameter referenced by the graph. `loss` must be scalar.
    void backward(int loss, GradientMap& grads);

private:
    int push(Node node);
    void compute(Node& node);
    Node& at(int id) { return nodes_[id]; }

    std::vector<Node> nodes_;
    const ParamStore* params_;
};

}  // namespace msr
