#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msrlab/csa.hpp"
#include "msrlab/layers.hpp"
#include "msrlab/params.hpp"
#include "msrlab/schema.hpp"
#include "msrlab/tensor.hpp"

namespace msr {

enum class Variant {
    kCsii,
    kCsiiMeanPool,
    kCsiiIntraOnly,
    kCsiiInterOnly,
    kCsiiNoTfe,
    kMtlBase,
    kMmoe,
};

const char* variant_name(Variant v);
std::optional<Variant> parse_variant(const std::string& name);
std::vector<Variant> all_variants();
bool variant_has_inter_agg(Variant v);

struct ModelConfig {
    Variant variant = Variant::kCsii;
    int scenario_count = 7;
    FeatureSchema schema;
    MlpSpec expert = {{128, 64}};
    MlpSpec shared_expert = {{128, 64}};
    MlpSpec head = {{64, 1}};
    IntraAggConfig intra;

    int expert_dim() const { return expert.widths.back(); }
    int shared_dim() const { return shared_expert.widths.back(); }
    // width of the scenario half of z, before the shared expert is appended
    int fused_dim() const;
    void validate() const;
};

// One mini-batch in struct-of-arrays layout; feature ids are row-major
// [size x P]. Labels are optional for inference batches.
struct Batch {
    std::vector<int32_t> scenario;
    std::vector<int32_t> features;
    std::vector<double> click;
    std::vector<double> click_and_convert;

    int size() const { return static_cast<int>(scenario.size()); }
    int32_t feature(int row, int p, int P) const { return features[static_cast<size_t>(row) * P + p]; }
};

// Deterministic per seed. Creation order is fixed so a seed fully pins the
// initial point.
ParamStore init_parameters(const ModelConfig& cfg, uint64_t seed);

struct ForwardOutputs {
    std::vector<double> p_ctr;            // batch order
    std::vector<double> p_ctcvr;
    std::vector<double> inter_weights;    // batch*C, only for Inter-Agg variants
    int loss = -1;                        // node id; -1 when labels not attached
    std::map<std::string, int> probes;    // intermediate node ids (tests)
};

ForwardOutputs build_forward(Graph& g, const ModelConfig& cfg, const Batch& batch, bool with_loss,
                             bool want_probes = false);

// Fixtures used by the gradient checker and tests: a deliberately small
// model and a random batch covering every scenario.
ModelConfig make_tiny_config(Variant v);
Batch make_random_batch(const ModelConfig& cfg, uint64_t seed, int n);

}  // namespace msr
