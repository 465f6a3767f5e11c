#pragma once

#include <string>
#include <vector>

#include "msrlab/layers.hpp"
#include "msrlab/tensor.hpp"

namespace msr {

// Cross-scenario aggregation. Intra-Agg runs multi-head attention over the
// tokens of one scenario representation with a context-feature query;
// Inter-Agg runs unprojected target attention across the C scenario rows,
// keyed by the source scenario.
struct IntraAggConfig {
    int tokens = 8;   // T; the expert output is cut into T tokens of D_e/T
    int heads = 4;
    int d_k = 0;      // 0 -> D_e / heads
};

AttentionSpec intra_attention_spec(const IntraAggConfig& cfg, int expert_dim, int query_dim);

// v_st [n, D_e], query [n, d_q] -> h_t [n, D_e]
int build_intra_agg(Graph& g, const std::string& prefix, int v_st, int query,
                    const IntraAggConfig& cfg, int expert_dim);

struct InterAggOut {
    int u_agg = -1;    // [n, D]
    int weights = -1;  // [n, C]
};

// scenario_rows: C nodes [n, D]; src selects the key row h_s.
InterAggOut build_inter_agg(Graph& g, const std::vector<int>& scenario_rows, int src);

// elementwise mean over the C scenario rows -> [n, D]
int build_mean_pool(Graph& g, const std::vector<int>& scenario_rows);

// mean over the T tokens of each row: [n, D_e] -> [n, D_e/T]
int build_token_mean(Graph& g, int v, int T);

}  // namespace msr
