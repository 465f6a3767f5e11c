#include "msrlab/csa.hpp"

#include <cmath>

namespace msr {

AttentionSpec intra_attention_spec(const IntraAggConfig& cfg, int expert_dim, int query_dim) {
    if (cfg.tokens < 1 || expert_dim % cfg.tokens != 0)
        throw GraphError("intra-agg: expert dim " + std::to_string(expert_dim) +
                         " not divisible by token count " + std::to_string(cfg.tokens));
    AttentionSpec spec;
    spec.heads = cfg.heads;
    spec.d_k = cfg.d_k > 0 ? cfg.d_k : expert_dim / cfg.heads;
    spec.query_dim = query_dim;
    spec.token_dim = expert_dim / cfg.tokens;
    spec.out_dim = expert_dim;
    return spec;
}

int build_intra_agg(Graph& g, const std::string& prefix, int v_st, int query,
                    const IntraAggConfig& cfg, int expert_dim) {
    AttentionSpec spec = intra_attention_spec(cfg, expert_dim, static_cast<int>(g.shape(query)[1]));
    int64_t n = g.shape(v_st)[0];
    int tokens = g.reshape(v_st, {n * cfg.tokens, expert_dim / cfg.tokens});
    return build_mha_batched(g, prefix, query, tokens, cfg.tokens, spec).output;
}

InterAggOut build_inter_agg(Graph& g, const std::vector<int>& scenario_rows, int src) {
    if (scenario_rows.empty()) throw GraphError("inter-agg: no scenario rows");
    int C = static_cast<int>(scenario_rows.size());
    int64_t n = g.shape(scenario_rows[0])[0];
    int64_t dim = g.shape(scenario_rows[0])[1];
    int stacked = scenario_rows.size() == 1 ? scenario_rows[0]
                                            : g.reshape(g.concat(scenario_rows, 1), {n * C, dim});
    double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    InterAggOut out;
    int scores = g.scalar_mul(g.attn_scores(scenario_rows[src], stacked, C), scale);
    out.weights = g.softmax(scores);                  // [n, C]
    out.u_agg = g.attn_mix(out.weights, stacked, C);  // [n, dim]
    return out;
}

int build_mean_pool(Graph& g, const std::vector<int>& scenario_rows) {
    if (scenario_rows.empty()) throw GraphError("mean-pool: no scenario rows");
    int C = static_cast<int>(scenario_rows.size());
    if (C == 1) return scenario_rows[0];
    int acc = scenario_rows[0];
    for (int t = 1; t < C; ++t) acc = g.add(acc, scenario_rows[t]);
    return g.scalar_mul(acc, 1.0 / C);
}

int build_token_mean(Graph& g, int v, int T) {
    int64_t n = g.shape(v)[0];
    int64_t dim = g.shape(v)[1];
    if (T < 1 || dim % T != 0)
        throw GraphError("token-mean: dim " + std::to_string(dim) + " not divisible by " +
                         std::to_string(T));
    int tokens = g.reshape(v, {n * T, dim / T});
    int uniform = g.constant({n, T}, std::vector<double>(n * T, 1.0 / T));
    return g.attn_mix(uniform, tokens, T);
}

}  // namespace msr
