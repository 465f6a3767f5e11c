#pragma once

#include <string>
#include <vector>

#include "msrlab/params.hpp"
#include "msrlab/rng.hpp"
#include "msrlab/schema.hpp"
#include "msrlab/tensor.hpp"

namespace msr {

// Layer widths; hidden layers use relu, the final layer is affine.
struct MlpSpec {
    std::vector<int> widths;
};

struct AttentionSpec {
    int heads = 4;
    int d_k = 16;
    int query_dim = 0;   // d_q
    int token_dim = 0;   // d of each key/value token
    int out_dim = 0;     // D_e after the output projection
};

// ---- parameter registration (deterministic given the Rng state) ----

// affine weights: uniform(-sqrt(6/(fan_in+fan_out)), +...); biases zero
void add_affine(ParamStore& ps, const std::string& prefix, int in_dim, int out_dim, Rng& rng);
// matrix without bias, same fan-based range
void add_projection(ParamStore& ps, const std::string& name, int in_dim, int out_dim, Rng& rng);
// normal(0, 0.01^2) entries; used for embeddings and scenario anchors
void add_embedding(ParamStore& ps, const std::string& name, int rows, int cols, Rng& rng);
void add_mlp(ParamStore& ps, const std::string& prefix, int input_dim, const MlpSpec& spec,
             Rng& rng);
void add_attention(ParamStore& ps, const std::string& prefix, const AttentionSpec& spec, Rng& rng);

// ---- graph builders ----

// Embeds one feature column: looks up `ids` in table `name` ([vocab, d]).
// Out-of-vocabulary ids throw, naming the feature index.
int build_embed(Graph& g, const std::string& name, int feature_index, int vocab,
                const std::vector<int32_t>& ids);

// input [n, in_dim] -> [n, widths.back()]
int build_mlp(Graph& g, const std::string& prefix, int input, const MlpSpec& spec);

// Generic multi-head attention for one token sequence:
// q_tokens [n_q, d_q], kv_tokens [n_k, token_dim] -> [n_q, out_dim].
int build_mha(Graph& g, const std::string& prefix, int q_tokens, int kv_tokens,
              const AttentionSpec& spec);

// Batched single-query attention: every row of `query` [n, d_q] attends over
// its own group of `T` consecutive rows of `tokens` [n*T, token_dim].
struct BatchedMhaOut {
    int output = -1;                 // [n, out_dim]
    std::vector<int> head_weights;   // per head: [n, T]
};
BatchedMhaOut build_mha_batched(Graph& g, const std::string& prefix, int query, int tokens, int T,
                                const AttentionSpec& spec);

// n copies of the single row of `row_node` ([1, d] -> [n, d])
int tile_rows(Graph& g, int row_node, int64_t n);

}  // namespace msr
