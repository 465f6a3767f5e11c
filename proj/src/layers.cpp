#include "msrlab/layers.hpp"

#include <cmath>

namespace msr {

void add_affine(ParamStore& ps, const std::string& prefix, int in_dim, int out_dim, Rng& rng) {
    add_projection(ps, prefix + ".w", in_dim, out_dim, rng);
    ps.add(prefix + ".b", {out_dim}, std::vector<double>(out_dim, 0.0));
}

void add_projection(ParamStore& ps, const std::string& name, int in_dim, int out_dim, Rng& rng) {
    double bound = std::sqrt(6.0 / (in_dim + out_dim));
    std::vector<double> w(static_cast<size_t>(in_dim) * out_dim);
    for (double& v : w) v = rng.uniform(-bound, bound);
    ps.add(name, {in_dim, out_dim}, std::move(w));
}

void add_embedding(ParamStore& ps, const std::string& name, int rows, int cols, Rng& rng) {
    std::vector<double> w(static_cast<size_t>(rows) * cols);
    for (double& v : w) v = rng.normal(0.0, 0.01);
    ps.add(name, {rows, cols}, std::move(w));
}

void add_mlp(ParamStore& ps, const std::string& prefix, int input_dim, const MlpSpec& spec,
             Rng& rng) {
    if (spec.widths.empty()) throw GraphError("mlp '" + prefix + "': no layers");
    int in = input_dim;
    for (size_t l = 0; l < spec.widths.size(); ++l) {
        if (spec.widths[l] <= 0) throw GraphError("mlp '" + prefix + "': non-positive width");
        add_affine(ps, prefix + ".l" + std::to_string(l), in, spec.widths[l], rng);
        in = spec.widths[l];
    }
}

void add_attention(ParamStore& ps, const std::string& prefix, const AttentionSpec& spec, Rng& rng) {
    if (spec.heads * spec.d_k != spec.out_dim && spec.heads * spec.d_k <= 0)
        throw GraphError("attention '" + prefix + "': bad head configuration");
    for (int h = 0; h < spec.heads; ++h) {
        std::string hp = prefix + ".h" + std::to_string(h);
        add_projection(ps, hp + ".wq", spec.query_dim, spec.d_k, rng);
        add_projection(ps, hp + ".wk", spec.token_dim, spec.d_k, rng);
        add_projection(ps, hp + ".wv", spec.token_dim, spec.d_k, rng);
    }
    add_projection(ps, prefix + ".wo", spec.heads * spec.d_k, spec.out_dim, rng);
}

int build_embed(Graph& g, const std::string& name, int feature_index, int vocab,
                const std::vector<int32_t>& ids) {
    for (int32_t id : ids)
        if (id < 0 || id >= vocab)
            throw GraphError("embed: id " + std::to_string(id) + " out of vocabulary (size " +
                             std::to_string(vocab) + ") for feature " +
                             std::to_string(feature_index));
    return g.gather_rows(g.parameter(name), ids);
}

int build_mlp(Graph& g, const std::string& prefix, int input, const MlpSpec& spec) {
    int h = input;
    for (size_t l = 0; l < spec.widths.size(); ++l) {
        std::string lp = prefix + ".l" + std::to_string(l);
        h = g.add(g.matmul(h, g.parameter(lp + ".w")), g.parameter(lp + ".b"));
        if (l + 1 < spec.widths.size()) h = g.relu(h);
    }
    return h;
}

int build_mha(Graph& g, const std::string& prefix, int q_tokens, int kv_tokens,
              const AttentionSpec& spec) {
    if (g.shape(kv_tokens)[0] < 1) throw GraphError("attention: empty key/value sequence");
    double scale = 1.0 / std::sqrt(static_cast<double>(spec.d_k));
    std::vector<int> heads;
    for (int h = 0; h < spec.heads; ++h) {
        std::string hp = prefix + ".h" + std::to_string(h);
        int q = g.matmul(q_tokens, g.parameter(hp + ".wq"));    // [n_q, d_k]
        int k = g.matmul(kv_tokens, g.parameter(hp + ".wk"));   // [n_k, d_k]
        int v = g.matmul(kv_tokens, g.parameter(hp + ".wv"));   // [n_k, d_k]
        int scores = g.scalar_mul(g.matmul(q, g.transpose(k)), scale);
        int w = g.softmax(scores);                              // [n_q, n_k]
        heads.push_back(g.matmul(w, v));                        // [n_q, d_k]
    }
    int cat = heads.size() == 1 ? heads[0] : g.concat(heads, 1);
    return g.matmul(cat, g.parameter(prefix + ".wo"));
}

BatchedMhaOut build_mha_batched(Graph& g, const std::string& prefix, int query, int tokens, int T,
                                const AttentionSpec& spec) {
    double scale = 1.0 / std::sqrt(static_cast<double>(spec.d_k));
    BatchedMhaOut out;
    std::vector<int> heads;
    for (int h = 0; h < spec.heads; ++h) {
        std::string hp = prefix + ".h" + std::to_string(h);
        int q = g.matmul(query, g.parameter(hp + ".wq"));       // [n, d_k]
        int k = g.matmul(tokens, g.parameter(hp + ".wk"));      // [n*T, d_k]
        int v = g.matmul(tokens, g.parameter(hp + ".wv"));      // [n*T, d_k]
        int scores = g.scalar_mul(g.attn_scores(q, k, T), scale);
        int w = g.softmax(scores);                              // [n, T]
        out.head_weights.push_back(w);
        heads.push_back(g.attn_mix(w, v, T));                   // [n, d_k]
    }
    int cat = heads.size() == 1 ? heads[0] : g.concat(heads, 1);
    out.output = g.matmul(cat, g.parameter(prefix + ".wo"));
    return out;
}

int tile_rows(Graph& g, int row_node, int64_t n) {
    return g.gather_rows(row_node, std::vector<int32_t>(n, 0));
}

}  // namespace msr
