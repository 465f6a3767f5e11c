#include "msrlab/tfe.hpp"

namespace msr {

void add_tfe_params(ParamStore& ps, int P, int C, int d, Rng& rng) {
    add_embedding(ps, "tfe.anchors", P * C, d, rng);
    ps.add("tfe.alpha", {C * C, P}, std::vector<double>(static_cast<size_t>(C) * C * P, 1.0));
    ps.add("tfe.beta", {C * C, P}, std::vector<double>(static_cast<size_t>(C) * C * P, 0.0));
}

int build_anchor_distance(Graph& g, int embedded, int feature, int scenario, int C) {
    int64_t n = g.shape(embedded)[0];
    int anchors = g.parameter("tfe.anchors");
    int row = g.gather_rows(anchors, std::vector<int32_t>(n, anchor_row(feature, scenario, C)));
    return g.row_sqdist(embedded, row);
}

int build_transfer_score(Graph& g, int dist_src, int dist_tgt) {
    return g.exp(g.neg(g.abs(g.add(dist_src, g.neg(dist_tgt)))));
}

TfeDistances build_tfe_distances(Graph& g, const std::vector<int>& feat_embeds, int C) {
    int P = static_cast<int>(feat_embeds.size());
    int64_t n = g.shape(feat_embeds[0])[0];
    int anchors = g.parameter("tfe.anchors");
    TfeDistances out;
    out.dist.resize(static_cast<size_t>(P) * C);
    for (int p = 0; p < P; ++p) {
        for (int t = 0; t < C; ++t) {
            int row = g.gather_rows(anchors, std::vector<int32_t>(n, anchor_row(p, t, C)));
            out.dist[anchor_row(p, t, C)] = g.row_sqdist(feat_embeds[p], row);
        }
    }
    return out;
}

TfeTargetOut build_tfe_target(Graph& g, const std::vector<int>& feat_embeds,
                              const TfeDistances& dists, int src, int tgt, int C) {
    int P = static_cast<int>(feat_embeds.size());
    int64_t n = g.shape(feat_embeds[0])[0];
    int d = static_cast<int>(g.shape(feat_embeds[0])[1]);

    TfeTargetOut out;
    if (src == tgt) {
        // w is exactly 1 when source and target coincide; the |.| kink sits
        // at 0 there with subgradient 0, so no gradient flows through w.
        out.scores = g.constant({n, P}, std::vector<double>(n * P, 1.0));
    } else {
        std::vector<int> cols;
        cols.reserve(P);
        for (int p = 0; p < P; ++p) {
            int w = build_transfer_score(g, dists.at(p, src, C), dists.at(p, tgt, C));
            cols.push_back(g.reshape(w, {n, 1}));
        }
        out.scores = g.concat(cols, 1);  // [n, P]
    }

    int r = gate_row(src, tgt, C);
    std::vector<int32_t> tile(n, r);
    int alpha = g.gather_rows(g.parameter("tfe.alpha"), tile);  // [n, P]
    int beta = g.gather_rows(g.parameter("tfe.beta"), tile);    // [n, P]
    out.gates = g.scalar_mul(g.sigmoid(g.add(g.mul(out.scores, alpha), beta)), 2.0);

    // expand each gate scalar across the d embedding lanes
    int ones = g.constant({1, d}, std::vector<double>(d, 1.0));
    int gate_mat = g.matmul(g.reshape(out.gates, {n * P, 1}), ones);  // [n*P, d]
    std::vector<int> embeds = feat_embeds;
    int raw = embeds.size() == 1 ? embeds[0] : g.concat(embeds, 1);   // [n, P*d]
    int scaled = g.mul(g.reshape(raw, {n * P, d}), gate_mat);
    out.transformed = g.reshape(scaled, {n, static_cast<int64_t>(P) * d});
    return out;
}

}  // namespace msr
