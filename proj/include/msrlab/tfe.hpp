#pragma once

#include <string>
#include <vector>

#include "msrlab/layers.hpp"
#include "msrlab/params.hpp"
#include "msrlab/tensor.hpp"

namespace msr {

// Transferable feature extraction: per-feature gating of embeddings by
// distance to learned scenario anchors. Parameters:
//   tfe.anchors : [P*C, d]   row p*C + t holds the anchor of feature p for
//                            scenario t
//   tfe.alpha   : [C*C, P]   row s*C + t holds the per-feature gate slope for
//                            the (source, target) pair
//   tfe.beta    : [C*C, P]   matching gate offsets
// alpha is initialized to 1, beta to 0.
void add_tfe_params(ParamStore& ps, int P, int C, int d, Rng& rng);

inline int anchor_row(int feature, int scenario, int C) { return feature * C + scenario; }
inline int gate_row(int src, int tgt, int C) { return src * C + tgt; }

// Squared euclidean distance between each embedded row and the anchor of
// (feature, scenario): e [n, d] -> [n].
int build_anchor_distance(Graph& g, int embedded, int feature, int scenario, int C);

// exp(-|D(e,s) - D(e,t)|) given precomputed distance columns [n].
int build_transfer_score(Graph& g, int dist_src, int dist_tgt);

// Per-(source,target) gated transform of the whole feature block.
struct TfeTargetOut {
    int transformed = -1;  // [n, P*d]
    int gates = -1;        // [n, P], each strictly in (0, 2)
    int scores = -1;       // [n, P], each in (0, 1]
};

// Shared per-group state: one distance column per (feature, scenario).
struct TfeDistances {
    std::vector<int> dist;  // P*C node ids, [n] each
    int at(int feature, int scenario, int C) const { return dist[anchor_row(feature, scenario, C)]; }
};

// feat_embeds: P nodes of shape [n, d] for one scenario group.
TfeDistances build_tfe_distances(Graph& g, const std::vector<int>& feat_embeds, int C);

TfeTargetOut build_tfe_target(Graph& g, const std::vector<int>& feat_embeds,
                              const TfeDistances& dists, int src, int tgt, int C);

}  // namespace msr
