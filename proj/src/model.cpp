#include "msrlab/model.hpp"

#include <algorithm>
#include <cmath>

#include "msrlab/tfe.hpp"

namespace msr {

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::kCsii: return "csii";
        case Variant::kCsiiMeanPool: return "csii-meanpool";
        case Variant::kCsiiIntraOnly: return "csii-intra-only";
        case Variant::kCsiiInterOnly: return "csii-inter-only";
        case Variant::kCsiiNoTfe: return "csii-no-tfe";
        case Variant::kMtlBase: return "mtl-base";
        case Variant::kMmoe: return "mmoe";
    }
    return "?";
}

std::optional<Variant> parse_variant(const std::string& name) {
    for (Variant v : all_variants())
        if (name == variant_name(v)) return v;
    return std::nullopt;
}

std::vector<Variant> all_variants() {
    return {Variant::kCsii,         Variant::kCsiiMeanPool, Variant::kCsiiIntraOnly,
            Variant::kCsiiInterOnly, Variant::kCsiiNoTfe,    Variant::kMtlBase,
            Variant::kMmoe};
}

bool variant_has_inter_agg(Variant v) {
    return v == Variant::kCsii || v == Variant::kCsiiInterOnly;
}

namespace {

bool is_csii_family(Variant v) { return v != Variant::kMtlBase && v != Variant::kMmoe; }

bool uses_tfe(Variant v) { return is_csii_family(v) && v != Variant::kCsiiNoTfe; }

bool uses_intra(Variant v) { return v == Variant::kCsii || v == Variant::kCsiiIntraOnly; }

constexpr int kTaskCount = 2;  // CTR, CTCVR

}  // namespace

int ModelConfig::fused_dim() const {
    return variant == Variant::kCsiiInterOnly ? expert_dim() / intra.tokens : expert_dim();
}

void ModelConfig::validate() const {
    if (scenario_count < 1) throw GraphError("model config: scenario count must be positive");
    if (schema.feature_count() < 1) throw GraphError("model config: no features");
    for (int v : schema.vocab_sizes)
        if (v < 1) throw GraphError("model config: vocabulary sizes must be positive");
    if (schema.embedding_dim < 1) throw GraphError("model config: embedding dim must be positive");
    for (int q : schema.query_features)
        if (q < 0 || q >= schema.feature_count())
            throw GraphError("model config: query feature index out of range");
    if (expert.widths.empty() || shared_expert.widths.empty() || head.widths.empty())
        throw GraphError("model config: empty layer widths");
    if (head.widths.back() != 1) throw GraphError("model config: task head must end in width 1");
    if (is_csii_family(variant)) {
        if (expert_dim() % intra.tokens != 0)
            throw GraphError("model config: expert dim not divisible by intra token count");
        int d_k = intra.d_k > 0 ? intra.d_k : expert_dim() / intra.heads;
        if (d_k < 1 || intra.heads < 1) throw GraphError("model config: bad intra head config");
    }
}

ParamStore init_parameters(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ParamStore ps;
    Rng rng(seed);
    const FeatureSchema& schema = cfg.schema;
    int P = schema.feature_count();
    int C = cfg.scenario_count;
    int d = schema.embedding_dim;

    for (int p = 0; p < P; ++p)
        add_embedding(ps, "embed.f" + std::to_string(p), schema.vocab_sizes[p], d, rng);

    switch (cfg.variant) {
        case Variant::kMtlBase:
            for (int k = 0; k < kTaskCount; ++k) {
                std::string tp = "task" + std::to_string(k);
                add_mlp(ps, tp + ".tower", schema.concat_dim(), cfg.expert, rng);
                add_mlp(ps, tp + ".head", cfg.expert_dim(), cfg.head, rng);
            }
            break;
        case Variant::kMmoe:
            for (int t = 0; t < C; ++t)
                add_mlp(ps, "expert.t" + std::to_string(t), schema.concat_dim(), cfg.expert, rng);
            for (int k = 0; k < kTaskCount; ++k) {
                std::string tp = "task" + std::to_string(k);
                add_affine(ps, tp + ".gate", schema.query_dim(), C, rng);
                add_mlp(ps, tp + ".head", cfg.expert_dim(), cfg.head, rng);
            }
            break;
        default: {
            if (uses_tfe(cfg.variant)) add_tfe_params(ps, P, C, d, rng);
            for (int t = 0; t < C; ++t)
                add_mlp(ps, "expert.t" + std::to_string(t), schema.concat_dim(), cfg.expert, rng);
            if (uses_intra(cfg.variant)) {
                AttentionSpec spec =
                    intra_attention_spec(cfg.intra, cfg.expert_dim(), schema.query_dim());
                for (int t = 0; t < C; ++t)
                    add_attention(ps, "intra.t" + std::to_string(t), spec, rng);
            }
            add_mlp(ps, "shared", schema.concat_dim(), cfg.shared_expert, rng);
            ps.add("residual.alpha", {C, 1}, std::vector<double>(C, 0.0));
            for (int k = 0; k < kTaskCount; ++k)
                add_mlp(ps, "head.k" + std::to_string(k), cfg.fused_dim() + cfg.shared_dim(),
                        cfg.head, rng);
            break;
        }
    }
    return ps;
}

namespace {

// Per-feature embedding nodes for a set of batch rows.
std::vector<int> embed_rows(Graph& g, const FeatureSchema& schema, const Batch& batch,
                            const std::vector<int32_t>& rows) {
    int P = schema.feature_count();
    std::vector<int> feats(P);
    std::vector<int32_t> ids(rows.size());
    for (int p = 0; p < P; ++p) {
        for (size_t i = 0; i < rows.size(); ++i) ids[i] = batch.feature(rows[i], p, P);
        feats[p] = build_embed(g, "embed.f" + std::to_string(p), p, schema.vocab_sizes[p], ids);
    }
    return feats;
}

int concat_features(Graph& g, const std::vector<int>& feats) {
    return feats.size() == 1 ? feats[0] : g.concat(std::vector<int>(feats), 1);
}

int query_context(Graph& g, const FeatureSchema& schema, const std::vector<int>& feats) {
    std::vector<int> parts;
    for (int q : schema.query_features) parts.push_back(feats[q]);
    return parts.size() == 1 ? parts[0] : g.concat(parts, 1);
}

int task_probability(Graph& g, const ModelConfig& cfg, const std::string& prefix, int z) {
    return g.sigmoid(build_mlp(g, prefix, z, cfg.head));
}

struct GroupResult {
    int p_ctr = -1;
    int p_ctcvr = -1;
    int inter_weights = -1;
};

GroupResult build_csii_group(Graph& g, const ModelConfig& cfg, const Batch& batch,
                             const std::vector<int32_t>& rows, int src, bool want_probes,
                             std::map<std::string, int>* probes) {
    const FeatureSchema& schema = cfg.schema;
    int C = cfg.scenario_count;
    int64_t n = static_cast<int64_t>(rows.size());

    std::vector<int> feats = embed_rows(g, schema, batch, rows);
    int raw = concat_features(g, feats);

    TfeDistances dists;
    if (uses_tfe(cfg.variant)) dists = build_tfe_distances(g, feats, C);

    std::vector<int> expert_out(C);
    for (int t = 0; t < C; ++t) {
        int input = raw;
        if (uses_tfe(cfg.variant))
            input = build_tfe_target(g, feats, dists, src, t, C).transformed;
        expert_out[t] = build_mlp(g, "expert.t" + std::to_string(t), input, cfg.expert);
    }

    std::vector<int> scenario_rows(C);
    if (uses_intra(cfg.variant)) {
        int query = query_context(g, schema, feats);
        for (int t = 0; t < C; ++t)
            scenario_rows[t] = build_intra_agg(g, "intra.t" + std::to_string(t), expert_out[t],
                                               query, cfg.intra, cfg.expert_dim());
    } else if (cfg.variant == Variant::kCsiiInterOnly) {
        for (int t = 0; t < C; ++t)
            scenario_rows[t] = build_token_mean(g, expert_out[t], cfg.intra.tokens);
    } else {  // mean-pool ablation: scenario rows are the raw expert outputs
        scenario_rows = expert_out;
    }

    GroupResult out;
    int u_agg;
    if (variant_has_inter_agg(cfg.variant)) {
        InterAggOut inter = build_inter_agg(g, scenario_rows, src);
        u_agg = inter.u_agg;
        out.inter_weights = inter.weights;
    } else {
        u_agg = build_mean_pool(g, scenario_rows);
    }

    int h_s = scenario_rows[src];
    int alpha_s =
        g.gather_rows(g.parameter("residual.alpha"), std::vector<int32_t>{src});  // [1,1]
    int fused = g.add(g.mul(u_agg, alpha_s), h_s);
    int h_share = build_mlp(g, "shared", raw, cfg.shared_expert);
    int z = g.concat({fused, h_share}, 1);

    out.p_ctr = task_probability(g, cfg, "head.k0", z);
    out.p_ctcvr = task_probability(g, cfg, "head.k1", z);

    if (want_probes) {
        std::string sp = "s" + std::to_string(src) + ".";
        (*probes)[sp + "raw"] = raw;
        (*probes)[sp + "h_s"] = h_s;
        (*probes)[sp + "u_agg"] = u_agg;
        (*probes)[sp + "fused"] = fused;
        (*probes)[sp + "h_share"] = h_share;
        (*probes)[sp + "z"] = z;
        (void)n;
    }
    return out;
}

GroupResult build_mtl_base(Graph& g, const ModelConfig& cfg, const Batch& batch,
                           const std::vector<int32_t>& rows) {
    std::vector<int> feats = embed_rows(g, cfg.schema, batch, rows);
    int raw = concat_features(g, feats);
    GroupResult out;
    int t0 = build_mlp(g, "task0.tower", raw, cfg.expert);
    int t1 = build_mlp(g, "task1.tower", raw, cfg.expert);
    out.p_ctr = task_probability(g, cfg, "task0.head", t0);
    out.p_ctcvr = task_probability(g, cfg, "task1.head", t1);
    return out;
}

GroupResult build_mmoe(Graph& g, const ModelConfig& cfg, const Batch& batch,
                       const std::vector<int32_t>& rows) {
    const FeatureSchema& schema = cfg.schema;
    int C = cfg.scenario_count;
    int64_t n = static_cast<int64_t>(rows.size());

    std::vector<int> feats = embed_rows(g, schema, batch, rows);
    int raw = concat_features(g, feats);
    int ctx = query_context(g, schema, feats);

    std::vector<int> experts(C);
    for (int t = 0; t < C; ++t)
        experts[t] = build_mlp(g, "expert.t" + std::to_string(t), raw, cfg.expert);
    int stacked = experts.size() == 1
                      ? experts[0]
                      : g.reshape(g.concat(experts, 1), {n * C, cfg.expert_dim()});

    GroupResult out;
    for (int k = 0; k < kTaskCount; ++k) {
        std::string tp = "task" + std::to_string(k);
        int logits = g.add(g.matmul(ctx, g.parameter(tp + ".gate.w")),
                           g.parameter(tp + ".gate.b"));          // [n, C]
        int weights = g.softmax(logits);
        int mixed = g.attn_mix(weights, stacked, C);              // [n, D_e]
        int p = task_probability(g, cfg, tp + ".head", mixed);
        (k == 0 ? out.p_ctr : out.p_ctcvr) = p;
    }
    return out;
}

}  // namespace

ForwardOutputs build_forward(Graph& g, const ModelConfig& cfg, const Batch& batch, bool with_loss,
                             bool want_probes) {
    int B = batch.size();
    if (B == 0) throw GraphError("forward: empty batch");
    int C = cfg.scenario_count;
    for (int32_t s : batch.scenario)
        if (s < 0 || s >= C)
            throw GraphError("forward: scenario id " + std::to_string(s) + " out of range");

    ForwardOutputs out;
    out.p_ctr.resize(B);
    out.p_ctcvr.resize(B);
    bool inter = variant_has_inter_agg(cfg.variant);
    if (inter) out.inter_weights.assign(static_cast<size_t>(B) * C, 0.0);

    // csii-family groups the batch by source scenario; the baselines run the
    // whole batch at once.
    std::vector<std::vector<int32_t>> groups;
    if (is_csii_family(cfg.variant)) {
        groups.resize(C);
        for (int i = 0; i < B; ++i) groups[batch.scenario[i]].push_back(i);
    } else {
        groups.resize(1);
        groups[0].resize(B);
        for (int i = 0; i < B; ++i) groups[0][i] = i;
    }

    int loss_acc = -1;
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        const std::vector<int32_t>& rows = groups[gi];
        if (rows.empty()) continue;
        GroupResult r;
        if (cfg.variant == Variant::kMtlBase)
            r = build_mtl_base(g, cfg, batch, rows);
        else if (cfg.variant == Variant::kMmoe)
            r = build_mmoe(g, cfg, batch, rows);
        else
            r = build_csii_group(g, cfg, batch, rows, static_cast<int>(gi), want_probes,
                                 &out.probes);

        const auto& pc = g.value(r.p_ctr);
        const auto& pv = g.value(r.p_ctcvr);
        for (size_t i = 0; i < rows.size(); ++i) {
            out.p_ctr[rows[i]] = pc[i];
            out.p_ctcvr[rows[i]] = pv[i];
        }
        if (inter && r.inter_weights >= 0) {
            const auto& w = g.value(r.inter_weights);
            for (size_t i = 0; i < rows.size(); ++i)
                std::copy(w.begin() + i * C, w.begin() + (i + 1) * C,
                          out.inter_weights.begin() + static_cast<size_t>(rows[i]) * C);
        }

        if (with_loss) {
            int64_t n = static_cast<int64_t>(rows.size());
            std::vector<double> yc(n), yv(n);
            for (int64_t i = 0; i < n; ++i) {
                yc[i] = batch.click[rows[i]];
                yv[i] = batch.click_and_convert[rows[i]];
            }
            int bce = g.add(g.bce(r.p_ctr, g.constant({n, 1}, yc)),
                            g.bce(r.p_ctcvr, g.constant({n, 1}, yv)));
            int group_sum = g.sum(bce);
            loss_acc = loss_acc < 0 ? group_sum : g.add(loss_acc, group_sum);
        }
    }
    if (with_loss) out.loss = g.scalar_mul(loss_acc, 1.0 / B);
    return out;
}

ModelConfig make_tiny_config(Variant v) {
    ModelConfig cfg;
    cfg.variant = v;
    cfg.scenario_count = 3;
    cfg.schema.vocab_sizes = {7, 7, 7, 7, 7};
    cfg.schema.embedding_dim = 4;
    cfg.schema.query_features = {0, 1};
    cfg.expert = {{8, 8}};
    cfg.shared_expert = {{8, 8}};
    cfg.head = {{4, 1}};
    cfg.intra.tokens = 2;
    cfg.intra.heads = 2;
    cfg.intra.d_k = 0;
    return cfg;
}

Batch make_random_batch(const ModelConfig& cfg, uint64_t seed, int n) {
    Rng rng(seed);
    int P = cfg.schema.feature_count();
    Batch b;
    b.scenario.resize(n);
    b.features.resize(static_cast<size_t>(n) * P);
    b.click.resize(n);
    b.click_and_convert.resize(n);
    for (int i = 0; i < n; ++i) {
        // cycle scenarios so every expert path is exercised
        b.scenario[i] = i % cfg.scenario_count;
        for (int p = 0; p < P; ++p)
            b.features[static_cast<size_t>(i) * P + p] =
                static_cast<int32_t>(rng.below(cfg.schema.vocab_sizes[p]));
        b.click[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
        b.click_and_convert[i] = b.click[i] > 0 && rng.uniform() < 0.5 ? 1.0 : 0.0;
    }
    return b;
}

}  // namespace msr
