#pragma once

#include <vector>

namespace msr {

// Describes the categorical feature layout of a dataset: one vocabulary per
// feature, a shared embedding width, and which features act as the
// query/context side of the intra-scenario attention.
struct FeatureSchema {
    std::vector<int> vocab_sizes;
    int embedding_dim = 8;
    std::vector<int> query_features = {0, 1};

    int feature_count() const { return static_cast<int>(vocab_sizes.size()); }
    int concat_dim() const { return feature_count() * embedding_dim; }
    int query_dim() const { return static_cast<int>(query_features.size()) * embedding_dim; }
};

}  // namespace msr
