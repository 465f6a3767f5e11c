#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "msrlab/tensor.hpp"

namespace msr {

struct Param {
    std::string name;
    Shape shape;
    std::vector<double> value;
    bool trainable = true;
};

// Named trainable parameter collection. Indices are stable and assigned in
// insertion order; checkpoints round-trip values exactly (hexfloat text).
class ParamStore {
public:
    int add(std::string name, Shape shape, std::vector<double> value, bool trainable = true);
    int index_of(std::string_view name) const;  // -1 if absent
    bool has(std::string_view name) const { return index_of(name) >= 0; }

    Param& at(int i) { return params_[i]; }
    const Param& at(int i) const { return params_[i]; }
    Param& at(std::string_view name);
    const Param& at(std::string_view name) const;

    int size() const { return static_cast<int>(params_.size()); }

    void save(const std::string& path, const std::string& variant) const;

private:
    std::vector<Param> params_;
    std::unordered_map<std::string, int> index_;
};

struct LoadedCheckpoint {
    ParamStore store;
    std::string variant;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Per-parameter gradient accumulator, aligned with a ParamStore's indices.
class GradientMap {
public:
    explicit GradientMap(const ParamStore& store);

    std::vector<double>& operator[](int i) { return grads_[i]; }
    const std::vector<double>& operator[](int i) const { return grads_[i]; }
    const std::vector<double>& at(std::string_view name) const;
    void zero();
    int size() const { return static_cast<int>(grads_.size()); }

private:
    const ParamStore* store_;
    std::vector<std::vector<double>> grads_;
};

}  // namespace msr
