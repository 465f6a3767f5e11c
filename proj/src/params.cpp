#include "msrlab/params.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace msr {

namespace {
constexpr const char* kMagic = "MSRLAB-CKPT-v1";
}

int ParamStore::add(std::string name, Shape shape, std::vector<double> value, bool trainable) {
    if (index_.count(name)) throw GraphError("duplicate parameter '" + name + "'");
    if (numel(shape) != static_cast<int64_t>(value.size()))
        throw GraphError("parameter '" + name + "': value size does not match shape " +
                         shape_str(shape));
    int idx = static_cast<int>(params_.size());
    index_.emplace(name, idx);
    params_.push_back(Param{std::move(name), std::move(shape), std::move(value), trainable});
    return idx;
}

int ParamStore::index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? -1 : it->second;
}

Param& ParamStore::at(std::string_view name) {
    int i = index_of(name);
    if (i < 0) throw GraphError("unknown parameter '" + std::string(name) + "'");
    return params_[i];
}

const Param& ParamStore::at(std::string_view name) const {
    return const_cast<ParamStore*>(this)->at(name);
}

void ParamStore::save(const std::string& path, const std::string& variant) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw GraphError("cannot open checkpoint '" + path + "' for writing");
    out << kMagic << "\n";
    out << "variant " << variant << "\n";
    out << "params " << params_.size() << "\n";
    char buf[40];
    for (const Param& p : params_) {
        out << p.name << " " << p.shape.size();
        for (int64_t d : p.shape) out << " " << d;
        out << " " << (p.trainable ? 1 : 0) << "\n";
        for (size_t i = 0; i < p.value.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%a", p.value[i]);  // hexfloat: exact round-trip
            if (i) out << ' ';
            out << buf;
        }
        out << "\n";
    }
    if (!out) throw GraphError("write failure on checkpoint '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw GraphError("cannot open checkpoint '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != kMagic)
        throw GraphError("checkpoint '" + path + "': bad magic header");
    LoadedCheckpoint result;
    std::string key;
    if (!(in >> key) || key != "variant" || !(in >> result.variant))
        throw GraphError("checkpoint '" + path + "': missing variant");
    size_t count = 0;
    if (!(in >> key) || key != "params" || !(in >> count))
        throw GraphError("checkpoint '" + path + "': missing param count");
    for (size_t i = 0; i < count; ++i) {
        std::string name;
        size_t ndim = 0;
        if (!(in >> name >> ndim)) throw GraphError("checkpoint '" + path + "': truncated header");
        Shape shape(ndim);
        for (size_t d = 0; d < ndim; ++d)
            if (!(in >> shape[d])) throw GraphError("checkpoint '" + path + "': truncated shape");
        int trainable = 1;
        if (!(in >> trainable)) throw GraphError("checkpoint '" + path + "': truncated flags");
        std::vector<double> value(numel(shape));
        for (double& v : value) {
            std::string tok;
            if (!(in >> tok)) throw GraphError("checkpoint '" + path + "': truncated values");
            v = std::strtod(tok.c_str(), nullptr);
        }
        result.store.add(std::move(name), std::move(shape), std::move(value), trainable != 0);
    }
    return result;
}

GradientMap::GradientMap(const ParamStore& store) : store_(&store) {
    grads_.resize(store.size());
    for (int i = 0; i < store.size(); ++i) grads_[i].assign(store.at(i).value.size(), 0.0);
}

const std::vector<double>& GradientMap::at(std::string_view name) const {
    int i = store_->index_of(name);
    if (i < 0) throw GraphError("unknown parameter '" + std::string(name) + "'");
    return grads_[i];
}

void GradientMap::zero() {
    for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
}

}  // namespace msr
