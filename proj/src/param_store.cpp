#include "dpspg/param_store.hpp"

namespace dpspg {

void ParamStore::add(const std::string& name, Matrix value, bool frozen) {
    if (entries_.count(name)) throw InvalidStateError("ParamStore: duplicate entry " + name);
    require_finite(value, name.c_str());
    entries_[name] = Entry{std::move(value), frozen, std::nullopt};
}

const ParamStore::Entry& ParamStore::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InvalidStateError("ParamStore: missing entry " + name);
    return it->second;
}

ParamStore::Entry& ParamStore::at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InvalidStateError("ParamStore: missing entry " + name);
    return it->second;
}

const Matrix& ParamStore::value(const std::string& name) const { return at(name).value; }

Matrix& ParamStore::mutable_value(const std::string& name) { return at(name).value; }

bool ParamStore::frozen(const std::string& name) const { return at(name).frozen; }

void ParamStore::accumulate_grad(const std::string& name, const Matrix& g) {
    Entry& e = at(name);
    if (g.rows() != e.value.rows() || g.cols() != e.value.cols()) {
        throw InvalidShapeError("ParamStore: gradient shape mismatch for " + name);
    }
    if (!e.grad) {
        e.grad = Matrix::Zero(e.value.rows(), e.value.cols());
    }
    *e.grad += g;
}

const std::optional<Matrix>& ParamStore::grad(const std::string& name) const { return at(name).grad; }

void ParamStore::zero_grads() {
    for (auto& [name, e] : entries_) e.grad.reset();
}

double ParamStore::squared_norm() const {
    double s = 0.0;
    for (const auto& [name, e] : entries_) s += e.value.squaredNorm();
    return s;
}

void ParamStore::for_each(const std::function<void(const std::string&, const Entry&)>& fn) const {
    for (const auto& [name, e] : entries_) fn(name, e);
}

void ParamStore::for_each_mutable(const std::function<void(const std::string&, Entry&)>& fn) {
    for (auto& [name, e] : entries_) fn(name, e);
}

std::uint64_t ParamStore::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, e] : entries_) {
        h = fnv1a(name.data(), name.size(), h);
        const std::int64_t dims[2] = {e.value.rows(), e.value.cols()};
        h = fnv1a(dims, sizeof(dims), h);
        // Eigen stores contiguously; hashing raw bytes detects any bit flip
        h = fnv1a(e.value.data(), sizeof(double) * static_cast<std::size_t>(e.value.size()), h);
    }
    return h;
}

}  // namespace dpspg
