#pragma once

#include "dpspg/common.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>

namespace dpspg {

// Named parameter tensors with optional gradients and a frozen flag.
// Backed by an ordered map so every iteration (optimizer sweeps,
// serialization, grad-check sampling) visits entries in a fixed order.
class ParamStore {
public:
    struct Entry {
        Matrix value;
        bool frozen = false;
        std::optional<Matrix> grad;
    };

    void add(const std::string& name, Matrix value, bool frozen = false);
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    const Matrix& value(const std::string& name) const;
    Matrix& mutable_value(const std::string& name);
    bool frozen(const std::string& name) const;

    // Accumulates g into the entry's gradient (allocating zeros first).
    void accumulate_grad(const std::string& name, const Matrix& g);
    const std::optional<Matrix>& grad(const std::string& name) const;
    void zero_grads();

    std::size_t size() const { return entries_.size(); }
    double squared_norm() const;

    // Deterministic (name-sorted) traversal.
    void for_each(const std::function<void(const std::string&, const Entry&)>& fn) const;
    void for_each_mutable(const std::function<void(const std::string&, Entry&)>& fn);

    // Fingerprint over names, shapes and raw value bytes; used to verify
    // frozen stores are untouched by training.
    std::uint64_t fingerprint() const;

private:
    const Entry& at(const std::string& name) const;
    Entry& at(const std::string& name);

    std::map<std::string, Entry> entries_;
};

}  // namespace dpspg
