#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "dumotion/autodiff.hpp"
#include "dumotion/common.hpp"
#include "dumotion/hash.hpp"
#include "dumotion/rng.hpp"

namespace dumotion {

// Named parameter tensors in a fixed creation order. The order is the
// canonical one for serialization, gradient reduction, and optimizer state,
// which keeps training bitwise reproducible.
template <typename S>
class ParamStore {
  public:
    struct Entry {
        std::string name;
        Mat<S> value;
    };

    Mat<S>& add(const std::string& name, Index rows, Index cols) {
        require(!index_.count(name), "duplicate parameter: " + name);
        entries_.push_back({name, Mat<S>::Zero(rows, cols)});
        index_.emplace(name, entries_.size() - 1);
        return entries_.back().value;
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    Mat<S>& at(const std::string& name) {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown parameter: " + name);
        return entries_[it->second].value;
    }
    const Mat<S>& at(const std::string& name) const {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown parameter: " + name);
        return entries_[it->second].value;
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    size_t size() const { return entries_.size(); }

    size_t total_count() const {
        size_t n = 0;
        for (const auto& e : entries_) n += static_cast<size_t>(e.value.size());
        return n;
    }

    std::string hash_of(const std::string& name) const {
        Fnv1a h;
        h.update(at(name));
        return h.hex();
    }

    template <typename T>
    ParamStore<T> cast() const {
        ParamStore<T> out;
        for (const auto& e : entries_)
            out.add(e.name, e.value.rows(), e.value.cols()) = e.value.template cast<T>();
        return out;
    }

  private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// ---- init + tape helpers shared by the model and the adapters ----

// Every tensor draws from a stream derived from its own name, so parameter
// values never depend on creation order or on which optional blocks exist.
inline uint64_t name_seed(uint64_t seed, const std::string& name) {
    Fnv1a h;
    h.update(name);
    return derive_seed(seed, h.value());
}

template <typename S>
void xavier_init(Mat<S>& w, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Index i = 0; i < w.rows(); ++i)
        for (Index j = 0; j < w.cols(); ++j)
            w(i, j) = static_cast<S>(rng.uniform(-limit, limit));
}

template <typename S>
void xavier_init(ParamStore<S>& ps, uint64_t seed, const std::string& name) {
    Rng rng(name_seed(seed, name));
    xavier_init(ps.at(name), rng);
}

// prefix/W: in x out (xavier unless zero), prefix/b: 1 x out (zeros)
template <typename S>
void add_linear(ParamStore<S>& ps, uint64_t seed, const std::string& prefix, Index in, Index out,
                bool zero_init = false) {
    ps.add(prefix + "/W", in, out);
    if (!zero_init) xavier_init(ps, seed, prefix + "/W");
    ps.add(prefix + "/b", 1, out);
}

template <typename S>
void add_layer_norm(ParamStore<S>& ps, const std::string& prefix, Index width) {
    ps.add(prefix + "/gamma", 1, width).setOnes();
    ps.add(prefix + "/beta", 1, width);
}

template <typename S>
Var<S> linear(Tape<S>& tape, const ParamStore<S>& ps, const std::string& prefix, Var<S> x) {
    return tape.add_rowvec(tape.matmul(x, tape.leaf(&ps.at(prefix + "/W"))),
                           tape.leaf(&ps.at(prefix + "/b")));
}

template <typename S>
Var<S> layer_norm(Tape<S>& tape, const ParamStore<S>& ps, const std::string& prefix, Var<S> x) {
    return tape.layer_norm(x, tape.leaf(&ps.at(prefix + "/gamma")),
                           tape.leaf(&ps.at(prefix + "/beta")));
}

}  // namespace dumotion
