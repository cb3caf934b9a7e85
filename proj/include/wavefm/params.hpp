#pragma once

// Named parameter registry shared by all trainable modules. Parameters are
// initialized from a stream seeded by (seed, name), so values depend only on
// names and shapes, never on construction order. The map is sorted, which
// gives checkpoints a stable serialization order.

#include <map>
#include <string>
#include <vector>

#include "wavefm/common.hpp"
#include "wavefm/rng.hpp"
#include "wavefm/tensor.hpp"

namespace wavefm {

template <typename S>
class ParamStore {
public:
    explicit ParamStore(uint64_t seed = 0) : seed_(seed) {}

    // Gaussian init with the given std (0 std = zeros).
    Tensor<S> create(const std::string& name, const Shape& shape, double stdev) {
        require(!map_.count(name), "ConfigError", "duplicate parameter name: " + name);
        std::vector<S> data(shape_numel(shape), S(0));
        if (stdev != 0.0) {
            Rng rng(mix_seed(seed_, "param:" + name));
            for (auto& v : data) v = static_cast<S>(rng.normal() * stdev);
        }
        auto t = Tensor<S>::param(shape, std::move(data));
        map_.emplace(name, t);
        return t;
    }

    Tensor<S> create_const(const std::string& name, const Shape& shape, S value) {
        require(!map_.count(name), "ConfigError", "duplicate parameter name: " + name);
        auto t = Tensor<S>::param(shape, std::vector<S>(shape_numel(shape), value));
        map_.emplace(name, t);
        return t;
    }

    Tensor<S> create_from(const std::string& name, const Shape& shape, std::vector<S> data) {
        require(!map_.count(name), "ConfigError", "duplicate parameter name: " + name);
        auto t = Tensor<S>::param(shape, std::move(data));
        map_.emplace(name, t);
        return t;
    }

    Tensor<S>& at(const std::string& name) {
        auto it = map_.find(name);
        require(it != map_.end(), "ConfigError", "unknown parameter: " + name);
        return it->second;
    }

    bool contains(const std::string& name) const { return map_.count(name) > 0; }

    auto begin() { return map_.begin(); }
    auto end() { return map_.end(); }
    auto begin() const { return map_.begin(); }
    auto end() const { return map_.end(); }
    size_t size() const { return map_.size(); }

    size_t total_elements() const {
        size_t n = 0;
        for (auto& [k, v] : map_) n += v.numel();
        return n;
    }

    void zero_grads() {
        for (auto& [k, v] : map_) v.zero_grad();
    }

    void fill_all(S value) {
        for (auto& [k, v] : map_) std::fill(v.val().begin(), v.val().end(), value);
    }

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    std::map<std::string, Tensor<S>> map_;
};

}  // namespace wavefm
