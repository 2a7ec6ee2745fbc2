#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sid/autodiff.hpp"

namespace sid {

// Named registry of trainable tensors and non-trainable buffers (batch-norm
// running statistics). Drives the optimizer, checkpointing, and gradient
// checks.
struct ParamSet {
    std::vector<std::pair<std::string, ad::Var>> params;
    std::vector<std::pair<std::string, ad::Mat*>> buffers;

    void add(const std::string& name, const ad::Var& v) { params.emplace_back(name, v); }
    void add_buffer(const std::string& name, ad::Mat* m) { buffers.emplace_back(name, m); }
    void extend(const std::string& prefix, const ParamSet& other) {
        for (const auto& [n, v] : other.params) params.emplace_back(prefix + n, v);
        for (const auto& [n, m] : other.buffers) buffers.emplace_back(prefix + n, m);
    }

    long long scalar_count() const {
        long long total = 0;
        for (const auto& [n, v] : params) total += v->size();
        return total;
    }
    void zero_grad() const {
        for (const auto& [n, v] : params) v->zero_grad();
    }
};

}  // namespace sid
