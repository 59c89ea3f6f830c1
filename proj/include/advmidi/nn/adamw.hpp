#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

#include "advmidi/nn/model.hpp"

namespace advmidi::nn {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct Moments {
    Matrix m;
    Matrix v;
};

// AdamW with decoupled weight decay over the parameters of the selected
// groups. Moments are created lazily (zero) the first time a parameter is
// stepped, so heads added later join seamlessly.
class AdamW {
public:
    AdamW() = default;
    AdamW(AdamWConfig cfg, std::set<Group> groups) : cfg_(cfg), groups_(std::move(groups)) {}

    // p <- p * (1 - lr * wd) - lr * mhat / (sqrt(vhat) + eps). Throws
    // InvalidArgument naming the first selected parameter whose gradient is not
    // finite; nothing is modified in that case.
    void step(Params& params, const Params& grads);

    bool owns(const std::string& param_name) const { return groups_.count(group_of(param_name)) > 0; }

    const AdamWConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    std::int64_t steps() const { return steps_; }
    const std::set<Group>& groups() const { return groups_; }
    const std::map<std::string, Moments>& moments() const { return moments_; }

    // Used by checkpoint restore.
    void restore(std::int64_t steps, std::map<std::string, Moments> moments) {
        steps_ = steps;
        moments_ = std::move(moments);
    }

private:
    AdamWConfig cfg_;
    std::set<Group> groups_;
    std::int64_t steps_ = 0;
    std::map<std::string, Moments> moments_;
};

}  // namespace advmidi::nn
