#include "advmidi/nn/adamw.hpp"

#include <cmath>
#include <vector>

#include "advmidi/error.hpp"

namespace advmidi::nn {

void AdamW::step(Params& params, const Params& grads) {
    std::vector<std::pair<std::string, const Matrix*>> selected;
    grads.visit([&](const std::string& name, const Matrix& g) {
        if (!owns(name)) return;
        if (!g.allFinite()) throw InvalidArgument("non-finite gradient in parameter " + name);
        selected.emplace_back(name, &g);
    });

    ++steps_;
    const double t = static_cast<double>(steps_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
    std::size_t k = 0;
    params.visit([&](const std::string& name, Matrix& p) {
        if (!owns(name)) return;
        if (k >= selected.size() || selected[k].first != name)
            throw MismatchError("gradient structure does not match parameters at " + name);
        const Matrix& g = *selected[k++].second;
        auto [it, fresh] = moments_.try_emplace(name);
        Moments& mom = it->second;
        if (fresh || mom.m.rows() != p.rows() || mom.m.cols() != p.cols()) {
            mom.m = Matrix::Zero(p.rows(), p.cols());
            mom.v = Matrix::Zero(p.rows(), p.cols());
        }
        mom.m = cfg_.beta1 * mom.m + (1.0 - cfg_.beta1) * g;
        mom.v = cfg_.beta2 * mom.v + (1.0 - cfg_.beta2) * g.cwiseAbs2();
        p *= 1.0 - cfg_.lr * cfg_.weight_decay;
        p.array() -= cfg_.lr * (mom.m.array() / bc1) / ((mom.v.array() / bc2).sqrt() + cfg_.eps);
    });
}

}  // namespace advmidi::nn
