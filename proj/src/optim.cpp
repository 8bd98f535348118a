// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "gstrack/optim.hpp"

#include "gstrack/log.hpp"

#include <json.hpp>

#include <cmath>
#include <stdexcept>

namespace gstrack {

void AdamState::reset(std::size_t n) {
    step = 0;
    m.assign(n, 0.0);
    v.assign(n, 0.0);
}

bool adam_step(AdamState &s, std::span<double> params, std::span<const double> grads, const std::string &group) {
    if (params.size() != grads.size() || params.size() != s.m.size() || s.v.size() != s.m.size()) {
        throw std::invalid_argument("adam_step: size mismatch in group " + group);
    }
    ++s.step;
    for (double g : grads) {
        if (!std::isfinite(g)) {
            warn("adam_step: non-finite gradient in group " + group + ", step " + std::to_string(s.step) +
                 " skipped");
            return false;
        }
    }
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        params[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
    }
    return true;
}

PoseVector normalize_pose_params(const PoseVector &v) {
    const double n = v.tail<4>().norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw std::invalid_argument("normalize_pose_params: quaternion has zero or non-finite norm");
    }
    PoseVector out = v;
    out.tail<4>() /= n;
    return out;
}

CloudOptimizer::CloudOptimizer(const GaussianCloud &cloud, const LearningRates &r, double extent) {
    const std::size_t n = cloud.size();
    group(ParamGroup::Means) = AdamState(3 * n, r.means * extent);
    group(ParamGroup::LogScales) = AdamState(3 * n, r.log_scales);
    group(ParamGroup::Rotations) = AdamState(4 * n, r.rotations);
    group(ParamGroup::OpacityLogits) = AdamState(n, r.opacity_logits);
    group(ParamGroup::Colors) = AdamState(3 * n, r.colors);
}

int CloudOptimizer::step(GaussianCloud &cloud, const CloudGradients &grads) {
    int skipped = 0;
    for (ParamGroup g : kAllGroups) {
        if (!adam_step(group(g), cloud.params(g), grads.group(g), group_name(g))) {
            ++skipped;
        }
    }
    cloud.normalize_rotations();
    return skipped;
}

PoseOptimizer::PoseOptimizer(const LearningRates &r, double extent)
    : t_(3, r.pose_translation * extent), q_(4, r.pose_rotation) {}

bool PoseOptimizer::step(PoseVector &pose, const PoseVector &grad) {
    const bool a = adam_step(t_, std::span<double>(pose.data(), 3), std::span<const double>(grad.data(), 3),
                             "pose_translation");
    const bool b = adam_step(q_, std::span<double>(pose.data() + 3, 4), std::span<const double>(grad.data() + 3, 4),
                             "pose_rotation");
    pose = normalize_pose_params(pose);
    return a && b;
}

std::string save_adam_state(const AdamState &s) {
    nlohmann::json j;
    j["lr"] = s.lr;
    j["beta1"] = s.beta1;
    j["beta2"] = s.beta2;
    j["eps"] = s.eps;
    j["step"] = s.step;
    j["m"] = s.m;
    j["v"] = s.v;
    return j.dump();
}

AdamState load_adam_state(const std::string &text) {
    const auto j = nlohmann::json::parse(text);
    AdamState s;
    s.lr = j.at("lr").get<double>();
    s.beta1 = j.at("beta1").get<double>();
    s.beta2 = j.at("beta2").get<double>();
    s.eps = j.at("eps").get<double>();
    s.step = j.at("step").get<std::int64_t>();
    s.m = j.at("m").get<std::vector<double>>();
    s.v = j.at("v").get<std::vector<double>>();
    if (s.m.size() != s.v.size() || s.step < 0) {
        throw std::invalid_argument("load_adam_state: inconsistent state");
    }
    return s;
}

} // namespace gstrack
