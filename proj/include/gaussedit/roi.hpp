#pragma once

// Region-of-interest selection and re-initialization of the editable Gaussians.

#include "gaussedit/error.hpp"
#include "gaussedit/math.hpp"
#include "gaussedit/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gaussedit {

struct Aabb {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();

    void validate() const {
        require(min.allFinite() && max.allFinite(), ErrorKind::Validation, "box: non-finite bounds");
        require((min.array() <= max.array()).all(), ErrorKind::Validation, "box: min must be <= max componentwise");
    }
    // Closed on both ends.
    bool contains(const Vec3& p) const { return (p.array() >= min.array()).all() && (p.array() <= max.array()).all(); }
    Vec3 center() const { return 0.5 * (min + max); }
    double diagonal() const { return (max - min).norm(); }
};

enum class ScaleMode { UnitScale, NearestNeighbor };

struct InitPolicy {
    std::size_t n_samples = 50000;
    ScaleMode scale_mode = ScaleMode::UnitScale;
    std::uint64_t color_seed = 0;
    double opacity_logit_init = std::log(0.1 / 0.9);
    std::size_t fps_start = 0;
    // When the ROI holds fewer centers than n_samples, keep them all instead of failing.
    bool clamp_to_available = true;

    void validate() const {
        require(n_samples >= 1, ErrorKind::Validation, "init: n_samples must be >= 1");
        require(std::isfinite(opacity_logit_init), ErrorKind::Validation, "init: opacity_logit_init must be finite");
    }
};

struct Partition {
    std::vector<std::size_t> frozen;
    std::vector<std::size_t> inside;
    std::optional<std::string> warning;
};

/// Splits Gaussian indices by whether the center lies inside the box.
inline Partition partition(const GaussianScene& scene, const Aabb& box) {
    require(!scene.empty(), ErrorKind::Precondition, "partition: scene is empty");
    box.validate();
    Partition out;
    for (std::size_t i = 0; i < scene.size(); ++i) (box.contains(scene[i].mu) ? out.inside : out.frozen).push_back(i);
    if (out.inside.empty()) out.warning = "no Gaussian centers inside the box; the edit starts from an empty region";
    return out;
}

/// Greedy farthest point sampling. The first pick is `start`; each next pick
/// maximizes the distance to the picked set, ties going to the lowest index.
inline std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t k, std::size_t start = 0) {
    const std::size_t n = points.size();
    require(k >= 1, ErrorKind::Argument, "farthest_point_sample: k must be >= 1");
    require(k <= n, ErrorKind::Argument,
            "farthest_point_sample: k=" + std::to_string(k) + " exceeds point count " + std::to_string(n));
    require(start < n, ErrorKind::Argument, "farthest_point_sample: start index out of range");

    std::vector<std::size_t> picked;
    picked.reserve(k);
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::size_t current = start;
    for (std::size_t round = 0; round < k; ++round) {
        picked.push_back(current);
        const Vec3 c = points[current];
        std::size_t best = 0;
        double best_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = (points[i] - c).squaredNorm();
            if (d < nearest[i]) nearest[i] = d;
            if (nearest[i] > best_d) {
                best_d = nearest[i];
                best = i;
            }
        }
        current = best;
    }
    return picked;
}

/// Fresh editable Gaussians at `positions`: random colors, identity rotation,
/// low opacity, and unit or nearest-neighbor scale.
inline std::vector<Gaussian> initialize_editable(std::span<const Vec3> positions, const InitPolicy& policy) {
    require(!positions.empty(), ErrorKind::Argument, "initialize_editable: no positions");
    policy.validate();
    Rng rng(policy.color_seed);
    std::vector<Gaussian> out(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        Gaussian& g = out[i];
        g.mu = positions[i];
        g.rot = identity_quaternion();
        for (int c = 0; c < 3; ++c) g.sh0[c] = sh0_from_color(uniform01(rng));
        g.opacity_logit = policy.opacity_logit_init;
        g.log_scale.setZero();
    }
    if (policy.scale_mode == ScaleMode::NearestNeighbor && positions.size() > 1) {
        for (std::size_t i = 0; i < positions.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < positions.size(); ++j)
                if (j != i) best = std::min(best, (positions[i] - positions[j]).squaredNorm());
            // Coincident samples would give log(0).
            out[i].log_scale.setConstant(std::log(std::max(std::sqrt(best), 1e-7)));
        }
    }
    return out;
}

/// Frozen Gaussians followed by the editable ones; the suffix is marked editable.
inline GaussianScene concat(std::span<const Gaussian> frozen, std::span<const Gaussian> editable) {
    std::vector<Gaussian> all;
    all.reserve(frozen.size() + editable.size());
    all.insert(all.end(), frozen.begin(), frozen.end());
    all.insert(all.end(), editable.begin(), editable.end());
    return GaussianScene(std::move(all), frozen.size());
}

struct RoiInitResult {
    GaussianScene scene;
    std::size_t frozen_count = 0;
    std::size_t inside_count = 0;
    std::size_t editable_count = 0;
    std::optional<std::string> warning;
};

/// partition -> farthest point sampling -> initialize_editable -> concat. The
/// original in-box Gaussians are dropped.
inline RoiInitResult initialize_roi(const GaussianScene& scene, const Aabb& box, const InitPolicy& policy) {
    policy.validate();
    Partition part = partition(scene, box);
    RoiInitResult out;
    out.frozen_count = part.frozen.size();
    out.inside_count = part.inside.size();
    out.warning = part.warning;

    std::vector<Gaussian> frozen;
    frozen.reserve(part.frozen.size());
    for (std::size_t i : part.frozen) frozen.push_back(scene[i]);
    if (part.inside.empty()) {
        out.scene = concat(frozen, {});
        return out;
    }

    std::vector<Vec3> centers;
    centers.reserve(part.inside.size());
    for (std::size_t i : part.inside) centers.push_back(scene[i].mu);
    std::size_t k = policy.n_samples;
    if (k > centers.size()) {
        require(policy.clamp_to_available, ErrorKind::Argument,
                "init: n_samples exceeds the " + std::to_string(centers.size()) + " centers inside the box");
        k = centers.size();
    }
    require(policy.fps_start < centers.size(), ErrorKind::Argument, "init: fps_start outside the ROI");
    const auto picked = farthest_point_sample(centers, k, policy.fps_start);
    std::vector<Vec3> positions;
    positions.reserve(picked.size());
    for (std::size_t i : picked) positions.push_back(centers[i]);
    const auto editable = initialize_editable(positions, policy);
    out.editable_count = editable.size();
    out.scene = concat(frozen, editable);
    return out;
}

} // namespace gaussedit
