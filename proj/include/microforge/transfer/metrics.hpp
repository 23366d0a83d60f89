#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <string>

namespace mf::transfer {

/// (C1111, C2222, C1212).
using Target = std::array<double, 3>;

inline constexpr std::array<const char*, 3> kComponentNames = {"c1111", "c2222", "c1212"};

/// Accepts c1111 / C1111 style names.
int parse_component(const std::string& name);

/// A target component has zero variance, so R² and z-scores are undefined.
class DegenerateTargetError : public std::invalid_argument {
public:
    explicit DegenerateTargetError(int component);
    int component;
};

struct R2Report {
    Target component{};
    double average = 0.0;  // mean of the three components
};

/// 1 - SS_res / SS_tot per component, SS_tot about the target mean.
R2Report r2_score(std::span<const Target> preds, std::span<const Target> targets);

}  // namespace mf::transfer
