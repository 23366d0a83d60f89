#include "microforge/transfer/metrics.hpp"

#include <algorithm>
#include <cctype>

namespace mf::transfer {

int parse_component(const std::string& name) {
    std::string s = name;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    for (int i = 0; i < 3; ++i)
        if (s == kComponentNames[static_cast<std::size_t>(i)]) return i;
    throw std::invalid_argument("unknown stiffness component '" + name + "' (expected c1111, c2222 or c1212)");
}

DegenerateTargetError::DegenerateTargetError(int c)
    : std::invalid_argument(std::string("target component ") + kComponentNames.at(static_cast<std::size_t>(c)) +
                            " has zero variance"),
      component(c) {}

R2Report r2_score(std::span<const Target> preds, std::span<const Target> targets) {
    if (preds.size() != targets.size()) throw std::invalid_argument("r2_score: prediction and target counts differ");
    if (targets.size() < 2) throw std::invalid_argument("r2_score: need at least 2 samples");
    const double n = static_cast<double>(targets.size());
    R2Report r;
    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0.0;
        for (const auto& t : targets) mean += t[c];
        mean /= n;
        double ss_tot = 0.0, ss_res = 0.0;
        for (std::size_t i = 0; i < targets.size(); ++i) {
            ss_tot += (targets[i][c] - mean) * (targets[i][c] - mean);
            ss_res += (targets[i][c] - preds[i][c]) * (targets[i][c] - preds[i][c]);
        }
        if (ss_tot == 0.0) throw DegenerateTargetError(static_cast<int>(c));
        r.component[c] = 1.0 - ss_res / ss_tot;
    }
    r.average = (r.component[0] + r.component[1] + r.component[2]) / 3.0;
    return r;
}

}  // namespace mf::transfer
