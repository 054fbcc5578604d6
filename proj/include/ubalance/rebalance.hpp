#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "error.hpp"
#include "rng.hpp"
#include "telemetry.hpp"

namespace ubalance {

enum class Strategy { none, ulnr, class_weight, random_undersample };

inline std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::none: return "none";
        case Strategy::ulnr: return "ulnr";
        case Strategy::class_weight: return "cw";
        case Strategy::random_undersample: return "rus";
    }
    return "none";
}

inline Strategy parse_strategy(const std::string& s) {
    if (s == "none" || s == "plain") return Strategy::none;
    if (s == "ulnr") return Strategy::ulnr;
    if (s == "cw" || s == "class_weight") return Strategy::class_weight;
    if (s == "rus" || s == "random_undersample") return Strategy::random_undersample;
    throw ConfigError("unknown strategy '" + s + "' (expected none, ulnr, cw or rus)");
}

struct ClassWeights {
    double safe = 1.0;
    double unsafe = 1.0;
};

// w_unsafe = n_safe / n_unsafe, w_safe = 1.
inline ClassWeights class_weights(const std::vector<int>& labels) {
    std::size_t unsafe = 0;
    for (int l : labels) unsafe += l != 0 ? 1 : 0;
    const std::size_t safe = labels.size() - unsafe;
    if (unsafe == 0 || safe == 0) throw ConfigError("class weighting needs both classes present");
    return {1.0, static_cast<double>(safe) / static_cast<double>(unsafe)};
}

inline std::vector<double> sample_weights(const std::vector<int>& labels, const ClassWeights& w) {
    std::vector<double> out;
    out.reserve(labels.size());
    for (int l : labels) out.push_back(l != 0 ? w.unsafe : w.safe);
    return out;
}

// Keeps every unsafe window and a uniform subset of safe windows so that
// safe:unsafe is at most target_ratio. Relative order is preserved. When the
// data already satisfies the ratio it is returned unchanged.
inline std::vector<Window> random_undersample(const std::vector<Window>& windows, double target_ratio, Rng& rng) {
    if (!(target_ratio >= 1.0)) throw ConfigError("undersampling ratio must be >= 1");
    std::vector<std::size_t> safe;
    std::size_t unsafe = 0;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        if (windows[i].safety_label != 0) ++unsafe;
        else safe.push_back(i);
    }
    const auto keep = static_cast<std::size_t>(target_ratio * static_cast<double>(unsafe));
    if (keep >= safe.size()) return windows;
    rng.shuffle(safe);
    std::vector<char> kept(windows.size(), 0);
    for (std::size_t i = 0; i < keep; ++i) kept[safe[i]] = 1;
    std::vector<Window> out;
    out.reserve(unsafe + keep);
    for (std::size_t i = 0; i < windows.size(); ++i)
        if (windows[i].safety_label != 0 || kept[i]) out.push_back(windows[i]);
    return out;
}

}  // namespace ubalance
