#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "csv.hpp"
#include "error.hpp"
#include "rebalance.hpp"
#include "rng.hpp"
#include "safety_predictor.hpp"
#include "synthgen.hpp"
#include "ulnr.hpp"
#include "uncertainty_predictor.hpp"

namespace ubalance {

// Everything a run depends on. Defaults reproduce the published setup; the
// "desk" profile shrinks the safety network and epochs to fit a laptop.
struct RunConfig {
    std::string profile = "paper";
    std::uint64_t seed = 7;
    Strategy strategy = Strategy::ulnr;
    std::string data_dir;  // benchmark directory
    std::string out_dir;

    synth::GenConfig gen;
    UncertaintyTrainConfig uncertainty;
    SafetyTrainConfig safety;

    double tau = ulnr::kDefaultTau;
    bool tune_tau = false;
    std::vector<double> tau_grid{3.0, 2.5, 2.0};  // ties keep the earlier entry
    std::vector<double> sweep_taus = ulnr::default_tau_sweep();
    int sweep_seeds = 10;

    double rus_ratio = 1.0;
    int eval_seeds = 10;
    std::vector<Strategy> eval_strategies{Strategy::ulnr, Strategy::none, Strategy::class_weight,
                                          Strategy::random_undersample};

    void validate() const {
        gen.validate();
        uncertainty.model.validate();
        uncertainty.optim.validate();
        safety.model.validate();
        safety.optim.validate();
        if (!std::isfinite(tau)) throw ConfigError("ulnr.tau must be finite");
        if (tau_grid.empty()) throw ConfigError("ulnr.tau_grid must not be empty");
        if (sweep_taus.empty()) throw ConfigError("sweep.taus must not be empty");
        if (sweep_seeds < 1) throw ConfigError("sweep.seeds must be >= 1");
        if (!(rus_ratio >= 1.0)) throw ConfigError("rebalance.rus_ratio must be >= 1");
        if (eval_seeds < 2) throw ConfigError("evaluate.seeds must be >= 2");
        if (eval_strategies.empty()) throw ConfigError("evaluate.strategies must not be empty");
    }
};

inline void apply_profile(RunConfig& cfg, const std::string& name) {
    if (name == "paper") {
        RunConfig fresh;
        cfg.uncertainty = fresh.uncertainty;
        cfg.safety = fresh.safety;
    } else if (name == "desk") {
        cfg.uncertainty = RunConfig{}.uncertainty;
        cfg.safety = RunConfig{}.safety;
        cfg.safety.model.hidden = 32;
        cfg.safety.model.layers = 1;
        cfg.safety.optim.batch_size = 64;
        cfg.safety.optim.epochs = 30;
    } else {
        throw ConfigError("unknown profile '" + name + "' (expected paper or desk)");
    }
    cfg.profile = name;
}

namespace detail {

inline std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + csv::format_double(v[i]);
    return out;
}

inline std::vector<double> parse_doubles(const std::string& key, const std::string& s) {
    std::vector<double> out;
    for (const auto& tok : csv::split(s, ',')) {
        const auto t = csv::trim(tok);
        if (t.empty()) continue;
        const auto v = csv::parse_double(t);
        if (!v || !std::isfinite(*v)) throw ConfigError(key + ": '" + std::string(t) + "' is not a number");
        out.push_back(*v);
    }
    return out;
}

inline double to_double(const std::string& key, const std::string& s) {
    const auto v = csv::parse_double(csv::trim(s));
    if (!v || !std::isfinite(*v)) throw ConfigError(key + ": '" + s + "' is not a number");
    return *v;
}

inline long long to_int(const std::string& key, const std::string& s) {
    const auto v = csv::parse_int(csv::trim(s));
    if (!v) throw ConfigError(key + ": '" + s + "' is not an integer");
    return *v;
}

inline bool to_bool(const std::string& key, const std::string& s) {
    const auto t = csv::trim(s);
    if (t == "true" || t == "1" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "no") return false;
    throw ConfigError(key + ": '" + s + "' is not a boolean");
}

struct Key {
    std::string name;  // section.key
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

inline Key int_key(std::string name, auto member) {
    return {name, [member](const RunConfig& c) { return std::to_string(member(c)); },
            [member, name](RunConfig& c, const std::string& s) { member(c) = static_cast<int>(to_int(name, s)); }};
}

inline Key double_key(std::string name, auto member) {
    return {name, [member](const RunConfig& c) { return csv::format_double(member(c)); },
            [member, name](RunConfig& c, const std::string& s) { member(c) = to_double(name, s); }};
}

// Registry of every accepted key, in the order they are written.
inline const std::vector<Key>& keys() {
    static const std::vector<Key> all = [] {
        std::vector<Key> k;
        k.push_back({"run.seed", [](const RunConfig& c) { return std::to_string(c.seed); },
                     [](RunConfig& c, const std::string& s) {
                         const auto v = to_int("run.seed", s);
                         if (v < 0) throw ConfigError("run.seed must be >= 0");
                         c.seed = static_cast<std::uint64_t>(v);
                     }});
        k.push_back({"run.strategy", [](const RunConfig& c) { return to_string(c.strategy); },
                     [](RunConfig& c, const std::string& s) { c.strategy = parse_strategy(std::string(csv::trim(s))); }});
        k.push_back({"run.data_dir", [](const RunConfig& c) { return c.data_dir; },
                     [](RunConfig& c, const std::string& s) { c.data_dir = std::string(csv::trim(s)); }});
        k.push_back({"run.out_dir", [](const RunConfig& c) { return c.out_dir; },
                     [](RunConfig& c, const std::string& s) { c.out_dir = std::string(csv::trim(s)); }});

        k.push_back(int_key("gen.n_flights", [](auto& c) -> auto& { return c.gen.n_flights; }));
        k.push_back(int_key("gen.flight_length", [](auto& c) -> auto& { return c.gen.flight_length; }));
        k.push_back(int_key("gen.background_obstacles", [](auto& c) -> auto& { return c.gen.background_obstacles; }));
        k.push_back(double_key("gen.imbalance_ratio", [](auto& c) -> auto& { return c.gen.imbalance_ratio; }));
        k.push_back(double_key("gen.weight_certain_safe", [](auto& c) -> auto& { return c.gen.archetype_weights[0]; }));
        k.push_back(double_key("gen.weight_uncertain_safe", [](auto& c) -> auto& { return c.gen.archetype_weights[1]; }));
        k.push_back(double_key("gen.weight_certain_unsafe", [](auto& c) -> auto& { return c.gen.archetype_weights[2]; }));
        k.push_back(double_key("gen.weight_uncertain_unsafe", [](auto& c) -> auto& { return c.gen.archetype_weights[3]; }));
        k.push_back(double_key("gen.speed", [](auto& c) -> auto& { return c.gen.speed; }));
        k.push_back(double_key("gen.heading_noise", [](auto& c) -> auto& { return c.gen.heading_noise; }));
        k.push_back(double_key("gen.position_noise", [](auto& c) -> auto& { return c.gen.position_noise; }));
        k.push_back(double_key("gen.oscillation_min", [](auto& c) -> auto& { return c.gen.oscillation_min; }));
        k.push_back(double_key("gen.oscillation_max", [](auto& c) -> auto& { return c.gen.oscillation_max; }));
        k.push_back(double_key("gen.near_miss_rate", [](auto& c) -> auto& { return c.gen.near_miss_rate; }));
        k.push_back({"gen.seed", [](const RunConfig& c) { return std::to_string(c.gen.seed); },
                     [](RunConfig& c, const std::string& s) {
                         const auto v = to_int("gen.seed", s);
                         if (v < 0) throw ConfigError("gen.seed must be >= 0");
                         c.gen.seed = static_cast<std::uint64_t>(v);
                     }});

        k.push_back(int_key("labels.window_length", [](auto& c) -> auto& { return c.gen.rules.window_length; }));
        k.push_back(int_key("labels.stride", [](auto& c) -> auto& { return c.gen.rules.stride; }));
        k.push_back(double_key("labels.safety_threshold_m", [](auto& c) -> auto& { return c.gen.rules.safety_threshold_m; }));
        k.push_back(double_key("labels.heading_delta_rad", [](auto& c) -> auto& { return c.gen.rules.heading_delta_rad; }));
        k.push_back(int_key("labels.min_reversals", [](auto& c) -> auto& { return c.gen.rules.min_reversals; }));

        k.push_back(int_key("uncertainty.projection_dim", [](auto& c) -> auto& { return c.uncertainty.model.projection_dim; }));
        k.push_back(int_key("uncertainty.expansion_dim", [](auto& c) -> auto& { return c.uncertainty.model.expansion_dim; }));
        k.push_back(int_key("uncertainty.head_dim", [](auto& c) -> auto& { return c.uncertainty.model.head_dim; }));
        k.push_back(double_key("uncertainty.dropout", [](auto& c) -> auto& { return c.uncertainty.model.dropout; }));
        k.push_back(int_key("uncertainty.epochs", [](auto& c) -> auto& { return c.uncertainty.optim.epochs; }));
        k.push_back(double_key("uncertainty.lr", [](auto& c) -> auto& { return c.uncertainty.optim.learning_rate; }));
        k.push_back(double_key("uncertainty.weight_decay", [](auto& c) -> auto& { return c.uncertainty.optim.weight_decay; }));
        k.push_back(int_key("uncertainty.batch_size", [](auto& c) -> auto& { return c.uncertainty.optim.batch_size; }));

        k.push_back(double_key("ulnr.tau", [](auto& c) -> auto& { return c.tau; }));
        k.push_back({"ulnr.tune_tau", [](const RunConfig& c) { return std::string(c.tune_tau ? "true" : "false"); },
                     [](RunConfig& c, const std::string& s) { c.tune_tau = to_bool("ulnr.tune_tau", s); }});
        k.push_back({"ulnr.tau_grid", [](const RunConfig& c) { return join_doubles(c.tau_grid); },
                     [](RunConfig& c, const std::string& s) { c.tau_grid = parse_doubles("ulnr.tau_grid", s); }});

        k.push_back(int_key("safety.hidden", [](auto& c) -> auto& { return c.safety.model.hidden; }));
        k.push_back(int_key("safety.layers", [](auto& c) -> auto& { return c.safety.model.layers; }));
        k.push_back(double_key("safety.dropout", [](auto& c) -> auto& { return c.safety.model.dropout; }));
        k.push_back(int_key("safety.head_dim", [](auto& c) -> auto& { return c.safety.model.head_dim; }));
        k.push_back({"safety.fusion", [](const RunConfig& c) { return to_string(c.safety.model.fusion); },
                     [](RunConfig& c, const std::string& s) { c.safety.model.fusion = parse_fusion(std::string(csv::trim(s))); }});
        k.push_back(int_key("safety.epochs", [](auto& c) -> auto& { return c.safety.optim.epochs; }));
        k.push_back(double_key("safety.lr", [](auto& c) -> auto& { return c.safety.optim.learning_rate; }));
        k.push_back(double_key("safety.weight_decay", [](auto& c) -> auto& { return c.safety.optim.weight_decay; }));
        k.push_back(int_key("safety.batch_size", [](auto& c) -> auto& { return c.safety.optim.batch_size; }));
        k.push_back({"safety.grad_clip", [](const RunConfig& c) { return c.safety.optim.grad_clip_norm ? csv::format_double(*c.safety.optim.grad_clip_norm) : std::string("none"); },
                     [](RunConfig& c, const std::string& s) {
                         if (csv::trim(s) == "none") c.safety.optim.grad_clip_norm.reset();
                         else c.safety.optim.grad_clip_norm = to_double("safety.grad_clip", s);
                     }});

        k.push_back(double_key("rebalance.rus_ratio", [](auto& c) -> auto& { return c.rus_ratio; }));

        k.push_back({"sweep.taus", [](const RunConfig& c) { return join_doubles(c.sweep_taus); },
                     [](RunConfig& c, const std::string& s) { c.sweep_taus = parse_doubles("sweep.taus", s); }});
        k.push_back(int_key("sweep.seeds", [](auto& c) -> auto& { return c.sweep_seeds; }));

        k.push_back(int_key("evaluate.seeds", [](auto& c) -> auto& { return c.eval_seeds; }));
        k.push_back({"evaluate.strategies",
                     [](const RunConfig& c) {
                         std::string out;
                         for (std::size_t i = 0; i < c.eval_strategies.size(); ++i) out += (i ? "," : "") + to_string(c.eval_strategies[i]);
                         return out;
                     },
                     [](RunConfig& c, const std::string& s) {
                         c.eval_strategies.clear();
                         for (const auto& tok : csv::split(s, ','))
                             if (!csv::trim(tok).empty()) c.eval_strategies.push_back(parse_strategy(std::string(csv::trim(tok))));
                     }});
        return k;
    }();
    return all;
}

}  // namespace detail

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "run.profile") {
        apply_profile(cfg, std::string(csv::trim(value)));
        return;
    }
    for (const auto& k : detail::keys()) {
        if (k.name == key) {
            k.set(cfg, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

// Flat INI with [sections]. run.profile (or `profile`, when given) is applied
// before any other key so explicit values always win over the profile.
inline RunConfig parse_config(std::istream& in, const std::string& origin = "<config>",
                              const std::string& profile = "") {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ParseError(origin, e.line(), e.message());
    }
    RunConfig cfg;
    std::vector<std::pair<std::string, std::string>> entries;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) throw ConfigError("key '" + section + "' must live inside a [section]");
        for (const auto& [key, value] : body) entries.emplace_back(section + "." + key, value.data());
    }
    if (!profile.empty()) apply_profile(cfg, profile);
    else
        for (const auto& [k, v] : entries)
            if (k == "run.profile") set_config_value(cfg, k, v);
    for (const auto& [k, v] : entries)
        if (k != "run.profile") set_config_value(cfg, k, v);
    cfg.validate();
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& file, const std::string& profile = "") {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open config file " + file.string());
    return parse_config(in, file.string(), profile);
}

// Canonical text form. Paths are left out so that moving a dataset does not
// change the hash.
inline std::string canonical_config(const RunConfig& cfg) {
    std::ostringstream out;
    out << "[run]\nprofile = " << cfg.profile << '\n';
    std::string section = "run";
    for (const auto& k : detail::keys()) {
        if (k.name == "run.data_dir" || k.name == "run.out_dir") continue;
        const auto dot = k.name.find('.');
        const auto sec = k.name.substr(0, dot);
        if (sec != section) {
            out << "\n[" << sec << "]\n";
            section = sec;
        }
        out << k.name.substr(dot + 1) << " = " << k.get(cfg) << '\n';
    }
    return out.str();
}

inline std::string config_hash(const RunConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_config(cfg))));
    return buf;
}

}  // namespace ubalance
