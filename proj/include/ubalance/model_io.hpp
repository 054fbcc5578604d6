#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "nncore.hpp"

namespace ubalance::nn {

inline constexpr int kModelFormatVersion = 1;

// Self-describing text container for trained parameters:
//
//   ubalance-model
//   format_version 1
//   kind <tag>
//   meta <key> <value...>
//   param <name> <rows> <cols>
//   <row-major values as C99 hex floats, one matrix row per line>
//   end
//
// Hex floats make the round trip bit-exact.
struct ModelFile {
    std::string kind;
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Matrix>> params;

    const Matrix& param(const std::string& name) const {
        for (const auto& [n, m] : params)
            if (n == name) return m;
        throw ParseError(kind, 0, "model file has no parameter '" + name + "'");
    }

    const std::string& meta_value(const std::string& key) const {
        const auto it = meta.find(key);
        if (it == meta.end()) throw ParseError(kind, 0, "model file has no meta key '" + key + "'");
        return it->second;
    }
};

inline std::string hexfloat(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return buf;
}

inline void write_model(const ModelFile& model, std::ostream& out) {
    out << "ubalance-model\n";
    out << "format_version " << kModelFormatVersion << '\n';
    out << "kind " << model.kind << '\n';
    for (const auto& [k, v] : model.meta) out << "meta " << k << ' ' << v << '\n';
    for (const auto& [name, m] : model.params) {
        out << "param " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                if (c) out << ' ';
                out << hexfloat(m(r, c));
            }
            out << '\n';
        }
    }
    out << "end\n";
}

inline void save_model(const ModelFile& model, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    write_model(model, out);
}

inline ModelFile read_model(std::istream& in, const std::string& name = "<model>") {
    ModelFile model;
    std::string line;
    std::size_t lineno = 0;
    auto next = [&]() -> bool {
        if (!std::getline(in, line)) return false;
        ++lineno;
        return true;
    };
    if (!next() || line != "ubalance-model") throw ParseError(name, 1, "not a ubalance model file");
    if (!next() || line.rfind("format_version ", 0) != 0) throw ParseError(name, lineno, "missing format_version");
    if (std::stoi(line.substr(15)) != kModelFormatVersion) throw ParseError(name, lineno, "unsupported format version");
    if (!next() || line.rfind("kind ", 0) != 0) throw ParseError(name, lineno, "missing kind");
    model.kind = line.substr(5);
    while (next()) {
        if (line == "end") return model;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "meta") {
            std::string key;
            ls >> key;
            std::string value;
            std::getline(ls, value);
            if (!value.empty() && value.front() == ' ') value.erase(0, 1);
            model.meta[key] = value;
        } else if (tag == "param") {
            std::string pname;
            Eigen::Index rows = 0, cols = 0;
            if (!(ls >> pname >> rows >> cols) || rows < 0 || cols < 0) throw ParseError(name, lineno, "bad param header");
            Matrix m(rows, cols);
            for (Eigen::Index r = 0; r < rows; ++r) {
                if (!next()) throw ParseError(name, lineno, "truncated parameter " + pname);
                const char* p = line.c_str();
                for (Eigen::Index c = 0; c < cols; ++c) {
                    char* end = nullptr;
                    m(r, c) = std::strtod(p, &end);
                    if (end == p) throw ParseError(name, lineno, "bad value in " + pname);
                    p = end;
                }
            }
            model.params.emplace_back(pname, std::move(m));
        } else {
            throw ParseError(name, lineno, "unexpected line '" + line + "'");
        }
    }
    throw ParseError(name, lineno, "missing end marker");
}

inline ModelFile load_model(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    return read_model(in, file.string());
}

inline void export_params(ModelFile& file, const ConstParameterRefs& params) {
    for (const auto* p : params) file.params.emplace_back(p->name, p->value);
}

// Copies stored values into matching parameters; names and shapes must agree.
inline void import_params(const ModelFile& file, const ParameterRefs& params) {
    if (file.params.size() != params.size()) throw ParseError(file.kind, 0, "parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, m] = file.params[i];
        auto& p = *params[i];
        if (name != p.name || m.rows() != p.value.rows() || m.cols() != p.value.cols())
            throw ParseError(file.kind, 0, "parameter '" + name + "' does not match '" + p.name + "'");
        p.value = m;
        p.zero_grad();
    }
}

}  // namespace ubalance::nn
