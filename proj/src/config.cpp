#include "repq/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "repq/errors.hpp"

namespace repq {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

struct Parser {
    std::vector<std::string> errors;

    bool to_bool(const std::string& key, const std::string& v, bool& out) {
        if (v == "true" || v == "1") { out = true; return true; }
        if (v == "false" || v == "0") { out = false; return true; }
        errors.push_back(key + ": expected true/false, got '" + v + "'");
        return false;
    }
    bool to_int(const std::string& key, const std::string& v, int& out) {
        try {
            std::size_t pos = 0;
            out = std::stoi(v, &pos);
            if (pos == v.size()) return true;
        } catch (...) {
        }
        errors.push_back(key + ": expected integer, got '" + v + "'");
        return false;
    }
    bool to_u64(const std::string& key, const std::string& v, std::uint64_t& out) {
        try {
            std::size_t pos = 0;
            out = std::stoull(v, &pos);
            if (pos == v.size()) return true;
        } catch (...) {
        }
        errors.push_back(key + ": expected unsigned integer, got '" + v + "'");
        return false;
    }
    bool to_double(const std::string& key, const std::string& v, double& out) {
        try {
            std::size_t pos = 0;
            out = std::stod(v, &pos);
            if (pos == v.size()) return true;
        } catch (...) {
        }
        errors.push_back(key + ": expected number, got '" + v + "'");
        return false;
    }
    bool to_int_list(const std::string& key, const std::string& v, std::vector<int>& out) {
        std::vector<int> values;
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (item.empty()) continue;
            int x = 0;
            if (!to_int(key, item, x)) return false;
            values.push_back(x);
        }
        out = std::move(values);
        return true;
    }
};

std::string int_list(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::s0: return "s0";
        case Variant::s1: return "s1";
        case Variant::s2: return "s2";
        case Variant::s3: return "s3";
        case Variant::s4: return "s4";
        case Variant::custom: return "flags";
    }
    return "s0";
}

std::string loss_name(LossMode m) {
    switch (m) {
        case LossMode::custom_l2: return "custom";
        case LossMode::custom_l2_no_denom: return "custom_nodenom";
        case LossMode::plain_l2: return "plain";
    }
    return "custom";
}

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    Parser p;
    std::string section;
    bool loss_given = false;

    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                p.errors.push_back("line " + std::to_string(lineno) + ": malformed section header");
                continue;
            }
            section = trim(line.substr(1, line.size() - 2));
            if (section != "network" && section != "block" && section != "train" && section != "quant" &&
                section != "data" && section != "io") {
                p.errors.push_back("unknown section [" + section + "]");
            }
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            p.errors.push_back("line " + std::to_string(lineno) + ": expected key = value");
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const std::string full = section + "." + key;

        if (full == "network.widths") p.to_int_list(full, value, cfg.widths);
        else if (full == "network.blocks") p.to_int_list(full, value, cfg.blocks);
        else if (full == "network.groups") p.to_int_list(full, value, cfg.groups);
        else if (full == "network.in_channels") p.to_int(full, value, cfg.in_channels);
        else if (full == "network.classes") p.to_int(full, value, cfg.classes);
        else if (full == "block.variant") {
            if (value == "s0") cfg.variant = Variant::s0;
            else if (value == "s1") cfg.variant = Variant::s1;
            else if (value == "s2") cfg.variant = Variant::s2;
            else if (value == "s3") cfg.variant = Variant::s3;
            else if (value == "s4") cfg.variant = Variant::s4;
            else if (value == "flags") cfg.variant = Variant::custom;
            else p.errors.push_back(full + ": expected s0..s4 or flags, got '" + value + "'");
        } else if (full == "block.m1") p.to_bool(full, value, cfg.m1);
        else if (full == "block.m2") p.to_bool(full, value, cfg.m2);
        else if (full == "block.m3") p.to_bool(full, value, cfg.m3);
        else if (full == "block.m4") p.to_bool(full, value, cfg.m4);
        else if (full == "block.bias_unnormalized") p.to_bool(full, value, cfg.bias_unnormalized);
        else if (full == "train.loss") {
            loss_given = true;
            if (value == "custom") cfg.loss = LossMode::custom_l2;
            else if (value == "custom_nodenom") cfg.loss = LossMode::custom_l2_no_denom;
            else if (value == "plain") cfg.loss = LossMode::plain_l2;
            else p.errors.push_back(full + ": expected custom/custom_nodenom/plain, got '" + value + "'");
        } else if (full == "train.lr0") p.to_double(full, value, cfg.lr0);
        else if (full == "train.momentum") p.to_double(full, value, cfg.momentum);
        else if (full == "train.weight_decay") p.to_double(full, value, cfg.weight_decay);
        else if (full == "train.epochs") p.to_int(full, value, cfg.epochs);
        else if (full == "train.batch_size") p.to_int(full, value, cfg.batch_size);
        else if (full == "train.seed") p.to_u64(full, value, cfg.seed);
        else if (full == "train.bn_warmup") p.to_int(full, value, cfg.bn_warmup);
        else if (full == "quant.bits") p.to_int(full, value, cfg.bits);
        else if (full == "quant.method") {
            if (value == "max") cfg.method = CalibMethod::max;
            else if (value == "mse") cfg.method = CalibMethod::mse;
            else p.errors.push_back(full + ": expected max/mse, got '" + value + "'");
        } else if (full == "quant.calib_batches") p.to_int(full, value, cfg.calib_batches);
        else if (full == "data.source") {
            if (value == "synth" || value == "cifar10") cfg.source = value;
            else p.errors.push_back(full + ": expected synth/cifar10, got '" + value + "'");
        } else if (full == "data.dir") cfg.dir = value;
        else if (full == "data.synth_n") p.to_int(full, value, cfg.synth_n);
        else if (full == "data.synth_classes") p.to_int(full, value, cfg.synth_classes);
        else if (full == "data.synth_size") p.to_int(full, value, cfg.synth_size);
        else if (full == "data.limit") p.to_int(full, value, cfg.limit);
        else if (full == "io.out_dir") cfg.out_dir = value;
        else p.errors.push_back("unknown key '" + key + "' in section [" + section + "]");
    }

    if (!loss_given) {
        cfg.loss = cfg.variant == Variant::custom ? (cfg.m1 ? LossMode::plain_l2 : LossMode::custom_l2)
                                                  : default_loss_mode(cfg.variant);
    }

    // semantic checks, reported together with the key errors
    if (cfg.widths.empty()) p.errors.push_back("network.widths: must not be empty");
    if (cfg.widths.size() != cfg.blocks.size()) {
        p.errors.push_back("network.blocks: length must match network.widths");
    }
    if (!cfg.groups.empty() && cfg.groups.size() != cfg.widths.size()) {
        p.errors.push_back("network.groups: length must match network.widths");
    }
    if (cfg.classes < 2) p.errors.push_back("network.classes: need at least 2");
    if (cfg.epochs <= 0) p.errors.push_back("train.epochs: must be positive");
    if (cfg.batch_size <= 0) p.errors.push_back("train.batch_size: must be positive");
    if (cfg.bits < 2 || cfg.bits > 16) p.errors.push_back("quant.bits: must be in [2,16]");
    if (cfg.calib_batches <= 0) p.errors.push_back("quant.calib_batches: must be positive");
    if (cfg.source == "cifar10" && cfg.dir.empty()) p.errors.push_back("data.dir: required for cifar10 source");
    if (cfg.limit < 0) p.errors.push_back("data.limit: must be >= 0");
    if (cfg.bn_warmup < 0) p.errors.push_back("train.bn_warmup: must be >= 0");

    if (!p.errors.empty()) {
        std::string msg = "configuration errors:";
        for (const std::string& e : p.errors) msg += "\n  - " + e;
        throw ConfigError(msg);
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream out;
    out << "[network]\n";
    out << "widths = " << int_list(cfg.widths) << "\n";
    out << "blocks = " << int_list(cfg.blocks) << "\n";
    if (!cfg.groups.empty()) out << "groups = " << int_list(cfg.groups) << "\n";
    out << "in_channels = " << cfg.in_channels << "\n";
    out << "classes = " << cfg.classes << "\n";
    out << "\n[block]\n";
    out << "variant = " << variant_name(cfg.variant) << "\n";
    out << "m1 = " << (cfg.m1 ? "true" : "false") << "\n";
    out << "m2 = " << (cfg.m2 ? "true" : "false") << "\n";
    out << "m3 = " << (cfg.m3 ? "true" : "false") << "\n";
    out << "m4 = " << (cfg.m4 ? "true" : "false") << "\n";
    out << "bias_unnormalized = " << (cfg.bias_unnormalized ? "true" : "false") << "\n";
    out << "\n[train]\n";
    out << "loss = " << loss_name(cfg.loss) << "\n";
    out << "lr0 = " << fmt_double(cfg.lr0) << "\n";
    out << "momentum = " << fmt_double(cfg.momentum) << "\n";
    out << "weight_decay = " << fmt_double(cfg.weight_decay) << "\n";
    out << "epochs = " << cfg.epochs << "\n";
    out << "batch_size = " << cfg.batch_size << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "bn_warmup = " << cfg.bn_warmup << "\n";
    out << "\n[quant]\n";
    out << "bits = " << cfg.bits << "\n";
    out << "method = " << (cfg.method == CalibMethod::max ? "max" : "mse") << "\n";
    out << "calib_batches = " << cfg.calib_batches << "\n";
    out << "\n[data]\n";
    out << "source = " << cfg.source << "\n";
    if (!cfg.dir.empty()) out << "dir = " << cfg.dir << "\n";
    out << "synth_n = " << cfg.synth_n << "\n";
    out << "synth_classes = " << cfg.synth_classes << "\n";
    out << "synth_size = " << cfg.synth_size << "\n";
    out << "limit = " << cfg.limit << "\n";
    out << "\n[io]\n";
    out << "out_dir = " << cfg.out_dir << "\n";
    return out.str();
}

NetworkSpec RunConfig::network_spec() const {
    NetworkSpec spec;
    spec.stage_widths = widths;
    spec.blocks_per_stage = blocks;
    spec.stage_groups = groups;
    spec.in_channels = in_channels;
    spec.num_classes = classes;
    if (variant == Variant::custom) {
        spec.variant = Variant::custom;
        spec.m2 = m2;
        spec.m3 = m3;
        spec.m4 = m4;
    } else {
        spec.variant = variant;
    }
    spec.bias_on_unnormalized_branches = bias_unnormalized;
    return spec;
}

} // namespace repq
