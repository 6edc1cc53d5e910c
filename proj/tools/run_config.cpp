#include "run_config.hpp"

#include "nst/errors.hpp"
#include "nst/text.hpp"

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace nst::cli {

namespace {

class Reader {
public:
    explicit Reader(std::set<std::string> overridden) : overridden_(std::move(overridden)) {}

    [[noreturn]] void fail(const YAML::Node& node, const std::string& field, const std::string& message) const {
        if (overridden_.contains(field)) {
            throw ConfigError(fmt::format("--set {}: {}", field, message));
        }
        const auto mark = node.Mark();
        if (mark.line >= 0) {
            throw ConfigError(fmt::format("line {}, field '{}': {}", mark.line + 1, field, message));
        }
        throw ConfigError(fmt::format("field '{}': {}", field, message));
    }

    std::string scalar(const YAML::Node& node, const std::string& field) const {
        if (!node.IsScalar()) {
            fail(node, field, "expected a scalar value");
        }
        return node.Scalar();
    }

    template <class F>
    auto convert(const YAML::Node& node, const std::string& field, F&& parse) const {
        const std::string text = scalar(node, field);
        try {
            return parse(text, field);
        } catch (const ConfigError& e) {
            fail(node, field, strip_field(e.what(), field));
        }
    }

    std::size_t size(const YAML::Node& n, const std::string& f) const {
        return convert(n, f, [](const std::string& s, const std::string& fl) { return parse_size(s, fl); });
    }
    std::uint64_t u64(const YAML::Node& n, const std::string& f) const {
        return convert(n, f, [](const std::string& s, const std::string& fl) { return parse_u64(s, fl); });
    }
    double real(const YAML::Node& n, const std::string& f) const {
        return convert(n, f, [](const std::string& s, const std::string& fl) { return parse_double(s, fl); });
    }
    bool boolean(const YAML::Node& n, const std::string& f) const {
        return convert(n, f, [](const std::string& s, const std::string& fl) { return parse_bool(s, fl); });
    }

    /// Calls handlers[key] for every entry of a mapping; rejects unknown keys.
    void each(const YAML::Node& map, const std::string& prefix,
              const std::map<std::string, std::function<void(const YAML::Node&, const std::string&)>>& handlers) const {
        if (!map.IsMap()) {
            fail(map, prefix, "expected a mapping");
        }
        for (const auto& entry : map) {
            const std::string key = entry.first.as<std::string>();
            const std::string field = prefix.empty() ? key : prefix + "." + key;
            const auto it = handlers.find(key);
            if (it == handlers.end()) {
                fail(entry.first, field, "unknown key");
            }
            it->second(entry.second, field);
        }
    }

private:
    static std::string strip_field(const std::string& message, const std::string& field) {
        const std::string prefix = field + ": ";
        return message.rfind(prefix, 0) == 0 ? message.substr(prefix.size()) : message;
    }

    std::set<std::string> overridden_;
};

void set_path(YAML::Node node, const std::vector<std::string>& parts, std::size_t i, const YAML::Node& value,
              const std::string& key) {
    if (i + 1 == parts.size()) {
        node[parts[i]] = value;
        return;
    }
    YAML::Node child = node[parts[i]];
    if (!child.IsDefined() || child.IsNull()) {
        node[parts[i]] = YAML::Node(YAML::NodeType::Map);
        child = node[parts[i]];
    } else if (!child.IsMap()) {
        throw ConfigError(fmt::format("--set {}: '{}' is not a mapping", key, parts[i]));
    }
    set_path(child, parts, i + 1, value, key);
}

void apply_override(YAML::Node& root, const Override& o) {
    std::vector<std::string> parts;
    std::stringstream ss(o.key);
    for (std::string p; std::getline(ss, p, '.');) {
        if (p.empty()) {
            throw ConfigError(fmt::format("--set {}: empty key component", o.key));
        }
        parts.push_back(p);
    }
    if (parts.empty()) {
        throw ConfigError("--set: empty key");
    }
    YAML::Node value;
    try {
        value = YAML::Load(o.value);
    } catch (const YAML::Exception& e) {
        throw ConfigError(fmt::format("--set {}: {}", o.key, e.msg));
    }
    set_path(root, parts, 0, value, o.key);
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

SyntheticSpec read_synthetic(const Reader& r, const YAML::Node& node, const std::string& prefix) {
    SyntheticSpec s;
    r.each(node, prefix,
           {
               {"kind",
                [&](const YAML::Node& n, const std::string& f) {
                    s.kind = r.convert(n, f, [](const std::string& v, const std::string&) {
                        return parse_synthetic_kind(v);
                    });
                }},
               {"length", [&](const YAML::Node& n, const std::string& f) { s.length = r.size(n, f); }},
               {"channels", [&](const YAML::Node& n, const std::string& f) { s.channels = r.size(n, f); }},
               {"seed", [&](const YAML::Node& n, const std::string& f) { s.seed = r.u64(n, f); }},
               {"noise_std", [&](const YAML::Node& n, const std::string& f) { s.noise_std = r.real(n, f); }},
               {"phi", [&](const YAML::Node& n, const std::string& f) { s.phi = r.real(n, f); }},
               {"amplitude", [&](const YAML::Node& n, const std::string& f) { s.amplitude = r.real(n, f); }},
               {"period", [&](const YAML::Node& n, const std::string& f) { s.period = r.real(n, f); }},
               {"trend_slope", [&](const YAML::Node& n, const std::string& f) { s.trend_slope = r.real(n, f); }},
               {"regimes", [&](const YAML::Node& n, const std::string& f) { s.regimes = r.size(n, f); }},
               {"regime_scale_max",
                [&](const YAML::Node& n, const std::string& f) { s.regime_scale_max = r.real(n, f); }},
               {"regime_level_max",
                [&](const YAML::Node& n, const std::string& f) { s.regime_level_max = r.real(n, f); }},
           });
    try {
        s.validate();
    } catch (const ConfigError& e) {
        r.fail(node, prefix, e.what());
    }
    return s;
}

SplitSpec read_split(const Reader& r, const YAML::Node& node, const std::string& field) {
    if (!node.IsSequence() || node.size() != 3) {
        r.fail(node, field, "expected a list of three ratios [train, val, test]");
    }
    SplitSpec s{r.real(node[0], field), r.real(node[1], field), r.real(node[2], field)};
    try {
        s.validate();
    } catch (const ConfigError& e) {
        r.fail(node, field, e.what());
    }
    return s;
}

void read_data(const Reader& r, const YAML::Node& node, RunConfig& c, const std::filesystem::path& base) {
    r.each(node, "data",
           {
               {"csv", [&](const YAML::Node& n, const std::string& f) { c.csv = resolve(base, r.scalar(n, f)); }},
               {"synthetic",
                [&](const YAML::Node& n, const std::string& f) { c.synthetic = read_synthetic(r, n, f); }},
               {"missing",
                [&](const YAML::Node& n, const std::string& f) {
                    const std::string v = r.scalar(n, f);
                    if (v == "strict") {
                        c.missing = MissingPolicy::strict;
                    } else if (v == "forward_fill") {
                        c.missing = MissingPolicy::forward_fill;
                    } else {
                        r.fail(n, f, fmt::format("unknown value '{}' (strict, forward_fill)", v));
                    }
                }},
               {"split", [&](const YAML::Node& n, const std::string& f) { c.split = read_split(r, n, f); }},
           });
    if (c.csv && c.synthetic) {
        r.fail(node, "data", "set either 'csv' or 'synthetic', not both");
    }
    if (!c.csv && !c.synthetic) {
        r.fail(node, "data.csv", "a dataset is required: set 'data.csv' or 'data.synthetic'");
    }
}

void read_model(const Reader& r, const YAML::Node& node, RunConfig& c) {
    if (!node.IsMap()) {
        r.fail(node, "model", "expected a mapping");
    }
    std::vector<std::pair<std::string, std::string>> kv;
    bool ffn_set = false;
    for (const auto& entry : node) {
        const std::string key = entry.first.as<std::string>();
        const std::string field = "model." + key;
        const std::string value = r.scalar(entry.second, field);
        try {
            ModelConfig::from_key_values({{key, value}});
        } catch (const ConfigError& e) {
            const std::string msg = e.what();
            r.fail(msg.find("unknown") != std::string::npos ? entry.first : entry.second, field,
                   msg.rfind(field + ": ", 0) == 0 ? msg.substr(field.size() + 2) : msg);
        }
        kv.emplace_back(key, value);
        ffn_set = ffn_set || key == "ffn_width";
        c.channels_set = c.channels_set || key == "channels";
    }
    c.model = ModelConfig::from_key_values(kv);
    if (!ffn_set) {
        c.model.ffn_width = 4 * c.model.d_model;
    }
    try {
        c.model.validate();
    } catch (const ConfigError& e) {
        // Messages look like "model.<key>: <why>".
        const std::string msg = e.what();
        const auto colon = msg.find(": ");
        if (msg.rfind("model.", 0) == 0 && colon != std::string::npos) {
            const std::string field = msg.substr(0, colon);
            const YAML::Node at = node[field.substr(6)];
            r.fail(at ? at : node, field, msg.substr(colon + 2));
        }
        r.fail(node, "model", msg);
    }
}

void read_train(const Reader& r, const YAML::Node& node, TrainConfig& t) {
    r.each(node, "train",
           {
               {"batch_size", [&](const YAML::Node& n, const std::string& f) { t.batch_size = r.size(n, f); }},
               {"epochs", [&](const YAML::Node& n, const std::string& f) { t.epochs = r.size(n, f); }},
               {"patience", [&](const YAML::Node& n, const std::string& f) { t.patience = r.size(n, f); }},
               {"lr", [&](const YAML::Node& n, const std::string& f) { t.lr = r.real(n, f); }},
               {"lr_decay", [&](const YAML::Node& n, const std::string& f) { t.lr_decay = r.boolean(n, f); }},
               {"seed", [&](const YAML::Node& n, const std::string& f) { t.seed = r.u64(n, f); }},
               {"loss",
                [&](const YAML::Node& n, const std::string& f) {
                    t.loss = r.convert(n, f, [](const std::string& v, const std::string&) {
                        return parse_loss_space(v);
                    });
                }},
               {"train_stride", [&](const YAML::Node& n, const std::string& f) { t.train_stride = r.size(n, f); }},
               {"eval_stride", [&](const YAML::Node& n, const std::string& f) { t.eval_stride = r.size(n, f); }},
           });
    try {
        t.validate();
    } catch (const ConfigError& e) {
        r.fail(node, "train", e.what());
    }
}

std::string missing_name(MissingPolicy p) {
    return p == MissingPolicy::strict ? "strict" : "forward_fill";
}

} // namespace

Override parse_override(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError(fmt::format("--set '{}': expected key=value", text));
    }
    return {std::string(trim(text.substr(0, eq))), std::string(trim(text.substr(eq + 1)))};
}

RunConfig parse_run_config(const std::string& yaml_text, const std::vector<Override>& overrides,
                           const std::filesystem::path& base_dir) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError(fmt::format("line {}: {}", e.mark.line + 1, e.msg));
    }
    if (!root.IsDefined() || root.IsNull()) {
        root = YAML::Node(YAML::NodeType::Map);
    }
    if (!root.IsMap()) {
        throw ConfigError("config file must be a mapping at the top level");
    }
    std::set<std::string> overridden;
    for (const auto& o : overrides) {
        apply_override(root, o);
        overridden.insert(o.key);
    }
    const Reader r(std::move(overridden));

    RunConfig c;
    bool have_version = false;
    bool have_data = false;
    r.each(root, "",
           {
               {"version",
                [&](const YAML::Node& n, const std::string& f) {
                    const auto v = r.size(n, f);
                    if (v != kRunConfigVersion) {
                        r.fail(n, f, fmt::format("unsupported version {} (expected {})", v, kRunConfigVersion));
                    }
                    have_version = true;
                }},
               {"output_dir",
                [&](const YAML::Node& n, const std::string& f) { c.output_dir = resolve(base_dir, r.scalar(n, f)); }},
               {"data",
                [&](const YAML::Node& n, const std::string&) {
                    read_data(r, n, c, base_dir);
                    have_data = true;
                }},
               {"model", [&](const YAML::Node& n, const std::string&) { read_model(r, n, c); }},
               {"train", [&](const YAML::Node& n, const std::string&) { read_train(r, n, c.train); }},
           });
    if (!have_version) {
        throw ConfigError(fmt::format("field 'version' is required (current version {})", kRunConfigVersion));
    }
    if (!have_data) {
        throw ConfigError("field 'data' is required: set 'data.csv' or 'data.synthetic'");
    }
    if (!root["model"]) {
        c.model.ffn_width = 4 * c.model.d_model;
    }
    if (c.synthetic) {
        if (c.channels_set && c.model.channels != c.synthetic->channels) {
            throw ConfigError(fmt::format("field 'model.channels': {} does not match data.synthetic.channels {}",
                                          c.model.channels, c.synthetic->channels));
        }
        c.model.channels = c.synthetic->channels;
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<Override>& overrides) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError(fmt::format("cannot open config file '{}'", path.string()));
    }
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_run_config(ss.str(), overrides, std::filesystem::absolute(path).parent_path());
    } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

std::string to_yaml(const RunConfig& c) {
    YAML::Emitter out;
    out << YAML::BeginMap;
    out << YAML::Key << "version" << YAML::Value << kRunConfigVersion;
    out << YAML::Key << "output_dir" << YAML::Value << c.output_dir.string();
    out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
    if (c.csv) {
        out << YAML::Key << "csv" << YAML::Value << c.csv->string();
    }
    if (c.synthetic) {
        const auto& s = *c.synthetic;
        out << YAML::Key << "synthetic" << YAML::Value << YAML::BeginMap;
        out << YAML::Key << "kind" << YAML::Value << std::string(to_string(s.kind));
        out << YAML::Key << "length" << YAML::Value << s.length;
        out << YAML::Key << "channels" << YAML::Value << s.channels;
        out << YAML::Key << "seed" << YAML::Value << s.seed;
        out << YAML::Key << "noise_std" << YAML::Value << fmt::format("{}", s.noise_std);
        out << YAML::Key << "phi" << YAML::Value << fmt::format("{}", s.phi);
        out << YAML::Key << "amplitude" << YAML::Value << fmt::format("{}", s.amplitude);
        out << YAML::Key << "period" << YAML::Value << fmt::format("{}", s.period);
        out << YAML::Key << "trend_slope" << YAML::Value << fmt::format("{}", s.trend_slope);
        out << YAML::Key << "regimes" << YAML::Value << s.regimes;
        out << YAML::Key << "regime_scale_max" << YAML::Value << fmt::format("{}", s.regime_scale_max);
        out << YAML::Key << "regime_level_max" << YAML::Value << fmt::format("{}", s.regime_level_max);
        out << YAML::EndMap;
    }
    out << YAML::Key << "missing" << YAML::Value << missing_name(c.missing);
    out << YAML::Key << "split" << YAML::Value << YAML::Flow << YAML::BeginSeq << fmt::format("{}", c.split.train)
        << fmt::format("{}", c.split.val) << fmt::format("{}", c.split.test) << YAML::EndSeq;
    out << YAML::EndMap;

    out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    for (const auto& [key, value] : c.model.to_key_values()) {
        out << YAML::Key << key << YAML::Value << value;
    }
    out << YAML::EndMap;

    const auto& t = c.train;
    out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "batch_size" << YAML::Value << t.batch_size;
    out << YAML::Key << "epochs" << YAML::Value << t.epochs;
    out << YAML::Key << "patience" << YAML::Value << t.patience;
    out << YAML::Key << "lr" << YAML::Value << fmt::format("{}", t.lr);
    out << YAML::Key << "lr_decay" << YAML::Value << (t.lr_decay ? "true" : "false");
    out << YAML::Key << "seed" << YAML::Value << t.seed;
    out << YAML::Key << "loss" << YAML::Value << std::string(to_string(t.loss));
    out << YAML::Key << "train_stride" << YAML::Value << t.train_stride;
    out << YAML::Key << "eval_stride" << YAML::Value << t.eval_stride;
    out << YAML::EndMap;
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

Dataset load_dataset(RunConfig& config) {
    if (config.csv && !std::filesystem::exists(*config.csv)) {
        throw ConfigError(fmt::format("field 'data.csv': file '{}' does not exist", config.csv->string()));
    }
    Dataset data = config.csv ? load_csv(*config.csv, {config.missing}) : generate_synthetic(*config.synthetic);
    if (config.channels_set && config.model.channels != data.cols()) {
        throw ConfigError(fmt::format("field 'model.channels': {} does not match the {} dataset columns",
                                      config.model.channels, data.cols()));
    }
    config.model.channels = data.cols();
    return data;
}

} // namespace nst::cli
