#include "dada/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dada {

SynthConfig DataSettings::synth() const {
    SynthConfig c = SynthConfig::standard(target_domains, source_count, target_count);
    c.seed = seed;
    c.num_classes = num_classes;
    c.shape = {3, image_size, image_size};
    c.allow_identical_domains = allow_identical_domains;
    return c;
}

void RunConfig::sync() {
    experiment.arch.num_classes = data.num_classes;
    experiment.arch.input = {3, data.image_size, data.image_size};
}

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
    throw ConfigError("invalid value '" + value + "' for " + key + " (expected " + expected + ")");
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* first = value.data();
    const char* last = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last) bad_value(key, value, std::is_integral_v<T> ? "an integer" : "a number");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
    if (value == "false" || value == "0" || value == "no" || value == "off") return false;
    bad_value(key, value, "true or false");
}

std::string format_double(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');)
        if (!trim(item).empty()) out.push_back(trim(item));
    return out;
}

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define DADA_NUMBER(section, member, type)                                                                      \
    Field {                                                                                                     \
        [](const RunConfig& c) {                                                                                \
            if constexpr (std::is_floating_point_v<type>)                                                       \
                return format_double(c.section.member);                                                         \
            else                                                                                                \
                return std::to_string(c.section.member);                                                        \
        },                                                                                                      \
            [](RunConfig& c, const std::string& k, const std::string& v) { c.section.member = parse_number<type>(k, v); } \
    }

#define DADA_BOOL(section, member)                                                                           \
    Field {                                                                                                  \
        [](const RunConfig& c) { return std::string(c.section.member ? "true" : "false"); },                 \
            [](RunConfig& c, const std::string& k, const std::string& v) { c.section.member = parse_bool(k, v); } \
    }

const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = [] {
        std::vector<std::pair<std::string, Field>> t;
        t.emplace_back("data.seed", DADA_NUMBER(data, seed, std::uint64_t));
        t.emplace_back("data.num_classes", DADA_NUMBER(data, num_classes, int));
        t.emplace_back("data.target_domains", DADA_NUMBER(data, target_domains, int));
        t.emplace_back("data.source_count", DADA_NUMBER(data, source_count, int));
        t.emplace_back("data.target_count", DADA_NUMBER(data, target_count, int));
        t.emplace_back("data.image_size", DADA_NUMBER(data, image_size, int));
        t.emplace_back("data.allow_identical_domains", DADA_BOOL(data, allow_identical_domains));

        t.emplace_back("arch.preset", Field{[](const RunConfig& c) { return c.experiment.arch.preset; },
                                            [](RunConfig& c, const std::string& k, const std::string& v) {
                                                if (v != "desk" && v != "full") bad_value(k, v, "desk or full");
                                                c.experiment.arch.preset = v;
                                            }});
        t.emplace_back("arch.feature_width", DADA_NUMBER(experiment.arch, feature_width, int));
        t.emplace_back("arch.conv_channels",
                       Field{[](const RunConfig& c) {
                                 const auto& ch = c.experiment.arch.conv_channels;
                                 return std::to_string(ch[0]) + "," + std::to_string(ch[1]) + "," + std::to_string(ch[2]);
                             },
                             [](RunConfig& c, const std::string& k, const std::string& v) {
                                 const auto parts = split_list(v);
                                 if (parts.size() != 3) bad_value(k, v, "three comma-separated integers");
                                 for (std::size_t i = 0; i < 3; ++i)
                                     c.experiment.arch.conv_channels[i] = parse_number<int>(k, parts[i]);
                             }});
        t.emplace_back("arch.disentangler_hidden", DADA_NUMBER(experiment.arch, disentangler_hidden, int));
        t.emplace_back("arch.domain_hidden", DADA_NUMBER(experiment.arch, domain_hidden, int));
        t.emplace_back("arch.mine_hidden", DADA_NUMBER(experiment.arch, mine_hidden, int));
        t.emplace_back("arch.dropout", DADA_NUMBER(experiment.arch, dropout, double));
        t.emplace_back("arch.leaky_slope", DADA_NUMBER(experiment.arch, leaky_slope, double));
        t.emplace_back("arch.init",
                       Field{[](const RunConfig& c) {
                                 return std::string(c.experiment.arch.init.scheme == InitScheme::he ? "he" : "normal");
                             },
                             [](RunConfig& c, const std::string& k, const std::string& v) {
                                 if (v == "he")
                                     c.experiment.arch.init.scheme = InitScheme::he;
                                 else if (v == "normal")
                                     c.experiment.arch.init.scheme = InitScheme::normal;
                                 else
                                     bad_value(k, v, "normal or he");
                             }});
        t.emplace_back("arch.init_std", DADA_NUMBER(experiment.arch.init, stddev, double));

        t.emplace_back("train.seed", DADA_NUMBER(experiment, seed, std::uint64_t));
        t.emplace_back("train.level", Field{[](const RunConfig& c) { return level_name(c.experiment.level); },
                                            [](RunConfig& c, const std::string&, const std::string& v) {
                                                c.experiment.level = parse_level(v);
                                            }});
        t.emplace_back("train.epochs", DADA_NUMBER(experiment, epochs, int));
        t.emplace_back("train.batch_size", DADA_NUMBER(experiment, batch_size, int));
        t.emplace_back("train.inner_iterations", DADA_NUMBER(experiment, inner_iterations, int));
        t.emplace_back("train.fooling",
                       Field{[](const RunConfig& c) {
                                 return std::string(c.experiment.fooling == FoolingMode::negated ? "negated" : "flipped");
                             },
                             [](RunConfig& c, const std::string& k, const std::string& v) {
                                 if (v == "negated")
                                     c.experiment.fooling = FoolingMode::negated;
                                 else if (v == "flipped")
                                     c.experiment.fooling = FoolingMode::flipped;
                                 else
                                     bad_value(k, v, "negated or flipped");
                             }});
        t.emplace_back("train.class_loss_on_ci", DADA_BOOL(experiment, class_loss_on_ci));
        t.emplace_back("train.classifier_joint_batch_norm", DADA_BOOL(experiment, classifier_joint_batch_norm));
        t.emplace_back("train.generator_everywhere", DADA_BOOL(experiment, generator_everywhere));
        t.emplace_back("train.reparameterized_encoder", DADA_BOOL(experiment, reparameterized_encoder));
        t.emplace_back("train.statistic_warmup", DADA_NUMBER(experiment, statistic_warmup, int));

        t.emplace_back("optimizer.kind",
                       Field{[](const RunConfig& c) {
                                 return std::string(c.experiment.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd");
                             },
                             [](RunConfig& c, const std::string& k, const std::string& v) {
                                 if (v == "adam")
                                     c.experiment.optimizer.kind = OptimizerKind::adam;
                                 else if (v == "sgd")
                                     c.experiment.optimizer.kind = OptimizerKind::sgd;
                                 else
                                     bad_value(k, v, "adam or sgd");
                             }});
        t.emplace_back("optimizer.learning_rate", DADA_NUMBER(experiment.optimizer, learning_rate, double));
        t.emplace_back("optimizer.momentum", DADA_NUMBER(experiment.optimizer, momentum, double));
        t.emplace_back("optimizer.beta1", DADA_NUMBER(experiment.optimizer, beta1, double));
        t.emplace_back("optimizer.beta2", DADA_NUMBER(experiment.optimizer, beta2, double));
        t.emplace_back("optimizer.epsilon", DADA_NUMBER(experiment.optimizer, epsilon, double));
        t.emplace_back("optimizer.weight_decay", DADA_NUMBER(experiment.optimizer, weight_decay, double));
        t.emplace_back("optimizer.generator_lr_scale", DADA_NUMBER(experiment, generator_lr_scale, double));
        t.emplace_back("optimizer.statistic_lr_scale", DADA_NUMBER(experiment, statistic_lr_scale, double));
        t.emplace_back("optimizer.per_substep", DADA_BOOL(experiment, optimizer_per_substep));

        t.emplace_back("weights.cross_entropy", DADA_NUMBER(experiment.weights, cross_entropy, double));
        t.emplace_back("weights.entropy", DADA_NUMBER(experiment.weights, entropy, double));
        t.emplace_back("weights.domain", DADA_NUMBER(experiment.weights, domain, double));
        t.emplace_back("weights.mutual_information", DADA_NUMBER(experiment.weights, mutual_information, double));
        t.emplace_back("weights.reconstruction", DADA_NUMBER(experiment.weights, reconstruction, double));
        t.emplace_back("weights.ring", DADA_NUMBER(experiment.weights, ring, double));

        t.emplace_back("ring.beta", DADA_NUMBER(experiment, ring_beta, double));
        t.emplace_back("ring.geman_mcclure", DADA_BOOL(experiment, ring_geman_mcclure));

        t.emplace_back("mine.ema_decay", DADA_NUMBER(experiment, ema_decay, double));
        t.emplace_back("mine.bias_correction", DADA_BOOL(experiment, mi_bias_correction));

        t.emplace_back("eval.a_distance_seed", DADA_NUMBER(eval, a_distance_seed, std::uint64_t));
        t.emplace_back("eval.a_distance_l2", DADA_NUMBER(eval, a_distance_l2, double));
        t.emplace_back("eval.a_distance_iterations", DADA_NUMBER(eval, a_distance_iterations, int));
        t.emplace_back("eval.checkpoint_every", DADA_NUMBER(eval, checkpoint_every, int));

        t.emplace_back("ablate.seeds", DADA_NUMBER(ablate, seeds, int));
        t.emplace_back("ablate.levels", Field{[](const RunConfig& c) {
                                                  std::string out;
                                                  for (AblationLevel l : c.ablate.levels)
                                                      out += (out.empty() ? "" : ",") + level_name(l);
                                                  return out;
                                              },
                                              [](RunConfig& c, const std::string& k, const std::string& v) {
                                                  c.ablate.levels.clear();
                                                  for (const auto& name : split_list(v))
                                                      c.ablate.levels.push_back(parse_level(name));
                                                  if (c.ablate.levels.empty()) bad_value(k, v, "a list of levels");
                                              }});
        return t;
    }();
    return table;
}

#undef DADA_NUMBER
#undef DADA_BOOL

const Field& field(const std::string& key) {
    for (const auto& [name, f] : fields())
        if (name == key) return f;
    throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, f] : fields()) k.push_back(name);
        return k;
    }();
    return keys;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
    field(key).set(config, key, trim(value));
}

std::string get_config_value(const RunConfig& config, const std::string& key) { return field(key).get(config); }

void apply_override(RunConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + assignment + "' must look like section.key=value");
    set_config_value(config, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

RunConfig parse_run_config(const std::string& ini_text, RunConfig base) {
    boost::property_tree::ptree tree;
    std::istringstream in(ini_text);
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError("malformed config: " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    for (const auto& [section, entries] : tree) {
        if (entries.empty() && !entries.data().empty())
            throw ConfigError("config key '" + section + "' must sit inside a [section]");
        for (const auto& [name, value] : entries) set_config_value(base, section + "." + name, value.data());
    }
    return base;
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides,
                          const std::optional<std::string>& env_seed) {
    RunConfig config;
    if (path) {
        std::ifstream in(*path);
        if (!in) throw ConfigError("cannot read config file " + path->string());
        std::stringstream text;
        text << in.rdbuf();
        config = parse_run_config(text.str(), config);
    }
    if (env_seed && !env_seed->empty()) set_config_value(config, "train.seed", *env_seed);
    for (const auto& o : overrides) apply_override(config, o);
    config.sync();
    config.experiment.validate();
    return config;
}

std::string to_ini(const RunConfig& config) {
    std::ostringstream out;
    std::string section;
    for (const auto& [key, f] : fields()) {
        const auto dot = key.find('.');
        const std::string s = key.substr(0, dot);
        if (s != section) {
            out << (section.empty() ? "" : "\n") << '[' << s << "]\n";
            section = s;
        }
        out << key.substr(dot + 1) << " = " << f.get(config) << '\n';
    }
    return out.str();
}

}  // namespace dada
