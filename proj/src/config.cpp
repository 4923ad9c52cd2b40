#include "dgrl/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "dgrl/errors.hpp"

namespace dgrl {

namespace {

namespace pt = boost::property_tree;

const std::map<std::string, std::set<std::string>>& known_keys() {
    static const std::map<std::string, std::set<std::string>> keys = {
        {"data", {"source", "dir", "train_subset", "test_subset", "synthetic_train", "synthetic_test", "augment"}},
        {"network", {"preset", "shortcuts", "spec_file"}},
        {"train",
         {"batch_size", "lr", "schedule", "epochs", "finetune_epochs", "optimizer", "momentum", "weight_decay", "seed",
          "backend", "max_steps"}},
        {"distill", {"alpha", "pairs"}},
        {"compress", {"strategy", "epsilon", "seed", "sparsify_threshold"}},
    };
    return keys;
}

std::string num(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw ConfigError("config key " + key + ": '" + text + "' is not a valid number");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ConfigError("config key " + key + ": '" + text + "' is not a boolean");
}

std::vector<std::pair<int, int>> parse_pairs(const std::string& text) {
    std::vector<std::pair<int, int>> out;
    for (const auto& [a, b] : LrSchedule::parse_points(text)) {
        if (b != static_cast<int>(b)) throw ConfigError("distill pairs must be integer teacher:student entries");
        out.emplace_back(a, static_cast<int>(b));
    }
    return out;
}

std::string pairs_str(const std::vector<std::pair<int, int>>& pairs) {
    std::ostringstream os;
    for (std::size_t i = 0; i < pairs.size(); ++i) os << (i ? "," : "") << pairs[i].first << ':' << pairs[i].second;
    return os.str();
}

std::string schedule_str(const std::vector<std::pair<int, double>>& points) {
    std::ostringstream os;
    for (std::size_t i = 0; i < points.size(); ++i) os << (i ? "," : "") << points[i].first << ':' << num(points[i].second);
    return os.str();
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    RunConfig c;
    for (const auto& [section, body] : tree) {
        const auto known = known_keys().find(section);
        if (known == known_keys().end()) {
            if (body.empty()) throw ConfigError("config key '" + section + "' outside any section");
            throw ConfigError("unknown config section [" + section + "]");
        }
        for (const auto& [key, node] : body) {
            if (!known->second.count(key)) throw ConfigError("unknown config key " + section + "." + key);
            const std::string v = node.get_value<std::string>();
            const std::string k = section + "." + key;
            if (section == "data") {
                if (key == "source") {
                    if (v != "synthetic" && v != "cifar10") throw ConfigError("config key data.source: '" + v + "' is not synthetic or cifar10");
                    c.data.source = v;
                } else if (key == "dir") c.data.dir = v;
                else if (key == "train_subset") c.data.train_subset = parse_number<std::size_t>(k, v);
                else if (key == "test_subset") c.data.test_subset = parse_number<std::size_t>(k, v);
                else if (key == "synthetic_train") c.data.synthetic_train = parse_number<std::size_t>(k, v);
                else if (key == "synthetic_test") c.data.synthetic_test = parse_number<std::size_t>(k, v);
                else if (key == "augment") c.data.augment = parse_bool(k, v);
            } else if (section == "network") {
                if (key == "preset") c.network.preset = v;
                else if (key == "shortcuts") c.network.shortcuts = parse_number<int>(k, v);
                else if (key == "spec_file") c.network.spec_file = v;
            } else if (section == "train") {
                if (key == "batch_size") c.train.batch_size = parse_number<std::size_t>(k, v);
                else if (key == "lr") c.train.lr = parse_number<double>(k, v);
                else if (key == "schedule") c.train.schedule = LrSchedule::parse_points(v);
                else if (key == "epochs") c.train.epochs = parse_number<int>(k, v);
                else if (key == "finetune_epochs") c.train.finetune_epochs = parse_number<int>(k, v);
                else if (key == "optimizer") c.train.optimizer = optimizer_kind_from_string(v);
                else if (key == "momentum") c.train.momentum = parse_number<double>(k, v);
                else if (key == "weight_decay") c.train.weight_decay = parse_number<double>(k, v);
                else if (key == "seed") c.train.seed = parse_number<std::uint64_t>(k, v);
                else if (key == "backend") c.train.backend = binary_backend_from_string(v);
                else if (key == "max_steps") c.train.max_steps = parse_number<std::int64_t>(k, v);
            } else if (section == "distill") {
                if (key == "alpha") c.distill.alpha = parse_number<double>(k, v);
                else if (key == "pairs") c.distill.pairs = parse_pairs(v);
            } else if (section == "compress") {
                if (key == "strategy") c.compress.strategy = selection_strategy_from_string(v);
                else if (key == "epsilon") c.compress.epsilon = parse_number<double>(k, v);
                else if (key == "seed") c.compress.seed = parse_number<std::uint64_t>(k, v);
                else if (key == "sparsify_threshold") {
                    if (v == "auto") c.compress.sparsify_threshold.reset();
                    else c.compress.sparsify_threshold = parse_number<double>(k, v);
                }
            }
        }
    }
    if (c.network.shortcuts < 0) throw ConfigError("network.shortcuts must be >= 0");
    if (c.train.epochs < 0 || c.train.finetune_epochs < 0) throw ConfigError("epochs must be >= 0");
    if (c.train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (c.distill.alpha < 0.0) throw ConfigError("distill.alpha must be >= 0");
    if (c.compress.epsilon < 0.0 || c.compress.epsilon > 1.0) throw ConfigError("compress.epsilon must lie in [0, 1]");
    LrSchedule{c.train.lr, c.train.schedule}.validate(c.train.epochs);
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& c) {
    std::ostringstream os;
    os << "[data]\n"
       << "source = " << c.data.source << '\n'
       << "dir = " << c.data.dir << '\n'
       << "train_subset = " << c.data.train_subset << '\n'
       << "test_subset = " << c.data.test_subset << '\n'
       << "synthetic_train = " << c.data.synthetic_train << '\n'
       << "synthetic_test = " << c.data.synthetic_test << '\n'
       << "augment = " << (c.data.augment ? "true" : "false") << "\n\n"
       << "[network]\n"
       << "preset = " << c.network.preset << '\n'
       << "shortcuts = " << c.network.shortcuts << '\n'
       << "spec_file = " << c.network.spec_file << "\n\n"
       << "[train]\n"
       << "batch_size = " << c.train.batch_size << '\n'
       << "lr = " << num(c.train.lr) << '\n'
       << "schedule = " << schedule_str(c.train.schedule) << '\n'
       << "epochs = " << c.train.epochs << '\n'
       << "finetune_epochs = " << c.train.finetune_epochs << '\n'
       << "optimizer = " << to_string(c.train.optimizer) << '\n'
       << "momentum = " << num(c.train.momentum) << '\n'
       << "weight_decay = " << num(c.train.weight_decay) << '\n'
       << "seed = " << c.train.seed << '\n'
       << "backend = " << to_string(c.train.backend) << '\n'
       << "max_steps = " << c.train.max_steps << "\n\n"
       << "[distill]\n"
       << "alpha = " << num(c.distill.alpha) << '\n'
       << "pairs = " << pairs_str(c.distill.pairs) << "\n\n"
       << "[compress]\n"
       << "strategy = " << to_string(c.compress.strategy) << '\n'
       << "epsilon = " << num(c.compress.epsilon) << '\n'
       << "seed = " << c.compress.seed << '\n'
       << "sparsify_threshold = " << (c.compress.sparsify_threshold ? num(*c.compress.sparsify_threshold) : "auto")
       << '\n';
    return os.str();
}

NetworkSpec network_spec(const RunConfig& c) {
    if (!c.network.spec_file.empty()) {
        std::ifstream in(c.network.spec_file);
        if (!in) throw ConfigError("cannot read network spec " + c.network.spec_file);
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_network_spec(ss.str()).with_shortcuts(c.network.shortcuts);
    }
    return presets::by_name(c.network.preset, c.network.shortcuts);
}

TrainConfig train_config(const RunConfig& c, Phase phase) {
    TrainConfig t;
    t.batch_size = c.train.batch_size;
    t.epochs = phase == Phase::finetune ? c.train.finetune_epochs : c.train.epochs;
    t.schedule.base = c.train.lr;
    for (const auto& p : c.train.schedule)
        if (p.first < t.epochs) t.schedule.points.push_back(p);
    t.optimizer.kind = c.train.optimizer;
    t.optimizer.momentum = c.train.momentum;
    t.optimizer.weight_decay = c.train.weight_decay;
    t.distill.alpha = static_cast<float>(c.distill.alpha);
    t.distill.pairs = c.distill.pairs;
    t.seed = c.train.seed;
    t.phase = phase;
    t.augment = c.data.augment;
    t.backend = c.train.backend;
    t.max_steps = c.train.max_steps;
    t.validate();
    return t;
}

SelectionPolicy selection_policy(const RunConfig& c) {
    return {c.compress.strategy, c.compress.epsilon, c.compress.seed};
}

namespace {

Dataset load_split(const RunConfig& c, const NetworkSpec& spec, bool train) {
    if (c.data.source == "cifar10") {
        if (c.data.dir.empty()) throw DataError("data.dir is required for cifar10");
        if (spec.in_channels != 3 || spec.in_height != kCifarExtent || spec.in_width != kCifarExtent ||
            spec.head.classes != 10) {
            throw ConfigError("network '" + spec.name + "' does not take 32x32x3 inputs with 10 classes");
        }
        return load_cifar10(c.data.dir, train ? Split::train : Split::test)
            .head(train ? c.data.train_subset : c.data.test_subset);
    }
    if (spec.in_height != spec.in_width) throw ConfigError("synthetic data needs square inputs");
    Dataset d = make_synthetic(train ? c.data.synthetic_train : c.data.synthetic_test, spec.head.classes,
                               spec.in_channels, spec.in_height, c.train.seed, train ? 0 : 1);
    return d.head(train ? c.data.train_subset : c.data.test_subset);
}

}  // namespace

Dataset load_train_data(const RunConfig& c, const NetworkSpec& spec) { return load_split(c, spec, true); }
Dataset load_test_data(const RunConfig& c, const NetworkSpec& spec) { return load_split(c, spec, false); }

}  // namespace dgrl
