#include "velo/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "velo/error.hpp"
#include "velo/io.hpp"

namespace velo {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& source) {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') {
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw InputError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(t.substr(0, eq));
        if (key.empty()) {
            throw InputError(source + ":" + std::to_string(line_no) + ": empty key");
        }
        cfg.set(key, trim(t.substr(eq + 1)));
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open config '" + path.string() + "'");
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
}

void KeyValueConfig::set(const std::string& key, const std::string& value) { entries_[key] = value; }

bool KeyValueConfig::has(const std::string& key) const { return entries_.count(key) != 0; }

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    const auto v = get(key);
    return v ? parse_double(*v, "config key '" + key + "'") : fallback;
}

long KeyValueConfig::get_int(const std::string& key, long fallback) const {
    const auto v = get(key);
    if (!v) {
        return fallback;
    }
    std::size_t used = 0;
    long out = 0;
    try {
        out = std::stol(*v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v->size()) {
        throw InputError("config key '" + key + "': '" + *v + "' is not an integer");
    }
    return out;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
    const auto v = get(key);
    if (!v) {
        return fallback;
    }
    if (*v == "1" || *v == "true" || *v == "on" || *v == "yes") {
        return true;
    }
    if (*v == "0" || *v == "false" || *v == "off" || *v == "no") {
        return false;
    }
    throw InputError("config key '" + key + "': '" + *v + "' is not a boolean");
}

std::vector<int> KeyValueConfig::get_int_list(const std::string& key, const std::vector<int>& fallback) const {
    const auto v = get(key);
    if (!v) {
        return fallback;
    }
    std::vector<int> out;
    for (const auto& item : split_list(*v)) {
        KeyValueConfig one;
        one.set(key, item);
        out.push_back(static_cast<int>(one.get_int(key, 0)));
    }
    return out;
}

std::string KeyValueConfig::dump() const {
    std::string out;
    for (const auto& [k, v] : entries_) {
        out += k + " = " + v + "\n";
    }
    return out;
}

const std::vector<std::string>& known_config_keys() {
    static const std::vector<std::string> keys{
        "annotations",   "batch_size",       "capture_prior",  "decoder_hidden", "delta1",
        "delta2",        "dropout",          "encoder_hidden", "epochs",         "format",
        "genes",         "input",            "k_neighbors",    "kl_warmup",      "latent_dim",
        "learning_rate", "model",            "model_path",     "n_pcs",          "n_top_genes",
        "normalize",     "ode_learning_rate", "out",           "preset",         "refine_epochs",
        "seed",          "spliced",          "t_max",          "train_fraction", "unspliced",
    };
    return keys;
}

RunConfig RunConfig::from(const KeyValueConfig& kv) {
    const auto& known = known_config_keys();
    for (const auto& [k, v] : kv.entries()) {
        if (std::find(known.begin(), known.end(), k) == known.end()) {
            throw InputError("unknown config key '" + k + "'");
        }
    }
    RunConfig rc;
    rc.unspliced = kv.get_string("unspliced", "");
    rc.spliced = kv.get_string("spliced", "");
    rc.format = kv.get_string("format", "csv");
    parse_matrix_format(rc.format);
    rc.annotations = kv.get_string("annotations", "");
    rc.input_dir = kv.get_string("input", "");
    rc.out_dir = kv.get_string("out", "");
    rc.model_path = kv.get_string("model_path", "");
    rc.model = parse_model_kind(kv.get_string("model", "full"));
    if (kv.has("seed")) {
        const long seed = kv.get_int("seed", 0);
        if (seed < 0) {
            throw InputError("config key 'seed' must be non-negative");
        }
        rc.seed = static_cast<std::uint64_t>(seed);
        rc.seed_given = true;
    }
    auto& t = rc.train;
    t.seed = rc.seed;
    t.learning_rate = kv.get_double("learning_rate", t.learning_rate);
    t.ode_learning_rate = kv.get_double("ode_learning_rate", t.ode_learning_rate);
    t.batch_size = static_cast<int>(kv.get_int("batch_size", t.batch_size));
    t.train_fraction = kv.get_double("train_fraction", t.train_fraction);
    t.latent_dim = static_cast<int>(kv.get_int("latent_dim", t.latent_dim));
    t.epochs = static_cast<int>(kv.get_int("epochs", t.epochs));
    t.t_max = kv.get_double("t_max", t.t_max);
    t.delta1 = kv.get_double("delta1", t.delta1);
    t.delta2 = kv.get_double("delta2", t.delta2);
    t.refine_epochs = static_cast<int>(kv.get_int("refine_epochs", t.refine_epochs));
    t.kl_warmup_fraction = kv.get_double("kl_warmup", t.kl_warmup_fraction);
    t.dropout = kv.get_double("dropout", t.dropout);
    t.encoder_hidden = kv.get_int_list("encoder_hidden", t.encoder_hidden);
    t.decoder_hidden = kv.get_int_list("decoder_hidden", t.decoder_hidden);
    t.validate();

    auto& p = rc.preprocess;
    p.normalize = kv.get_bool("normalize", p.normalize);
    p.n_top_genes = static_cast<int>(kv.get_int("n_top_genes", p.n_top_genes));
    p.k_neighbors = static_cast<int>(kv.get_int("k_neighbors", p.k_neighbors));
    p.n_pcs = static_cast<int>(kv.get_int("n_pcs", p.n_pcs));

    rc.use_capture_prior = kv.get_bool("capture_prior", false);
    rc.preset = kv.get_string("preset", "S1");
    rc.plot_genes = split_list(kv.get_string("genes", ""));
    return rc;
}

}  // namespace velo
