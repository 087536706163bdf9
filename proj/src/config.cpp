#include "dclseg/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "dclseg/errors.hpp"

namespace dclseg {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end || text.empty())
        throw ValidationError("config key " + key + ": cannot parse '" + text + "'");
    return value;
}

}  // namespace

Config Config::defaults() {
    Config c;
    c.values_ = {
        {"model.preset", "tiny-cnn"},
        {"model.embed_dim", "32"},
        {"model.feature_stride", "auto"},
        {"model.global_hidden", "64"},
        {"model.seed", "1"},
        {"decoder.stages", "auto"},
        {"decoder.channels", "auto"},
        {"decoder.seed1", "11"},
        {"decoder.seed2", "23"},
        {"decoder.mode1", "transposed-conv"},
        {"decoder.mode2", "bilinear"},
        {"loss.kind", "local"},
        {"loss.temperature", "0.1"},
        {"loss.negative_subsample", "none"},
        {"loss.symmetric", "false"},
        {"aug.flip_p", "0.5"},
        {"aug.rotate_p", "0.25"},
        {"aug.max_translate_cells", "1"},
        {"aug.crop_scale_min", "0.5"},
        {"aug.intensity_jitter", "0.1"},
        {"aug.noise_std", "0.05"},
        {"pretrain.learning_rate", "1e-5"},
        {"pretrain.batch_size", "8"},
        {"pretrain.epochs", "50"},
        {"pretrain.steps", "0"},
        {"pretrain.schedule", "constant"},
        {"pretrain.checkpoint_every", "0"},
        {"finetune.learning_rate", "1e-5"},
        {"finetune.batch_size", "8"},
        {"finetune.epochs", "50"},
        {"finetune.steps", "0"},
        {"finetune.schedule", "constant"},
        {"finetune.checkpoint_every", "0"},
        {"finetune.labeled_fraction", "0.1"},
        {"finetune.threshold", "0.5"},
        {"finetune.encoder_mode", "shared"},
        {"data.test_fraction", "0.2"},
        {"data.val_fraction", "0.1"},
        {"eval.hd_percentile", "100"},
        {"run.seed", "0"},
    };
    return c;
}

void Config::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
    it->second = trim(value);
}

const std::string& Config::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
    return it->second;
}

double Config::get_double(const std::string& key) const {
    const std::string& text = get(key);
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || text.empty()) throw ValidationError("config key " + key + ": cannot parse '" + text + "'");
    return v;
}

std::size_t Config::get_size(const std::string& key) const { return parse_number<std::size_t>(key, get(key)); }

std::uint64_t Config::get_u64(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }

bool Config::get_bool(const std::string& key) const {
    const std::string& text = get(key);
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ValidationError("config key " + key + ": expected true/false, got '" + text + "'");
}

std::optional<std::size_t> Config::get_optional_size(const std::string& key) const {
    if (get(key) == "none") return std::nullopt;
    return get_size(key);
}

std::vector<std::size_t> Config::get_size_list(const std::string& key) const {
    std::vector<std::size_t> out;
    std::istringstream in(get(key));
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(parse_number<std::size_t>(key, trim(item)));
    if (out.empty()) throw ValidationError("config key " + key + ": empty list");
    return out;
}

void Config::load_text(const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError(source + ":" + std::to_string(lineno) + ": expected 'section.key = value'");
        const std::string key = trim(line.substr(0, eq));
        if (!values_.count(key))
            throw ValidationError(source + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
        set(key, line.substr(eq + 1));
    }
}

void Config::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    load_text(text.str(), path.string());
}

void Config::merge_known(const std::map<std::string, std::string>& values) {
    for (const auto& [k, v] : values)
        if (values_.count(k)) values_[k] = v;
}

std::string Config::dump() const {
    std::ostringstream out;
    std::string section;
    for (const auto& [k, v] : values_) {
        const std::string s = k.substr(0, k.find('.'));
        if (s != section) {
            if (!section.empty()) out << '\n';
            out << "# " << s << '\n';
            section = s;
        }
        out << k << " = " << v << '\n';
    }
    return out.str();
}

}  // namespace dclseg
