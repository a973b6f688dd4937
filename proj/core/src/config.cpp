#include "kvq/config.hpp"

#include <charconv>
#include <sstream>
#include <vector>

#include "kvq/wire.hpp"

namespace kvq {

namespace {

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    raise(ErrorKind::config, key + ": expected true/false, got '" + value + "'");
}

double parse_double(const std::string& key, const std::string& value) {
    double out = 0.0;
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc{} || ptr != end)
        raise(ErrorKind::config, key + ": expected a number, got '" + value + "'");
    return out;
}

std::size_t parse_count(const std::string& key, const std::string& value) {
    std::size_t out = 0;
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc{} || ptr != end)
        raise(ErrorKind::config, key + ": expected a nonnegative integer, got '" + value + "'");
    return out;
}

std::string trim(std::string_view sv) {
    const char* ws = " \t\r";
    const auto a = sv.find_first_not_of(ws);
    if (a == std::string_view::npos) return {};
    const auto b = sv.find_last_not_of(ws);
    return std::string(sv.substr(a, b - a + 1));
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace

void apply_config_kv(QuantConfig& config, const std::string& key, const std::string& value) {
    if (key == "enabled") config.enabled = parse_bool(key, value);
    else if (key == "key_k") config.key_k = parse_double(key, value);
    else if (key == "key_metric") config.key_metric = channel_metric_from_string(value);
    else if (key == "key_M") config.key_M = parse_double(key, value);
    else if (key == "fft_mode") config.fft_mode = fft_mode_from_string(value);
    else if (key == "value_mode") config.value_mode = value_mode_from_string(value);
    else if (key == "gamma") config.gamma = parse_double(key, value);
    else if (key == "p") config.p = parse_double(key, value);
    else if (key == "G") config.G = parse_count(key, value);
    else if (key == "R") config.R = parse_count(key, value);
    else if (key == "key_requant") config.key_requant = key_requant_from_string(value);
    else if (key == "ternary_fastpath") config.ternary_fastpath = parse_bool(key, value);
    else if (key == "allow_experimental") config.allow_experimental = parse_bool(key, value);
    else raise(ErrorKind::config, "unknown config key: " + key);
}

QuantConfig parse_config_text(std::string_view text) {
    QuantConfig config;
    std::vector<std::string> unknown;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view raw =
            text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;

        std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            raise(ErrorKind::config,
                  "line " + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        try {
            apply_config_kv(config, key, value);
        } catch (const Error& e) {
            if (std::string(e.what()).starts_with("unknown config key")) {
                unknown.push_back(key);
                continue;
            }
            throw;
        }
    }
    if (!unknown.empty()) {
        std::string joined;
        for (const auto& k : unknown) joined += (joined.empty() ? "" : ", ") + k;
        raise(ErrorKind::config, "unknown config keys: " + joined);
    }
    config.validate();
    return config;
}

QuantConfig parse_config_file(const std::string& path) {
    const auto bytes = wire::read_file(path);
    return parse_config_text(std::string_view(reinterpret_cast<const char*>(bytes.data()),
                                              bytes.size()));
}

std::string config_to_text(const QuantConfig& config) {
    std::ostringstream out;
    out << "enabled = " << (config.enabled ? "true" : "false") << "\n";
    out << "key_k = " << format_double(config.key_k) << "\n";
    out << "key_metric = " << to_string(config.key_metric) << "\n";
    out << "key_M = " << format_double(config.key_M) << "\n";
    out << "fft_mode = " << to_string(config.fft_mode) << "\n";
    out << "value_mode = " << to_string(config.value_mode) << "\n";
    out << "gamma = " << format_double(config.gamma) << "\n";
    out << "p = " << format_double(config.p) << "\n";
    out << "G = " << config.G << "\n";
    out << "R = " << config.R << "\n";
    out << "key_requant = " << to_string(config.key_requant) << "\n";
    out << "ternary_fastpath = " << (config.ternary_fastpath ? "true" : "false") << "\n";
    out << "allow_experimental = " << (config.allow_experimental ? "true" : "false") << "\n";
    return out.str();
}

}  // namespace kvq
