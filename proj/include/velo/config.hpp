#ifndef VELO_CONFIG_HPP
#define VELO_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "velo/models.hpp"
#include "velo/preprocess.hpp"

namespace velo {

/**
 * Flat `key = value` configuration. Blank lines and lines starting with `#`
 * are ignored; later assignments win. Keys are kept sorted so that the echo
 * written to run_meta is stable.
 */
class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text, const std::string& source = "config");
    static KeyValueConfig load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;
    std::optional<std::string> get(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long get_int(const std::string& key, long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }
    /// `key = value` lines in key order.
    std::string dump() const;

private:
    std::map<std::string, std::string> entries_;
};

struct RunConfig {
    std::filesystem::path unspliced;
    std::filesystem::path spliced;
    std::string format = "csv";
    std::filesystem::path annotations;
    std::filesystem::path input_dir;
    std::filesystem::path out_dir;
    std::filesystem::path model_path;
    ModelKind model = ModelKind::full;
    std::uint64_t seed = 0;
    bool seed_given = false;
    TrainConfig train;
    PreprocessOptions preprocess;
    bool use_capture_prior = false;
    std::string preset = "S1";
    std::vector<std::string> plot_genes;

    /// Builds a RunConfig; throws InputError on unknown keys or malformed values.
    static RunConfig from(const KeyValueConfig& kv);
};

/// Keys accepted by RunConfig::from.
const std::vector<std::string>& known_config_keys();

}  // namespace velo

#endif
