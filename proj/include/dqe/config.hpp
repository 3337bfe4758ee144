#pragma once

// Flat JSON run configuration. Every key maps to one field; unknown keys and
// out-of-range values are rejected before any work starts.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dqe/error.hpp"
#include "dqe/train.hpp"

namespace dqe {

enum class KeyType { integer, unsigned_integer, real, boolean, text };

struct ConfigKey {
    const char* name;
    KeyType type;
};

inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys{
        {"total_epochs", KeyType::integer},      {"batch_size", KeyType::integer},
        {"seed", KeyType::unsigned_integer},     {"warmup_epochs", KeyType::integer},
        {"num_intervals", KeyType::integer},     {"tau", KeyType::real},
        {"margin_main", KeyType::real},          {"margin_color", KeyType::real},
        {"margin_shape", KeyType::real},         {"lambda_rank", KeyType::real},
        {"midzone_mode", KeyType::text},         {"alpha", KeyType::real},
        {"beta", KeyType::real},                 {"lr_base", KeyType::real},
        {"weight_decay", KeyType::real},         {"beta1", KeyType::real},
        {"beta2", KeyType::real},                {"epsilon", KeyType::real},
        {"init_scale", KeyType::real},           {"init_rho", KeyType::real},
        {"freeze_sample", KeyType::boolean},     {"kl_scope", KeyType::text},
        {"threads", KeyType::integer},           {"stop_after_epoch", KeyType::integer},
        {"normalize", KeyType::boolean},         {"exclude_reference", KeyType::boolean},
        {"manifest", KeyType::text},             {"out_dir", KeyType::text},
        {"resume", KeyType::text},
    };
    return keys;
}

struct RunConfig {
    TrainConfig train;
    bool normalize = true;
    bool exclude_reference = true;
    std::string manifest;
    std::string out_dir = ".";
    std::string resume;
};

inline BandMode parse_band_mode(const std::string& s) {
    if (s == "quantile") return BandMode::quantile;
    if (s == "absolute") return BandMode::absolute;
    throw Error(Errc::InvalidConfig, "midzone_mode must be quantile or absolute", s);
}

inline KlScope parse_kl_scope(const std::string& s) {
    if (s == "full_corpus") return KlScope::full_corpus;
    if (s == "in_batch") return KlScope::in_batch;
    throw Error(Errc::InvalidConfig, "kl_scope must be full_corpus or in_batch", s);
}

/// Coerces a flag string into the JSON type a key expects.
inline nlohmann::json coerce_value(const ConfigKey& key, const std::string& text) {
    try {
        std::size_t used = 0;
        switch (key.type) {
            case KeyType::integer: {
                const long long v = std::stoll(text, &used);
                if (used != text.size()) break;
                return v;
            }
            case KeyType::unsigned_integer: {
                if (!text.empty() && text[0] == '-') break;
                const unsigned long long v = std::stoull(text, &used);
                if (used != text.size()) break;
                return v;
            }
            case KeyType::real: {
                const double v = std::stod(text, &used);
                if (used != text.size()) break;
                return v;
            }
            case KeyType::boolean:
                if (text == "true" || text == "1") return true;
                if (text == "false" || text == "0") return false;
                break;
            case KeyType::text: return text;
        }
    } catch (const std::exception&) {
    }
    throw Error(Errc::InvalidConfig, "cannot parse value '" + text + "'", key.name);
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(Errc::InvalidConfig, "config must be a JSON object");
    const auto& keys = config_keys();
    for (const auto& [name, value] : j.items()) {
        auto it = std::find_if(keys.begin(), keys.end(), [&](const ConfigKey& k) { return name == k.name; });
        if (it == keys.end()) throw Error(Errc::InvalidConfig, "unknown config key", name);
        const bool ok = (it->type == KeyType::integer && value.is_number_integer()) ||
                        (it->type == KeyType::unsigned_integer && value.is_number_integer() &&
                         (value.is_number_unsigned() || value.get<long long>() >= 0)) ||
                        (it->type == KeyType::real && value.is_number()) ||
                        (it->type == KeyType::boolean && value.is_boolean()) ||
                        (it->type == KeyType::text && value.is_string());
        if (!ok) throw Error(Errc::InvalidConfig, "wrong value type", name);
    }

    RunConfig rc;
    auto& t = rc.train;
    auto int_of = [&](const char* k, int& dst) {
        if (j.contains(k)) {
            const auto v = j.at(k).get<long long>();
            if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
                throw Error(Errc::InvalidConfig, "integer out of range", k);
            dst = static_cast<int>(v);
        }
    };
    auto real_of = [&](const char* k, double& dst) {
        if (j.contains(k)) dst = j.at(k).get<double>();
    };
    auto bool_of = [&](const char* k, bool& dst) {
        if (j.contains(k)) dst = j.at(k).get<bool>();
    };
    auto text_of = [&](const char* k, std::string& dst) {
        if (j.contains(k)) dst = j.at(k).get<std::string>();
    };

    int_of("total_epochs", t.total_epochs);
    int_of("batch_size", t.batch_size);
    if (j.contains("seed")) t.seed = j.at("seed").get<std::uint64_t>();
    int_of("warmup_epochs", t.schedule.warmup_epochs);
    int_of("num_intervals", t.schedule.num_intervals);
    t.schedule.total_epochs = t.total_epochs;
    real_of("tau", t.loss.tau);
    real_of("margin_main", t.loss.margin_main);
    real_of("margin_color", t.loss.margin_color);
    real_of("margin_shape", t.loss.margin_shape);
    real_of("lambda_rank", t.loss.lambda_rank);
    if (j.contains("midzone_mode")) t.midzone.mode = parse_band_mode(j.at("midzone_mode").get<std::string>());
    real_of("alpha", t.midzone.alpha);
    real_of("beta", t.midzone.beta);
    real_of("lr_base", t.lr_base);
    real_of("weight_decay", t.weight_decay);
    real_of("beta1", t.beta1);
    real_of("beta2", t.beta2);
    real_of("epsilon", t.epsilon);
    real_of("init_scale", t.init_scale);
    real_of("init_rho", t.init_rho);
    bool_of("freeze_sample", t.freeze_sample);
    if (j.contains("kl_scope")) t.kl_scope = parse_kl_scope(j.at("kl_scope").get<std::string>());
    int threads = static_cast<int>(default_threads());
    int_of("threads", threads);
    if (threads < 1) throw Error(Errc::InvalidConfig, "threads must be >= 1");
    t.threads = static_cast<unsigned>(threads);
    int_of("stop_after_epoch", t.stop_after_epoch);
    bool_of("normalize", rc.normalize);
    bool_of("exclude_reference", rc.exclude_reference);
    text_of("manifest", rc.manifest);
    text_of("out_dir", rc.out_dir);
    text_of("resume", rc.resume);

    t.validate();
    return rc;
}

inline nlohmann::json read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::InvalidConfig, "cannot open config file", path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::InvalidConfig, e.what(), path);
    }
}

}  // namespace dqe
