#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedfluence/data.hpp"
#include "fedfluence/errors.hpp"
#include "fedfluence/fedavg.hpp"
#include "fedfluence/metrics.hpp"
#include "fedfluence/model.hpp"

namespace fedfluence {

enum class ExperimentKind { fip_error, fil_correlation, valuation, cleansing, diagnostics };
enum class CleansingStrategy { lowest, highest, random, all };

struct DataConfig {
    enum class Source { synth, file };
    Source source = Source::synth;
    int input_dim = 0;
    int classes = 0;
    DataSkew skew = DataSkew::noniid_unbalanced;
    std::uint64_t data_seed = 0;
    SynthOptions synth;
    std::string path;
    DataFormat format = DataFormat::csv;
};

// Everything a run needs, mirrored one-to-one by the `key = value` sections
// of a config file. Unknown keys are rejected on parse.
struct ExperimentConfig {
    // [model]
    ModelKind model_kind = ModelKind::logistic_regression;
    std::vector<int> hidden;
    Activation activation = Activation::identity;

    // [data]
    DataConfig data;

    // [federation]
    FederationConfig fed;
    bool mode_auto = true;
    bool hessian_auto = true;

    // [experiment]
    std::string name;
    ExperimentKind kind = ExperimentKind::fil_correlation;
    std::vector<int> evaluation_rounds; // empty = auto
    int oracle_cap = -1;                // -1 = default rule
    std::uint64_t experiment_seed = 0;
    bool self_test = false;
    int cleansing_round = -1;
    double cleansing_fraction = 0.2;
    CleansingStrategy cleansing_strategy = CleansingStrategy::all;
    ValueMetric cleansing_metric = ValueMetric::fil;
    std::vector<double> fraction_sweep{0.1, 0.2, 0.3};
    int repeats = 5;
    std::string output;
    int workers = 1;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') { out.push_back(trim(cur)); cur.clear(); }
        else cur.push_back(ch);
    }
    const auto last = trim(cur);
    if (!last.empty()) out.push_back(last);
    return out;
}

struct ConfigEntry {
    std::string value;
    int line = 0;
};

class ConfigReader {
public:
    void insert(const std::string& section, const std::string& key, const std::string& value,
                int line) {
        const std::string full = section + "." + key;
        if (entries_.count(full))
            throw ConfigError("config: duplicate key " + full + " at line " +
                              std::to_string(line));
        entries_[full] = {value, line};
    }

    bool has(const std::string& full) const { return entries_.count(full) > 0; }

    std::string take(const std::string& full, const std::string& fallback) {
        auto it = entries_.find(full);
        if (it == entries_.end()) return fallback;
        consumed_.insert(full);
        return it->second.value;
    }

    std::string take_required(const std::string& full) {
        auto it = entries_.find(full);
        if (it == entries_.end())
            throw ConfigError("config: missing required key " + full);
        consumed_.insert(full);
        return it->second.value;
    }

    void finish() const {
        for (const auto& [full, entry] : entries_)
            if (!consumed_.count(full))
                throw ConfigError("config: unknown key " + full + " at line " +
                                  std::to_string(entry.line));
    }

private:
    std::map<std::string, ConfigEntry> entries_;
    std::set<std::string> consumed_;
};

inline long long parse_int(const std::string& full, const std::string& raw) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument(raw);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: key " + full + " expects an integer, got '" + raw + "'");
    }
}

inline double parse_double(const std::string& full, const std::string& raw) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument(raw);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: key " + full + " expects a number, got '" + raw + "'");
    }
}

inline bool parse_bool(const std::string& full, const std::string& raw) {
    if (raw == "true" || raw == "1" || raw == "yes") return true;
    if (raw == "false" || raw == "0" || raw == "no") return false;
    throw ConfigError("config: key " + full + " expects true/false, got '" + raw + "'");
}

} // namespace detail

inline ExperimentConfig parse_experiment_config(const std::string& text) {
    detail::ConfigReader reader;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;
    static const std::set<std::string> known_sections{"model", "data", "federation",
                                                      "experiment"};
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError("config: malformed section header at line " +
                                  std::to_string(line_no));
            section = detail::trim(t.substr(1, t.size() - 2));
            if (!known_sections.count(section))
                throw ConfigError("config: unknown section [" + section + "] at line " +
                                  std::to_string(line_no));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: expected key = value at line " + std::to_string(line_no));
        if (section.empty())
            throw ConfigError("config: key outside any section at line " +
                              std::to_string(line_no));
        reader.insert(section, detail::trim(t.substr(0, eq)),
                      detail::trim(t.substr(eq + 1)), line_no);
    }

    ExperimentConfig cfg;

    // [model]
    {
        const std::string kind = reader.take_required("model.kind");
        if (kind == "logreg") cfg.model_kind = ModelKind::logistic_regression;
        else if (kind == "mlp") cfg.model_kind = ModelKind::mlp;
        else throw ConfigError("config: model.kind must be logreg or mlp, got '" + kind + "'");
        const std::string hidden = reader.take("model.hidden", "");
        for (const auto& h : detail::split_list(hidden))
            cfg.hidden.push_back(static_cast<int>(detail::parse_int("model.hidden", h)));
        const std::string act = reader.take("model.activation",
                                            cfg.model_kind == ModelKind::mlp ? "relu" : "identity");
        if (act == "relu") cfg.activation = Activation::relu;
        else if (act == "identity") cfg.activation = Activation::identity;
        else throw ConfigError("config: model.activation must be relu or identity");
        if (cfg.model_kind == ModelKind::logistic_regression && !cfg.hidden.empty())
            throw ConfigError("config: model.hidden requires model.kind = mlp");
        if (cfg.model_kind == ModelKind::mlp && cfg.hidden.empty())
            throw ConfigError("config: model.kind = mlp requires model.hidden");
    }

    // [data]
    {
        const std::string source = reader.take("data.source", "synth");
        if (source == "synth") cfg.data.source = DataConfig::Source::synth;
        else if (source == "file") cfg.data.source = DataConfig::Source::file;
        else throw ConfigError("config: data.source must be synth or file");
        if (cfg.data.source == DataConfig::Source::synth) {
            cfg.data.input_dim =
                static_cast<int>(detail::parse_int("data.input_dim",
                                                   reader.take_required("data.input_dim")));
            cfg.data.classes = static_cast<int>(
                detail::parse_int("data.classes", reader.take_required("data.classes")));
            const std::string skew = reader.take("data.skew", "noniid-unbalanced");
            if (skew == "iid-balanced") cfg.data.skew = DataSkew::iid_balanced;
            else if (skew == "noniid-unbalanced") cfg.data.skew = DataSkew::noniid_unbalanced;
            else throw ConfigError("config: data.skew must be iid-balanced or noniid-unbalanced");
            cfg.data.data_seed = static_cast<std::uint64_t>(
                detail::parse_int("data.data_seed", reader.take("data.data_seed", "0")));
            cfg.data.synth.min_samples = static_cast<int>(detail::parse_int(
                "data.min_samples", reader.take("data.min_samples", "5")));
            cfg.data.synth.samples_per_client = static_cast<int>(detail::parse_int(
                "data.samples_per_client", reader.take("data.samples_per_client", "20")));
            cfg.data.synth.test_fraction = detail::parse_double(
                "data.test_fraction", reader.take("data.test_fraction", "0.2"));
        } else {
            cfg.data.path = reader.take_required("data.path");
            const std::string format = reader.take("data.format", "csv");
            if (format == "csv") cfg.data.format = DataFormat::csv;
            else if (format == "jsonl") cfg.data.format = DataFormat::json_lines;
            else throw ConfigError("config: data.format must be csv or jsonl");
        }
    }

    // [federation]
    {
        cfg.fed.learning_rate = detail::parse_double(
            "federation.learning_rate", reader.take_required("federation.learning_rate"));
        cfg.fed.clients = static_cast<int>(detail::parse_int(
            "federation.clients", reader.take_required("federation.clients")));
        cfg.fed.participants_per_round = static_cast<int>(
            detail::parse_int("federation.participants_per_round",
                              reader.take_required("federation.participants_per_round")));
        cfg.fed.local_iterations = static_cast<int>(detail::parse_int(
            "federation.local_iterations", reader.take_required("federation.local_iterations")));
        cfg.fed.rounds = static_cast<int>(detail::parse_int(
            "federation.rounds", reader.take_required("federation.rounds")));
        cfg.fed.gradient_samples = static_cast<int>(
            detail::parse_int("federation.gradient_samples",
                              reader.take_required("federation.gradient_samples")));
        cfg.fed.selection_seed = static_cast<std::uint64_t>(detail::parse_int(
            "federation.selection_seed", reader.take_required("federation.selection_seed")));
        cfg.fed.init_seed = static_cast<std::uint64_t>(detail::parse_int(
            "federation.init_seed", reader.take_required("federation.init_seed")));
        const std::string mode = reader.take("federation.estimator_mode", "auto");
        if (mode == "auto") cfg.mode_auto = true;
        else {
            cfg.mode_auto = false;
            if (mode == "basic") cfg.fed.estimator_mode = EstimatorMode::basic;
            else if (mode == "lwet") cfg.fed.estimator_mode = EstimatorMode::lwet;
            else if (mode == "lwet-fine") cfg.fed.estimator_mode = EstimatorMode::lwet_fine;
            else throw ConfigError("config: federation.estimator_mode must be "
                                   "basic, lwet, lwet-fine or auto");
        }
        const std::string hessian = reader.take("federation.hessian_mode", "auto");
        if (hessian == "auto") cfg.hessian_auto = true;
        else {
            cfg.hessian_auto = false;
            if (hessian == "exact") cfg.fed.hessian_mode = HessianMode::exact_dense;
            else if (hessian == "fisher") cfg.fed.hessian_mode = HessianMode::fisher;
            else throw ConfigError("config: federation.hessian_mode must be "
                                   "exact, fisher or auto");
        }
        cfg.fed.overflow_guard = detail::parse_double(
            "federation.overflow_guard", reader.take("federation.overflow_guard", "1e30"));
        cfg.fed.dense_cap = static_cast<int>(detail::parse_int(
            "federation.dense_cap", reader.take("federation.dense_cap", "5000")));
    }

    // [experiment]
    {
        cfg.name = reader.take("experiment.name", "");
        const std::string kind = reader.take_required("experiment.kind");
        if (kind == "fip-error") cfg.kind = ExperimentKind::fip_error;
        else if (kind == "fil-correlation") cfg.kind = ExperimentKind::fil_correlation;
        else if (kind == "valuation") cfg.kind = ExperimentKind::valuation;
        else if (kind == "cleansing") cfg.kind = ExperimentKind::cleansing;
        else if (kind == "diagnostics") cfg.kind = ExperimentKind::diagnostics;
        else throw ConfigError("config: experiment.kind must be one of fip-error, "
                               "fil-correlation, valuation, cleansing, diagnostics");
        const std::string rounds = reader.take("experiment.evaluation_rounds", "auto");
        if (rounds != "auto")
            for (const auto& r : detail::split_list(rounds))
                cfg.evaluation_rounds.push_back(
                    static_cast<int>(detail::parse_int("experiment.evaluation_rounds", r)));
        cfg.oracle_cap = static_cast<int>(detail::parse_int(
            "experiment.oracle_cap", reader.take("experiment.oracle_cap", "-1")));
        cfg.experiment_seed = static_cast<std::uint64_t>(detail::parse_int(
            "experiment.experiment_seed", reader.take("experiment.experiment_seed", "0")));
        cfg.self_test = detail::parse_bool(
            "experiment.self_test", reader.take("experiment.self_test", "false"));
        cfg.cleansing_round = static_cast<int>(detail::parse_int(
            "experiment.cleansing_round", reader.take("experiment.cleansing_round", "-1")));
        cfg.cleansing_fraction = detail::parse_double(
            "experiment.cleansing_fraction", reader.take("experiment.cleansing_fraction", "0.2"));
        const std::string strategy = reader.take("experiment.cleansing_strategy", "all");
        if (strategy == "lowest") cfg.cleansing_strategy = CleansingStrategy::lowest;
        else if (strategy == "highest") cfg.cleansing_strategy = CleansingStrategy::highest;
        else if (strategy == "random") cfg.cleansing_strategy = CleansingStrategy::random;
        else if (strategy == "all") cfg.cleansing_strategy = CleansingStrategy::all;
        else throw ConfigError("config: experiment.cleansing_strategy must be "
                               "lowest, highest, random or all");
        const std::string metric = reader.take("experiment.cleansing_metric", "fil");
        if (metric == "fil") cfg.cleansing_metric = ValueMetric::fil;
        else if (metric == "fia") cfg.cleansing_metric = ValueMetric::fia;
        else throw ConfigError("config: experiment.cleansing_metric must be fil or fia");
        const std::string sweep = reader.take("experiment.fraction_sweep", "");
        if (!sweep.empty()) {
            cfg.fraction_sweep.clear();
            for (const auto& f : detail::split_list(sweep))
                cfg.fraction_sweep.push_back(
                    detail::parse_double("experiment.fraction_sweep", f));
        }
        cfg.repeats = static_cast<int>(detail::parse_int(
            "experiment.repeats", reader.take("experiment.repeats", "5")));
        cfg.output = reader.take("experiment.output", "");
        cfg.workers = static_cast<int>(detail::parse_int(
            "experiment.workers", reader.take("experiment.workers", "1")));
    }

    reader.finish();
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_experiment_config(buf.str());
}

inline ModelSpec build_model_spec(const ExperimentConfig& cfg, const FederationData& data) {
    ModelSpec spec;
    spec.kind = cfg.model_kind;
    spec.hidden = cfg.hidden;
    spec.activation = cfg.activation;
    if (cfg.data.source == DataConfig::Source::synth) {
        spec.input_dim = cfg.data.input_dim;
        spec.classes = cfg.data.classes;
    } else {
        int dim = 0, max_label = 0;
        for (const auto& c : data.clients)
            for (const auto& z : c.samples) {
                dim = static_cast<int>(z.features.size());
                max_label = std::max(max_label, z.label);
            }
        for (const auto& z : data.test_set) max_label = std::max(max_label, z.label);
        spec.input_dim = dim;
        spec.classes = max_label + 1;
    }
    spec.validate();
    return spec;
}

inline FederationData build_federation_data(const ExperimentConfig& cfg,
                                            std::uint64_t seed_offset = 0) {
    if (cfg.data.source == DataConfig::Source::synth)
        return synth_generate(cfg.fed.clients, cfg.data.input_dim, cfg.data.classes,
                              cfg.data.data_seed + seed_offset, cfg.data.skew, cfg.data.synth);
    return load_federation(cfg.data.path, cfg.data.format);
}

// Cross-field checks beyond FederationConfig::validate.
inline void validate_experiment(const ExperimentConfig& cfg) {
    if (cfg.repeats < 1) throw ConfigError("config: experiment.repeats must be >= 1");
    if (cfg.workers < 1) throw ConfigError("config: experiment.workers must be >= 1");
    for (int r : cfg.evaluation_rounds)
        if (r < 1 || r > cfg.fed.rounds)
            throw ConfigError("config: evaluation round " + std::to_string(r) +
                              " outside [1, rounds]");
    if (cfg.kind == ExperimentKind::cleansing || cfg.kind == ExperimentKind::valuation) {
        if (cfg.cleansing_round < 1 || cfg.cleansing_round >= cfg.fed.rounds)
            throw ConfigError("config: cleansing_round must satisfy 1 <= x < rounds");
    }
    if (cfg.kind == ExperimentKind::cleansing) {
        if (!(cfg.cleansing_fraction > 0.0 && cfg.cleansing_fraction < 1.0))
            throw ConfigError("config: cleansing_fraction must be in (0, 1)");
        const int count =
            static_cast<int>(std::lround(cfg.cleansing_fraction * cfg.fed.clients));
        if (count >= cfg.fed.clients)
            throw ConfigError("config: cleansing_fraction removes every client");
    }
    if (cfg.kind == ExperimentKind::valuation) {
        for (double f : cfg.fraction_sweep) {
            if (f < 0.0 || f >= 1.0)
                throw ConfigError("config: fraction_sweep entries must be in [0, 1)");
            if (static_cast<int>(std::lround(f * cfg.fed.clients)) >= cfg.fed.clients)
                throw ConfigError("config: fraction_sweep removes every client");
        }
    }
}

// Canonical text form of the effective configuration; the result hash ties
// output files to the exact settings that produced them.
inline std::string canonical_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    char buf[64];
    auto num = [&buf](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    out << "data.classes=" << cfg.data.classes << "\n";
    out << "data.data_seed=" << cfg.data.data_seed << "\n";
    out << "data.format=" << (cfg.data.format == DataFormat::csv ? "csv" : "jsonl") << "\n";
    out << "data.input_dim=" << cfg.data.input_dim << "\n";
    out << "data.min_samples=" << cfg.data.synth.min_samples << "\n";
    out << "data.path=" << cfg.data.path << "\n";
    out << "data.samples_per_client=" << cfg.data.synth.samples_per_client << "\n";
    out << "data.skew="
        << (cfg.data.skew == DataSkew::iid_balanced ? "iid-balanced" : "noniid-unbalanced")
        << "\n";
    out << "data.source=" << (cfg.data.source == DataConfig::Source::synth ? "synth" : "file")
        << "\n";
    out << "data.test_fraction=" << num(cfg.data.synth.test_fraction) << "\n";
    out << "experiment.cleansing_fraction=" << num(cfg.cleansing_fraction) << "\n";
    out << "experiment.cleansing_metric="
        << (cfg.cleansing_metric == ValueMetric::fil ? "fil" : "fia") << "\n";
    out << "experiment.cleansing_round=" << cfg.cleansing_round << "\n";
    switch (cfg.cleansing_strategy) {
        case CleansingStrategy::lowest: out << "experiment.cleansing_strategy=lowest\n"; break;
        case CleansingStrategy::highest: out << "experiment.cleansing_strategy=highest\n"; break;
        case CleansingStrategy::random: out << "experiment.cleansing_strategy=random\n"; break;
        case CleansingStrategy::all: out << "experiment.cleansing_strategy=all\n"; break;
    }
    out << "experiment.evaluation_rounds=";
    for (std::size_t i = 0; i < cfg.evaluation_rounds.size(); ++i)
        out << (i ? "," : "") << cfg.evaluation_rounds[i];
    out << "\n";
    out << "experiment.experiment_seed=" << cfg.experiment_seed << "\n";
    out << "experiment.fraction_sweep=";
    for (std::size_t i = 0; i < cfg.fraction_sweep.size(); ++i)
        out << (i ? "," : "") << num(cfg.fraction_sweep[i]);
    out << "\n";
    switch (cfg.kind) {
        case ExperimentKind::fip_error: out << "experiment.kind=fip-error\n"; break;
        case ExperimentKind::fil_correlation: out << "experiment.kind=fil-correlation\n"; break;
        case ExperimentKind::valuation: out << "experiment.kind=valuation\n"; break;
        case ExperimentKind::cleansing: out << "experiment.kind=cleansing\n"; break;
        case ExperimentKind::diagnostics: out << "experiment.kind=diagnostics\n"; break;
    }
    out << "experiment.name=" << cfg.name << "\n";
    out << "experiment.oracle_cap=" << cfg.oracle_cap << "\n";
    out << "experiment.repeats=" << cfg.repeats << "\n";
    out << "experiment.self_test=" << (cfg.self_test ? "true" : "false") << "\n";
    out << "federation.clients=" << cfg.fed.clients << "\n";
    out << "federation.dense_cap=" << cfg.fed.dense_cap << "\n";
    out << "federation.estimator_mode=";
    if (cfg.mode_auto) out << "auto\n";
    else switch (cfg.fed.estimator_mode) {
        case EstimatorMode::basic: out << "basic\n"; break;
        case EstimatorMode::lwet: out << "lwet\n"; break;
        case EstimatorMode::lwet_fine: out << "lwet-fine\n"; break;
    }
    out << "federation.gradient_samples=" << cfg.fed.gradient_samples << "\n";
    out << "federation.hessian_mode=";
    if (cfg.hessian_auto) out << "auto\n";
    else out << (cfg.fed.hessian_mode == HessianMode::exact_dense ? "exact\n" : "fisher\n");
    out << "federation.init_seed=" << cfg.fed.init_seed << "\n";
    out << "federation.learning_rate=" << num(cfg.fed.learning_rate) << "\n";
    out << "federation.local_iterations=" << cfg.fed.local_iterations << "\n";
    out << "federation.overflow_guard=" << num(cfg.fed.overflow_guard) << "\n";
    out << "federation.participants_per_round=" << cfg.fed.participants_per_round << "\n";
    out << "federation.rounds=" << cfg.fed.rounds << "\n";
    out << "federation.selection_seed=" << cfg.fed.selection_seed << "\n";
    out << "model.activation=" << (cfg.activation == Activation::relu ? "relu" : "identity")
        << "\n";
    out << "model.hidden=";
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i) out << (i ? "," : "") << cfg.hidden[i];
    out << "\n";
    out << "model.kind="
        << (cfg.model_kind == ModelKind::logistic_regression ? "logreg" : "mlp") << "\n";
    return out.str();
}

inline std::string config_hash(const ExperimentConfig& cfg) {
    const std::string canon = canonical_config(cfg);
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char ch : canon) {
        h ^= ch;
        h *= 0x100000001B3ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace fedfluence
