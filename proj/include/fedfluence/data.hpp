#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fedfluence/errors.hpp"
#include "fedfluence/model.hpp"
#include "fedfluence/rng.hpp"

#include "json.hpp"

namespace fedfluence {

struct ClientDataset {
    int client_id = 0;
    Dataset samples;

    int size() const { return static_cast<int>(samples.size()); }
};

struct FederationData {
    std::vector<ClientDataset> clients; // sorted by client_id, ids unique
    Dataset test_set;

    int num_clients() const { return static_cast<int>(clients.size()); }

    int total_train_size() const {
        int n = 0;
        for (const auto& c : clients) n += c.size();
        return n;
    }

    int min_client_size() const {
        int m = clients.empty() ? 0 : clients.front().size();
        for (const auto& c : clients) m = std::min(m, c.size());
        return m;
    }

    const ClientDataset& client(int id) const {
        for (const auto& c : clients)
            if (c.client_id == id) return c;
        throw IndexError("FederationData: no client with id " + std::to_string(id));
    }
};

enum class DataSkew { iid_balanced, noniid_unbalanced };

// Knobs of the synthetic generator. The class-mean geometry and the
// unbalanced size distribution are this project's stand-ins for a real
// federated corpus; everything is deterministic in the seed.
struct SynthOptions {
    int min_samples = 5;           // lower clamp on per-client sizes
    double size_median = 20.0;     // log-normal median for unbalanced sizes
    double size_sigma = 1.0;
    int samples_per_client = 20;   // fixed size in the balanced case
    double test_fraction = 0.2;    // test size as a fraction of train mass
    double mean_scale = 1.0;       // spread of the global class means
    double client_mean_offset = 0.4; // non-IID drift of per-client class means
    double dirichlet_alpha = 1.5;  // non-IID class-proportion skew
};

inline FederationData synth_generate(int num_clients, int input_dim, int classes,
                                     std::uint64_t seed, DataSkew skew,
                                     const SynthOptions& opt = {}) {
    if (num_clients < 2) throw ConfigError("synth_generate: num_clients must be >= 2");
    if (classes < 2) throw ConfigError("synth_generate: classes must be >= 2");
    if (input_dim < 1) throw ConfigError("synth_generate: input_dim must be >= 1");
    if (opt.min_samples < 1) throw ConfigError("synth_generate: min_samples must be >= 1");

    Rng global_rng(derive_seed(seed, SeedStream::data_global));
    std::vector<std::vector<double>> class_means(static_cast<std::size_t>(classes));
    for (auto& mu : class_means) {
        mu.resize(static_cast<std::size_t>(input_dim));
        for (auto& v : mu) v = global_rng.normal(0.0, opt.mean_scale);
    }

    FederationData data;
    data.clients.reserve(static_cast<std::size_t>(num_clients));
    for (int k = 0; k < num_clients; ++k) {
        Rng rng(derive_seed(seed, SeedStream::data_client, {static_cast<std::uint64_t>(k)}));
        ClientDataset client;
        client.client_id = k;

        int n_k = opt.samples_per_client;
        std::vector<double> proportions(static_cast<std::size_t>(classes),
                                        1.0 / static_cast<double>(classes));
        std::vector<std::vector<double>> means = class_means;
        if (skew == DataSkew::noniid_unbalanced) {
            const double draw = rng.lognormal(std::log(opt.size_median), opt.size_sigma);
            n_k = std::max(opt.min_samples, static_cast<int>(std::lround(draw)));
            proportions = rng.dirichlet(opt.dirichlet_alpha, classes);
            for (auto& mu : means)
                for (auto& v : mu) v += rng.normal(0.0, opt.client_mean_offset);
        }

        client.samples.reserve(static_cast<std::size_t>(n_k));
        for (int i = 0; i < n_k; ++i) {
            LabeledSample z;
            const double u = rng.uniform01();
            double acc = 0.0;
            z.label = classes - 1;
            for (int c = 0; c < classes; ++c) {
                acc += proportions[static_cast<std::size_t>(c)];
                if (u < acc) { z.label = c; break; }
            }
            z.features.resize(static_cast<std::size_t>(input_dim));
            for (int didx = 0; didx < input_dim; ++didx)
                z.features[static_cast<std::size_t>(didx)] =
                    means[static_cast<std::size_t>(z.label)][static_cast<std::size_t>(didx)] +
                    rng.normal();
            client.samples.push_back(std::move(z));
        }
        data.clients.push_back(std::move(client));
    }

    // Held-out test set from the global mixture, disjoint by construction.
    Rng test_rng(derive_seed(seed, SeedStream::data_test));
    const int test_count = std::max(
        1, static_cast<int>(std::lround(opt.test_fraction * data.total_train_size())));
    data.test_set.reserve(static_cast<std::size_t>(test_count));
    for (int i = 0; i < test_count; ++i) {
        LabeledSample z;
        z.label = static_cast<int>(test_rng.below(static_cast<std::uint64_t>(classes)));
        z.features.resize(static_cast<std::size_t>(input_dim));
        for (int didx = 0; didx < input_dim; ++didx)
            z.features[static_cast<std::size_t>(didx)] =
                class_means[static_cast<std::size_t>(z.label)][static_cast<std::size_t>(didx)] +
                test_rng.normal();
        data.test_set.push_back(std::move(z));
    }
    return data;
}

enum class DataFormat { csv, json_lines };

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline int feature_dim_of(const FederationData& data) {
    if (!data.clients.empty() && !data.clients.front().samples.empty())
        return static_cast<int>(data.clients.front().samples.front().features.size());
    if (!data.test_set.empty())
        return static_cast<int>(data.test_set.front().features.size());
    return 0;
}

} // namespace detail

// CSV layout: header `client_id,split,label,f0,f1,...`; split is train|test,
// test rows carry client_id -1. JSON lines use the same keys, one object per
// sample. Both are UTF-8 with LF endings.
inline void save_federation(const FederationData& data, const std::string& path,
                            DataFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("save_federation: cannot open " + path);
    const int dim = detail::feature_dim_of(data);
    if (format == DataFormat::csv) {
        out << "client_id,split,label";
        for (int i = 0; i < dim; ++i) out << ",f" << i;
        out << "\n";
        auto write_row = [&](int client_id, const char* split, const LabeledSample& z) {
            out << client_id << ',' << split << ',' << z.label;
            for (double v : z.features) out << ',' << detail::format_double(v);
            out << "\n";
        };
        for (const auto& c : data.clients)
            for (const auto& z : c.samples) write_row(c.client_id, "train", z);
        for (const auto& z : data.test_set) write_row(-1, "test", z);
    } else {
        auto write_row = [&](int client_id, const char* split, const LabeledSample& z) {
            nlohmann::ordered_json row;
            row["client_id"] = client_id;
            row["split"] = split;
            row["label"] = z.label;
            for (std::size_t i = 0; i < z.features.size(); ++i)
                row["f" + std::to_string(i)] = z.features[i];
            out << row.dump() << "\n";
        };
        for (const auto& c : data.clients)
            for (const auto& z : c.samples) write_row(c.client_id, "train", z);
        for (const auto& z : data.test_set) write_row(-1, "test", z);
    }
}

namespace detail {

struct RawRecord {
    int client_id;
    bool is_test;
    LabeledSample sample;
};

inline FederationData assemble_federation(std::vector<RawRecord>& records) {
    FederationData data;
    std::map<int, ClientDataset> by_id;
    std::size_t dim = records.empty() ? 0 : records.front().sample.features.size();
    for (auto& r : records) {
        if (r.sample.features.size() != dim)
            throw FormatError("load_federation: inconsistent feature counts");
        if (r.is_test) {
            data.test_set.push_back(std::move(r.sample));
        } else {
            auto& c = by_id[r.client_id];
            c.client_id = r.client_id;
            c.samples.push_back(std::move(r.sample));
        }
    }
    for (auto& [id, client] : by_id) data.clients.push_back(std::move(client));
    if (data.clients.size() < 2)
        throw ConfigError("load_federation: at least 2 clients required, got " +
                          std::to_string(data.clients.size()));
    return data;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') { fields.push_back(cur); cur.clear(); }
        else if (ch != '\r') cur.push_back(ch);
    }
    fields.push_back(cur);
    return fields;
}

} // namespace detail

inline FederationData load_federation(const std::string& path, DataFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("load_federation: cannot open " + path);

    std::vector<detail::RawRecord> records;
    std::string line;
    int line_no = 0;

    auto fail = [&](const std::string& what) -> void {
        throw FormatError("load_federation: " + what + " at line " + std::to_string(line_no));
    };

    if (format == DataFormat::csv) {
        if (!std::getline(in, line)) throw FormatError("load_federation: empty file");
        line_no = 1;
        const auto header = detail::split_csv_line(line);
        if (header.size() < 4 || header[0] != "client_id" || header[1] != "split" ||
            header[2] != "label")
            fail("header must start with client_id,split,label,f0,...");
        const std::size_t dim = header.size() - 3;
        for (std::size_t i = 0; i < dim; ++i)
            if (header[3 + i] != "f" + std::to_string(i)) fail("bad feature column name");
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            const auto fields = detail::split_csv_line(line);
            if (fields.size() != header.size()) fail("wrong field count");
            detail::RawRecord r;
            try {
                r.client_id = std::stoi(fields[0]);
                if (fields[1] == "train") r.is_test = false;
                else if (fields[1] == "test") r.is_test = true;
                else fail("split must be train or test");
                r.sample.label = std::stoi(fields[2]);
                r.sample.features.resize(dim);
                for (std::size_t i = 0; i < dim; ++i)
                    r.sample.features[i] = std::stod(fields[3 + i]);
            } catch (const FormatError&) {
                throw;
            } catch (const std::exception&) {
                fail("unparsable numeric field");
            }
            if (r.sample.label < 0) fail("negative label");
            records.push_back(std::move(r));
        }
    } else {
        bool any = false;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            any = true;
            nlohmann::json row;
            try {
                row = nlohmann::json::parse(line);
            } catch (const nlohmann::json::parse_error& e) {
                fail(std::string("JSON parse error: ") + e.what());
            }
            if (!row.contains("client_id") || !row.contains("label")) fail("missing keys");
            if (!row.contains("split")) fail("missing split column");
            detail::RawRecord r;
            try {
                r.client_id = row["client_id"].get<int>();
                const std::string split = row["split"].get<std::string>();
                if (split == "train") r.is_test = false;
                else if (split == "test") r.is_test = true;
                else fail("split must be train or test");
                r.sample.label = row["label"].get<int>();
                std::size_t i = 0;
                while (row.contains("f" + std::to_string(i))) {
                    r.sample.features.push_back(row["f" + std::to_string(i)].get<double>());
                    ++i;
                }
                if (i == 0) fail("no feature columns");
            } catch (const FormatError&) {
                throw;
            } catch (const std::exception&) {
                fail("bad field type");
            }
            if (r.sample.label < 0) fail("negative label");
            records.push_back(std::move(r));
        }
        if (!any) throw FormatError("load_federation: empty file");
    }
    if (records.empty()) throw FormatError("load_federation: no data rows");
    return detail::assemble_federation(records);
}

inline bool operator==(const LabeledSample& a, const LabeledSample& b) {
    return a.label == b.label && a.features == b.features;
}

inline bool operator==(const ClientDataset& a, const ClientDataset& b) {
    return a.client_id == b.client_id && a.samples == b.samples;
}

inline bool operator==(const FederationData& a, const FederationData& b) {
    return a.clients == b.clients && a.test_set == b.test_set;
}

} // namespace fedfluence
