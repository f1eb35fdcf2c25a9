// SPDX-License-Identifier: Apache-2.0
//
// Configuration validation and the genotype JSON format.

#include "manas/core.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace manas {

namespace {

const char* kOpNames[kNumAttentionOps] = {
    "ca_v1", "ca_v2", "spatial", "norm", "cba", "identity", "zero",
};

}  // namespace

const char* attention_op_name(AttentionOpKind k) {
    int i = static_cast<int>(k);
    if (i < 0 || i >= kNumAttentionOps) throw GenotypeError("attention op index out of range");
    return kOpNames[i];
}

AttentionOpKind attention_op_from_name(const std::string& name) {
    for (int i = 0; i < kNumAttentionOps; ++i)
        if (name == kOpNames[i]) return static_cast<AttentionOpKind>(i);
    throw GenotypeError("unknown attention op name: '" + name + "'");
}

void validate_config(const NetworkConfig& cfg) {
    if (cfg.T < 0) throw ConfigError("num_cells T must be >= 0, got " + std::to_string(cfg.T));
    if (cfg.C <= 0 || cfg.C % 2 != 0)
        throw ConfigError("channels C must be a positive even number (the attention module "
                          "splits channels in half), got " + std::to_string(cfg.C));
    if (cfg.M <= 0) throw ConfigError("columns M must be positive, got " + std::to_string(cfg.M));
    if (cfg.N < 2) throw ConfigError("multi_to_one N must be >= 2, got " + std::to_string(cfg.N));
    int div = 1 << cfg.T;
    if (cfg.H <= 0 || cfg.H % div != 0)
        throw ConfigError("height H=" + std::to_string(cfg.H) + " is not divisible by 2^T=" +
                          std::to_string(div));
    if (cfg.W <= 0 || cfg.W % div != 0)
        throw ConfigError("width W=" + std::to_string(cfg.W) + " is not divisible by 2^T=" +
                          std::to_string(div));
}

void SearchConfig::validate() const {
    if (lambda_arch < 0) throw ConfigError("lambda_arch must be >= 0");
    if (lambda_comp < 0) throw ConfigError("lambda_comp must be >= 0");
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (warmup_frac < 0 || warmup_frac >= 1) throw ConfigError("warmup_frac must be in [0,1)");
    if (pairs_per_batch < 1) throw ConfigError("pairs_per_batch must be >= 1");
    if (checkpoint_interval < 1) throw ConfigError("checkpoint_interval must be >= 1");
}

void validate_genotype(const Genotype& g) {
    validate_config(g.config);
    if (static_cast<int>(g.cells.size()) != g.config.T)
        throw GenotypeError("genotype has " + std::to_string(g.cells.size()) +
                            " cells but config says T=" + std::to_string(g.config.T));
    for (std::size_t t = 0; t < g.cells.size(); ++t) {
        const CellChoice& c = g.cells[t];
        if (static_cast<int>(c.columns.size()) != g.config.M)
            throw GenotypeError("cell " + std::to_string(t) + " has " +
                                std::to_string(c.columns.size()) + " columns, expected M=" +
                                std::to_string(g.config.M));
        for (AttentionOpKind k : c.attention) attention_op_name(k);  // range check
    }
}

std::string genotype_to_json(const Genotype& g) {
    validate_genotype(g);
    nlohmann::json doc;
    doc["version"] = 1;
    doc["config"] = {{"T", g.config.T}, {"C", g.config.C}, {"M", g.config.M},
                     {"N", g.config.N}, {"H", g.config.H}, {"W", g.config.W}};
    doc["cells"] = nlohmann::json::array();
    for (const CellChoice& c : g.cells) {
        nlohmann::json cell;
        cell["columns"] = nlohmann::json::array();
        for (ColumnKind k : c.columns)
            cell["columns"].push_back(k == ColumnKind::PARALLEL ? "P" : "F");
        cell["attention"] = nlohmann::json::array();
        for (AttentionOpKind k : c.attention) cell["attention"].push_back(attention_op_name(k));
        doc["cells"].push_back(std::move(cell));
    }
    return doc.dump(2) + "\n";
}

Genotype genotype_from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw GenotypeError(std::string("genotype JSON parse failure: ") + e.what());
    }
    try {
        if (doc.at("version").get<int>() != 1)
            throw GenotypeError("unsupported genotype version");
        Genotype g;
        const auto& cfg = doc.at("config");
        g.config.T = cfg.at("T").get<int>();
        g.config.C = cfg.at("C").get<int>();
        g.config.M = cfg.at("M").get<int>();
        g.config.N = cfg.at("N").get<int>();
        g.config.H = cfg.at("H").get<int>();
        g.config.W = cfg.at("W").get<int>();
        for (const auto& cell : doc.at("cells")) {
            CellChoice c;
            for (const auto& col : cell.at("columns")) {
                std::string s = col.get<std::string>();
                if (s == "P") c.columns.push_back(ColumnKind::PARALLEL);
                else if (s == "F") c.columns.push_back(ColumnKind::FUSION);
                else throw GenotypeError("unknown column kind: '" + s + "'");
            }
            const auto& att = cell.at("attention");
            if (att.size() != static_cast<std::size_t>(kAttentionSites))
                throw GenotypeError("cell needs exactly " + std::to_string(kAttentionSites) +
                                    " attention entries, got " + std::to_string(att.size()));
            for (std::size_t s = 0; s < att.size(); ++s)
                c.attention[s] = attention_op_from_name(att[s].get<std::string>());
            g.cells.push_back(std::move(c));
        }
        validate_genotype(g);
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw GenotypeError(std::string("genotype JSON field error: ") + e.what());
    }
}

void save_genotype(const std::string& path, const Genotype& g) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path);
    f << genotype_to_json(g);
    if (!f) throw DataError("write failure: " + path);
}

Genotype load_genotype(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open genotype file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return genotype_from_json(ss.str());
}

std::string network_config_to_json(const NetworkConfig& cfg) {
    nlohmann::json j;
    j["T"] = cfg.T;
    j["C"] = cfg.C;
    j["M"] = cfg.M;
    j["N"] = cfg.N;
    j["H"] = cfg.H;
    j["W"] = cfg.W;
    return j.dump();
}

NetworkConfig network_config_from_json(const std::string& text) {
    try {
        nlohmann::json j = nlohmann::json::parse(text);
        NetworkConfig cfg;
        cfg.T = j.at("T").get<int>();
        cfg.C = j.at("C").get<int>();
        cfg.M = j.at("M").get<int>();
        cfg.N = j.at("N").get<int>();
        cfg.H = j.at("H").get<int>();
        cfg.W = j.at("W").get<int>();
        validate_config(cfg);
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("network config JSON error: ") + e.what());
    }
}

std::string search_config_to_json(const SearchConfig& cfg) {
    nlohmann::json j;
    j["lambda_arch"] = cfg.lambda_arch;
    j["lambda_comp"] = cfg.lambda_comp;
    j["iterations"] = cfg.iterations;
    j["omega_lr_start"] = cfg.omega_lr_start;
    j["omega_lr_end"] = cfg.omega_lr_end;
    j["omega_momentum"] = cfg.omega_momentum;
    j["omega_weight_decay"] = cfg.omega_weight_decay;
    j["theta_lr"] = cfg.theta_lr;
    j["theta_weight_decay"] = cfg.theta_weight_decay;
    j["warmup_frac"] = cfg.warmup_frac;
    j["shared_attention_choice"] = cfg.shared_attention_choice;
    j["pairs_per_batch"] = cfg.pairs_per_batch;
    j["checkpoint_interval"] = cfg.checkpoint_interval;
    j["rng_seed"] = cfg.rng_seed;
    return j.dump();
}

SearchConfig search_config_from_json(const std::string& text) {
    try {
        nlohmann::json j = nlohmann::json::parse(text);
        SearchConfig cfg;
        cfg.lambda_arch = j.at("lambda_arch").get<double>();
        cfg.lambda_comp = j.at("lambda_comp").get<double>();
        cfg.iterations = j.at("iterations").get<int>();
        cfg.omega_lr_start = j.at("omega_lr_start").get<double>();
        cfg.omega_lr_end = j.at("omega_lr_end").get<double>();
        cfg.omega_momentum = j.at("omega_momentum").get<double>();
        cfg.omega_weight_decay = j.at("omega_weight_decay").get<double>();
        cfg.theta_lr = j.at("theta_lr").get<double>();
        cfg.theta_weight_decay = j.at("theta_weight_decay").get<double>();
        cfg.warmup_frac = j.at("warmup_frac").get<double>();
        cfg.shared_attention_choice = j.at("shared_attention_choice").get<bool>();
        cfg.pairs_per_batch = j.at("pairs_per_batch").get<int>();
        cfg.checkpoint_interval = j.at("checkpoint_interval").get<int>();
        cfg.rng_seed = j.at("rng_seed").get<std::uint64_t>();
        cfg.validate();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("search config JSON error: ") + e.what());
    }
}

}  // namespace manas
