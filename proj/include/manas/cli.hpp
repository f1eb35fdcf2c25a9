// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface: a flat key=value run configuration with strict
// key checking (unknown keys are errors, every key has a default), and
// the five commands as library functions returning process exit codes.

#pragma once

#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "manas/core.hpp"
#include "manas/search_engine.hpp"

namespace manas {

inline constexpr int kExitOk = 0;       // success
inline constexpr int kExitUsage = 2;    // configuration / usage / data error
inline constexpr int kExitNumeric = 3;  // numerical abort (non-finite loss)

// Effective flat configuration. Values resolve command line > file >
// default; keys outside the default table are rejected at parse time.
class RunConfig {
public:
    // The full key table with its default values.
    static const std::map<std::string, std::string>& defaults();

    const std::string& get(const std::string& key) const;
    long long get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;  // 0/1/true/false

    // True when the key came from the file or an override, not the default.
    bool is_explicit(const std::string& key) const;

    // Sorted `key=value` lines of the effective configuration.
    std::string echo() const;

    NetworkConfig network_config() const;  // T, C, M, N, size (H = W = size)
    // All search keys; lambda_comp takes the first value of the sweep list.
    SearchConfig search_config() const;
    TrainConfig train_config() const;
    // `lambda_comp` parsed as a comma-separated list of one or more values.
    std::vector<double> lambda_comp_list() const;

    friend RunConfig parse_run_config(const std::string& config_path,
                                      const std::vector<std::string>& overrides);

private:
    std::map<std::string, std::string> kv_;
    std::set<std::string> explicit_;
};

// Builds the effective configuration from an optional file (empty path =
// none) plus `key=value` override strings applied in order.
RunConfig parse_run_config(const std::string& config_path,
                           const std::vector<std::string>& overrides);

// Commands. Each returns an exit code and writes human-readable progress
// and error text to `log`; artifacts go to the directories named in the
// configuration. Run directories are laid out as
// `<out>/{config.echo, genotype.json, ckpt/, logs/, report/}`.
int cmd_gen_data(const RunConfig& cfg, std::ostream& log);
int cmd_search(const RunConfig& cfg, std::ostream& log);
int cmd_train(const RunConfig& cfg, std::ostream& log);
int cmd_infer(const RunConfig& cfg, const std::vector<std::string>& inputs, std::ostream& log);
int cmd_eval(const RunConfig& cfg, std::ostream& log);

}  // namespace manas
