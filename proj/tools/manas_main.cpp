// SPDX-License-Identifier: Apache-2.0
//
// Entry point: subcommand wiring over the flat key=value configuration.
// Convenience flags are shorthands that append `key=value` overrides, so
// precedence stays command line > file > default throughout.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "manas/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"multi-scale attentive architecture search for single-image de-raining"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::vector<std::string> images;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "flat key=value configuration file");
        sub->add_option("--set", overrides, "override one configuration key (key=value)");
    };
    auto add_alias = [&](CLI::App* sub, const std::string& flag, const std::string& key,
                         const std::string& help) {
        sub->add_option_function<std::string>(
            flag, [&overrides, key](const std::string& v) { overrides.push_back(key + "=" + v); },
            help);
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic multi-to-one rain dataset");
    add_common(gen);
    add_alias(gen, "--out", "out", "dataset directory to write");
    add_alias(gen, "--seed", "seed", "generation seed");
    add_alias(gen, "--trainA", "trainA", "pairs in the weight-training split");
    add_alias(gen, "--trainB", "trainB", "pairs in the architecture-training split");
    add_alias(gen, "--test", "test", "pairs in the test split");
    add_alias(gen, "--size", "size", "image height and width in pixels");

    CLI::App* search = app.add_subcommand("search", "run the bi-level architecture search");
    add_common(search);
    add_alias(search, "--out", "out", "run directory");
    add_alias(search, "--seed", "seed", "search seed");
    add_alias(search, "--data", "data", "dataset directory");
    add_alias(search, "--iterations", "iterations", "bi-level steps");
    add_alias(search, "--lambda-comp", "lambda_comp",
              "complexity weight; a comma-separated list sweeps one search per value");

    CLI::App* train = app.add_subcommand("train", "train a discrete architecture from scratch");
    add_common(train);
    add_alias(train, "--out", "out", "run directory");
    add_alias(train, "--seed", "seed", "training seed");
    add_alias(train, "--data", "data", "dataset directory");
    add_alias(train, "--genotype", "genotype", "architecture JSON produced by search");
    add_alias(train, "--epochs", "epochs", "training epochs");

    CLI::App* infer = app.add_subcommand("infer", "de-rain PNG images with a trained checkpoint");
    add_common(infer);
    add_alias(infer, "--out", "out", "output directory for de-rained PNGs");
    add_alias(infer, "--checkpoint", "checkpoint", "trained network checkpoint");
    infer->add_option("images", images, "input PNG files")->required();

    CLI::App* eval = app.add_subcommand("eval", "score a trained checkpoint on a dataset split");
    add_common(eval);
    add_alias(eval, "--out", "out", "run directory for the metric report");
    add_alias(eval, "--checkpoint", "checkpoint", "trained network checkpoint");
    add_alias(eval, "--data", "data", "dataset directory");
    add_alias(eval, "--split", "eval_split", "dataset split to score (test/trainA/trainB/train/all)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? manas::kExitOk : manas::kExitUsage;
    }

    try {
        manas::RunConfig cfg = manas::parse_run_config(config_path, overrides);
        if (gen->parsed()) return manas::cmd_gen_data(cfg, std::cout);
        if (search->parsed()) return manas::cmd_search(cfg, std::cout);
        if (train->parsed()) return manas::cmd_train(cfg, std::cout);
        if (infer->parsed()) return manas::cmd_infer(cfg, images, std::cout);
        if (eval->parsed()) return manas::cmd_eval(cfg, std::cout);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return manas::kExitUsage;
    }
    return manas::kExitUsage;
}
