// SPDX-License-Identifier: Apache-2.0
//
// Command implementations: flat configuration parsing, run-directory
// bookkeeping, and the gen-data / search / train / infer / eval drivers.
// The engine runs in single precision here.

#include "manas/cli.hpp"

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "manas/checkpoint.hpp"
#include "manas/data.hpp"
#include "manas/losses.hpp"
#include "manas/metrics.hpp"
#include "manas/supernet.hpp"

namespace manas {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

void set_value(std::map<std::string, std::string>& kv, std::set<std::string>& explicit_keys,
               const std::string& line, const std::string& origin) {
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
        throw ConfigError(origin + ": expected key=value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (kv.find(key) == kv.end())
        throw ConfigError(origin + ": unknown configuration key '" + key + "'");
    kv[key] = value;
    explicit_keys.insert(key);
}

double parse_double(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing text");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': '" + text + "' is not a number");
    }
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path.string());
    f << content;
    if (!f) throw DataError("write failure: " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read file: " + path.string());
    std::ostringstream out;
    out << f.rdbuf();
    return out.str();
}

// Creates <out>/{ckpt,logs,report} and echoes the effective configuration.
fs::path prepare_run_dir(const RunConfig& cfg) {
    fs::path out = cfg.get("out");
    std::error_code ec;
    for (const char* sub : {"ckpt", "logs", "report"}) fs::create_directories(out / sub, ec);
    if (!fs::is_directory(out / "report"))
        throw DataError("cannot create run directory under " + out.string());
    write_text(out / "config.echo", cfg.echo());
    return out;
}

void write_loss_csv(const fs::path& path,
                    const std::vector<std::pair<long long, LossReport>>& log) {
    std::ostringstream out;
    out << loss_csv_header() << "\n";
    for (const auto& [step, r] : log) out << loss_csv_row(static_cast<long>(step), r) << "\n";
    write_text(path, out.str());
}

template <typename F>
int guarded(std::ostream& log, F&& body) {
    try {
        body();
        return kExitOk;
    } catch (const NumericError& e) {
        log << "numerical abort: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}

// Index reflection without edge repetition: ...3 2 1 | 0 1 2 3 | 2 1 0...
int fold_index(int i, int n) {
    if (n <= 1) return 0;
    int period = 2 * n - 2;
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

Tensor<float> pad_reflect(const Tensor<float>& img, int ph, int pw) {
    int h = img.shape[1], w = img.shape[2];
    Tensor<float> out({3, ph, pw});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < ph; ++y)
            for (int x = 0; x < pw; ++x)
                out.v[static_cast<std::size_t>((c * ph + y) * pw + x)] =
                    img.v[static_cast<std::size_t>((c * h + fold_index(y, h)) * w +
                                                   fold_index(x, w))];
    return out;
}

Tensor<float> crop_top_left(const Tensor<float>& img, int h, int w) {
    int ph = img.shape[1], pw = img.shape[2];
    Tensor<float> out({3, h, w});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.v[static_cast<std::size_t>((c * h + y) * w + x)] =
                    img.v[static_cast<std::size_t>((c * ph + y) * pw + x)];
    return out;
}

// Runs a trained discrete network on an image of arbitrary dims by
// reflect-padding to the next multiple of 2^T and cropping back.
Tensor<float> infer_image(const NetworkConfig& base, const Genotype& genotype,
                          const TensorArchive& weights, const Tensor<float>& img) {
    if (img.rank() != 3 || img.dim(0) != 3)
        throw DataError("inference input must be [3,H,W], got " + shape_str(img.shape));
    int h = img.dim(1), w = img.dim(2);
    int f = 1 << base.T;
    int ph = (h + f - 1) / f * f;
    int pw = (w + f - 1) / f * f;

    NetworkConfig cfg = base;
    cfg.H = ph;
    cfg.W = pw;
    Genotype g = genotype;
    g.config = cfg;
    DerainNetwork<float> net(cfg, NetMode::DISCRETE, 0, g);
    net.load_weights(weights);

    Tensor<float> out = net.infer(ph == h && pw == w ? img : pad_reflect(img, ph, pw));
    return ph == h && pw == w ? out : crop_top_left(out, h, w);
}

Tensor<float> clamp01(Tensor<float> t) {
    for (auto& v : t.v) v = std::min(std::max(v, 0.0f), 1.0f);
    return t;
}

// Loads the checkpoint named by the `checkpoint` key and unpacks its
// discrete-network header.
struct LoadedNet {
    TensorArchive archive;
    NetworkConfig cfg;
    Genotype genotype;
};

LoadedNet load_trained(const RunConfig& cfg) {
    const std::string& path = cfg.get("checkpoint");
    if (path.empty()) throw ConfigError("this command requires checkpoint=<path>");
    TensorArchive a = TensorArchive::load(path);
    auto [ncfg, g] = read_checkpoint_header(a);
    if (!g) throw ConfigError("checkpoint " + path + " carries no genotype");
    return {std::move(a), ncfg, std::move(*g)};
}

}  // namespace

const std::map<std::string, std::string>& RunConfig::defaults() {
    static const std::map<std::string, std::string> table = {
        // shared
        {"seed", "0"},
        {"out", "runs/run"},
        {"data", "data"},
        // network
        {"T", "1"},
        {"C", "16"},
        {"M", "4"},
        {"N", "3"},
        {"size", "64"},
        // gen-data
        {"trainA", "4"},
        {"trainB", "4"},
        {"test", "2"},
        // search
        {"iterations", "300"},
        {"lambda_comp", "0"},
        {"lambda_arch", "0.01"},
        {"omega_lr_start", "0.002"},
        {"omega_lr_end", "0.0001"},
        {"omega_momentum", "0.9"},
        {"omega_weight_decay", "0.0003"},
        {"theta_lr", "0.0003"},
        {"theta_weight_decay", "0.001"},
        {"warmup_frac", "0.1"},
        {"shared_attention", "0"},
        {"pairs_per_batch", "1"},
        {"checkpoint_interval", "100"},
        // train
        {"epochs", "200"},
        {"train_lr_start", "0.001"},
        {"train_lr_end", "0"},
        {"train_weight_decay", "0.0003"},
        {"use_internal_loss", "1"},
        {"augment_patch", "0"},
        {"genotype", ""},
        // infer / eval
        {"checkpoint", ""},
        {"eval_split", "test"},
    };
    return table;
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("unknown configuration key '" + key + "'");
    return it->second;
}

long long RunConfig::get_int(const std::string& key) const {
    const std::string& text = get(key);
    try {
        std::size_t used = 0;
        long long v = std::stoll(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing text");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': '" + text + "' is not an integer");
    }
}

double RunConfig::get_double(const std::string& key) const {
    return parse_double(key, get(key));
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& text = get(key);
    if (text == "0" || text == "false") return false;
    if (text == "1" || text == "true") return true;
    throw ConfigError("key '" + key + "': '" + text + "' is not a boolean (0/1/true/false)");
}

bool RunConfig::is_explicit(const std::string& key) const {
    return explicit_.count(key) > 0;
}

std::string RunConfig::echo() const {
    std::ostringstream out;
    for (const auto& [k, v] : kv_) out << k << "=" << v << "\n";
    return out.str();
}

NetworkConfig RunConfig::network_config() const {
    NetworkConfig cfg;
    cfg.T = static_cast<int>(get_int("T"));
    cfg.C = static_cast<int>(get_int("C"));
    cfg.M = static_cast<int>(get_int("M"));
    cfg.N = static_cast<int>(get_int("N"));
    cfg.H = cfg.W = static_cast<int>(get_int("size"));
    return cfg;
}

SearchConfig RunConfig::search_config() const {
    SearchConfig s;
    s.lambda_arch = get_double("lambda_arch");
    s.lambda_comp = lambda_comp_list().front();
    s.iterations = static_cast<int>(get_int("iterations"));
    s.omega_lr_start = get_double("omega_lr_start");
    s.omega_lr_end = get_double("omega_lr_end");
    s.omega_momentum = get_double("omega_momentum");
    s.omega_weight_decay = get_double("omega_weight_decay");
    s.theta_lr = get_double("theta_lr");
    s.theta_weight_decay = get_double("theta_weight_decay");
    s.warmup_frac = get_double("warmup_frac");
    s.shared_attention_choice = get_bool("shared_attention");
    s.pairs_per_batch = static_cast<int>(get_int("pairs_per_batch"));
    s.checkpoint_interval = static_cast<int>(get_int("checkpoint_interval"));
    s.rng_seed = static_cast<std::uint64_t>(get_int("seed"));
    return s;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.epochs = static_cast<int>(get_int("epochs"));
    t.lr_start = get_double("train_lr_start");
    t.lr_end = get_double("train_lr_end");
    t.weight_decay = get_double("train_weight_decay");
    t.use_internal_loss = get_bool("use_internal_loss");
    t.pairs_per_batch = static_cast<int>(get_int("pairs_per_batch"));
    t.augment_patch = static_cast<int>(get_int("augment_patch"));
    t.rng_seed = static_cast<std::uint64_t>(get_int("seed"));
    return t;
}

std::vector<double> RunConfig::lambda_comp_list() const {
    const std::string& text = get("lambda_comp");
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t comma = text.find(',', start);
        std::string piece =
            trim(comma == std::string::npos ? text.substr(start) : text.substr(start, comma - start));
        if (piece.empty()) throw ConfigError("key 'lambda_comp': empty entry in '" + text + "'");
        out.push_back(parse_double("lambda_comp", piece));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

RunConfig parse_run_config(const std::string& config_path,
                           const std::vector<std::string>& overrides) {
    RunConfig cfg;
    cfg.kv_ = RunConfig::defaults();
    if (!config_path.empty()) {
        std::ifstream f(config_path);
        if (!f) throw ConfigError("cannot read config file: " + config_path);
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            set_value(cfg.kv_, cfg.explicit_, t,
                      config_path + ":" + std::to_string(lineno));
        }
    }
    for (const std::string& o : overrides) set_value(cfg.kv_, cfg.explicit_, o, "override");
    return cfg;
}

int cmd_gen_data(const RunConfig& cfg, std::ostream& log) {
    return guarded(log, [&] {
        int size = static_cast<int>(cfg.get_int("size"));
        DatasetSplit split = generate_dataset(
            static_cast<int>(cfg.get_int("trainA")), static_cast<int>(cfg.get_int("trainB")),
            static_cast<int>(cfg.get_int("test")), size, size,
            static_cast<std::uint64_t>(cfg.get_int("seed")));
        save_dataset(cfg.get("out"), split);
        log << "wrote dataset to " << cfg.get("out") << ": " << split.trainA.size()
            << " trainA / " << split.trainB.size() << " trainB / " << split.test.size()
            << " test pairs at " << size << "x" << size << "\n";
    });
}

int cmd_search(const RunConfig& cfg, std::ostream& log) {
    return guarded(log, [&] {
        NetworkConfig ncfg = cfg.network_config();
        SearchConfig scfg = cfg.search_config();
        std::vector<double> lambdas = cfg.lambda_comp_list();
        DatasetSplit data = load_dataset(cfg.get("data"));
        fs::path run = prepare_run_dir(cfg);

        bool sweep = lambdas.size() > 1;
        std::ostringstream sweep_rows;
        for (std::size_t i = 0; i < lambdas.size(); ++i) {
            scfg.lambda_comp = lambdas[i];
            SearchState<float> st = make_search_state<float>(ncfg, scfg);
            std::string ckpt_dir = sweep ? std::string() : (run / "ckpt").string();
            SearchResult res = run_search(st, data, ckpt_dir);

            std::string suffix = sweep ? "_sweep" + std::to_string(i) : "";
            write_loss_csv(run / "logs" / ("search" + suffix + ".csv"), res.log);
            std::string genotype_file = "genotype" + suffix + ".json";
            write_text(run / genotype_file, genotype_to_json(res.genotype) + "\n");
            if (!sweep) save_search_state(st, (run / "ckpt" / "search_final.ckpt").string());

            std::size_t params = st.net->discrete_param_count(res.genotype);
            log << "lambda_comp=" << lambdas[i] << " -> " << genotype_file << " ("
                << params << " parameters)\n";
            sweep_rows << lambdas[i] << "," << params << "," << genotype_file << "\n";
        }
        if (sweep)
            write_text(run / "report" / "sweep.csv",
                       "lambda_comp,param_count,genotype_file\n" + sweep_rows.str());
    });
}

int cmd_train(const RunConfig& cfg, std::ostream& log) {
    return guarded(log, [&] {
        const std::string& gpath = cfg.get("genotype");
        if (gpath.empty()) throw ConfigError("train requires genotype=<path>");
        Genotype g = genotype_from_json(read_text(gpath));

        // Network keys are taken from the genotype; explicitly provided
        // ones must agree with it.
        auto check = [&](const char* key, int actual) {
            if (cfg.is_explicit(key) && cfg.get_int(key) != actual)
                throw ConfigError(std::string("config ") + key + "=" + cfg.get(key) +
                                  " disagrees with the genotype (" + std::to_string(actual) +
                                  ")");
        };
        check("T", g.config.T);
        check("C", g.config.C);
        check("M", g.config.M);
        check("N", g.config.N);
        check("size", g.config.H);

        DatasetSplit data = load_dataset(cfg.get("data"));
        std::vector<MultiToOnePair> pairs = data.trainA;
        pairs.insert(pairs.end(), data.trainB.begin(), data.trainB.end());
        if (pairs.empty()) throw DataError("dataset has no training pairs");

        TrainResult<float> res = run_train<float>(g, cfg.train_config(), pairs);
        fs::path run = prepare_run_dir(cfg);
        write_loss_csv(run / "logs" / "train.csv", res.log);
        res.net->save_checkpoint((run / "ckpt" / "train_final.ckpt").string());
        log << "trained " << pairs.size() << " pairs for " << cfg.get("epochs")
            << " epochs; final checkpoint in " << (run / "ckpt").string() << "\n";
    });
}

int cmd_infer(const RunConfig& cfg, const std::vector<std::string>& inputs, std::ostream& log) {
    return guarded(log, [&] {
        if (inputs.empty()) throw ConfigError("infer requires at least one input image");
        LoadedNet net = load_trained(cfg);
        fs::path out = cfg.get("out");
        std::error_code ec;
        fs::create_directories(out, ec);
        if (!fs::is_directory(out)) throw DataError("cannot create output directory " + out.string());
        for (const std::string& in : inputs) {
            Tensor<float> img = load_png(in);
            Tensor<float> derained = infer_image(net.cfg, net.genotype, net.archive, img);
            fs::path dst = out / fs::path(in).filename();
            save_png(dst.string(), derained);
            log << in << " -> " << dst.string() << "\n";
        }
    });
}

int cmd_eval(const RunConfig& cfg, std::ostream& log) {
    return guarded(log, [&] {
        LoadedNet net = load_trained(cfg);
        DatasetSplit data = load_dataset(cfg.get("data"));

        const std::string& split = cfg.get("eval_split");
        std::vector<const MultiToOnePair*> pairs;
        auto take = [&](const std::vector<MultiToOnePair>& src) {
            for (const auto& p : src) pairs.push_back(&p);
        };
        if (split == "test") take(data.test);
        else if (split == "trainA") take(data.trainA);
        else if (split == "trainB") take(data.trainB);
        else if (split == "train") { take(data.trainA); take(data.trainB); }
        else if (split == "all") { take(data.trainA); take(data.trainB); take(data.test); }
        else throw ConfigError("eval_split must be test/trainA/trainB/train/all, got '" +
                               split + "'");
        if (pairs.empty()) throw DataError("eval split '" + split + "' is empty");

        std::vector<std::string> names;
        std::vector<Tensor<float>> outputs, rainy, gts;
        for (const MultiToOnePair* p : pairs)
            for (std::size_t i = 0; i < p->rainy.size(); ++i) {
                names.push_back(p->name + "__" + severity_name(p->tags[i]));
                outputs.push_back(clamp01(
                    infer_image(net.cfg, net.genotype, net.archive, p->rainy[i])));
                rainy.push_back(p->rainy[i]);
                gts.push_back(p->gt);
            }

        MetricReport scored = score_outputs(names, outputs, gts);
        MetricReport baseline = score_outputs(names, rainy, gts);
        fs::path run = prepare_run_dir(cfg);
        write_metric_csv((run / "report" / "metrics.csv").string(), scored);
        write_metric_summary((run / "report" / "summary.json").string(), scored);
        write_metric_csv((run / "report" / "baseline.csv").string(), baseline);
        write_metric_summary((run / "report" / "baseline.json").string(), baseline);
        log << "evaluated " << scored.count << " images: mean PSNR " << scored.mean_psnr
            << " dB (rainy baseline " << baseline.mean_psnr << " dB), mean SSIM "
            << scored.mean_ssim << "\n";
    });
}

}  // namespace manas
