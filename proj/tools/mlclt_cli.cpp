// mlclt: experiment runner. Writes CSV to --out (stdout when absent) and a
// JSON manifest next to it.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "mlclt/experiment.hpp"

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<unsigned> threads;
    std::vector<std::string> policy;
    std::vector<std::string> set;
};

int run(const std::string& name, const Flags& f)
{
    mlclt::ExperimentConfig cfg;
    cfg.experiment = name;
    if (name == "oracle") {
        cfg.preset = "identity-rademacher";
        cfg.n_samples = 1000000;
    }
    if (!f.config.empty()) mlclt::apply_config_file(cfg, f.config);
    cfg.experiment = name; // the subcommand wins over the file
    for (const auto& kv : f.set) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw mlclt::UsageError("--set expects KEY=VAL");
        mlclt::apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const auto& kv : f.policy) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw mlclt::UsageError("--policy expects KEY=VAL");
        mlclt::apply_setting(cfg, "policy." + kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (f.seed) cfg.master_seed = *f.seed;
    if (f.threads) cfg.threads = *f.threads;
    if (!f.out.empty()) cfg.output_path = f.out;

    mlclt::ExperimentResult res;
    if (cfg.output_path.empty()) {
        res = mlclt::run_experiment(cfg, &std::cout);
    } else {
        std::ofstream csv(cfg.output_path);
        if (!csv) throw mlclt::UsageError("cannot write output: " + cfg.output_path);
        res = mlclt::run_experiment(cfg, &csv);
        std::ofstream js(cfg.output_path + ".json");
        if (!js) throw mlclt::UsageError("cannot write manifest: " + cfg.output_path + ".json");
        js << mlclt::manifest(cfg, res).dump(2) << '\n';
    }
    for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
    if (res.details.contains("fit")) std::cerr << "fit: " << res.details["fit"].dump() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"multilevel CLT verification experiments"};
    app.require_subcommand(1);
    Flags f;
    std::string chosen;
    for (const auto& name : mlclt::experiment_names()) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", f.config, "key = value config file");
        sub->add_option("--seed", f.seed, "master seed");
        sub->add_option("--out", f.out, "CSV output path (manifest at PATH.json)");
        sub->add_option("--threads", f.threads, "worker threads, 0 = all cores");
        sub->add_option("--policy", f.policy, "override a policy constant, KEY=VAL")->take_all();
        sub->add_option("--set", f.set, "override any config key, KEY=VAL")->take_all();
        sub->callback([&chosen, name] { chosen = name; });
    }
    CLI11_PARSE(app, argc, argv);
    try {
        return run(chosen, f);
    } catch (const mlclt::UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
