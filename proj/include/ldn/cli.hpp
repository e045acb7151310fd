#pragma once

// Command-line front end: train / eval / certify / attack / construct /
// lipschitz / rsep. Exit codes: 0 success, 1 usage or configuration error,
// 2 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ldn/certify.hpp"
#include "ldn/checkpoint.hpp"
#include "ldn/config.hpp"
#include "ldn/construct.hpp"
#include "ldn/data.hpp"
#include "ldn/trainer.hpp"

namespace ldn::cli {

enum class Split { train, test };

/// Loads one split of the configured dataset. Synthetic data is drawn once with
/// twice the per-class count; the first half is the training split.
inline LabeledDataset load_split(const DataConfig& cfg, Split split) {
    LabeledDataset data;
    const auto dir = cfg.resolved_dir();
    switch (cfg.kind) {
        case DatasetKind::mnist:
            data = split == Split::train
                       ? load_mnist(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte")
                       : load_mnist(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
            data.name = split == Split::train ? "mnist-train" : "mnist-test";
            break;
        case DatasetKind::cifar10: {
            std::vector<std::filesystem::path> files;
            if (split == Split::train)
                for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
            else
                files.push_back(dir / "test_batch.bin");
            data = load_cifar10(files);
            data.name = split == Split::train ? "cifar10-train" : "cifar10-test";
            break;
        }
        case DatasetKind::synth: {
            const auto all = gen_synthetic(2 * cfg.synth_per_class, cfg.synth_classes, cfg.synth_dim,
                                           cfg.synth_min_sep, cfg.data_seed);
            auto halves = split_at(all, all.size() / 2);
            data = split == Split::train ? std::move(halves.first) : std::move(halves.second);
            data.name = split == Split::train ? "synth-train" : "synth-test";
            break;
        }
    }
    const std::size_t limit = split == Split::train ? cfg.train_limit : cfg.test_limit;
    return limit ? take(data, limit) : data;
}

namespace detail {

inline std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

inline std::string exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Dataset flags shared by the evaluation subcommands.
struct DataFlags {
    std::string dataset;
    std::string data_dir;
    std::string split = "train";
    std::size_t limit = 0;
    std::size_t per_class = 100;
    std::size_t classes = 2;
    std::size_t dim = 2;
    double min_sep = 0.15;
    std::uint64_t data_seed = 0;

    void attach(CLI::App* app) {
        app->add_option("--dataset", dataset, "mnist, cifar10 or synth")
            ->required()
            ->check(CLI::IsMember({"mnist", "cifar10", "synth"}));
        app->add_option("--data-dir", data_dir, "directory holding the dataset files");
        app->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}))->capture_default_str();
        app->add_option("--limit", limit, "use only the first N samples (0 = all)")->capture_default_str();
        app->add_option("--synth-per-class", per_class, "synthetic samples per class and split")->capture_default_str();
        app->add_option("--synth-classes", classes, "synthetic class count")->capture_default_str();
        app->add_option("--synth-dim", dim, "synthetic input dimension")->capture_default_str();
        app->add_option("--synth-min-sep", min_sep, "synthetic separation radius")->capture_default_str();
        app->add_option("--data-seed", data_seed, "seed of the synthetic draw")->capture_default_str();
    }

    LabeledDataset load() const {
        DataConfig cfg;
        cfg.kind = *parse_dataset_kind(dataset);
        cfg.dir = data_dir;
        cfg.synth_per_class = per_class;
        cfg.synth_classes = classes;
        cfg.synth_dim = dim;
        cfg.synth_min_sep = min_sep;
        cfg.data_seed = data_seed;
        const Split s = split == "test" ? Split::test : Split::train;
        (s == Split::train ? cfg.train_limit : cfg.test_limit) = limit;
        return load_split(cfg, s);
    }
};

inline PExponent parse_p(const std::string& s) {
    if (s == "inf" || s == "infinity") return PExponent::infinity();
    const auto v = ldn::detail::parse_double(s);
    if (!v) throw CLI::ValidationError("--p", "expected a number >= 1 or 'inf', got '" + s + "'");
    return PExponent(*v);
}

inline void check_dims(const DistanceNet<float>& net, const LabeledDataset& data) {
    if (net.input_dim() != data.dim())
        throw ShapeError("checkpoint expects " + std::to_string(net.input_dim()) + " input features but dataset '" +
                         data.name + "' has " + std::to_string(data.dim()));
    if (net.class_count() != data.classes)
        throw ShapeError("checkpoint has " + std::to_string(net.class_count()) + " outputs but dataset '" +
                         data.name + "' has " + std::to_string(data.classes) + " classes");
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace detail

/// Runs the CLI on argv, writing results to `out` and diagnostics to `err`.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"l_inf-distance nets: training, certification, attacks and exact constructions", "ldn_cli"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "expand help for every subcommand");

    // train
    std::string config_path, out_dir;
    std::vector<std::string> overrides;
    bool quiet = false;
    auto* train_cmd = app.add_subcommand("train", "train a network from a config file");
    train_cmd->add_option("--config", config_path, "key = value config file")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--out", out_dir, "output directory (default: runs/<config name>)");
    train_cmd->add_option("--set", overrides, "override a config key, key=value (repeatable)");
    train_cmd->add_flag("--quiet", quiet, "do not print per-epoch metrics");
    std::optional<std::uint64_t> train_seed;
    train_cmd->add_option("--seed", train_seed, "shorthand for --set seed=S");

    // shared flags of the checkpoint subcommands
    std::string ckpt;
    double eps = 0.0;
    std::uint64_t seed = 0;
    std::size_t steps = 100, restarts = 1;

    detail::DataFlags eval_data;
    auto* eval_cmd = app.add_subcommand("eval", "clean, certified and PGD accuracy of a checkpoint");
    eval_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--eps", eps, "perturbation radius")->required()->check(CLI::NonNegativeNumber);
    eval_cmd->add_option("--pgd-steps", steps, "PGD iterations (0 skips the attack)")->capture_default_str();
    eval_cmd->add_option("--seed", seed, "attack seed")->capture_default_str();
    eval_data.attach(eval_cmd);

    std::string report_path;
    detail::DataFlags cert_data;
    auto* cert_cmd = app.add_subcommand("certify", "margin certification at p = inf (computed in double)");
    cert_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    cert_cmd->add_option("--eps", eps, "certification radius")->required()->check(CLI::NonNegativeNumber);
    cert_cmd->add_option("--report", report_path, "per-sample CSV report");
    cert_cmd->add_option("--seed", seed, "unused; accepted for uniformity")->capture_default_str();
    cert_data.attach(cert_cmd);

    detail::DataFlags attack_data;
    auto* attack_cmd = app.add_subcommand("attack", "PGD robust accuracy of a checkpoint");
    attack_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    attack_cmd->add_option("--eps", eps, "perturbation radius")->required()->check(CLI::NonNegativeNumber);
    attack_cmd->add_option("--steps", steps, "PGD iterations")->capture_default_str()->check(CLI::PositiveNumber);
    attack_cmd->add_option("--restarts", restarts, "random restarts")->capture_default_str()->check(CLI::PositiveNumber);
    attack_cmd->add_option("--seed", seed, "attack seed")->capture_default_str();
    attack_data.attach(attack_cmd);

    std::size_t layers = 2;
    std::string construct_out;
    detail::DataFlags construct_data;
    auto* construct_cmd = app.add_subcommand("construct", "exact robust net memorising a separated dataset");
    construct_cmd->add_option("--layers", layers, "number of distance layers (>= 2)")->capture_default_str();
    construct_cmd->add_option("--out", construct_out, "checkpoint to write; metadata goes to <out>.meta")->required();
    construct_cmd->add_option("--seed", seed, "unused; accepted for uniformity")->capture_default_str();
    construct_data.attach(construct_cmd);

    std::string p_text = "inf";
    std::size_t lip_steps = 20;
    double lip_eps = 1.0 / 255.0;
    detail::DataFlags lip_data;
    auto* lip_cmd = app.add_subcommand("lipschitz", "PGD lower bound and closed-form upper bound on the Lipschitz constant");
    lip_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    lip_cmd->add_option("--eps", lip_eps, "probe radius")->capture_default_str()->check(CLI::PositiveNumber);
    lip_cmd->add_option("--p", p_text, "evaluate the net at this p (number or inf)")->capture_default_str();
    lip_cmd->add_option("--steps", lip_steps, "PGD iterations per output")->capture_default_str();
    lip_cmd->add_option("--seed", seed, "probe seed")->capture_default_str();
    lip_data.attach(lip_cmd);

    detail::DataFlags rsep_data;
    auto* rsep_cmd = app.add_subcommand("rsep", "r-separation of a dataset (half the closest inter-class distance)");
    rsep_cmd->add_option("--seed", seed, "unused; accepted for uniformity")->capture_default_str();
    rsep_data.attach(rsep_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (train_cmd->parsed()) {
            std::ifstream in(config_path);
            std::stringstream text;
            text << in.rdbuf();
            if (train_seed) overrides.push_back("seed=" + std::to_string(*train_seed));
            const auto cfg = resolve_config(parse_config_entries(text.str(), config_path), parse_overrides(overrides));
            const std::filesystem::path dir =
                out_dir.empty() ? std::filesystem::path("runs") / std::filesystem::path(config_path).stem()
                                : std::filesystem::path(out_dir);
            std::filesystem::create_directories(dir);
            detail::write_text(dir / "resolved.cfg", echo_config(cfg));
            const auto train_set = load_split(cfg.data, Split::train);
            const auto test_set = load_split(cfg.data, Split::test);
            auto tc = cfg.train_config();
            tc.metrics_path = dir / "metrics.csv";
            const auto res = train(tc, train_set, test_set, [&](const MetricsRow& r) {
                if (quiet) return;
                out << "epoch " << r.epoch << " p " << to_string(r.p) << " loss " << detail::fixed4(r.train_loss)
                    << " train_acc " << detail::fixed4(r.train_acc) << " train_cert " << detail::fixed4(r.train_cert_acc)
                    << " test_acc " << detail::fixed4(r.test_acc) << " test_cert " << detail::fixed4(r.test_cert_acc)
                    << '\n';
            });
            save_checkpoint(res.net, dir / "model.ldn");
            const auto ev = evaluate(res.net.cast<double>(), test_set, tc.eps, cfg.pgd_steps, tc.seed);
            std::string summary = "clean_acc " + detail::fixed4(ev.clean_acc) + "\ncert_acc " +
                                  detail::fixed4(ev.cert_acc) + "\n";
            if (ev.pgd_acc) summary += "pgd_acc " + detail::fixed4(*ev.pgd_acc) + "\n";
            detail::write_text(dir / "summary.txt", summary);
            out << summary;
            return 0;
        }
        if (eval_cmd->parsed()) {
            const auto data = eval_data.load();
            const auto net = load_checkpoint(ckpt);
            detail::check_dims(net, data);
            const auto ev = evaluate(net.certifiable().cast<double>(), data, eps, steps, seed);
            out << "clean_acc " << detail::fixed4(ev.clean_acc) << "\ncert_acc " << detail::fixed4(ev.cert_acc) << '\n';
            if (ev.pgd_acc) out << "pgd_acc " << detail::fixed4(*ev.pgd_acc) << '\n';
            return 0;
        }
        if (cert_cmd->parsed()) {
            const auto data = cert_data.load();
            const auto net = load_checkpoint(ckpt);
            detail::check_dims(net, data);
            const auto rep = certified_accuracy(net.certifiable().cast<double>(), data, eps);
            if (!report_path.empty()) write_report_csv(rep, report_path);
            double min_margin = std::numeric_limits<double>::infinity();
            for (double m : rep.margins) min_margin = std::min(min_margin, m);
            out << "samples " << rep.size() << "\nclean_acc " << detail::fixed4(rep.clean_acc) << "\ncert_acc "
                << detail::fixed4(rep.cert_acc) << "\nmin_margin " << detail::exact(min_margin) << '\n';
            return 0;
        }
        if (attack_cmd->parsed()) {
            const auto data = attack_data.load();
            const auto net = load_checkpoint(ckpt);
            detail::check_dims(net, data);
            PgdConfig pc;
            pc.steps = steps;
            pc.restarts = restarts;
            pc.seed = seed;
            const double acc = robust_accuracy(net.certifiable().cast<double>(), data, eps, pc);
            out << "pgd_acc " << detail::fixed4(acc) << '\n';
            return 0;
        }
        if (construct_cmd->parsed()) {
            const auto data = construct_data.load();
            const auto sep = r_separation(data);
            const auto net = layers == 2 ? build_two_layer<float>(data) : build_multi_layer<float>(data, layers);
            save_checkpoint(net, construct_out);
            nlohmann::ordered_json meta;
            meta["construction"] = layers == 2 ? "two_layer" : "multi_layer";
            meta["layers"] = layers;
            meta["dataset"] = data.name;
            meta["samples"] = data.size();
            meta["classes"] = data.classes;
            meta["domain"] = {0.0, domain_bound(data)};
            meta["r"] = sep.r;
            meta["dims"] = net.dims();
            detail::write_text(construct_out + ".meta", meta.dump(2) + "\n");
            out << "layers " << layers << "\nhidden_width " << net.layers.front().outputs() << "\nr "
                << detail::exact(sep.r) << '\n';
            return 0;
        }
        if (lip_cmd->parsed()) {
            const auto data = lip_data.load();
            auto net = load_checkpoint(ckpt).cast<double>();
            detail::check_dims(load_checkpoint(ckpt), data);
            net.p = detail::parse_p(p_text);
            net.mode = Mode::inference;
            const auto est = lipschitz_lower_bound(net, data, lip_eps, lip_steps, 1, seed);
            out << "p " << to_string(net.p) << "\nlower_mean " << detail::exact(est.mean) << "\nlower_max "
                << detail::exact(est.max) << "\nupper " << detail::exact(lipschitz_upper_bound(net)) << '\n';
            return 0;
        }
        if (rsep_cmd->parsed()) {
            const auto data = rsep_data.load();
            const auto rep = r_separation(data);
            out << "samples " << rep.samples_examined << "\nr " << detail::exact(rep.r) << "\npair " << rep.first << ' '
                << rep.second << '\n';
            return 0;
        }
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << '\n';
        return 1;
    } catch (const CLI::ValidationError& e) {
        err << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}

}  // namespace ldn::cli
