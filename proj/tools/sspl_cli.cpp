// Command-line entry points: synthetic data generation, training, evaluation,
// ablations, and heatmap export. Every subcommand reads a `key = value` config
// file (--config), applies --set overrides, and honors --seed.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "sspl/runtime.hpp"
#include "sspl/trainer.hpp"

using namespace sspl;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> sets;
    int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key = value configuration file");
    cmd->add_option("--set", args.sets, "override a config key (key=value, repeatable)");
    cmd->add_option("--seed", args.seed, "override the config seed");
}

KeyValueConfig resolve_config(const CommonArgs& args) {
    KeyValueConfig cfg;
    if (!args.config_path.empty()) cfg = KeyValueConfig::load_file(args.config_path);
    for (const auto& assignment : args.sets) cfg.set_assignment(assignment);
    if (args.seed >= 0) cfg.set("seed", std::to_string(args.seed));
    return cfg;
}

GeneratorConfig generator_from_config(const KeyValueConfig& cfg) {
    auto gen = GeneratorConfig::defaults(static_cast<int>(cfg.get_int("k", 4)),
                                         static_cast<uint64_t>(cfg.get_int("seed", 1)));
    gen.image_size = static_cast<int>(cfg.get_int("image_size", gen.image_size));
    gen.spec_bins = static_cast<int>(cfg.get_int("spec_bins", gen.spec_bins));
    gen.spec_frames = static_cast<int>(cfg.get_int("spec_frames", gen.spec_frames));
    gen.sigma_image = static_cast<float>(cfg.get_double("sigma_image", gen.sigma_image));
    gen.sigma_spec = static_cast<float>(cfg.get_double("sigma_spec", gen.sigma_spec));
    gen.distractors_max = static_cast<int>(cfg.get_int("distractors_max", gen.distractors_max));
    gen.side_min = static_cast<int>(cfg.get_int("side_min", gen.side_min));
    gen.side_max = static_cast<int>(cfg.get_int("side_max", gen.side_max));
    gen.validate();
    return gen;
}

int cmd_gen_data(const CommonArgs& args) {
    auto cfg = resolve_config(args);
    auto gen = generator_from_config(cfg);
    const int count = static_cast<int>(cfg.get_int("count", 1000));
    const uint64_t index_offset = static_cast<uint64_t>(cfg.get_int("index_offset", 0));
    const std::string out = cfg.get_str("out", "data.bin");
    if (count < 1) throw UsageError("gen-data: count must be >= 1");

    Dataset ds;
    ds.image_size = gen.image_size;
    ds.spec_bins = gen.spec_bins;
    ds.spec_frames = gen.spec_frames;
    ds.k = gen.k;
    ds.pairs.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i)
        ds.pairs.push_back(gen_scene(gen, index_offset + static_cast<uint64_t>(i)));
    write_dataset(ds, out);
    std::cout << "wrote " << count << " samples to " << out << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args) {
    auto cfg = resolve_config(args);
    auto settings = settings_from_config(cfg);
    if (settings.dataset.empty()) throw UsageError("train: config key 'dataset' is required");
    auto data = load_dataset(settings.dataset);

    auto model = Model<float>::create(model_config_from_settings(settings, data));
    auto result = train_model(model, data, settings, &std::cout);

    if (!settings.log_out.empty()) {
        std::ofstream log(settings.log_out);
        if (!log) throw UsageError("train: cannot open log file " + settings.log_out);
        log << result.metrics_log;
    }
    save_model_checkpoint(model, settings,
                          static_cast<uint32_t>(std::max(result.best_epoch, 0)),
                          result.optimizer_steps, result.moments, settings.checkpoint_out);
    std::cout << "checkpoint written to " << settings.checkpoint_out << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args) {
    auto cfg = resolve_config(args);
    const std::string ckpt = cfg.get_str("checkpoint", "model.ckpt");
    const std::string data_path = cfg.get_str("eval_dataset", cfg.get_str("dataset", ""));
    if (data_path.empty()) throw UsageError("eval: config key 'eval_dataset' is required");
    const int pcm_T = static_cast<int>(cfg.get_int("pcm_T_override", -1));

    auto data = load_dataset(data_path);
    auto loaded = load_model_checkpoint(ckpt, data);
    auto report = evaluate_model(loaded.model, data, pcm_T);
    const std::string csv = report_to_csv(report);
    std::cout << csv;
    const std::string out = cfg.get_str("report", "");
    if (!out.empty()) {
        std::ofstream f(out);
        if (!f) throw UsageError("eval: cannot open report file " + out);
        f << csv;
    }
    return 0;
}

int cmd_ablate(const CommonArgs& args) {
    auto cfg = resolve_config(args);
    const std::string axis = cfg.get_str("axis", "");
    if (axis.empty()) throw UsageError("ablate: config key 'axis' is required");
    auto settings = settings_from_config(cfg);
    if (settings.dataset.empty()) throw UsageError("ablate: config key 'dataset' is required");
    const std::string test_path = cfg.get_str("eval_dataset", "");
    if (test_path.empty()) throw UsageError("ablate: config key 'eval_dataset' is required");

    auto train = load_dataset(settings.dataset);
    auto test = load_dataset(test_path);
    auto table = run_ablation(axis, settings, train, test, &std::cout);
    const std::string out = cfg.get_str("table", "");
    if (!out.empty()) {
        std::ofstream f(out);
        if (!f) throw UsageError("ablate: cannot open table file " + out);
        f << table;
    }
    return 0;
}

int cmd_viz(const CommonArgs& args) {
    auto cfg = resolve_config(args);
    const std::string ckpt = cfg.get_str("checkpoint", "model.ckpt");
    const std::string data_path = cfg.get_str("eval_dataset", cfg.get_str("dataset", ""));
    if (data_path.empty()) throw UsageError("viz: config key 'eval_dataset' is required");
    const std::string out_dir = cfg.get_str("out_dir", "viz");
    std::vector<int> indices;
    {
        std::string list = cfg.get_str("indices", "0");
        size_t at = 0;
        while (at < list.size()) {
            size_t comma = list.find(',', at);
            if (comma == std::string::npos) comma = list.size();
            indices.push_back(std::stoi(list.substr(at, comma - at)));
            at = comma + 1;
        }
    }
    auto data = load_dataset(data_path);
    auto loaded = load_model_checkpoint(ckpt, data);
    visualize_samples(loaded.model, data, indices, out_dir);
    std::cout << "wrote " << indices.size() << " sample visualizations to " << out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"negative-free audio-visual sound localization lab"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, eval_args, ablate_args, viz_args;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen, gen_args);
    auto* train = app.add_subcommand("train", "train a model");
    add_common(train, train_args);
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval, eval_args);
    auto* ablate = app.add_subcommand("ablate", "run an ablation axis");
    add_common(ablate, ablate_args);
    auto* viz = app.add_subcommand("viz", "export localization heatmaps");
    add_common(viz, viz_args);

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_gen_data(gen_args);
        if (train->parsed()) return cmd_train(train_args);
        if (eval->parsed()) return cmd_eval(eval_args);
        if (ablate->parsed()) return cmd_ablate(ablate_args);
        if (viz->parsed()) return cmd_viz(viz_args);
        return 1;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const FormatError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DimError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
