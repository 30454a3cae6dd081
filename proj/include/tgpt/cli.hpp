#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "CLI11.hpp"
#include "tgpt/ablation.hpp"
#include "tgpt/checkpoint.hpp"
#include "tgpt/config.hpp"
#include "tgpt/costmodel.hpp"
#include "tgpt/data.hpp"
#include "tgpt/gradcheck_suite.hpp"
#include "tgpt/io.hpp"
#include "tgpt/trainer.hpp"

namespace tgpt::cli {

inline constexpr std::array<std::string_view, 7> kVerbs{"gen-data", "pretrain", "train",    "eval",
                                                         "gradcheck", "ablate",  "costmodel"};

inline constexpr const char* kUsage =
    "usage: tgpt <verb> --config PATH --out DIR [--seed U64] [--shots {1,2,4,8,16}]\n"
    "verbs:\n"
    "  gen-data   render the glyph dataset, descriptions, vocabulary and splits\n"
    "  pretrain   contrastive pretraining of the dual encoder\n"
    "  train      prompt tuning on a few-shot split (metrics.csv, checkpoints/tgpt.ckpt)\n"
    "  eval       image-only evaluation of checkpoints/tgpt.ckpt [--split S] [--embeddings] [--audit]\n"
    "  gradcheck  finite-difference gradient checks, one line per kernel and graph\n"
    "  ablate     grid over the grid_* config keys (ablation.csv)\n"
    "  costmodel  activation-memory scaling table (cost.csv)\n";

/// Output layout under --out.
struct Layout {
    std::filesystem::path root;

    [[nodiscard]] std::filesystem::path dataset() const { return root / "dataset"; }
    [[nodiscard]] std::filesystem::path splits() const { return dataset() / "splits"; }
    [[nodiscard]] std::filesystem::path vocab() const { return dataset() / "vocab.txt"; }
    [[nodiscard]] std::filesystem::path checkpoints() const { return root / "checkpoints"; }
    [[nodiscard]] std::filesystem::path encoders() const { return checkpoints() / "encoders.ckpt"; }
    [[nodiscard]] std::filesystem::path model() const { return checkpoints() / "tgpt.ckpt"; }
};

struct Options {
    std::string verb;
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> shots;
    std::string split = "test";
    bool embeddings = false;
    bool audit = false;
    bool quiet = false;
};

inline TrainConfig resolve_config(const Options& o) {
    TrainConfig cfg = o.config_path.empty() ? TrainConfig{} : TrainConfig::load(o.config_path);
    if (o.seed) cfg.seed = *o.seed;
    if (o.shots) cfg.shots = *o.shots;
    cfg.validate();
    return cfg;
}

inline DatasetConfig dataset_config(const TrainConfig& cfg, bool pretraining) {
    return {cfg.n_colors, cfg.n_shapes, pretraining ? cfg.pretrain_per_class : cfg.per_class,
            pretraining ? cfg.pretrain_dataset_seed : cfg.dataset_seed};
}

inline GlyphDataset load_training_dataset(const Layout& L) {
    auto ds = load_dataset_images(L.dataset());
    load_descriptions(ds, L.dataset());
    return ds;
}

inline TrainingText load_training_text(const Layout& L, const Vocabulary& vocab, const TrainConfig& cfg) {
    return training_text(vocab, load_class_names(L.dataset(), cfg.class_names == "opaque"),
                         load_templates(L.dataset() / "templates.txt"));
}

inline void require_dataset_matches(const GlyphDataset& ds, const TrainConfig& cfg) {
    if (ds.config.n_colors != cfg.n_colors || ds.config.n_shapes != cfg.n_shapes) {
        throw std::invalid_argument("dataset class grid does not match the config");
    }
}

inline int cmd_gen_data(const Options& o, std::ostream& out) {
    const auto cfg = resolve_config(o);
    const Layout L{o.out_dir};
    const auto threads = generation_threads();
    const auto ds = build_dataset(dataset_config(cfg, false), threads);
    const auto pre = build_dataset(dataset_config(cfg, true), threads);
    save_dataset(ds, L.dataset(), category_template_list(cfg));
    const auto vocab = Vocabulary::build(vocabulary_corpus({&ds, &pre}));
    vocab.save(L.vocab());
    std::filesystem::create_directories(L.splits());
    for (auto n : kShotSettings) save_split(sample_few_shot(ds, n, cfg.seed), L.splits(), cfg.seed);
    out << "samples=" << ds.samples.size() << " classes=" << ds.n_classes() << " vocab=" << vocab.size() << "\n";
    return 0;
}

inline int cmd_pretrain(const Options& o, std::ostream& out, std::ostream& err) {
    const auto cfg = resolve_config(o);
    const Layout L{o.out_dir};
    const auto vocab = Vocabulary::load(L.vocab());
    const auto pre = build_dataset(dataset_config(cfg, true), generation_threads());
    auto res = pretrain_contrastive(pre, vocab, cfg, [&](std::size_t it, float loss) {
        if (!o.quiet && it % 100 == 0) err << "pretrain iter " << it << " loss " << loss << "\n";
    });
    std::filesystem::create_directories(L.checkpoints());
    save_checkpoint(L.encoders(), encoder_checkpoint(res.encoders, cfg, vocab.size()));
    std::string csv = "iter,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < res.losses.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i + 1, static_cast<double>(res.losses[i]));
        csv += buf;
    }
    io::write_text_atomic(L.root / "pretrain.csv", csv);

    // Zero-shot baseline on the downstream test set.
    const auto ds = load_dataset_images(L.dataset());
    const auto cache = build_feature_cache(res.encoders.image, ds);
    const auto split = sample_few_shot(ds, cfg.shots, cfg.seed);
    const auto t = class_text_features(res.encoders.text, vocab,
                                       TemplateRegistry(ds.class_names(false), {kGlyphTemplate}));
    const double zs = accuracy(zero_shot_classify(cache, split.test, t), labels_of(ds, split.test));
    char line[128];
    std::snprintf(line, sizeof line, "final_loss=%.6f zero_shot_test_acc=%.6f\n",
                  static_cast<double>(res.losses.back()), zs);
    out << line;
    return 0;
}

inline int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
    const auto cfg = resolve_config(o);
    const Layout L{o.out_dir};
    const auto ds = load_training_dataset(L);
    require_dataset_matches(ds, cfg);
    const auto vocab = Vocabulary::load(L.vocab());
    auto encoders = load_encoders(load_checkpoint(L.encoders()), cfg);
    const auto split = sample_few_shot(ds, cfg.shots, cfg.seed);
    std::filesystem::create_directories(L.splits());
    save_split(split, L.splits(), cfg.seed);
    const auto text = load_training_text(L, vocab, cfg);
    const auto cache = build_feature_cache(encoders.image, ds);
    const auto run = train_tgpt(std::move(encoders), ds, split, text, cfg, &cache, [&](const MetricsRow& r) {
        if (!o.quiet) {
            err << "iter " << r.iter << " L_total " << r.loss.L_total << " val_acc " << r.val_acc << "\n";
        }
    });
    io::write_text_atomic(L.root / "metrics.csv", metrics_csv(run.metrics));
    std::filesystem::create_directories(L.checkpoints());
    save_checkpoint(L.model(), model_checkpoint(run.model, cfg));
    const double train_acc = evaluate_model(run.model, ds, split.train, &cache).accuracy;
    char line[160];
    std::snprintf(line, sizeof line, "best_val_acc=%.6f best_iter=%zu train_acc=%.6f\n", run.best_val,
                  run.best_iter, train_acc);
    out << line;
    return 0;
}

/// Image-only inference: reads the checkpoint, dataset images/index/meta and
/// split id lists, nothing else.
inline int cmd_eval(const Options& o, std::ostream& out) {
    const Layout L{o.out_dir};
    io::FileAudit audit;
    TrainConfig cfg;
    const auto model = load_tgpt_model(load_checkpoint(L.model()), &cfg);
    const std::uint64_t seed = o.seed.value_or(cfg.seed);
    const std::size_t shots = o.shots.value_or(cfg.shots);
    const auto ds = load_dataset_images(L.dataset());
    if (ds.n_classes() != model.projector.n_classes()) {
        throw std::invalid_argument("eval: dataset has " + std::to_string(ds.n_classes()) +
                                    " classes, checkpoint expects " + std::to_string(model.projector.n_classes()));
    }
    const auto split = load_split(L.splits(), shots, seed);
    const std::vector<std::size_t>* ids = nullptr;
    if (o.split == "train") ids = &split.train;
    else if (o.split == "val") ids = &split.val;
    else if (o.split == "test") ids = &split.test;
    else throw std::invalid_argument("eval: --split must be train, val or test");
    for (auto id : *ids) {
        if (id >= ds.samples.size()) throw std::invalid_argument("eval: split references unknown sample id");
    }
    const auto r = evaluate_model(model, ds, *ids, nullptr, o.embeddings);
    io::write_text_atomic(L.root / "eval_per_class.csv", per_class_csv(r, ds.n_classes()));
    if (o.embeddings) io::write_text_atomic(L.root / "embeddings.csv", embedding_csv(r, *ids));
    char line[128];
    std::snprintf(line, sizeof line, "split=%s n=%zu accuracy=%.6f\n", o.split.c_str(), ids->size(), r.accuracy);
    out << line;
    if (o.audit) {
        for (const auto& p : audit.opened()) out << "audit read " << p.string() << "\n";
    }
    return 0;
}

inline int cmd_gradcheck(const Options& o, std::ostream& out) {
    const auto reports = gradcheck_suite(o.seed.value_or(0));
    bool ok = true;
    char line[160];
    for (const auto& r : reports) {
        std::snprintf(line, sizeof line, "%s %-22s max_rel_err=%.3e tol=%.0e\n", r.passed() ? "PASS" : "FAIL",
                      r.label.c_str(), r.max_rel_error(), r.tolerance);
        out << line;
        ok = ok && r.passed();
    }
    return ok ? 0 : 1;
}

inline int cmd_ablate(const Options& o, std::ostream& out, std::ostream& err) {
    const auto cfg = resolve_config(o);
    const auto grid = ablation_grid(cfg);
    const Layout L{o.out_dir};
    const auto ds = load_training_dataset(L);
    require_dataset_matches(ds, cfg);
    const auto vocab = Vocabulary::load(L.vocab());
    const auto encoders = load_encoders(load_checkpoint(L.encoders()), cfg);
    const auto cache = build_feature_cache(encoders.image, ds);
    const auto rows = run_ablation({&ds, &vocab, &encoders, &cache}, cfg, grid, [&](const AblationRow& r) {
        if (!o.quiet) err << "ablate seed " << r.seed << " shots " << r.shots << " test_acc " << r.test_acc << "\n";
    });
    io::write_text_atomic(L.root / "ablation.csv", ablation_csv(rows));
    out << "rows=" << rows.size() << "\n";
    return 0;
}

inline std::vector<std::uint64_t> parse_u64_list(const std::string& s, const char* what) {
    std::vector<std::uint64_t> out;
    for (const auto& item : split_list(s)) {
        std::size_t used = 0;
        const auto v = std::stoull(item, &used);
        if (used != item.size() || v == 0) throw std::invalid_argument(std::string(what) + ": bad value '" + item + "'");
        out.push_back(v);
    }
    return out;
}

inline int cmd_costmodel(const Options& o, std::ostream& out) {
    const auto cfg = resolve_config(o);
    CostInputs shape;
    shape.seq_len = cfg.max_len;
    shape.d = cfg.d;
    shape.depth = cfg.text_depth;
    shape.heads = cfg.heads;
    const auto table = scaling_table(parse_u64_list(cfg.cost_classes, "cost_classes"),
                                     parse_u64_list(cfg.cost_batch_sizes, "cost_batch_sizes"), shape);
    const Layout L{o.out_dir};
    std::filesystem::create_directories(L.root);
    io::write_text_atomic(L.root / "cost.csv", table.csv());
    out << "rows=" << table.rows.size() << " tgpt_constant_in_N=" << table.tgpt_constant_in_n
        << " coop_increasing_in_N=" << table.coop_increasing_in_n
        << " cocoop_is_bs_times_coop=" << table.cocoop_is_bs_times_coop << "\n";
    return 0;
}

/// Entry point: 0 on success, 1 with a one-line diagnostic on any error,
/// 2 with usage text for an unknown verb.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    if (argc < 2 || std::find(kVerbs.begin(), kVerbs.end(), std::string_view(argv[1])) == kVerbs.end()) {
        if (argc >= 2) err << "error: unknown verb '" << argv[1] << "'\n";
        err << kUsage;
        return 2;
    }
    Options o;
    o.verb = argv[1];
    CLI::App app{"tgpt " + o.verb};
    app.add_option("--config", o.config_path, "flat key=value config file");
    app.add_option("--out", o.out_dir, "output directory");
    app.add_option("--seed", o.seed, "seed override");
    app.add_option("--shots", o.shots, "shots per class")->check(CLI::IsMember({1, 2, 4, 8, 16}));
    app.add_option("--split", o.split, "eval split: train, val or test");
    app.add_flag("--embeddings", o.embeddings, "eval: write embeddings.csv");
    app.add_flag("--audit", o.audit, "eval: list every file read");
    app.add_flag("--quiet", o.quiet, "no progress lines on stderr");
    try {
        std::vector<std::string> args;
        for (int i = argc - 1; i >= 2; --i) args.emplace_back(argv[i]);
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    try {
        if (o.verb != "gradcheck" && o.out_dir.empty()) throw std::invalid_argument("--out is required");
        if (o.verb == "gen-data") return cmd_gen_data(o, out);
        if (o.verb == "pretrain") return cmd_pretrain(o, out, err);
        if (o.verb == "train") return cmd_train(o, out, err);
        if (o.verb == "eval") return cmd_eval(o, out);
        if (o.verb == "gradcheck") return cmd_gradcheck(o, out);
        if (o.verb == "ablate") return cmd_ablate(o, out, err);
        return cmd_costmodel(o, out);
    } catch (const std::exception& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        err << "error: " << msg << "\n";
        return 1;
    }
}

}  // namespace tgpt::cli
