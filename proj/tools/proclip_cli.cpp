#include "proclip/config.hpp"
#include "proclip/proclip.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#ifndef PROCLIP_VERSION
#define PROCLIP_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace proclip;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

constexpr const char* kTeachersFile = "teachers.pclp";

struct Options {
    std::string config;
    std::string data;
    std::string out;
    std::string stage1_ckpt;
    std::string ckpt;
    std::optional<std::uint64_t> seed;
};

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Written before any work starts and rewritten with the end time on success.
class RunManifest {
public:
    RunManifest(std::string command, const fs::path& out, std::string config_text, std::uint64_t seed)
        : path_(out / "run_manifest.json") {
        j_["command"] = std::move(command);
        j_["version"] = PROCLIP_VERSION;
        j_["seed"] = seed;
        j_["output_dir"] = out.string();
        j_["started_at"] = utc_now();
        j_["finished_at"] = nullptr;
        j_["config_snapshot"] = std::move(config_text);
        write();
    }

    void finish() {
        j_["finished_at"] = utc_now();
        write();
    }

private:
    void write() const { io::write_text(path_, j_.dump(2) + "\n"); }

    fs::path path_;
    Json j_;
};

struct Loaded {
    ExperimentConfig config;
    std::string text;
};

Loaded load(const Options& o) {
    if (o.config.empty()) throw ConfigError("--config is required");
    Loaded l{{}, io::read_text(o.config)};
    l.config = parse_config(l.text);
    if (o.seed) l.config.train.seed = *o.seed;
    return l;
}

void require_proclip_mode(const Loaded& l, const char* command) {
    require(l.config.train.mode == Mode::ProClip,
            std::string(command) + ": config mode is baseline_contrastive; use train-baseline");
}

fs::path out_dir(const Options& o) {
    if (o.out.empty()) throw ConfigError("--out is required");
    fs::create_directories(o.out);
    return o.out;
}

fs::path data_dir(const Options& o) {
    if (o.data.empty()) throw ConfigError("--data is required");
    return o.data;
}

Teachers read_teachers(const fs::path& data) {
    const fs::path p = data / kTeachersFile;
    if (!fs::exists(p)) throw ConfigError("no " + p.string() + "; run 'pretrain --out " + data.string() + "' first");
    const Checkpoint c = read_checkpoint(p);
    Teachers t{load_encoder(c, "image_encoder"), load_encoder(c, "text_encoder", true),
               load_scalar(c, "log_tau"), {}, {}};
    return t;
}

void write_log(const fs::path& out, const LossLog& log) { io::write_text(out / "loss_log.csv", log.to_csv()); }

void save_stage2(const fs::path& path, Stage2Result& r) {
    Checkpoint c;
    store(c, r.image_encoder);
    store(c, r.projector);
    ToyEncoder ema("ema_image_encoder", r.ema.shadow().net(), true);
    store(c, ema);
    store_scalar(c, "log_tau", r.log_tau);
    write_checkpoint(path, c);
}

int cmd_gen_data(const Options& o) {
    const Loaded l = load(o);
    const fs::path out = out_dir(o);
    RunManifest m("gen-data", out, l.text, l.config.train.seed);
    const SyntheticWorld world = generate_world(l.config.train.seed, l.config.world);
    const CorpusSplit corpus = sample_corpus(world, l.config.n_per_class, l.config.split);
    write_corpus(out, world, corpus);
    std::cout << "wrote corpus: " << corpus.finetune.size() << " fine-tune, " << corpus.retrieval_eval.size()
              << " eval, " << corpus.heldout.size() << " held-out samples to " << out.string() << "\n";
    m.finish();
    return kExitOk;
}

int cmd_pretrain(const Options& o) {
    const Loaded l = load(o);
    const fs::path out = out_dir(o);
    RunManifest m("pretrain", out, l.text, l.config.train.seed);
    const SyntheticWorld world = generate_world(l.config.train.seed, l.config.world);
    Teachers t = pretrain_teachers(world, l.config.pretrain);
    Checkpoint c;
    store(c, t.image_encoder);
    store(c, t.text_encoder);
    store_scalar(c, "log_tau", t.log_tau);
    write_checkpoint(out / kTeachersFile, c);
    write_log(out, t.log);
    std::cout << "teachers: Recall@1 i2t " << t.recall.image_to_text << " t2i " << t.recall.text_to_image << "\n";
    m.finish();
    return kExitOk;
}

int cmd_stage1(const Options& o) {
    const Loaded l = load(o);
    const fs::path data = data_dir(o);
    const fs::path out = out_dir(o);
    require_proclip_mode(l, "stage1");
    RunManifest m("stage1", out, l.text, l.config.train.seed);
    const StoredCorpus sc = read_corpus(data);
    const Teachers t = read_teachers(data);
    Stage1Result r = run_stage1(l.config.train, distillation_data(sc.corpus, t.text_encoder),
                                initial_projector(l.config.train, l.config.world.dims));
    Checkpoint c;
    store(c, r.projector);
    write_checkpoint(out / "stage1.pclp", c);
    write_log(out, r.log);
    const auto means = r.log.epoch_means(r.steps_per_epoch);
    std::cout << "stage1: " << means.size() << " epochs, loss " << means.front() << " -> " << means.back() << "\n";
    m.finish();
    return kExitOk;
}

int cmd_stage2(const Options& o) {
    const Loaded l = load(o);
    require_proclip_mode(l, "stage2");
    if (o.stage1_ckpt.empty()) throw ConfigError("stage2 requires --stage1-ckpt");
    if (!fs::exists(o.stage1_ckpt)) throw ConfigError("stage-1 checkpoint not found: " + o.stage1_ckpt);
    const fs::path data = data_dir(o);
    const fs::path out = out_dir(o);
    RunManifest m("stage2", out, l.text, l.config.train.seed);
    const StoredCorpus sc = read_corpus(data);
    const Teachers t = read_teachers(data);
    ToyEncoder projector = load_encoder(read_checkpoint(o.stage1_ckpt), "projector");
    Stage2Result r = run_stage2(l.config.train, contrastive_data(sc.corpus), std::move(projector), t.image_encoder);
    save_stage2(out / "stage2.pclp", r);
    write_log(out, r.log);
    std::cout << "stage2: " << r.log.rows.size() << " steps, final loss " << r.log.rows.back().loss_total << "\n";
    m.finish();
    return kExitOk;
}

int cmd_train_baseline(const Options& o) {
    const Loaded l = load(o);
    const fs::path data = data_dir(o);
    const fs::path out = out_dir(o);
    RunManifest m("train-baseline", out, l.text, l.config.train.seed);
    const StoredCorpus sc = read_corpus(data);
    const Teachers t = read_teachers(data);
    Stage2Result r = run_baseline(l.config.train, contrastive_data(sc.corpus),
                                  initial_projector(l.config.train, l.config.world.dims), t.image_encoder);
    save_stage2(out / "baseline.pclp", r);
    write_log(out, r.log);
    std::cout << "baseline: " << r.log.rows.size() << " steps, final loss " << r.log.rows.back().loss_total << "\n";
    m.finish();
    return kExitOk;
}

int cmd_eval(const Options& o) {
    if (o.ckpt.empty()) throw ConfigError("eval requires --ckpt");
    const fs::path data = data_dir(o);
    const Checkpoint c = read_checkpoint(o.ckpt);
    const StoredCorpus sc = read_corpus(data);
    const Teachers t = read_teachers(data);
    const ToyEncoder projector = load_encoder(c, "projector");
    const ToyEncoder image = c.has_prefix("image_encoder") ? load_encoder(c, "image_encoder") : t.image_encoder;
    const MetricsReport r = evaluate_model(fs::path(o.ckpt).stem().string(), image, projector, t.image_encoder,
                                           sc.corpus, sc.prototype_llm);
    std::cout << format_table({r});
    if (!o.out.empty()) io::write_text(out_dir(o) / "metrics.json", to_json(r).dump(2) + "\n");
    return kExitOk;
}

int cmd_ablate(const Options& o) {
    const Loaded l = load(o);
    std::optional<RunManifest> m;
    if (!o.out.empty()) m.emplace("ablate", out_dir(o), l.text, l.config.train.seed);
    const Experiment ex = prepare_experiment(l.config);
    const std::vector<MetricsReport> rows = run_ablation(ex, l.config.train);
    const MetricsReport base = run_baseline(ex, l.config.train).report;
    std::cout << format_table(rows) << "\nreference:\n" << format_table({base});
    if (m) {
        io::write_text(fs::path(o.out) / "ablation.json", to_json(rows).dump(2) + "\n");
        io::write_text(fs::path(o.out) / "baseline.json", to_json(base).dump(2) + "\n");
        m->finish();
    }
    return kExitOk;
}

int cmd_gradcheck() {
    bool ok = true;
    for (LossKind k : {LossKind::Instance, LossKind::Structure, LossKind::Distillation, LossKind::InfoNce,
                       LossKind::SelfDistillReg, LossKind::Tuning}) {
        const GradcheckReport r = gradcheck(k, 0);
        ok = ok && r.passed;
        std::printf("%-18s %s  max rel err %.3e  checked %zu  skipped %zu  worst %s\n", to_string(k).c_str(),
                    r.passed ? "PASS" : "FAIL", r.max_rel_error, r.checked, r.skipped, r.worst_input.c_str());
    }
    return ok ? kExitOk : kExitFailed;
}

void apply_thread_cap() {
    if (const char* v = std::getenv("PROCLIP_THREADS")) {
        const int n = std::atoi(v);
        if (n > 0) Eigen::setNbThreads(n);
    }
}

}  // namespace

int main(int argc, char** argv) {
    apply_thread_cap();
    CLI::App app{"Progressive LLM-to-CLIP alignment on a synthetic world"};
    app.set_version_flag("--version", PROCLIP_VERSION);
    app.require_subcommand(1);
    Options o;

    auto add_config = [&](CLI::App* s) {
        s->add_option("--config", o.config, "experiment config (JSON)");
        s->add_option("--seed", o.seed, "override the config seed");
    };
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic world and corpus");
    add_config(gen);
    gen->add_option("--out", o.out, "corpus directory");
    auto* pre = app.add_subcommand("pretrain", "pretrain the image and text teachers");
    add_config(pre);
    pre->add_option("--out", o.out, "output directory (usually the corpus directory)");
    pre->add_option("--data", o.data, "unused; accepted for symmetry");
    auto* s1 = app.add_subcommand("stage1", "distill the text teacher into the projector");
    auto* s2 = app.add_subcommand("stage2", "contrastive tuning with self-distillation");
    auto* base = app.add_subcommand("train-baseline", "from-scratch contrastive alignment");
    for (auto* s : {s1, s2, base}) {
        add_config(s);
        s->add_option("--data", o.data, "corpus directory with teachers.pclp");
        s->add_option("--out", o.out, "output directory");
    }
    s2->add_option("--stage1-ckpt", o.stage1_ckpt, "checkpoint written by stage1");
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--ckpt", o.ckpt, "checkpoint to evaluate");
    ev->add_option("--data", o.data, "corpus directory with teachers.pclp");
    ev->add_option("--out", o.out, "write metrics.json here");
    auto* abl = app.add_subcommand("ablate", "four-row component ablation, plus the baseline for reference");
    add_config(abl);
    abl->add_option("--out", o.out, "write ablation.json and a run manifest here");
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every loss gradient");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(o);
        if (pre->parsed()) return cmd_pretrain(o);
        if (s1->parsed()) return cmd_stage1(o);
        if (s2->parsed()) return cmd_stage2(o);
        if (base->parsed()) return cmd_train_baseline(o);
        if (ev->parsed()) return cmd_eval(o);
        if (abl->parsed()) return cmd_ablate(o);
        if (gc->parsed()) return cmd_gradcheck();
    } catch (const NumericalError& e) {
        std::cerr << "numerical abort at step " << e.step() << ": " << e.what() << "\n";
        return kExitNumerical;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
