// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end for the training harness.
//
//   bam gen-data      --config cfg --seed N --out DIR
//   bam train-teacher --config cfg --seed N --data DIR --task ID --out DIR
//   bam train-student --config cfg --seed N --data DIR --method TOKEN --out DIR
//   bam finetune      --config cfg --seed N --data DIR --ckpt FILE --task ID --out DIR
//   bam run-matrix    --config cfg --data DIR --out DIR [--parallel N] [--resume]
//   bam significance  --config cfg --results FILE --out DIR
//   bam report        --results FILE [--out DIR]
//
// Exit codes: 0 success (for run-matrix: every requested cell succeeded),
// 1 at least one matrix cell failed, 2 usage or runtime error.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bam/harness.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string out_dir = "out";
    std::string data_dir = "data";
    std::size_t parallel = 1;
    bool resume = false;
};

void add_common(CLI::App* sub, CommonOpts& opt, bool with_data) {
    sub->add_option("--config", opt.config_path, "config file (defaults apply when omitted)");
    sub->add_option("--seed", opt.seed, "trial seed")->each([&](const std::string&) {
        opt.seed_given = true;
    });
    sub->add_option("--out", opt.out_dir, "output directory");
    sub->add_option("--parallel", opt.parallel, "worker threads");
    sub->add_flag("--resume", opt.resume, "keep completed matrix cells");
    if (with_data) sub->add_option("--data", opt.data_dir, "dataset directory");
}

bam::config::Config load_config(const CommonOpts& opt) {
    return opt.config_path.empty() ? bam::config::Config()
                                   : bam::config::Config::from_file(opt.config_path);
}

bam::harness::Suite load_or_generate(const bam::config::Config& cfg, const CommonOpts& opt) {
    if (fs::exists(opt.data_dir)) return bam::harness::read_suite(opt.data_dir);
    const std::uint64_t seed = cfg.get_size("suite_seed");
    std::cerr << "note: " << opt.data_dir << " missing; generating suite with seed " << seed
              << "\n";
    auto suite = bam::harness::build_suite(cfg, seed);
    bam::harness::write_suite(suite, opt.data_dir);
    return suite;
}

void print_scores(const bam::results::TrialResult& row) {
    for (const auto& [task, score] : row.scores)
        std::printf("%-10s %.1f\n", task.c_str(), score);
    if (row.ok && !row.scores.empty()) std::printf("%-10s %.1f\n", "average", row.average);
}

int cmd_gen_data(const CommonOpts& opt) {
    const auto cfg = load_config(opt);
    const std::uint64_t seed = opt.seed_given ? opt.seed : cfg.get_size("suite_seed");
    const auto suite = bam::harness::build_suite(cfg, seed);
    bam::harness::write_suite(suite, opt.out_dir);
    for (const auto& id : suite.task_ids()) {
        const auto& ds = suite.dataset(id);
        std::printf("%-10s train %-6zu dev %-5zu -> %s/%s.tsv\n", id.c_str(), ds.train.size(),
                    ds.dev.size(), opt.out_dir.c_str(), id.c_str());
    }
    return 0;
}

int cmd_train_teacher(const CommonOpts& opt, const std::string& task) {
    const auto cfg = load_config(opt);
    const auto suite = load_or_generate(cfg, opt);
    const auto teacher = bam::harness::train_teacher(suite, task, cfg, opt.seed);
    fs::create_directories(opt.out_dir);
    const std::string path =
        opt.out_dir + "/teacher-" + task + "-seed" + std::to_string(opt.seed) + ".ckpt";
    const auto digest = bam::model::save_checkpoint(*teacher.model, path);
    for (std::size_t e = 0; e < teacher.log.epoch_dev.size(); ++e)
        std::printf("%s: epoch %zu dev %.1f\n", task.c_str(), e + 1, teacher.log.epoch_dev[e]);
    std::printf("%s: dev %.1f (layer decay %g) -> %s digest %016llx\n", task.c_str(),
                teacher.dev_score, teacher.layer_decay, path.c_str(),
                static_cast<unsigned long long>(digest));
    return 0;
}

int cmd_train_student(const CommonOpts& opt, const std::string& method) {
    const auto cfg = load_config(opt);
    const auto suite = load_or_generate(cfg, opt);
    const auto ms = bam::harness::parse_method(method);
    bam::harness::ArtifactStore store(opt.out_dir + "/checkpoints");
    auto cell = bam::harness::run_cell(suite, cfg, ms, opt.seed, store);
    if (!cell.row.ok) {
        std::fprintf(stderr, "%s\n", cell.row.status.c_str());
        return 2;
    }
    std::string name = ms.name;
    for (char& c : name)
        if (c == ':' || c == '=' || c == '+') c = '_';
    for (const auto& [label, model] : cell.finals) {
        std::string path = opt.out_dir + "/student-" + name + "-seed" +
                           std::to_string(opt.seed);
        if (cell.finals.size() > 1) path += "-" + label;
        path += ".ckpt";
        bam::model::save_checkpoint(*model, path);
        std::printf("saved %s\n", path.c_str());
    }
    print_scores(cell.row);
    return 0;
}

int cmd_finetune(const CommonOpts& opt, const std::string& ckpt, const std::string& task) {
    const auto cfg = load_config(opt);
    const auto suite = load_or_generate(cfg, opt);
    const auto base = bam::model::load_checkpoint(ckpt);
    const double before = bam::harness::eval_dev(base, suite, task);
    auto tuned = bam::harness::finetune_single(base, suite, task,
                                               bam::harness::finetune_settings(cfg),
                                               bam::harness::derive_seed(opt.seed,
                                                                         "finetune:" + task));
    if (!tuned.log.ok) {
        std::fprintf(stderr, "finetune failed: %s\n", tuned.log.failure.c_str());
        return 2;
    }
    const double after = bam::harness::eval_dev(*tuned.model, suite, task);
    fs::create_directories(opt.out_dir);
    const std::string path =
        opt.out_dir + "/finetune-" + task + "-seed" + std::to_string(opt.seed) + ".ckpt";
    bam::model::save_checkpoint(*tuned.model, path);
    std::printf("%s: dev %.1f -> %.1f, saved %s\n", task.c_str(), before, after, path.c_str());
    return 0;
}

int cmd_run_matrix(const CommonOpts& opt) {
    const auto cfg = load_config(opt);
    const auto suite = load_or_generate(cfg, opt);
    bam::harness::MatrixOptions mo{opt.out_dir, opt.parallel, opt.resume};
    const bool all_ok = bam::harness::run_matrix(cfg, suite, mo);
    const auto rf = bam::results::read_results(opt.out_dir + "/results.tsv");
    std::printf("%zu rows in %s/results.tsv\n", rf.rows.size(), opt.out_dir.c_str());
    if (!all_ok) {
        for (const auto& r : rf.rows)
            if (!r.ok)
                std::fprintf(stderr, "%s seed %llu: %s\n", r.method.c_str(),
                             static_cast<unsigned long long>(r.seed), r.status.c_str());
        return 1;
    }
    return 0;
}

int cmd_significance(const CommonOpts& opt, std::string results_path) {
    const auto cfg = load_config(opt);
    if (results_path.empty()) results_path = opt.out_dir + "/results.tsv";
    const auto rf = bam::results::read_results(results_path);
    const auto comparisons = bam::harness::parse_comparisons(cfg.get_list("comparisons"));
    const auto report = bam::harness::significance_report(
        rf, comparisons, cfg.get_double("alpha"), cfg.get("significance_test"),
        cfg.get_size("bootstrap_resamples"), cfg.get_size("suite_seed"));
    fs::create_directories(opt.out_dir);
    const std::string tsv_path = opt.out_dir + "/significance.tsv";
    std::ofstream(tsv_path) << report.tsv;
    std::fputs(report.table.c_str(), stdout);
    std::printf("wrote %s\n", tsv_path.c_str());
    return 0;
}

int cmd_report(const CommonOpts& opt, std::string results_path) {
    if (results_path.empty()) results_path = opt.out_dir + "/results.tsv";
    const auto rf = bam::results::read_results(results_path);
    const auto text = bam::harness::render_report(rf);
    std::fputs(text.c_str(), stdout);
    if (!opt.out_dir.empty()) {
        fs::create_directories(opt.out_dir);
        std::ofstream(opt.out_dir + "/report.txt") << text;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-task distillation experiment harness"};
    app.require_subcommand(1);
    CommonOpts opt;
    std::string task, method = "single_multi", ckpt, results_path;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic task suite");
    add_common(gen, opt, false);

    auto* teacher = app.add_subcommand("train-teacher", "train one single-task teacher");
    add_common(teacher, opt, true);
    teacher->add_option("--task", task, "task id")->required();

    auto* student = app.add_subcommand("train-student", "train one method cell");
    add_common(student, opt, true);
    student->add_option("--method", method, "method token, e.g. single_multi:lambda=0");

    auto* ft = app.add_subcommand("finetune", "fine-tune one task from a checkpoint");
    add_common(ft, opt, true);
    ft->add_option("--ckpt", ckpt, "checkpoint file")->required();
    ft->add_option("--task", task, "task id")->required();

    auto* matrix = app.add_subcommand("run-matrix", "run the full (method x seed) grid");
    add_common(matrix, opt, true);

    auto* sig = app.add_subcommand("significance", "test configured method comparisons");
    add_common(sig, opt, false);
    sig->add_option("--results", results_path, "results file (default <out>/results.tsv)");

    auto* rep = app.add_subcommand("report", "summarize a results file");
    add_common(rep, opt, false);
    rep->add_option("--results", results_path, "results file (default <out>/results.tsv)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(opt);
        if (teacher->parsed()) return cmd_train_teacher(opt, task);
        if (student->parsed()) return cmd_train_student(opt, method);
        if (ft->parsed()) return cmd_finetune(opt, ckpt, task);
        if (matrix->parsed()) return cmd_run_matrix(opt);
        if (sig->parsed()) return cmd_significance(opt, results_path);
        if (rep->parsed()) return cmd_report(opt, results_path);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
