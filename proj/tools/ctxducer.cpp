#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctxducer/errors.hpp"
#include "ctxducer/eval/eval.hpp"
#include "ctxducer/harness/config.hpp"
#include "ctxducer/harness/matrix.hpp"
#include "ctxducer/harness/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ctxducer;

namespace {

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

json run_summary(const RunResult& r) {
    return {{"dev", r.report.at("dev")}, {"epoch_losses", r.report.at("train").at("epoch_losses")},
            {"train_seconds", r.timing.at("train_seconds")},
            {"decode_frames_per_second", r.timing.at("decode_frames_per_second")}};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-utterance context modelling for discrete-token transducer ASR"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus (manifest + feature files)");
    std::string gen_config, gen_out;
    std::uint64_t gen_seed = 0;
    bool gen_seed_set = false;
    gen->add_option("--config", gen_config, "Experiment config JSON")->required()->check(CLI::ExistingFile);
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { gen_seed = s, gen_seed_set = true; }, "Generator seed");

    // codebook train
    auto* cbk = app.add_subcommand("codebook", "Codebook operations");
    cbk->require_subcommand(1);
    auto* cbk_train = cbk->add_subcommand("train", "Train a k-means codebook on manifest features");
    std::string cb_manifest, cb_out;
    KMeansOptions km;
    cbk_train->add_option("--manifest", cb_manifest)->required()->check(CLI::ExistingFile);
    cbk_train->add_option("--k", km.K)->required();
    cbk_train->add_option("--iters", km.max_iters)->required();
    cbk_train->add_option("--seed", km.seed)->required();
    cbk_train->add_option("--out", cb_out)->required();

    // tokenize
    auto* tok = app.add_subcommand("tokenize", "Quantize manifest features into token indices");
    std::string tok_manifest, tok_codebook, tok_out;
    tok->add_option("--manifest", tok_manifest)->required()->check(CLI::ExistingFile);
    tok->add_option("--codebook", tok_codebook)->required()->check(CLI::ExistingFile);
    tok->add_option("--out", tok_out)->required();

    // train
    auto* train = app.add_subcommand("train", "Train a transducer and score it on the dev split");
    std::string tr_config, tr_mode, tr_out;
    std::size_t tr_prec = 0, tr_future = 0, tr_L = 0;
    train->add_option("--config", tr_config)->required()->check(CLI::ExistingFile);
    train->add_option("--mode", tr_mode)->check(CLI::IsMember({"none", "input-concat", "enc-concat", "compact"}));
    auto* prec_opt = train->add_option("--prec", tr_prec)->check(CLI::Range(0, 1));
    auto* fut_opt = train->add_option("--future", tr_future)->check(CLI::Range(0, 1));
    auto* L_opt = train->add_option("--L", tr_L)->check(CLI::PositiveNumber);
    train->add_option("--out", tr_out)->required();

    // finetune
    auto* ft = app.add_subcommand("finetune", "Fine-tune a trained checkpoint on the config's corpus");
    std::string ft_config, ft_init, ft_out;
    bool ft_no_reinit = false;
    ft->add_option("--config", ft_config)->required()->check(CLI::ExistingFile);
    ft->add_option("--init", ft_init)->required()->check(CLI::ExistingFile);
    ft->add_flag("--no-reinit-output", ft_no_reinit, "Keep the checkpoint's output projection");
    ft->add_option("--out", ft_out)->required();

    // decode
    auto* dec = app.add_subcommand("decode", "Greedy-decode a manifest with a trained checkpoint");
    std::string dec_ckpt, dec_manifest, dec_out;
    dec->add_option("--ckpt", dec_ckpt)->required()->check(CLI::ExistingFile);
    dec->add_option("--manifest", dec_manifest)->required()->check(CLI::ExistingFile);
    dec->add_option("--out", dec_out)->required();

    // score
    auto* sc = app.add_subcommand("score", "Word error rate of hypotheses against manifest transcripts");
    std::string sc_ref, sc_hyp, sc_out;
    sc->add_option("--ref", sc_ref, "Reference manifest")->required()->check(CLI::ExistingFile);
    sc->add_option("--hyp", sc_hyp, "Hypothesis JSON from decode")->required()->check(CLI::ExistingFile);
    sc->add_option("--out", sc_out)->required();

    // sigtest
    auto* sig = app.add_subcommand("sigtest", "Matched-pairs significance test between two score reports");
    std::string sig_a, sig_b;
    double sig_alpha = 0.05;
    sig->add_option("--sys-a", sig_a)->required()->check(CLI::ExistingFile);
    sig->add_option("--sys-b", sig_b)->required()->check(CLI::ExistingFile);
    sig->add_option("--alpha", sig_alpha);

    // matrix
    auto* mx = app.add_subcommand("matrix", "Run a fusion-mode × scope × input-kind experiment grid");
    std::string mx_grid, mx_out;
    mx->add_option("--grid", mx_grid)->required()->check(CLI::ExistingFile);
    mx->add_option("--out", mx_out)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const std::size_t threads = worker_threads();
        if (*gen) {
            ExperimentConfig cfg = load_config(gen_config);
            if (gen_seed_set) {
                cfg.generator.seed = gen_seed;
            }
            const Corpus corpus = generate(cfg.generator);
            const fs::path manifest = fs::path(gen_out) / "manifest.jsonl";
            write_manifest(manifest, corpus);
            std::size_t utts = 0;
            for (const auto& s : corpus) {
                utts += s.utterances.size();
            }
            print({{"manifest", manifest.string()}, {"sessions", corpus.size()}, {"utterances", utts}});
        } else if (*cbk_train) {
            const Corpus corpus = read_manifest(cb_manifest, true);
            const StackedFrames frames = stack_frames(corpus);
            const FrameView view(frames.values, frames.rows(), frames.dim);
            const Codebook cb = train_codebook(view, km);
            save_codebook(cb, cb_out);
            json out = {{"codebook", cb_out},
                        {"k", cb.K},
                        {"dim", cb.dim},
                        {"iters", cb.trained_iters},
                        {"distortion", cb.final_distortion}};
            if (frames.labels.size() == frames.rows()) {
                out["pnmi"] = pnmi(frames.labels, quantize(view, cb));
            }
            print(out);
        } else if (*tok) {
            Corpus corpus = read_manifest(tok_manifest, true);
            attach_tokens(corpus, load_codebook(tok_codebook));
            ManifestWriteOptions opts;
            opts.write_features = false;
            write_manifest(tok_out, corpus, opts);
            print({{"manifest", tok_out}});
        } else if (*train) {
            ExperimentConfig cfg = load_config(tr_config);
            if (!tr_mode.empty()) {
                cfg.fusion.mode = fusion_mode_from_string(tr_mode);
            }
            if (*prec_opt) {
                cfg.fusion.preceding = tr_prec;
            }
            if (*fut_opt) {
                cfg.fusion.future = tr_future;
            }
            if (*L_opt) {
                cfg.fusion.compact_length = tr_L;
            }
            cfg.validate();
            RunOptions opts;
            opts.out_dir = tr_out;
            opts.threads = threads;
            print(run_summary(run_training(cfg, opts)));
        } else if (*ft) {
            const ExperimentConfig cfg = load_config(ft_config);
            RunOptions opts;
            opts.out_dir = ft_out;
            opts.threads = threads;
            const RunResult r = run_finetune(cfg, ft_init, !ft_no_reinit, opts);
            json out = run_summary(r);
            out["finetune"] = r.report.at("finetune");
            print(out);
        } else if (*dec) {
            LoadedModel lm = load_run_model(dec_ckpt);
            const bool discrete = lm.config.model.input_kind == InputKind::DiscreteTokens;
            Corpus corpus = read_manifest(dec_manifest, true);
            if (discrete) {
                for (auto& s : corpus) {
                    if (!s.utterances.empty() && !s.utterances.front().has_tokens()) {
                        if (!lm.codebook) {
                            throw DataError("manifest has no tokens and no codebook sits beside the checkpoint");
                        }
                        attach_tokens(s, *lm.codebook);
                    }
                }
            }
            const DecodeResult r = decode_corpus(*lm.model, corpus, lm.vocab, threads);
            json out = hypotheses_to_json(r.hyps);
            out["code_version"] = kCodeVersion;
            out["seed"] = lm.config.training.seed;
            out["config"] = config_to_json(lm.config);
            save_json(dec_out, out);
            print({{"hypotheses", dec_out},
                   {"utterances", r.hyps.size()},
                   {"frames_per_second", r.seconds > 0 ? static_cast<double>(r.frames) / r.seconds : 0.0}});
        } else if (*sc) {
            const Corpus refs = read_manifest(sc_ref, false);
            const json hyp = load_json(sc_hyp);
            const EvalReport report = score(refs, hypotheses_from_json(hyp));
            json out = report_to_json(report);
            out["code_version"] = kCodeVersion;
            for (const char* k : {"seed", "config"}) {
                if (hyp.contains(k)) {
                    out[k] = hyp.at(k);
                }
            }
            save_json(sc_out, out);
            print(out.at("aggregate"));
        } else if (*sig) {
            const EvalReport a = report_from_json(load_json(sig_a));
            const EvalReport b = report_from_json(load_json(sig_b));
            const MapssweResult r = mapsswe(a, b, sig_alpha);
            print({{"segments", r.n},
                   {"mean_difference", r.mean},
                   {"stddev", r.stddev},
                   {"W", r.w},
                   {"p", r.p},
                   {"alpha", sig_alpha},
                   {"significant", r.significant},
                   {"wer_a", a.wer()},
                   {"wer_b", b.wer()}});
        } else if (*mx) {
            const MatrixGrid grid = grid_from_json(load_json(mx_grid));
            const json results = run_experiment_matrix(grid, mx_out, threads);
            json brief = json::array();
            for (const auto& row : results.at("rows")) {
                json b = row;
                b.erase("report");
                brief.push_back(b);
            }
            print(brief);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}
