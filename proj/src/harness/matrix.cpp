#include "ctxducer/harness/matrix.hpp"

#include <map>
#include <set>
#include <tuple>

#include "ctxducer/errors.hpp"
#include "ctxducer/harness/training.hpp"

namespace ctxducer {

using nlohmann::json;

std::string MatrixCell::name() const {
    std::string n = to_string(mode) + "_p" + std::to_string(preceding) + "_f" + std::to_string(future) + "_" +
                    to_string(input_kind);
    if (mode == FusionMode::CompactPool) {
        n += "_L" + std::to_string(compact_length);
    }
    return n;
}

namespace {

MatrixCell normalised(MatrixCell c) {
    if (c.mode == FusionMode::None) {
        c.preceding = 0;
        c.future = 0;
    }
    return c;
}

auto cell_key(const MatrixCell& c) {
    return std::make_tuple(static_cast<int>(c.mode), c.preceding, c.future, static_cast<int>(c.input_kind),
                           c.mode == FusionMode::CompactPool ? c.compact_length : 0);
}

} // namespace

MatrixGrid grid_from_json(const json& j) {
    MatrixGrid g;
    try {
        for (const auto& [k, v] : j.items()) {
            static const std::set<std::string> known = {"base", "modes", "scopes", "input_kinds", "compact_length",
                                                        "cells"};
            if (!known.count(k)) {
                throw ConfigError("unknown grid key: " + k);
            }
        }
        g.base = j.contains("base") ? config_from_json(j.at("base")) : default_experiment_config();
        const std::size_t L = j.value("compact_length", g.base.fusion.compact_length);
        std::vector<MatrixCell> raw;
        if (j.contains("cells")) {
            for (const auto& c : j.at("cells")) {
                MatrixCell cell;
                cell.mode = fusion_mode_from_string(c.value("mode", std::string("none")));
                cell.preceding = c.value("prec", std::size_t{0});
                cell.future = c.value("future", std::size_t{0});
                cell.input_kind = input_kind_from_string(c.value("input_kind", to_string(g.base.model.input_kind)));
                cell.compact_length = c.value("L", L);
                raw.push_back(cell);
            }
        } else {
            std::vector<std::string> modes = j.value("modes", std::vector<std::string>{"none"});
            std::vector<std::vector<std::size_t>> scopes =
                j.value("scopes", std::vector<std::vector<std::size_t>>{{0, 0}});
            std::vector<std::string> kinds =
                j.value("input_kinds", std::vector<std::string>{to_string(g.base.model.input_kind)});
            for (const auto& m : modes) {
                for (const auto& s : scopes) {
                    if (s.size() != 2) {
                        throw ConfigError("grid scopes must be [prec, future] pairs");
                    }
                    for (const auto& k : kinds) {
                        raw.push_back({fusion_mode_from_string(m), s[0], s[1], input_kind_from_string(k), L});
                    }
                }
            }
        }
        std::set<decltype(cell_key(MatrixCell{}))> seen;
        for (const auto& c : raw) {
            MatrixCell n = normalised(c);
            if (seen.insert(cell_key(n)).second) {
                g.cells.push_back(n);
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed grid: ") + e.what());
    }
    return g;
}

ExperimentConfig cell_config(const ExperimentConfig& base, const MatrixCell& cell) {
    ExperimentConfig cfg = base;
    cfg.fusion.mode = cell.mode;
    cfg.fusion.preceding = cell.preceding;
    cfg.fusion.future = cell.future;
    cfg.fusion.compact_length = cell.compact_length;
    cfg.model.input_kind = cell.input_kind;
    resolve_derived(cfg);
    return cfg;
}

json run_experiment_matrix(const MatrixGrid& grid, const std::filesystem::path& out_dir, std::size_t threads) {
    json rows = json::array();
    std::map<int, Dataset> datasets;  // shared per input kind
    for (const auto& cell : grid.cells) {
        json row = {{"name", cell.name()},
                    {"mode", to_string(cell.mode)},
                    {"prec", cell.preceding},
                    {"future", cell.future},
                    {"input_kind", to_string(cell.input_kind)},
                    {"L", cell.compact_length}};
        try {
            const ExperimentConfig cfg = cell_config(grid.base, cell);
            cfg.validate();
            const int key = static_cast<int>(cell.input_kind);
            if (!datasets.count(key)) {
                datasets.emplace(key, prepare_dataset(cfg));
            }
            RunOptions opts;
            opts.threads = threads;
            if (!out_dir.empty()) {
                opts.out_dir = out_dir / cell.name();
            }
            const RunResult r = run_training(cfg, datasets.at(key), opts);
            row["status"] = "ok";
            row["dev_wer"] = r.dev_wer;
            row["train_seconds"] = r.timing["train_seconds"];
            row["decode_frames_per_second"] = r.timing["decode_frames_per_second"];
            row["report"] = r.report;
        } catch (const std::exception& e) {
            row["status"] = "error";
            row["error"] = e.what();
        }
        rows.push_back(row);
    }
    json out = {{"code_version", kCodeVersion}, {"seed", grid.base.training.seed},
                {"config", config_to_json(grid.base)}, {"rows", rows}};
    if (!out_dir.empty()) {
        save_json(out_dir / "results.json", out);
    }
    return out;
}

} // namespace ctxducer
