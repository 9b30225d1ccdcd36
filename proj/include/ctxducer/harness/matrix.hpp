#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxducer/harness/config.hpp"

namespace ctxducer {

// One cell of the experiment grid: fusion mode × context scope × input kind.
struct MatrixCell {
    FusionMode mode = FusionMode::None;
    std::size_t preceding = 0;
    std::size_t future = 0;
    InputKind input_kind = InputKind::DiscreteTokens;
    std::size_t compact_length = kReferenceCompactLength;

    std::string name() const;
};

struct MatrixGrid {
    ExperimentConfig base;
    std::vector<MatrixCell> cells;
};

// Grid document: {"base": <config>, "modes": [...], "scopes": [[p, f], ...],
// "input_kinds": [...], "compact_length": L} expands to the cartesian product
// (mode none always uses scope [0, 0]; duplicates are dropped), or an explicit
// "cells" list of {"mode", "prec", "future", "input_kind", "L"}.
MatrixGrid grid_from_json(const nlohmann::json& j);

// Runs every cell (each in out_dir/<cell name> when out_dir is set). A failing
// cell is recorded with its error and the matrix continues.
nlohmann::json run_experiment_matrix(const MatrixGrid& grid, const std::filesystem::path& out_dir,
                                     std::size_t threads = 1);

ExperimentConfig cell_config(const ExperimentConfig& base, const MatrixCell& cell);

} // namespace ctxducer
