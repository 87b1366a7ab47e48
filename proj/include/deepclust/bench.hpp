#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deepclust/augment.hpp"
#include "deepclust/cae.hpp"
#include "deepclust/cluster.hpp"

namespace deepclust {

enum class StagePlan : std::uint8_t { CaeOnly, CaeDec, CaeIdec };
const char* stage_plan_name(StagePlan plan);
StagePlan stage_plan_from_name(const std::string& name);

struct Hyper {
    std::int64_t epochs_cae = 50;
    std::int64_t epochs_finetune = 100;
    std::int64_t batch = 16;
    double lr = 1e-3;
    std::int64_t k = 10;
    double gamma = 0.1;
    double alpha = 1.0;
    std::int64_t embedding_dim = 10;
};

// One ablation cell: which corpus, which augmentation set, which loss, which
// stages see augmented data, and the seeds to average over.
struct ExperimentConfig {
    std::string id;
    std::string manifest;  // originals-only manifest path
    std::vector<TransformKind> aug_set;
    LossMode loss_mode = LossMode::Mse;
    StagePlan stage = StagePlan::CaeOnly;
    bool cae_aug = false;       // CAE trains on originals + augmented
    bool finetune_aug = false;  // fine-tune stage sees augmented data
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    Hyper hyper;

    // Canonical JSON of the semantically meaningful fields (id excluded).
    std::string semantic_json() const;
    std::uint64_t config_hash() const;
};

struct CellMetrics {
    double acc = 0.0;
    double nmi = 0.0;
    double ari = 0.0;
};

struct ResultRow {
    std::string id;
    std::uint64_t hash = 0;
    std::vector<std::uint64_t> seeds;
    std::vector<CellMetrics> per_seed;
    CellMetrics mean;
    CellMetrics stddev;
    double wall_seconds = 0.0;
    bool failed = false;
    std::string diagnostic;
    bool eval_originals_only = false;  // sample-id audit of the evaluation set
    std::int64_t eval_count = 0;
};

struct DeltaRow {
    std::string id;  // "<aug id> - <waug id>"
    CellMetrics delta;
};

struct Report {
    std::vector<ResultRow> rows;
    std::vector<DeltaRow> deltas;
};

// Runs one cell (all seeds), persisting weights, histories and the row under
// out_dir/<id>-<hash>/. A completed row with a matching hash is returned
// without retraining.
ResultRow run_cell(const ExperimentConfig& config, const std::filesystem::path& out_dir);

// All cells plus Aug-minus-WAug delta rows for every pair of rows whose
// configs differ only in the cae_aug flag.
Report run_grid(const std::vector<ExperimentConfig>& cells, const std::filesystem::path& out_dir);

// report.csv, report.json, report.txt with matching numbers.
void emit_report(const Report& report, const std::filesystem::path& out_dir);

std::vector<ExperimentConfig> load_grid(const std::filesystem::path& grid_file);

// Evaluation helper shared by the CLI: original samples only, K-means on the
// embeddings for CAE-only runs, argmax soft assignment when centers exist.
CellMetrics evaluate_model(CaeModel& model, const TensorPtr& centers, const Dataset& originals,
                           std::int64_t k, std::uint64_t seed);

}  // namespace deepclust
