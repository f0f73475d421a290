#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "merry/graph.hpp"
#include "merry/model.hpp"
#include "merry/random.hpp"

namespace merry {

struct StageConfig {
    std::string name;
    std::size_t epochs = 1;
    std::vector<std::string> frozen;
    double lr = 5e-4;
};

struct MixtureEntry {
    std::filesystem::path split;
    double weight = 1.0;
};

struct TrainConfig {
    ModelConfig model;
    std::vector<StageConfig> stages;
    std::size_t negatives = 32;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    std::vector<MixtureEntry> graphs;
    std::size_t eval_every = 1;          // epochs between validation passes; 0 disables
    std::size_t max_valid_queries = 0;   // 0 = all
    bool remove_query_edges = true;      // hide the batch's positives from the graph being encoded
    std::filesystem::path output;        // empty: no files written

    /// Warm-up, QCMP frozen, then everything trainable.
    static std::vector<StageConfig> default_stages(std::size_t epochs_per_stage);

    nlohmann::json to_json() const;
    /// Strict: unknown keys and wrong types throw UsageError.
    static TrainConfig from_json(const nlohmann::json& j);
    void validate(const ParamStore& store) const;
};

/// One graph of the pretraining mixture.
struct TrainGraph {
    std::string name;
    KnowledgeGraph graph;        // inference graph, not augmented
    std::vector<Triple> train;   // positives (usually the graph's own triples)
    std::vector<Triple> valid;
    double weight = 1.0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    std::size_t stage = 0;
    double loss = 0.0;
    std::optional<double> val_mrr;
};

struct TrainStats {
    std::vector<EpochRecord> epochs;
    std::vector<double> stage_seconds;
    std::vector<std::size_t> graph_hits;  // batches drawn per mixture entry
    double best_val_mrr = -1.0;

    std::string to_csv() const;
};

/// −log p_pos − (1/n) Σ log(1 − p_neg), probabilities clamped to [1e-12, 1 − 1e-12].
double bce_loss(double p_pos, std::span<const double> p_negs);

/// Maps (head, relation) to its known tails.
class TrueTails {
public:
    void add(const Triple& t);
    /// Adds t and, when `inverse_offset` > 0, (tail, relation + offset, head).
    void add_all(std::span<const Triple> triples, std::size_t inverse_offset);
    const std::vector<std::size_t>& tails(std::size_t head, std::size_t relation) const;

private:
    static std::uint64_t key(std::size_t h, std::size_t r) { return (std::uint64_t(h) << 32) ^ std::uint64_t(r); }
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> map_;
    std::vector<std::size_t> empty_;
};

/// n tails drawn uniformly from entities other than the true tail and outside
/// `known`; falls back to any entity ≠ tail (with a warning) when that is empty.
std::vector<std::size_t> sample_negatives(std::size_t num_entities, const Triple& positive,
                                          const std::vector<std::size_t>& known, std::size_t n, Rng& rng);

/// Trainer over in-memory graphs. Optional callback runs after every epoch.
struct TrainHooks {
    std::function<void(const EpochRecord&)> on_epoch;
    /// Return true to stop training early (after the current epoch).
    std::function<bool(const EpochRecord&)> stop;
};

TrainStats train(Model& model, const TextProvider& text, const TrainConfig& cfg, std::vector<TrainGraph>& graphs,
                 const TrainHooks& hooks = {});

/// Loads the mixture's splits from disk and trains a fresh model.
TrainStats train_from_config(const TrainConfig& cfg, std::unique_ptr<Model>* out_model = nullptr);

}  // namespace merry
