#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "merry/graph.hpp"
#include "merry/model.hpp"

namespace merry {

inline constexpr std::string_view kRelAsksAbout = "REL_asks_about";
inline constexpr std::string_view kRelOptionOf = "REL_option_of";
inline constexpr std::string_view kRelTheAnswerIs = "REL_the_answer_is";

struct QaOption {
    std::string label;
    std::string text;
    std::vector<std::string> entities;
};

struct QaInstance {
    std::string id;
    std::string question;
    std::vector<QaOption> options;
    std::vector<std::string> topics;
    KnowledgeGraph graph;               // retrieved subgraph
    std::optional<std::string> answer;  // gold label, absent on unlabeled data

    std::optional<std::size_t> gold_index() const;
};

/// One JSON object per line: {id, question, options:[{label,text,entities}],
/// topics, graph | triples, answer}. `graph` is a TSV path relative to the file;
/// `triples` is an inline [[h,r,t],...] list.
std::vector<QaInstance> load_qa_file(const std::filesystem::path& path);
QaInstance parse_qa_instance(const nlohmann::json& j, const std::filesystem::path& base_dir);
nlohmann::json qa_instance_to_json(const QaInstance& inst);  // inline triples
void save_qa_file(const std::filesystem::path& path, std::span<const QaInstance> instances);

struct QaGraph {
    KnowledgeGraph kg;
    std::size_t question_node = 0;
    std::vector<std::size_t> answer_nodes;  // option order
    std::size_t rel_asks_about = 0;
    std::size_t rel_option_of = 0;
    std::size_t rel_the_answer_is = 0;
    std::vector<std::string> unlinked_options;  // labels with no entity edges
    std::size_t few_shot_edges = 0;
};

/// Question node linked to topics, one answer node per option linked to its
/// entities, and each solved example embedded as its own namespaced component
/// carrying one (question, REL_the_answer_is, gold answer) edge.
QaGraph build_qa_graph(const QaInstance& instance, std::span<const QaInstance* const> few_shot);

/// Top-K most similar solved questions from `pool`, excluding `instance` itself.
std::vector<const QaInstance*> retrieve_few_shot(const QaInstance& instance, std::span<const QaInstance> pool,
                                                 const TextProvider& text, std::size_t k);

/// Option logits (|C|×1) for a prepared QA graph.
ad::Var qa_logits(ad::Tape& tape, const Model& model, const PreparedGraph& g, const QaGraph& qa);

struct QaAnswer {
    std::size_t option = 0;
    std::string label;
    std::vector<double> probabilities;  // softmax over options
};

QaAnswer answer(const Model& model, const TextProvider& text, const QaInstance& instance,
                std::span<const QaInstance> pool, std::size_t shots);

double accuracy(std::span<const std::string> predictions, std::span<const std::string> golds);

struct QaEvaluation {
    double accuracy = 0.0;
    std::vector<std::string> predictions;
};

QaEvaluation evaluate_qa(const Model& model, const TextProvider& text, std::span<const QaInstance> test,
                         std::span<const QaInstance> pool, std::size_t shots);

struct FineTuneConfig {
    std::size_t epochs = 30;
    double lr = 1e-3;
    std::size_t shots = 3;
    std::size_t batch_size = 8;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::string> frozen;
};

struct FineTuneStats {
    std::vector<double> epoch_loss;
};

/// Option-level BCE (gold positive, other options negative) with Adam.
FineTuneStats fine_tune(Model& model, const TextProvider& text, std::span<const QaInstance> train,
                        const FineTuneConfig& cfg);

}  // namespace merry
