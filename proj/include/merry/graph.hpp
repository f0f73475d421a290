#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "merry/kernels.hpp"

namespace merry {

/// Injective string ↔ dense id map; ids follow first-appearance order.
class SymbolTable {
public:
    std::size_t intern(std::string_view name);
    std::optional<std::size_t> find(std::string_view name) const;
    const std::string& name(std::size_t id) const { return names_.at(id); }
    std::size_t size() const noexcept { return names_.size(); }
    const std::vector<std::string>& names() const noexcept { return names_; }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::size_t> ids_;
};

struct Triple {
    std::size_t head = 0;
    std::size_t relation = 0;
    std::size_t tail = 0;

    auto operator<=>(const Triple&) const = default;
};

struct KnowledgeGraph {
    SymbolTable entities;
    SymbolTable relations;
    std::vector<Triple> triples;
    // Indexed by dense id; std::nullopt where no description exists.
    std::vector<std::optional<std::string>> entity_text;
    std::vector<std::optional<std::string>> relation_text;

    bool augmented = false;
    std::size_t base_relation_count = 0;  // relations before inverse augmentation
    std::size_t duplicates_dropped = 0;

    std::size_t num_entities() const noexcept { return entities.size(); }
    std::size_t num_relations() const noexcept { return relations.size(); }

    std::size_t add_entity(std::string_view name);
    std::size_t add_relation(std::string_view name);
    /// Interns names and appends the triple unless it already exists. Returns true if added.
    bool add_triple(std::string_view head, std::string_view relation, std::string_view tail);
    bool add_triple(Triple t);
    bool contains(const Triple& t) const;

    /// r ↔ r⁻¹ on an augmented graph.
    std::size_t inverse_of(std::size_t relation) const;
    bool is_inverse(std::size_t relation) const { return augmented && relation >= base_relation_count; }

    kernels::EdgeList edge_list() const;

private:
    struct TripleHash {
        std::size_t operator()(const Triple& t) const noexcept;
    };
    std::unordered_map<Triple, std::size_t, TripleHash> index_;  // triple → position
    friend KnowledgeGraph augment_inverses(const KnowledgeGraph&);
};

/// Suffix appended to a relation name to name its inverse.
inline constexpr std::string_view kInverseSuffix = "^-1";

KnowledgeGraph load_kg(const std::filesystem::path& triples_path,
                       const std::optional<std::filesystem::path>& entity_desc_path = std::nullopt,
                       const std::optional<std::filesystem::path>& relation_desc_path = std::nullopt);

/// Attaches `id<TAB>text` descriptions to known ids; unknown ids are skipped.
void attach_descriptions(KnowledgeGraph& kg, const std::filesystem::path& path, bool relations);

/// Parses `head<TAB>relation<TAB>tail` lines, interning into `kg`.
std::vector<Triple> read_triples_into(KnowledgeGraph& kg, const std::filesystem::path& path, bool add_to_graph);

/// Same symbol tables and descriptions, minus the listed triples.
KnowledgeGraph without_triples(const KnowledgeGraph& kg, const std::vector<Triple>& removed);

/// Appends r⁻¹ for every relation and (t, r⁻¹, h) for every triple.
KnowledgeGraph augment_inverses(const KnowledgeGraph& kg);

enum class MetaRelation : std::size_t { h2h = 0, h2t = 1, t2h = 2, t2t = 3 };
inline constexpr std::size_t kMetaRelationCount = 4;
inline constexpr std::array<std::string_view, kMetaRelationCount> kMetaRelationNames{"h2h", "h2t", "t2h", "t2t"};

struct RelationEdge {
    std::size_t from = 0;
    MetaRelation meta = MetaRelation::h2h;
    std::size_t to = 0;

    auto operator<=>(const RelationEdge&) const = default;
};

struct RelationGraph {
    std::size_t num_relations = 0;
    std::vector<RelationEdge> edges;  // sorted, unique

    kernels::EdgeList edge_list() const;
};

/// Relations as nodes, linked by how they share entities:
/// (a,t2h,b) tail of a is head of b; (a,h2t,b) head of a is tail of b;
/// h2h shared heads; t2t shared tails.
RelationGraph lift_relation_graph(const KnowledgeGraph& kg, bool include_self_loops = true);

struct InductiveSplit {
    KnowledgeGraph train_graph;
    std::vector<Triple> train_triples;  // ids of train_graph
    std::vector<Triple> valid_triples;  // ids of train_graph
    KnowledgeGraph test_graph;          // equals train_graph in transductive layouts
    std::vector<Triple> test_triples;   // ids of test_graph
    bool inductive = false;             // a separate test inference graph was supplied
    bool unseen_entities = false;
    bool unseen_relations = false;
};

InductiveSplit load_split(const std::filesystem::path& dir);

}  // namespace merry
