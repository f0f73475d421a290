#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "merry/matrix.hpp"

namespace merry {

/// Fixed-dimension vectors keyed by string id. Lookups never fail: absent
/// ids return the fallback vector.
class EmbeddingTable {
public:
    explicit EmbeddingTable(std::size_t dim = 0);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return vectors_.size(); }
    bool contains(std::string_view id) const;
    void insert(std::string id, std::vector<double> v);  // throws on duplicate or wrong dim
    const std::vector<double>& lookup(std::string_view id) const;
    const std::vector<double>& fallback() const noexcept { return fallback_; }
    void set_fallback(std::vector<double> v);
    const std::map<std::string, std::vector<double>, std::less<>>& entries() const noexcept { return vectors_; }

private:
    std::size_t dim_;
    std::map<std::string, std::vector<double>, std::less<>> vectors_;
    std::vector<double> fallback_;
};

/// Deterministic stand-in for language-model features: an L2-normalised
/// vector drawn from a PRNG seeded by a stable hash of (id, text, dim).
std::vector<double> hash_embed(std::string_view id, std::string_view text, std::size_t dim);

/// Stable 64-bit FNV-1a.
std::uint64_t stable_hash(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::vector<std::string> tokenize(std::string_view text);

/// word2vec text format: header `<count> <dim>`, then `<id> v1 ... v_dim`.
EmbeddingTable load_embeddings(const std::filesystem::path& path);
void save_embeddings(const std::filesystem::path& path, const EmbeddingTable& table);
void write_embeddings(std::ostream& out, const EmbeddingTable& table);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Ids of the K pool entries most cosine-similar to `query`, descending;
/// ties broken by ascending id.
std::vector<std::string> top_k_similar(std::span<const double> query,
                                       const std::vector<std::pair<std::string, std::vector<double>>>& pool,
                                       std::size_t k);

enum class ProviderKind {
    hash,        // hash_embed(id, text) per item, hashed tokens for pooling
    last_token,  // feature of an item = hashed vector of its final token
    file,        // precomputed table loaded from disk
};

struct TextConfig {
    ProviderKind kind = ProviderKind::hash;
    std::size_t dim = 16;
    std::filesystem::path path;  // file provider only
    bool hash_fallback = false;  // missing text → hash_embed(id, "") instead of zeros
};

ProviderKind parse_provider_kind(std::string_view s);
std::string_view to_string(ProviderKind k);

/// Uniform source of per-id text features, token-level features and
/// sentence vectors for retrieval.
class TextProvider {
public:
    explicit TextProvider(TextConfig cfg);
    TextProvider(TextConfig cfg, EmbeddingTable table);

    std::size_t dim() const noexcept { return cfg_.dim; }
    const TextConfig& config() const noexcept { return cfg_; }

    /// One vector per item; missing text yields the fallback.
    std::vector<double> feature(std::string_view id, const std::optional<std::string>& text) const;
    /// T×dim token matrix, T ≥ 1; the single fallback row when there is no text.
    Matrix tokens(std::string_view id, const std::optional<std::string>& text) const;
    /// Sentence vector for similarity search.
    std::vector<double> sentence(std::string_view id, std::string_view text) const;

private:
    std::vector<double> fallback_for(std::string_view id) const;

    TextConfig cfg_;
    EmbeddingTable table_;
};

}  // namespace merry
