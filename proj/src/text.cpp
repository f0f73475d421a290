#include "merry/text.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "merry/error.hpp"
#include "merry/random.hpp"

namespace merry {

EmbeddingTable::EmbeddingTable(std::size_t dim) : dim_(dim), fallback_(dim, 0.0) {}

bool EmbeddingTable::contains(std::string_view id) const { return vectors_.find(id) != vectors_.end(); }

void EmbeddingTable::insert(std::string id, std::vector<double> v) {
    if (v.size() != dim_) {
        throw DataError("embedding for '" + id + "' has dimension " + std::to_string(v.size()) + ", table expects " +
                        std::to_string(dim_));
    }
    if (contains(id)) throw DataError("duplicate embedding id '" + id + "'");
    vectors_.emplace(std::move(id), std::move(v));
}

const std::vector<double>& EmbeddingTable::lookup(std::string_view id) const {
    if (auto it = vectors_.find(id); it != vectors_.end()) return it->second;
    return fallback_;
}

void EmbeddingTable::set_fallback(std::vector<double> v) {
    if (v.size() != dim_) throw DataError("fallback vector has wrong dimension");
    fallback_ = std::move(v);
}

std::uint64_t stable_hash(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::vector<double> hash_embed(std::string_view id, std::string_view text, std::size_t dim) {
    // Length-prefix the id so ("ab", "c") and ("a", "bc") hash apart.
    const std::string len = std::to_string(id.size()) + ":";
    std::uint64_t h = stable_hash(len);
    h = stable_hash(id, h);
    h = stable_hash(text, h ^ 0x1f);
    Rng rng(mix64(h));
    std::vector<double> v(dim);
    double norm = 0.0;
    for (double& x : v) {
        x = rng.uniform(-1.0, 1.0);
        norm += x * x;
    }
    norm = std::sqrt(norm);
    if (norm > 0.0) {
        for (double& x : v) x /= norm;
    }
    return v;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

namespace {

std::vector<std::string_view> split_spaces(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

}  // namespace

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string raw;
    std::size_t lineno = 0;
    auto where = [&] { return path.string() + ":" + std::to_string(lineno) + ": "; };
    if (!std::getline(in, raw)) throw DataError(path.string() + ": missing header");
    lineno = 1;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const auto header = split_spaces(raw);
    std::size_t count = 0, dim = 0;
    if (header.size() != 2 || !parse_number(header[0], count) || !parse_number(header[1], dim)) {
        throw DataError(where() + "header must be '<count> <dim>'");
    }
    EmbeddingTable table(dim);
    std::size_t rows = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        const auto cols = split_spaces(raw);
        if (cols.empty()) continue;
        if (cols.size() != dim + 1) {
            throw DataError(where() + "expected id and " + std::to_string(dim) + " values, got " +
                            std::to_string(cols.size() - 1));
        }
        std::vector<double> v(dim);
        for (std::size_t j = 0; j < dim; ++j) {
            if (!parse_number(cols[j + 1], v[j]) || !std::isfinite(v[j])) {
                throw DataError(where() + "non-numeric value '" + std::string(cols[j + 1]) + "'");
            }
        }
        std::string id(cols[0]);
        if (table.contains(id)) throw DataError(where() + "duplicate id '" + id + "'");
        table.insert(std::move(id), std::move(v));
        ++rows;
    }
    if (rows != count) {
        throw DataError(path.string() + ": header declares " + std::to_string(count) + " vectors, file has " +
                        std::to_string(rows));
    }
    return table;
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingTable& table) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    write_embeddings(out, table);
    if (!out) throw DataError("write failed for " + path.string());
}

void write_embeddings(std::ostream& out, const EmbeddingTable& table) {
    out << table.size() << ' ' << table.dim() << '\n';
    char buf[64];
    for (const auto& [id, v] : table.entries()) {
        out << id;
        for (double x : v) {
            std::snprintf(buf, sizeof buf, " %.17g", x);
            out << buf;
        }
        out << '\n';
    }
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("cosine_similarity: length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::vector<std::string> top_k_similar(std::span<const double> query,
                                       const std::vector<std::pair<std::string, std::vector<double>>>& pool,
                                       std::size_t k) {
    if (pool.empty()) throw DataError("top_k_similar: empty pool");
    if (k > pool.size()) throw UsageError("top_k_similar: K exceeds pool size");
    std::vector<std::pair<double, const std::string*>> scored;
    scored.reserve(pool.size());
    for (const auto& [id, v] : pool) scored.emplace_back(cosine_similarity(query, v), &id);
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return *a.second < *b.second;
    });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(*scored[i].second);
    return out;
}

ProviderKind parse_provider_kind(std::string_view s) {
    if (s == "hash") return ProviderKind::hash;
    if (s == "last_token") return ProviderKind::last_token;
    if (s == "file") return ProviderKind::file;
    throw UsageError("unknown text provider '" + std::string(s) + "' (expected hash, last_token or file)");
}

std::string_view to_string(ProviderKind k) {
    switch (k) {
        case ProviderKind::hash: return "hash";
        case ProviderKind::last_token: return "last_token";
        case ProviderKind::file: return "file";
    }
    return "hash";
}

TextProvider::TextProvider(TextConfig cfg) : cfg_(std::move(cfg)), table_(cfg_.dim) {
    if (cfg_.kind == ProviderKind::file) {
        table_ = load_embeddings(cfg_.path);
        cfg_.dim = table_.dim();
    }
}

TextProvider::TextProvider(TextConfig cfg, EmbeddingTable table) : cfg_(std::move(cfg)), table_(std::move(table)) {
    cfg_.kind = ProviderKind::file;
    cfg_.dim = table_.dim();
}

std::vector<double> TextProvider::fallback_for(std::string_view id) const {
    if (cfg_.hash_fallback) return hash_embed(id, "", cfg_.dim);
    return std::vector<double>(cfg_.dim, 0.0);
}

std::vector<double> TextProvider::feature(std::string_view id, const std::optional<std::string>& text) const {
    switch (cfg_.kind) {
        case ProviderKind::file:
            if (table_.contains(id)) return table_.lookup(id);
            return fallback_for(id);
        case ProviderKind::hash:
            if (!text) return fallback_for(id);
            return hash_embed(id, *text, cfg_.dim);
        case ProviderKind::last_token: {
            if (!text) return fallback_for(id);
            const auto toks = tokenize(*text);
            if (toks.empty()) return fallback_for(id);
            return hash_embed(toks.back(), "", cfg_.dim);
        }
    }
    return fallback_for(id);
}

Matrix TextProvider::tokens(std::string_view id, const std::optional<std::string>& text) const {
    if (cfg_.kind == ProviderKind::file || !text) {
        const auto v = feature(id, text);
        return Matrix(1, cfg_.dim, v);
    }
    const auto toks = tokenize(*text);
    if (toks.empty()) return Matrix(1, cfg_.dim, fallback_for(id));
    Matrix m(toks.size(), cfg_.dim);
    for (std::size_t i = 0; i < toks.size(); ++i) {
        const auto v = hash_embed(toks[i], "", cfg_.dim);
        std::copy(v.begin(), v.end(), m.row_span(i).begin());
    }
    return m;
}

std::vector<double> TextProvider::sentence(std::string_view id, std::string_view text) const {
    if (cfg_.kind == ProviderKind::file) return table_.lookup(id);
    // Bag of hashed tokens: shared words make sentences similar.
    std::vector<double> v(cfg_.dim, 0.0);
    for (const auto& tok : tokenize(text)) {
        const auto e = hash_embed(tok, "", cfg_.dim);
        for (std::size_t j = 0; j < v.size(); ++j) v[j] += e[j];
    }
    return v;
}

}  // namespace merry
