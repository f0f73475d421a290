#include "merry/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "merry/error.hpp"

namespace merry {

namespace fs = std::filesystem;
using nlohmann::json;

bool Parameter::frozen() const { return group != nullptr && group->frozen(); }

std::string Parameter::full_name() const {
    return group ? group->name() + "." + name : name;
}

Parameter& ParamGroup::add(std::string name, Matrix init) {
    if (find(name)) throw UsageError("duplicate parameter " + name_ + "." + name);
    auto p = std::make_unique<Parameter>();
    p->name = std::move(name);
    p->grad = Matrix(init.rows(), init.cols());
    p->adam_m = Matrix(init.rows(), init.cols());
    p->adam_v = Matrix(init.rows(), init.cols());
    p->value = std::move(init);
    p->group = this;
    params_.push_back(std::move(p));
    return *params_.back();
}

Parameter* ParamGroup::find(const std::string& name) {
    for (auto& p : params_) {
        if (p->name == name) return p.get();
    }
    return nullptr;
}

ParamGroup& ParamStore::group(const std::string& name) {
    if (auto* g = find_group(name)) return *g;
    groups_.push_back(std::make_unique<ParamGroup>(name));
    return *groups_.back();
}

ParamGroup* ParamStore::find_group(const std::string& name) {
    for (auto& g : groups_) {
        if (g->name() == name) return g.get();
    }
    return nullptr;
}

const ParamGroup* ParamStore::find_group(const std::string& name) const {
    for (const auto& g : groups_) {
        if (g->name() == name) return g.get();
    }
    return nullptr;
}

Parameter* ParamStore::find(const std::string& full_name) {
    const auto dot = full_name.find('.');
    if (dot == std::string::npos) return nullptr;
    auto* g = find_group(full_name.substr(0, dot));
    return g ? g->find(full_name.substr(dot + 1)) : nullptr;
}

void ParamStore::set_frozen_groups(const std::vector<std::string>& names) {
    const std::set<std::string> wanted(names.begin(), names.end());
    for (const auto& n : wanted) {
        if (!find_group(n)) throw UsageError("unknown parameter group '" + n + "'");
    }
    for (auto& g : groups_) g->set_frozen(wanted.count(g->name()) > 0);
}

void ParamStore::zero_grad() {
    for (auto& g : groups_) {
        for (const auto& p : g->params()) p->grad.fill(0.0);
    }
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& g : groups_) {
        for (const auto& p : g->params()) n += p->value.size();
    }
    return n;
}

Matrix init_uniform_fan_in(std::size_t fan_in, std::size_t rows, std::size_t cols, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-bound, bound);
    return m;
}

void adam_step(ParamStore& store, const AdamConfig& cfg) {
    for (const auto& g : store.groups()) {
        if (g->frozen()) continue;
        for (const auto& p : g->params()) {
            ++p->adam_steps;
            const double t = static_cast<double>(p->adam_steps);
            const double c1 = 1.0 - std::pow(cfg.beta1, t);
            const double c2 = 1.0 - std::pow(cfg.beta2, t);
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                const double gi = p->grad[i];
                p->adam_m[i] = cfg.beta1 * p->adam_m[i] + (1.0 - cfg.beta1) * gi;
                p->adam_v[i] = cfg.beta2 * p->adam_v[i] + (1.0 - cfg.beta2) * gi * gi;
                const double mhat = p->adam_m[i] / c1;
                const double vhat = p->adam_v[i] / c2;
                p->value[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p->value[i]);
            }
            if (!p->value.all_finite()) {
                throw NumericError("adam_step produced non-finite values in " + p->full_name());
            }
        }
    }
}

namespace {

void write_f64_le(std::ostream& out, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    out.write(bytes, 8);
}

double read_f64_le(const unsigned char* bytes) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

json read_manifest(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DataError("checkpoint manifest not found: " + (dir / "manifest.json").string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("malformed checkpoint manifest: " + std::string(e.what()));
    }
}

CheckpointMeta meta_from(const json& m) {
    if (m.value("format", "") != "merry-checkpoint") throw DataError("not a checkpoint manifest");
    if (m.value("precision", "") != "f64") throw DataError("unsupported checkpoint precision");
    CheckpointMeta meta;
    meta.seed = m.at("seed").get<std::uint64_t>();
    meta.stage = m.at("stage").get<int>();
    meta.model = m.value("model", json::object());
    return meta;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const ParamStore& store, const CheckpointMeta& meta) {
    fs::create_directories(dir);
    json groups = json::array();
    for (const auto& g : store.groups()) {
        json params = json::array();
        const std::string file = g->name() + ".bin";
        std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + (dir / file).string());
        for (const auto& p : g->params()) {
            params.push_back({{"name", p->name}, {"shape", {p->value.rows(), p->value.cols()}}});
            for (double v : p->value.values()) write_f64_le(out, v);
        }
        groups.push_back({{"name", g->name()}, {"file", file}, {"params", params}});
    }
    json manifest = {{"format", "merry-checkpoint"},
                     {"version", 1},
                     {"precision", "f64"},
                     {"seed", meta.seed},
                     {"stage", meta.stage},
                     {"model", meta.model},
                     {"groups", groups}};
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << manifest.dump(2) << "\n";
    if (!out) throw DataError("cannot write checkpoint manifest in " + dir.string());
}

CheckpointMeta read_checkpoint_meta(const fs::path& dir) { return meta_from(read_manifest(dir)); }

CheckpointMeta load_checkpoint(const fs::path& dir, ParamStore& store) {
    const json m = read_manifest(dir);
    CheckpointMeta meta = meta_from(m);
    std::set<std::string> seen;
    for (const auto& jg : m.at("groups")) {
        const auto gname = jg.at("name").get<std::string>();
        ParamGroup* g = store.find_group(gname);
        if (!g) throw DataError("checkpoint group '" + gname + "' not present in model");
        seen.insert(gname);
        std::ifstream in(dir / jg.at("file").get<std::string>(), std::ios::binary);
        if (!in) throw DataError("checkpoint payload missing for group " + gname);
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::size_t offset = 0;
        const auto& jparams = jg.at("params");
        if (jparams.size() != g->params().size()) {
            throw DataError("checkpoint group " + gname + " parameter count mismatch");
        }
        for (const auto& jp : jparams) {
            const auto pname = jp.at("name").get<std::string>();
            Parameter* p = g->find(pname);
            if (!p) throw DataError("checkpoint parameter " + gname + "." + pname + " not present in model");
            const auto rows = jp.at("shape")[0].get<std::size_t>();
            const auto cols = jp.at("shape")[1].get<std::size_t>();
            if (rows != p->value.rows() || cols != p->value.cols()) {
                throw DataError("checkpoint parameter " + p->full_name() + " has shape " + shape_str(rows, cols) +
                                ", model expects " + p->value.shape_str());
            }
            if (offset + 8 * rows * cols > bytes.size()) {
                throw DataError("checkpoint payload truncated for group " + gname);
            }
            for (std::size_t i = 0; i < rows * cols; ++i, offset += 8) p->value[i] = read_f64_le(&bytes[offset]);
        }
        if (offset != bytes.size()) throw DataError("checkpoint payload for group " + gname + " has trailing bytes");
    }
    for (const auto& g : store.groups()) {
        if (!seen.count(g->name())) throw DataError("checkpoint lacks group '" + g->name() + "'");
    }
    return meta;
}

}  // namespace merry
