#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "merry/matrix.hpp"
#include "merry/random.hpp"

namespace merry {

class ParamGroup;

/// A trainable matrix with its gradient buffer and Adam moments.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    Matrix adam_m;
    Matrix adam_v;
    std::uint64_t adam_steps = 0;
    ParamGroup* group = nullptr;

    bool frozen() const;
    std::string full_name() const;
};

class ParamGroup {
public:
    explicit ParamGroup(std::string name) : name_(std::move(name)) {}

    const std::string& name() const noexcept { return name_; }
    bool frozen() const noexcept { return frozen_; }
    void set_frozen(bool f) noexcept { frozen_ = f; }

    Parameter& add(std::string name, Matrix init);
    Parameter* find(const std::string& name);
    const std::vector<std::unique_ptr<Parameter>>& params() const noexcept { return params_; }

private:
    std::string name_;
    bool frozen_ = false;
    std::vector<std::unique_ptr<Parameter>> params_;
};

/// Owns every parameter group of a model. Parameters have stable addresses.
class ParamStore {
public:
    ParamGroup& group(const std::string& name);  // creates on first use
    ParamGroup* find_group(const std::string& name);
    const ParamGroup* find_group(const std::string& name) const;
    Parameter* find(const std::string& full_name);

    const std::vector<std::unique_ptr<ParamGroup>>& groups() const noexcept { return groups_; }

    /// Freeze exactly the named groups and unfreeze the rest. Unknown names throw.
    void set_frozen_groups(const std::vector<std::string>& names);
    void zero_grad();
    std::size_t parameter_count() const;

private:
    std::vector<std::unique_ptr<ParamGroup>> groups_;
};

/// uniform(−1/√fan_in, +1/√fan_in)
Matrix init_uniform_fan_in(std::size_t fan_in, std::size_t rows, std::size_t cols, Rng& rng);

struct AdamConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled: θ ← θ − lr·λ·θ
};

/// Bias-corrected Adam over all unfrozen parameters. Frozen groups are left
/// untouched, moments included.
void adam_step(ParamStore& store, const AdamConfig& cfg);

struct CheckpointMeta {
    std::uint64_t seed = 0;
    int stage = 0;
    nlohmann::json model;  // model configuration, opaque to this layer
};

/// Directory layout: manifest.json plus one little-endian f64 payload per group.
void save_checkpoint(const std::filesystem::path& dir, const ParamStore& store, const CheckpointMeta& meta);

/// Reads values into an already-constructed store; names and shapes must match.
CheckpointMeta load_checkpoint(const std::filesystem::path& dir, ParamStore& store);

/// Manifest only, without touching any store.
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& dir);

}  // namespace merry
