// merry: command-line front end. Every command writes its result to stdout
// (JSON unless stated otherwise) and failures to stderr as a JSON object.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "merry/error.hpp"
#include "merry/eval.hpp"
#include "merry/gradcheck.hpp"
#include "merry/graph.hpp"
#include "merry/json_util.hpp"
#include "merry/kgqa.hpp"
#include "merry/log.hpp"
#include "merry/model.hpp"
#include "merry/synthetic.hpp"
#include "merry/text.hpp"
#include "merry/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace merry;

namespace {

void emit(const json& j) { std::cout << j.dump(2) << '\n'; }

void write_text(const std::optional<std::string>& path, const std::string& body) {
    if (!path) {
        std::cout << body;
        return;
    }
    std::ofstream out(*path, std::ios::binary);
    if (!out) throw DataError("cannot write " + *path);
    out << body;
}

// ---------------------------------------------------------------- pretrain
struct PretrainArgs {
    std::string config;
    std::optional<std::string> output;
    std::optional<std::uint64_t> seed;
};

void run_pretrain(const PretrainArgs& a) {
    TrainConfig cfg = TrainConfig::from_json(read_json_file(a.config));
    const fs::path base = fs::path(a.config).parent_path();
    for (auto& g : cfg.graphs) {
        if (g.split.is_relative()) g.split = base / g.split;
    }
    if (cfg.model.text.kind == ProviderKind::file && cfg.model.text.path.is_relative()) {
        cfg.model.text.path = base / cfg.model.text.path;
    }
    if (a.output) cfg.output = *a.output;
    if (cfg.output.empty()) throw UsageError("pretrain needs an output directory (--output or config 'output')");
    if (a.seed) {
        cfg.seed = *a.seed;
        cfg.model.seed = *a.seed;
    }
    const TrainStats stats = train_from_config(cfg);
    json j = {{"checkpoint", (cfg.output / "final").string()},
              {"stats", (cfg.output / "stats.csv").string()},
              {"epochs", stats.epochs.size()},
              {"final_loss", stats.epochs.empty() ? 0.0 : stats.epochs.back().loss}};
    if (stats.best_val_mrr >= 0.0) {
        j["best_checkpoint"] = (cfg.output / "best").string();
        j["best_val_mrr"] = stats.best_val_mrr;
    }
    emit(j);
}

// ---------------------------------------------------------------- eval-kgc
struct EvalArgs {
    std::string checkpoint;
    std::string split;
    std::optional<std::string> per_query;
    std::size_t max_triples = 0;
    bool tail_only = false;
    std::optional<std::uint64_t> seed;
};

void run_eval(const EvalArgs& a) {
    const auto model = load_model(a.checkpoint);
    const TextProvider text(model->config().text);
    const InductiveSplit split = load_split(a.split);
    EvalOptions opts;
    opts.max_triples = a.max_triples;
    opts.head_queries = !a.tail_only;
    const EvalReport r = evaluate_split(*model, text, split, opts);
    if (a.per_query) write_text(a.per_query, r.queries_csv());
    emit(r.to_json());
}

// ---------------------------------------------------------------- adapt-kgqa
struct AdaptArgs {
    std::string checkpoint;
    std::string qa;
    std::optional<std::string> test;
    std::string output;
    std::size_t shots = 3;
    std::size_t epochs = 30;
    double lr = 1e-3;
    std::size_t batch_size = 8;
    std::vector<std::string> freeze;
    bool no_edge_scoring = false;
    bool no_dtaf = false;
    std::uint64_t seed = 0;
};

void run_adapt(const AdaptArgs& a) {
    auto model = load_model(a.checkpoint);
    if (a.no_edge_scoring) model->mutable_config().edge_scoring = false;
    if (a.no_dtaf) model->mutable_config().dtaf = false;
    const TextProvider text(model->config().text);
    const auto train = load_qa_file(a.qa);
    FineTuneConfig ft;
    ft.epochs = a.epochs;
    ft.lr = a.lr;
    ft.shots = a.shots;
    ft.batch_size = a.batch_size;
    ft.seed = a.seed;
    ft.frozen = a.freeze;
    const FineTuneStats stats = fine_tune(*model, text, train, ft);
    save_model(a.output, *model, 0);
    json j = {{"checkpoint", a.output},
              {"epochs", stats.epoch_loss.size()},
              {"final_loss", stats.epoch_loss.empty() ? 0.0 : stats.epoch_loss.back()},
              {"train_accuracy", evaluate_qa(*model, text, train, train, a.shots).accuracy}};
    if (a.test) {
        const auto test = load_qa_file(*a.test);
        j["test_accuracy"] = evaluate_qa(*model, text, test, train, a.shots).accuracy;
    }
    emit(j);
}

// ---------------------------------------------------------------- score
struct ScoreArgs {
    std::string checkpoint;
    std::string instance;
    std::optional<std::string> pool;
    std::size_t shots = 3;
    std::optional<std::uint64_t> seed;
};

void run_score(const ScoreArgs& a) {
    const auto model = load_model(a.checkpoint);
    const TextProvider text(model->config().text);
    std::ifstream in(a.instance);
    if (!in) throw DataError("cannot open QA instance " + a.instance);
    json raw;
    try {
        in >> raw;
    } catch (const json::parse_error& e) {
        throw DataError(a.instance + ": " + e.what());
    }
    const QaInstance inst = parse_qa_instance(raw, fs::path(a.instance).parent_path());
    std::vector<QaInstance> pool;
    if (a.pool) pool = load_qa_file(*a.pool);
    const QaAnswer ans = answer(*model, text, inst, pool, a.shots);
    json dist = json::array();
    for (std::size_t i = 0; i < inst.options.size(); ++i) {
        dist.push_back({{"label", inst.options[i].label}, {"probability", ans.probabilities[i]}});
    }
    emit({{"id", inst.id}, {"prediction", ans.label}, {"distribution", dist}});
}

// ---------------------------------------------------------------- lift
struct LiftArgs {
    std::string kg;
    bool no_self_loops = false;
    bool no_inverses = false;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
};

void run_lift(const LiftArgs& a) {
    KnowledgeGraph kg = load_kg(a.kg);
    if (!a.no_inverses) kg = augment_inverses(kg);
    const RelationGraph rg = lift_relation_graph(kg, !a.no_self_loops);
    std::string body;
    for (const auto& e : rg.edges) {
        body += kg.relations.name(e.from) + '\t' + std::string(kMetaRelationNames[static_cast<std::size_t>(e.meta)]) +
                '\t' + kg.relations.name(e.to) + '\n';
    }
    write_text(a.out, body);
}

// ---------------------------------------------------------------- embed-hash
struct EmbedArgs {
    std::string desc;
    std::size_t dim = 16;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
};

void run_embed(const EmbedArgs& a) {
    if (a.dim == 0) throw UsageError("--dim must be positive");
    std::ifstream in(a.desc);
    if (!in) throw DataError("cannot open description file " + a.desc);
    EmbeddingTable table(a.dim);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError(a.desc + ":" + std::to_string(lineno) + ": expected id<TAB>text");
        }
        const std::string id = line.substr(0, tab);
        if (table.contains(id)) throw DataError(a.desc + ":" + std::to_string(lineno) + ": duplicate id " + id);
        table.insert(id, hash_embed(id, line.substr(tab + 1), a.dim));
    }
    if (a.out) {
        save_embeddings(*a.out, table);
    } else {
        write_embeddings(std::cout, table);
    }
}

// ---------------------------------------------------------------- check-grad
struct GradArgs {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
};

int run_check_grad(const GradArgs& a) {
    GradCheckConfig cfg = a.config ? GradCheckConfig::from_json(read_json_file(*a.config)) : GradCheckConfig::defaults();
    if (a.seed) cfg.model.seed = *a.seed;
    const GradCheckReport r = check_gradients(cfg);
    emit(r.to_json());
    return r.pass ? 0 : 3;
}

// ---------------------------------------------------------------- init
struct InitArgs {
    std::optional<std::string> config;
    std::string output;
    std::optional<std::uint64_t> seed;
};

void run_init(const InitArgs& a) {
    ModelConfig mc = a.config ? ModelConfig::from_json(read_json_file(*a.config)) : ModelConfig{};
    if (a.seed) mc.seed = *a.seed;
    const TextProvider text(mc.text);
    mc.text.dim = text.dim();
    const Model model(mc, text.dim());
    save_model(a.output, model, 0);
    emit({{"checkpoint", a.output}, {"parameters", model.params().parameter_count()}});
}

// ---------------------------------------------------------------- synth
struct SynthArgs {
    std::string kind;
    std::string out;
    std::size_t size = 0;
    std::uint64_t seed = 0;
};

void write_triples(const fs::path& path, const KnowledgeGraph& kg, const std::vector<Triple>& ts) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& t : ts) {
        out << kg.entities.name(t.head) << '\t' << kg.relations.name(t.relation) << '\t' << kg.entities.name(t.tail)
            << '\n';
    }
}

void run_synth(const SynthArgs& a) {
    Rng rng(a.seed);
    fs::create_directories(a.out);
    const fs::path dir = a.out;
    json j = {{"kind", a.kind}, {"out", a.out}};
    if (a.kind == "family") {
        const auto s = synthetic::family_graph(a.size ? a.size : 8, rng, "");
        write_triples(dir / "train.txt", s.graph, s.train);
        write_triples(dir / "valid.txt", s.graph, s.valid);
        write_triples(dir / "test.txt", s.graph, s.test);
        j["entities"] = s.graph.num_entities();
        j["triples"] = {{"train", s.train.size()}, {"valid", s.valid.size()}, {"test", s.test.size()}};
    } else if (a.kind == "qa") {
        const std::size_t n_train = a.size ? a.size : 50;
        const auto cur = synthetic::qa_curriculum(n_train, 20, rng);
        save_qa_file(dir / "train.jsonl", cur.train);
        save_qa_file(dir / "test.jsonl", cur.test);
        j["questions"] = {{"train", cur.train.size()}, {"test", cur.test.size()}};
    } else if (a.kind == "toy") {
        const KnowledgeGraph kg = synthetic::random_kg(20, 4, a.size ? a.size : 60, rng);
        write_triples(dir / "train.txt", kg, kg.triples);
        std::vector<Triple> few(kg.triples.begin(), kg.triples.begin() + std::min<std::size_t>(6, kg.triples.size()));
        write_triples(dir / "valid.txt", kg, few);
        write_triples(dir / "test.txt", kg, few);
        j["triples"] = kg.triples.size();
    } else {
        throw UsageError("unknown synthetic kind '" + a.kind + "' (family, qa, toy)");
    }
    emit(j);
}

int fail(const char* kind, const std::string& message, int code) {
    std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"merry: dual-channel conditional message passing for knowledge-graph reasoning"};
    app.require_subcommand(1);

    PretrainArgs pre;
    auto* c_pre = app.add_subcommand("pretrain", "Link-prediction pretraining from a JSON config");
    c_pre->add_option("--config", pre.config, "Training config (JSON)")->required()->check(CLI::ExistingFile);
    c_pre->add_option("--output", pre.output, "Output directory (overrides config)");
    c_pre->add_option("--seed", pre.seed, "Seed for initialization and sampling (overrides config)");

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval-kgc", "Filtered ranking evaluation on a split directory");
    c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
    c_eval->add_option("--split", ev.split, "Split directory")->required();
    c_eval->add_option("--per-query", ev.per_query, "Write per-query ranks as CSV to this path");
    c_eval->add_option("--max-triples", ev.max_triples, "Evaluate only the first N test triples (0 = all)");
    c_eval->add_flag("--tail-only", ev.tail_only, "Skip the (t, r^-1, ?) direction");
    c_eval->add_option("--seed", ev.seed, "Accepted for uniformity; evaluation draws no randomness");

    AdaptArgs ad;
    auto* c_adapt = app.add_subcommand("adapt-kgqa", "Fine-tune a checkpoint on question answering");
    c_adapt->add_option("--checkpoint", ad.checkpoint, "Starting checkpoint directory")->required();
    c_adapt->add_option("--qa", ad.qa, "Training questions (JSONL)")->required()->check(CLI::ExistingFile);
    c_adapt->add_option("--test", ad.test, "Held-out questions (JSONL) to report accuracy on");
    c_adapt->add_option("--output", ad.output, "Fine-tuned checkpoint directory")->required();
    c_adapt->add_option("--shots", ad.shots, "Few-shot examples per question")->capture_default_str();
    c_adapt->add_option("--epochs", ad.epochs, "Fine-tuning epochs")->capture_default_str();
    c_adapt->add_option("--lr", ad.lr, "Adam learning rate")->capture_default_str();
    c_adapt->add_option("--batch-size", ad.batch_size, "Questions per optimizer step")->capture_default_str();
    c_adapt->add_option("--freeze", ad.freeze, "Parameter groups to keep frozen");
    c_adapt->add_flag("--no-edge-scoring", ad.no_edge_scoring, "Ablate question-conditioned edge scoring");
    c_adapt->add_flag("--no-dtaf", ad.no_dtaf, "Ablate text-adaptive fusion");
    c_adapt->add_option("--seed", ad.seed, "Shuffling seed")->capture_default_str();

    ScoreArgs sc;
    auto* c_score = app.add_subcommand("score", "Answer one question and print the option distribution");
    c_score->add_option("--checkpoint", sc.checkpoint, "Checkpoint directory")->required();
    c_score->add_option("--qa-instance", sc.instance, "Question (single JSON object)")->required();
    c_score->add_option("--pool", sc.pool, "Solved questions (JSONL) for few-shot retrieval");
    c_score->add_option("--shots", sc.shots, "Few-shot examples (clamped to the pool)")->capture_default_str();
    c_score->add_option("--seed", sc.seed, "Accepted for uniformity; scoring draws no randomness");

    LiftArgs li;
    auto* c_lift = app.add_subcommand("lift", "Print the relation graph as relA<TAB>meta<TAB>relB");
    c_lift->add_option("--kg", li.kg, "Triple file (TSV)")->required();
    c_lift->add_flag("--no-self-loops", li.no_self_loops, "Drop (r, meta, r) edges");
    c_lift->add_flag("--no-inverses", li.no_inverses, "Do not add inverse relations first");
    c_lift->add_option("--out", li.out, "Write to this path instead of stdout");
    c_lift->add_option("--seed", li.seed, "Accepted for uniformity; lifting is deterministic");

    EmbedArgs em;
    auto* c_embed = app.add_subcommand("embed-hash", "Hash-derived embedding file for id<TAB>text descriptions");
    c_embed->add_option("--desc", em.desc, "Description file")->required();
    c_embed->add_option("--dim", em.dim, "Embedding dimension")->capture_default_str();
    c_embed->add_option("--out", em.out, "Write to this path instead of stdout");
    c_embed->add_option("--seed", em.seed, "Accepted for uniformity; vectors depend only on id and text");

    GradArgs gr;
    auto* c_grad = app.add_subcommand("check-grad", "Finite-difference check of every parameter gradient");
    c_grad->add_option("--config", gr.config, "Check config (JSON); built-in small model when absent");
    c_grad->add_option("--seed", gr.seed, "Model initialization seed");

    InitArgs in;
    auto* c_init = app.add_subcommand("init", "Write a freshly initialized checkpoint");
    c_init->add_option("--config", in.config, "Model config (JSON); defaults when absent");
    c_init->add_option("--output", in.output, "Checkpoint directory")->required();
    c_init->add_option("--seed", in.seed, "Initialization seed");

    SynthArgs sy;
    auto* c_synth = app.add_subcommand("synth", "Generate synthetic data (family split, QA curriculum, toy KG)");
    c_synth->add_option("--kind", sy.kind, "family | qa | toy")->required();
    c_synth->add_option("--out", sy.out, "Output directory")->required();
    c_synth->add_option("--size", sy.size, "Families, training questions or triples (0 = default)");
    c_synth->add_option("--seed", sy.seed, "Generator seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 1);
    }

    try {
        if (*c_pre) run_pretrain(pre);
        else if (*c_eval) run_eval(ev);
        else if (*c_adapt) run_adapt(ad);
        else if (*c_score) run_score(sc);
        else if (*c_lift) run_lift(li);
        else if (*c_embed) run_embed(em);
        else if (*c_grad) return run_check_grad(gr);
        else if (*c_init) run_init(in);
        else if (*c_synth) run_synth(sy);
    } catch (const Error& e) {
        return fail(e.kind(), e.what(), e.exit_code());
    } catch (const json::exception& e) {
        return fail("data", e.what(), 2);
    } catch (const fs::filesystem_error& e) {
        return fail("data", e.what(), 2);
    } catch (const std::exception& e) {
        return fail("numeric", e.what(), 3);
    }
    return 0;
}
