#include "merry/kgqa.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "merry/error.hpp"
#include "merry/json_util.hpp"
#include "merry/log.hpp"
#include "merry/random.hpp"

namespace merry {

namespace fs = std::filesystem;
using nlohmann::json;

std::optional<std::size_t> QaInstance::gold_index() const {
    if (!answer) return std::nullopt;
    for (std::size_t i = 0; i < options.size(); ++i) {
        if (options[i].label == *answer) return i;
    }
    return std::nullopt;
}

QaInstance parse_qa_instance(const json& j, const fs::path& base_dir) {
    require_keys(j, {"id", "question", "options", "topics", "graph", "triples", "answer"}, "qa instance");
    QaInstance inst;
    inst.id = json_get<std::string>(j, "id", "", "qa instance");
    inst.question = json_get<std::string>(j, "question", "", "qa instance");
    inst.topics = json_get<std::vector<std::string>>(j, "topics", {}, "qa instance");
    if (j.contains("answer") && !j.at("answer").is_null()) inst.answer = json_get<std::string>(j, "answer", "", "qa instance");
    if (!j.contains("options") || !j.at("options").is_array()) throw DataError("qa instance '" + inst.id + "' lacks options");
    std::set<std::string> labels;
    for (const auto& o : j.at("options")) {
        require_keys(o, {"label", "text", "entities"}, "qa option");
        QaOption opt;
        opt.label = json_get<std::string>(o, "label", "", "qa option");
        opt.text = json_get<std::string>(o, "text", "", "qa option");
        opt.entities = json_get<std::vector<std::string>>(o, "entities", {}, "qa option");
        if (!labels.insert(opt.label).second) throw DataError("qa instance '" + inst.id + "' repeats label " + opt.label);
        inst.options.push_back(std::move(opt));
    }
    if (inst.options.size() < 2) throw DataError("qa instance '" + inst.id + "' needs at least two options");
    if (inst.answer && !inst.gold_index()) {
        throw DataError("qa instance '" + inst.id + "' answer '" + *inst.answer + "' is not an option label");
    }
    if (j.contains("graph") && j.contains("triples")) throw UsageError("qa instance has both 'graph' and 'triples'");
    if (j.contains("graph")) {
        fs::path p = json_get<std::string>(j, "graph", "", "qa instance");
        if (p.is_relative()) p = base_dir / p;
        inst.graph = load_kg(p);
    } else if (j.contains("triples")) {
        for (const auto& t : j.at("triples")) {
            if (!t.is_array() || t.size() != 3) throw DataError("qa instance '" + inst.id + "': triple needs 3 fields");
            inst.graph.add_triple(t[0].get<std::string>(), t[1].get<std::string>(), t[2].get<std::string>());
        }
    }
    inst.graph.entity_text.resize(inst.graph.num_entities());
    inst.graph.relation_text.resize(inst.graph.num_relations());
    return inst;
}

std::vector<QaInstance> load_qa_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open QA file " + path.string());
    std::vector<QaInstance> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        out.push_back(parse_qa_instance(j, path.parent_path()));
    }
    return out;
}

json qa_instance_to_json(const QaInstance& inst) {
    json opts = json::array();
    for (const auto& o : inst.options) opts.push_back({{"label", o.label}, {"text", o.text}, {"entities", o.entities}});
    json triples = json::array();
    for (const auto& t : inst.graph.triples) {
        triples.push_back({inst.graph.entities.name(t.head), inst.graph.relations.name(t.relation),
                           inst.graph.entities.name(t.tail)});
    }
    json j = {{"id", inst.id}, {"question", inst.question}, {"options", opts}, {"topics", inst.topics},
              {"triples", triples}};
    if (inst.answer) j["answer"] = *inst.answer;
    return j;
}

void save_qa_file(const fs::path& path, std::span<const QaInstance> instances) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write QA file " + path.string());
    for (const auto& inst : instances) out << qa_instance_to_json(inst).dump() << '\n';
}

namespace {

struct Component {
    std::size_t question = 0;
    std::vector<std::size_t> answers;
};

std::optional<std::string> text_or_name(const std::optional<std::string>& text, const std::string& name) {
    return text ? text : std::optional<std::string>(name);
}

Component embed_instance(QaGraph& out, const QaInstance& inst, const std::string& prefix) {
    KnowledgeGraph& kg = out.kg;
    const KnowledgeGraph& sub = inst.graph;
    std::vector<std::size_t> ent_map(sub.num_entities()), rel_map(sub.num_relations());
    for (std::size_t e = 0; e < sub.num_entities(); ++e) {
        ent_map[e] = kg.add_entity(prefix + sub.entities.name(e));
        kg.entity_text[ent_map[e]] = text_or_name(sub.entity_text.size() > e ? sub.entity_text[e] : std::nullopt,
                                                  sub.entities.name(e));
    }
    for (std::size_t r = 0; r < sub.num_relations(); ++r) {
        rel_map[r] = kg.add_relation(sub.relations.name(r));
        if (!kg.relation_text[rel_map[r]]) {
            kg.relation_text[rel_map[r]] =
                text_or_name(sub.relation_text.size() > r ? sub.relation_text[r] : std::nullopt, sub.relations.name(r));
        }
    }
    for (const auto& t : sub.triples) kg.add_triple(Triple{ent_map[t.head], rel_map[t.relation], ent_map[t.tail]});

    Component c;
    c.question = kg.add_entity(prefix + "__question__");
    kg.entity_text[c.question] = inst.question;
    std::size_t linked = 0;
    for (const auto& topic : inst.topics) {
        const auto id = sub.entities.find(topic);
        if (!id) {
            log().warn("qa instance '{}': topic '{}' not in its subgraph; skipped", inst.id, topic);
            continue;
        }
        kg.add_triple(Triple{c.question, out.rel_asks_about, ent_map[*id]});
        ++linked;
    }
    if (linked == 0) log().warn("qa instance '{}': question node has no topic edges", inst.id);
    for (const auto& opt : inst.options) {
        const std::size_t a = kg.add_entity(prefix + "__answer__" + opt.label);
        kg.entity_text[a] = opt.text;
        std::size_t n = 0;
        for (const auto& ent : opt.entities) {
            const auto id = sub.entities.find(ent);
            if (!id) {
                log().warn("qa instance '{}': option entity '{}' not in its subgraph; skipped", inst.id, ent);
                continue;
            }
            kg.add_triple(Triple{a, out.rel_option_of, ent_map[*id]});
            ++n;
        }
        if (n == 0 && prefix.empty()) out.unlinked_options.push_back(opt.label);
        c.answers.push_back(a);
    }
    return c;
}

}  // namespace

QaGraph build_qa_graph(const QaInstance& instance, std::span<const QaInstance* const> few_shot) {
    QaGraph out;
    KnowledgeGraph& kg = out.kg;
    out.rel_asks_about = kg.add_relation(kRelAsksAbout);
    out.rel_option_of = kg.add_relation(kRelOptionOf);
    out.rel_the_answer_is = kg.add_relation(kRelTheAnswerIs);
    kg.relation_text[out.rel_asks_about] = "asks about";
    kg.relation_text[out.rel_option_of] = "option of";
    kg.relation_text[out.rel_the_answer_is] = "the answer is";

    const Component main = embed_instance(out, instance, "");
    out.question_node = main.question;
    out.answer_nodes = main.answers;
    for (std::size_t i = 0; i < few_shot.size(); ++i) {
        const QaInstance& ex = *few_shot[i];
        const auto gold = ex.gold_index();
        if (!gold) throw DataError("few-shot example '" + ex.id + "' has no gold answer");
        const Component c = embed_instance(out, ex, "fs" + std::to_string(i) + "::");
        kg.add_triple(Triple{c.question, out.rel_the_answer_is, c.answers[*gold]});
        ++out.few_shot_edges;
    }
    kg.entity_text.resize(kg.num_entities());
    kg.relation_text.resize(kg.num_relations());
    return out;
}

std::vector<const QaInstance*> retrieve_few_shot(const QaInstance& instance, std::span<const QaInstance> pool,
                                                 const TextProvider& text, std::size_t k) {
    if (k == 0) return {};
    std::vector<std::pair<std::string, std::vector<double>>> entries;
    std::vector<const QaInstance*> by_index;
    for (const auto& p : pool) {
        if (p.id == instance.id || !p.gold_index()) continue;
        entries.emplace_back(std::to_string(by_index.size()), text.sentence(p.id, p.question));
        by_index.push_back(&p);
    }
    if (k > entries.size()) {
        log().warn("requested {} few-shot examples but the pool holds {}; clamping", k, entries.size());
        k = entries.size();
    }
    if (k == 0) return {};
    // Zero-padded keys keep the id tie-break aligned with pool order.
    const std::size_t width = std::to_string(entries.size()).size();
    for (auto& e : entries) e.first = std::string(width - e.first.size(), '0') + e.first;
    const auto ids = top_k_similar(text.sentence(instance.id, instance.question), entries, k);
    std::vector<const QaInstance*> out;
    for (const auto& id : ids) out.push_back(by_index[std::stoul(id)]);
    return out;
}

ad::Var qa_logits(ad::Tape& tape, const Model& model, const PreparedGraph& g, const QaGraph& qa) {
    ad::Var scores;
    if (model.config().edge_scoring) scores = model.edge_scores(tape, g, qa.question_node);
    const GraphEncoding enc = model.encode_graph(tape, g, scores);
    ad::Var rs = model.relation_states(tape, g, qa.rel_the_answer_is);
    return model.query_logits(tape, g, enc, rs, qa.question_node, qa.rel_the_answer_is, qa.answer_nodes, scores);
}

namespace {

std::vector<double> softmax(const std::vector<double>& z) {
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
    for (auto& v : p) v /= s;
    return p;
}

}  // namespace

QaAnswer answer(const Model& model, const TextProvider& text, const QaInstance& instance,
                std::span<const QaInstance> pool, std::size_t shots) {
    const auto few = retrieve_few_shot(instance, pool, text, shots);
    const QaGraph qa = build_qa_graph(instance, few);
    const PreparedGraph g = prepare_graph(qa.kg, model.config(), text);
    ad::Tape tape(false);
    const auto logits = qa_logits(tape, model, g, qa).value().values();
    QaAnswer a;
    a.probabilities = softmax(logits);
    a.option = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    a.label = instance.options[a.option].label;
    return a;
}

double accuracy(std::span<const std::string> predictions, std::span<const std::string> golds) {
    if (predictions.size() != golds.size()) throw UsageError("accuracy: prediction and gold counts differ");
    if (golds.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) hit += predictions[i] == golds[i] ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(golds.size());
}

QaEvaluation evaluate_qa(const Model& model, const TextProvider& text, std::span<const QaInstance> test,
                         std::span<const QaInstance> pool, std::size_t shots) {
    QaEvaluation ev;
    std::vector<std::string> golds;
    for (const auto& inst : test) {
        if (!inst.answer) throw DataError("qa instance '" + inst.id + "' has no gold answer to evaluate against");
        ev.predictions.push_back(answer(model, text, inst, pool, shots).label);
        golds.push_back(*inst.answer);
    }
    ev.accuracy = accuracy(ev.predictions, golds);
    return ev;
}

FineTuneStats fine_tune(Model& model, const TextProvider& text, std::span<const QaInstance> train,
                        const FineTuneConfig& cfg) {
    if (cfg.batch_size == 0) throw UsageError("fine-tune batch size must be positive");
    struct Prepared {
        QaGraph qa;
        PreparedGraph g;
        std::size_t gold;
    };
    std::vector<Prepared> items;
    for (const auto& inst : train) {
        const auto gold = inst.gold_index();
        if (!gold) throw DataError("training instance '" + inst.id + "' has no gold answer");
        const auto few = retrieve_few_shot(inst, train, text, cfg.shots);
        QaGraph qa = build_qa_graph(inst, few);
        PreparedGraph g = prepare_graph(qa.kg, model.config(), text);
        items.push_back({std::move(qa), std::move(g), *gold});
    }
    if (items.empty()) throw DataError("no training instances");

    model.params().set_frozen_groups(cfg.frozen);
    AdamConfig adam;
    adam.lr = cfg.lr;
    adam.weight_decay = cfg.weight_decay;
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    FineTuneStats stats;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            ad::Tape tape;
            ad::Var total;
            for (std::size_t k = start; k < end; ++k) {
                const Prepared& p = items[order[k]];
                ad::Var logits = qa_logits(tape, model, p.g, p.qa);
                std::vector<std::size_t> negs;
                for (std::size_t o = 0; o < p.qa.answer_nodes.size(); ++o) {
                    if (o != p.gold) negs.push_back(o);
                }
                ad::Var l = ad::bce_from_logits(logits, p.gold, negs);
                total = total.valid() ? ad::add(total, l) : l;
            }
            ad::Var loss = ad::scale(total, 1.0 / static_cast<double>(end - start));
            model.params().zero_grad();
            if (loss.requires_grad()) tape.backward(loss);
            adam_step(model.params(), adam);
            loss_sum += loss.value()(0, 0) * static_cast<double>(end - start);
        }
        stats.epoch_loss.push_back(loss_sum / static_cast<double>(items.size()));
    }
    model.params().set_frozen_groups({});
    return stats;
}

}  // namespace merry
