#include "merry/gradcheck.hpp"

#include <cmath>

#include "merry/json_util.hpp"
#include "merry/random.hpp"

namespace merry {

GradCheckConfig GradCheckConfig::defaults() {
    GradCheckConfig c;
    c.model.dim = 8;
    c.model.text.dim = 6;
    c.model.qcmp_relation_layers = 2;
    c.model.qcmp_entity_layers = 2;
    c.model.gcmp_relation_layers = 2;
    c.model.gcmp_entity_layers = 2;
    c.model.query_tokens = 2;
    return c;
}

GradCheckConfig GradCheckConfig::from_json(const nlohmann::json& j) {
    require_keys(j, {"model", "tolerance", "step", "max_entries_per_param"}, "check-grad config");
    GradCheckConfig c = defaults();
    if (j.contains("model")) {
        if (!j.at("model").is_object()) throw UsageError("check-grad config: 'model' must be an object");
        // Unspecified model keys keep the small defaults above.
        nlohmann::json m = c.model.to_json();
        for (const auto& [k, v] : j.at("model").items()) {
            if (k == "text" && v.is_object()) {
                for (const auto& [tk, tv] : v.items()) m["text"][tk] = tv;
            } else {
                m[k] = v;
            }
        }
        c.model = ModelConfig::from_json(m);
    }
    c.tolerance = json_get<double>(j, "tolerance", c.tolerance, "check-grad config");
    c.step = json_get<double>(j, "step", c.step, "check-grad config");
    c.max_entries_per_param = json_get<std::size_t>(j, "max_entries_per_param", 0, "check-grad config");
    if (!(c.step > 0.0) || !(c.tolerance > 0.0)) throw UsageError("check-grad step and tolerance must be positive");
    return c;
}

nlohmann::json GradCheckReport::to_json() const {
    nlohmann::json ps = nlohmann::json::array();
    for (const auto& p : params) {
        ps.push_back({{"param", p.name},
                      {"entries", p.entries},
                      {"analytic_norm", p.analytic_norm},
                      {"rel_error", p.rel_error},
                      {"pass", p.pass}});
    }
    return {{"pass", pass}, {"max_rel_error", max_rel_error}, {"loss", loss}, {"params", ps}};
}

KnowledgeGraph gradcheck_graph() {
    KnowledgeGraph kg;
    const char* triples[][3] = {{"ada", "knows", "bob"},   {"bob", "knows", "cy"},   {"cy", "likes", "dee"},
                                {"dee", "owns", "eve"},    {"ada", "likes", "eve"},  {"eve", "knows", "ada"},
                                {"bob", "owns", "dee"}};
    for (const auto& t : triples) kg.add_triple(t[0], t[1], t[2]);
    const char* texts[] = {"a curious mathematician", "a quiet baker", "the river city", "an old lighthouse",
                           "a small red boat"};
    for (std::size_t e = 0; e < kg.num_entities(); ++e) kg.entity_text[e] = texts[e];
    kg.relation_text[0] = "is acquainted with";
    kg.relation_text[1] = "is fond of";
    kg.relation_text[2] = "possesses";
    return kg;
}

namespace {

struct LossFn {
    Model& model;
    const PreparedGraph& g;

    double operator()(ad::Tape& tape, bool backward) const {
        // Two queries with different heads so scores, caching and both
        // channels are all exercised.
        const std::size_t n = g.kg.num_entities();
        std::vector<std::size_t> all(n);
        for (std::size_t i = 0; i < n; ++i) all[i] = i;
        ad::Var total;
        const Triple queries[] = {{0, 0, 1}, {2, g.kg.inverse_of(1), 4}};
        for (const auto& q : queries) {
            ad::Var scores = model.config().edge_scoring ? model.edge_scores(tape, g, q.head) : ad::Var{};
            const GraphEncoding enc = model.encode_graph(tape, g, scores);
            ad::Var rs = model.relation_states(tape, g, q.relation);
            ad::Var logits = model.query_logits(tape, g, enc, rs, q.head, q.relation, all, scores);
            std::vector<std::size_t> negs;
            for (std::size_t i = 0; i < n; ++i) {
                if (i != q.tail) negs.push_back(i);
            }
            ad::Var l = ad::bce_from_logits(logits, q.tail, negs);
            total = total.valid() ? ad::add(total, l) : l;
        }
        if (backward) tape.backward(total);
        return total.value()(0, 0);
    }
};

}  // namespace

GradCheckReport check_gradients(const GradCheckConfig& cfg) {
    ModelConfig mc = cfg.model;
    mc.inverses = true;
    TextProvider text(mc.text);
    mc.text.dim = text.dim();
    Model model(mc, text.dim());
    const PreparedGraph g = prepare_graph(gradcheck_graph(), mc, text);
    const LossFn loss{model, g};

    GradCheckReport report;
    model.params().zero_grad();
    {
        ad::Tape tape;
        report.loss = loss(tape, true);
    }
    Rng rng(mc.seed ^ 0x9e3779b97f4a7c15ULL);
    report.pass = true;
    for (const auto& group : model.params().groups()) {
        for (const auto& p : group->params()) {
            ParamCheck pc;
            pc.name = p->full_name();
            std::vector<std::size_t> idx(p->value.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
            if (cfg.max_entries_per_param && idx.size() > cfg.max_entries_per_param) {
                for (std::size_t i = 0; i < cfg.max_entries_per_param; ++i) {
                    std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
                }
                idx.resize(cfg.max_entries_per_param);
            }
            double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
            for (std::size_t i : idx) {
                const double orig = p->value[i];
                p->value[i] = orig + cfg.step;
                ad::Tape tp(false);
                const double up = loss(tp, false);
                p->value[i] = orig - cfg.step;
                ad::Tape tm(false);
                const double down = loss(tm, false);
                p->value[i] = orig;
                const double numeric = (up - down) / (2.0 * cfg.step);
                const double analytic = p->grad[i];
                diff2 += (analytic - numeric) * (analytic - numeric);
                a2 += analytic * analytic;
                n2 += numeric * numeric;
            }
            pc.entries = idx.size();
            pc.analytic_norm = std::sqrt(a2);
            const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
            // Both gradients vanishing agree trivially.
            pc.rel_error = denom < 1e-12 ? 0.0 : std::sqrt(diff2) / denom;
            pc.pass = pc.rel_error <= cfg.tolerance;
            report.pass = report.pass && pc.pass;
            report.max_rel_error = std::max(report.max_rel_error, pc.rel_error);
            report.params.push_back(pc);
        }
    }
    return report;
}

}  // namespace merry
