#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tef/history.hpp"
#include "tef/prompting.hpp"
#include "tef/question_bank.hpp"

namespace tef {

/// One instruction-tuning example: the fixed task instruction, the
/// instance-specific input (query, rendered history, options), and the gold
/// option text as the target completion.
struct FinetuneRecord {
    std::string instruction;
    std::string input;
    std::string output;

    bool operator==(const FinetuneRecord&) const = default;
};

namespace detail {

/// Split a forecast template at its {Query} placeholder: the verbatim text
/// before it is the instruction, the remainder (still holding placeholders)
/// becomes the input template.
inline std::pair<std::string, PromptTemplate> split_for_finetune(const PromptTemplate& t) {
    auto pos = t.body.find("{Query}");
    if (pos == std::string::npos)
        throw TemplateError("template \"" + t.id +
                            "\" has no {Query} placeholder; cannot split into instruction/input");
    auto brace = t.body.find('{');
    if (brace < pos)
        throw TemplateError("template \"" + t.id +
                            "\": all placeholders must follow {Query} for finetune export");
    PromptTemplate tail;
    tail.id = t.id + "-input";
    tail.body = t.body.substr(pos);
    tail.identifiers = t.identifiers;
    return {text::trim(t.body.substr(0, pos)), std::move(tail)};
}

}  // namespace detail

/// Instruction-tuning records for every `split` event: the question's
/// rule-based history and options rendered into the input, the gold option
/// text as the output. Retrieved-mode (and history-free) configs are
/// rejected — tuning data carries the rule-based history by construction.
inline std::vector<FinetuneRecord> export_finetune_records(
    const Dataset& ds, SplitName split, const HistoryConfig& hist_cfg, const BankConfig& bank_cfg,
    const TemplateSet& templates = {}, Gateway* gateway = nullptr) {
    if (hist_cfg.mode != HistoryMode::rule)
        throw ConfigError(std::string("finetune export supports rule-based histories only, got "
                                      "mode ") +
                          to_string(hist_cfg.mode));
    if (!ds.splits()) throw DomainError("finetune export needs a dataset with splits");
    detail::require_vocab_size(ds, bank_cfg.task);

    PromptTemplate full =
        templates.forecast(hist_cfg.mode, hist_cfg.format, bank_cfg.task, hist_cfg.scope);
    auto [instruction, input_template] = detail::split_for_finetune(full);

    std::vector<FinetuneRecord> out;
    for (const AtomicEvent* e : ds.events_in_split(split)) {
        if (bank_cfg.max_questions && out.size() == bank_cfg.max_questions) break;
        Query q = make_query(*e, bank_cfg.task);
        std::string gold = gold_text_of(ds, *e, bank_cfg.task);
        std::uint64_t seed =
            derive_seed(bank_cfg.seed, static_cast<std::uint64_t>(e->id.value));
        Rng rng(seed);
        auto distractors = sample_negatives(ds, q, gold, bank_cfg.strategy, rng, gateway);
        McqInstance mcq = assemble_mcq(q, gold, std::move(distractors), rng, bank_cfg.strategy,
                                       seed);

        HistoryBundle bundle = build_history(ds, q, hist_cfg, gateway);
        RenderedPrompt input =
            render_prompt(input_template, make_query_view(ds, q), bundle, mcq.option_texts());
        out.push_back(FinetuneRecord{instruction, input.text, gold});
    }
    return out;
}

inline void save_finetune_records(const std::filesystem::path& path,
                                  const std::vector<FinetuneRecord>& records) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write finetune records " + path.string());
    for (const auto& r : records) {
        nlohmann::json j{{"instruction", r.instruction}, {"input", r.input}, {"output", r.output}};
        out << j.dump() << '\n';
    }
}

inline std::vector<FinetuneRecord> load_finetune_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open finetune records " + path.string());
    std::vector<FinetuneRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            out.push_back(FinetuneRecord{j.at("instruction").get<std::string>(),
                                         j.at("input").get<std::string>(),
                                         j.at("output").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string(), lineno, e.what());
        }
    }
    return out;
}

}  // namespace tef
