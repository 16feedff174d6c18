#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tef/error.hpp"
#include "tef/history_types.hpp"
#include "tef/text.hpp"

namespace tef {

namespace identifiers {
inline constexpr const char* query = "Query";
inline constexpr const char* nearest = "Nearest Events";
inline constexpr const char* further = "Further Events";
inline constexpr const char* related = "Related Events";
inline constexpr const char* relevant_event = "Relevant Event";
inline constexpr const char* relevant_text = "Relevant News Text";
inline constexpr const char* options = "Options";
inline constexpr const char* subject = "Subject";
inline constexpr const char* candidate_set = "Candidate Set";

inline const std::vector<std::string>& all() {
    static const std::vector<std::string> ids{query,          nearest, further, related,
                                              relevant_event, relevant_text, options,
                                              subject,        candidate_set};
    return ids;
}
}  // namespace identifiers

/// A prompt skeleton: plain text with "{Identifier}" placeholders. Every
/// placeholder must come from the declared identifier set; rendering
/// substitutes bound values and rejects any placeholder left unresolved.
struct PromptTemplate {
    std::string id;
    std::string body;
    std::vector<std::string> identifiers;
};

namespace detail {

inline std::vector<std::string> placeholders_of(const std::string& body) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while ((i = body.find('{', i)) != std::string::npos) {
        auto j = body.find('}', i + 1);
        if (j == std::string::npos) break;
        out.push_back(body.substr(i + 1, j - i - 1));
        i = j + 1;
    }
    return out;
}

}  // namespace detail

inline void check_template(const PromptTemplate& t) {
    std::set<std::string> allowed(t.identifiers.begin(), t.identifiers.end());
    for (const auto& p : detail::placeholders_of(t.body))
        if (!allowed.count(p))
            throw TemplateError("template \"" + t.id + "\": placeholder {" + p +
                                "} is not a declared identifier");
}

/// The query with display strings resolved; what rendering actually needs.
struct QueryView {
    std::string subject;
    std::optional<std::string> relation;
    std::optional<std::string> object;
    RelativeDay t{0};
    Task task{Task::object_prediction};
};

struct RenderedPrompt {
    std::string text;
    std::size_t token_count{0};
};

// ---------------------------------------------------------------------------
// Section rendering

inline std::string render_query_tuple(const QueryView& q) {
    if (q.task == Task::object_prediction) {
        if (!q.relation) throw DomainError("object-prediction query needs a relation string");
        return "(" + q.subject + ", " + *q.relation + ", ?, " + std::to_string(q.t.days) + ")";
    }
    if (!q.object) throw DomainError("relation-prediction query needs an object string");
    return "(" + q.subject + ", ?, " + *q.object + ", " + std::to_string(q.t.days) + ")";
}

namespace detail {

inline std::string graph_line(const BundleEvent& e, bool with_time) {
    std::string s = "(" + e.subject + ", " + e.relation + ", " + e.object;
    if (with_time) s += ", " + std::to_string(e.t.days);
    s += ");";
    return s;
}

inline std::string render_graph_lines(const std::vector<BundleEvent>& events, bool with_time) {
    std::string out;
    for (const auto& e : events) {
        if (!out.empty()) out.push_back('\n');
        out += graph_line(e, with_time);
    }
    return out;
}

inline std::string render_dated_texts(const std::vector<DatedText>& texts) {
    std::string out;
    for (const auto& t : texts) {
        if (!out.empty()) out += "\n\n";
        out += "[Date]" + std::to_string(t.t.days) + ":\n" + t.body;
    }
    return out;
}

/// Day-grouped mixed rendering: per day ascending, the day header, that
/// day's texts, then its event triples (time carried by the header).
inline std::string render_mixed(const std::vector<BundleEvent>& events,
                                const std::vector<DatedText>& texts) {
    std::map<std::int64_t, std::pair<std::vector<const DatedText*>, std::vector<const BundleEvent*>>>
        by_day;
    for (const auto& t : texts) by_day[t.t.days].first.push_back(&t);
    for (const auto& e : events) by_day[e.t.days].second.push_back(&e);
    std::string out;
    for (const auto& [day, content] : by_day) {
        if (!out.empty()) out += "\n\n";
        out += "[Date]" + std::to_string(day) + ":";
        for (const auto* t : content.first) out += "\n" + t->body;
        for (const auto* e : content.second) out += "\n" + graph_line(*e, false);
    }
    return out;
}

inline std::string render_section_content(HistoryFormat format,
                                          const std::vector<BundleEvent>& events,
                                          const std::vector<DatedText>& texts) {
    switch (format) {
        case HistoryFormat::graph: return render_graph_lines(events, true);
        case HistoryFormat::text: return render_dated_texts(texts);
        case HistoryFormat::mixed: return render_mixed(events, texts);
    }
    return {};
}

inline std::string with_header(const char* name, const std::string& content) {
    if (content.empty()) return {};
    return std::string("[") + name + "]\n" + content;
}

inline std::string collapse_blank_runs(std::string s) {
    std::string out;
    int run = 0;
    for (char c : s) {
        if (c == '\n') {
            if (++run <= 2) out.push_back(c);
        } else {
            run = 0;
            out.push_back(c);
        }
    }
    while (!out.empty() && (out.back() == '\n' || out.back() == ' ')) out.pop_back();
    out.push_back('\n');
    return out;
}

}  // namespace detail

/// The full history region of a prompt: every non-empty section under its
/// identifier header, in the fixed order nearest, further, related,
/// relevant events, relevant news text.
inline std::string render_history_block(const HistoryBundle& b) {
    std::vector<std::string> parts;
    auto push = [&](const char* name, const std::vector<BundleEvent>& ev,
                    const std::vector<DatedText>& tx) {
        auto s = detail::with_header(name, detail::render_section_content(b.format, ev, tx));
        if (!s.empty()) parts.push_back(std::move(s));
    };
    static const std::vector<DatedText> no_texts;
    static const std::vector<BundleEvent> no_events;
    push(identifiers::nearest, b.nearest_events, b.nearest_texts);
    push(identifiers::further, b.further_events, b.further_texts);
    push(identifiers::related, b.related_events, b.related_texts);
    if (!b.relevant_events.empty())
        parts.push_back(detail::with_header(identifiers::relevant_event,
                                            detail::render_graph_lines(b.relevant_events, true)));
    if (!b.relevant_texts.empty())
        parts.push_back(detail::with_header(identifiers::relevant_text,
                                            detail::render_dated_texts(b.relevant_texts)));
    return text::join(parts, "\n\n");
}

inline std::string render_options_block(const std::vector<std::string>& options) {
    if (options.size() != 6) throw DomainError("options block requires exactly 6 options");
    std::string out = "[Options]";
    for (std::size_t i = 0; i < options.size(); ++i) {
        out.push_back('\n');
        out.push_back(static_cast<char>('A' + i));
        out += ". " + options[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Default templates

namespace detail {

inline const char* item_words(HistoryFormat f) {
    switch (f) {
        case HistoryFormat::graph: return "atomic events";
        case HistoryFormat::text: return "summaries";
        case HistoryFormat::mixed: return "summaries and atomic events";
    }
    return "?";
}

}  // namespace detail

/// The forecasting instruction plus input skeleton. Rule mode declares and
/// binds the nearest/further/related identifiers; retrieved mode the
/// relevant-event / relevant-news-text pair (per format); scope none keeps
/// only the query and options.
inline PromptTemplate default_forecast_template(HistoryMode mode, HistoryFormat format, Task task,
                                                ScopeKind scope) {
    const bool no_history = scope == ScopeKind::none || mode == HistoryMode::none;
    const char* items = detail::item_words(format);
    const char* missing = task == Task::object_prediction ? "object" : "relation";
    const std::string form = task == Task::object_prediction ? "(S, R, T)" : "(S, O, T)";

    std::string ins;
    ins += "You are an assistant to perform event forecasting with the following rules:\n\n";
    ins +=
        "1. The atomic event is the basic unit describing a specific event, typically presented "
        "in the form of a quadruple (S, R, O, T), where S represents the subject, R represents "
        "the relation, O represents the object, and T represents the relative time.\n\n";
    ins +=
        "2. Complex Event, which is composed of a set of atomic events, describes the temporal "
        "evolution process of multiple atomic events.\n\n";
    ins += "3. Please remember the meanings of the following identifiers:\n\n";
    ins += "[Query] represents the event to be predicted in the form of " + form + ".\n\n";

    std::vector<std::string> ids{identifiers::query, identifiers::options};
    std::string sections;
    if (!no_history && mode == HistoryMode::rule) {
        ins += std::string("[Nearest Events] represents a list of ") + items +
               " in the complex event that is relatively closer in time to the predicted "
               "event.\n\n";
        ins += std::string("[Further Events] represents a list of ") + items +
               " in the complex event that is relatively further in time from the predicted "
               "event.\n\n";
        ins += std::string("[Related Events] encompasses the past ") + items +
               " that contain the same subject or object as the question.\n\n";
        ids.insert(ids.end(), {identifiers::nearest, identifiers::further, identifiers::related});
        sections = "{Nearest Events}\n\n{Further Events}\n\n{Related Events}\n\n";
    } else if (!no_history) {
        if (format != HistoryFormat::text) {
            ins += std::string("[Relevant Event] represents a list of ") + items +
                   " relevant to the query.\n\n";
            ids.push_back(identifiers::relevant_event);
            sections += "{Relevant Event}\n\n";
        }
        if (format != HistoryFormat::graph) {
            ins += "[Relevant News Text] represents background information about subject.\n\n";
            ids.push_back(identifiers::relevant_text);
            sections += "{Relevant News Text}\n\n";
        }
    }
    ins += "[Options] represents the candidate set of the missing " + std::string(missing) +
           ".\n\n";
    ins += "4. Given a query of " + form +
           " in the future and the list of historical events until t, event forecasting aims to "
           "predict the missing " +
           missing + ".\n\n";

    PromptTemplate t;
    t.id = std::string("forecast-") + to_string(mode) + "-" + to_string(format) + "-" +
           to_string(task) + (no_history ? "-nohistory" : "");
    t.body = ins + "{Query}\n\n" + sections +
             "{Options}\n\nAnswer with the letter of the correct option.\n";
    t.identifiers = std::move(ids);
    check_template(t);
    return t;
}

inline PromptTemplate default_entity_filter_template() {
    PromptTemplate t;
    t.id = "entity-filter";
    t.body =
        "You are an assistant to find relevant entities with the following rules:\n\n"
        "1. [Subject] represents the event subject in a specific event. [Candidate Set] "
        "represents a list of entities.\n\n"
        "2. You need to select the entities that may be relevant to [Subject].\n\n"
        "{Subject}\n\n{Candidate Set}\n\n"
        "Answer with the relevant entities, one per line.\n";
    t.identifiers = {identifiers::subject, identifiers::candidate_set};
    check_template(t);
    return t;
}

// ---------------------------------------------------------------------------
// Substitution and top-level rendering

/// Replace each "{Identifier}" with its bound value; placeholders without a
/// binding are an error naming the identifier. Section values substituted as
/// empty strings collapse cleanly (blank runs are squeezed).
inline std::string substitute(const PromptTemplate& t,
                              const std::map<std::string, std::string>& bindings) {
    check_template(t);
    std::string out;
    std::size_t i = 0;
    while (i < t.body.size()) {
        auto open = t.body.find('{', i);
        if (open == std::string::npos) {
            out.append(t.body, i, std::string::npos);
            break;
        }
        auto close = t.body.find('}', open + 1);
        if (close == std::string::npos) {
            out.append(t.body, i, std::string::npos);
            break;
        }
        out.append(t.body, i, open - i);
        std::string name = t.body.substr(open + 1, close - open - 1);
        auto it = bindings.find(name);
        if (it == bindings.end())
            throw TemplateError("template \"" + t.id + "\": identifier {" + name +
                                "} is required but not bound");
        out += it->second;
        i = close + 1;
    }
    return detail::collapse_blank_runs(std::move(out));
}

inline RenderedPrompt render_prompt(const PromptTemplate& t, const QueryView& query,
                                    const HistoryBundle& bundle,
                                    const std::vector<std::string>& options) {
    std::map<std::string, std::string> b;
    b[identifiers::query] = "[Query]\n" + render_query_tuple(query);
    b[identifiers::options] = render_options_block(options);

    auto section = [&](const char* name, const std::vector<BundleEvent>& ev,
                       const std::vector<DatedText>& tx) {
        b[name] = detail::with_header(name, detail::render_section_content(bundle.format, ev, tx));
    };
    if (bundle.mode == HistoryMode::rule && bundle.scope != ScopeKind::none) {
        section(identifiers::nearest, bundle.nearest_events, bundle.nearest_texts);
        section(identifiers::further, bundle.further_events, bundle.further_texts);
        section(identifiers::related, bundle.related_events, bundle.related_texts);
    } else if (bundle.mode == HistoryMode::retrieved && bundle.scope != ScopeKind::none) {
        if (bundle.format != HistoryFormat::text)
            b[identifiers::relevant_event] = detail::with_header(
                identifiers::relevant_event,
                detail::render_graph_lines(bundle.relevant_events, true));
        if (bundle.format != HistoryFormat::graph)
            b[identifiers::relevant_text] = detail::with_header(
                identifiers::relevant_text, detail::render_dated_texts(bundle.relevant_texts));
    }

    RenderedPrompt out;
    out.text = substitute(t, b);
    out.token_count = text::token_count(out.text);
    return out;
}

inline RenderedPrompt render_entity_filter_prompt(const PromptTemplate& t,
                                                  const std::string& subject,
                                                  const std::vector<std::string>& candidates) {
    if (candidates.empty())
        throw DomainError("entity filter prompt requires a non-empty candidate set");
    std::map<std::string, std::string> b;
    b[identifiers::subject] = "[Subject]\n" + subject;
    std::string list = "[Candidate Set]";
    for (const auto& c : candidates) list += "\n- " + c;
    b[identifiers::candidate_set] = list;
    RenderedPrompt out;
    out.text = substitute(t, b);
    out.token_count = text::token_count(out.text);
    return out;
}

// ---------------------------------------------------------------------------
// Template overrides from disk

/// Optional per-template override files: "<template id>.txt" inside a
/// directory, body verbatim, declared identifiers unchanged. Missing files
/// fall back to the built-in defaults.
class TemplateSet {
public:
    TemplateSet() = default;

    static TemplateSet load_dir(const std::filesystem::path& dir) {
        TemplateSet s;
        if (!std::filesystem::is_directory(dir))
            throw ConfigError("template directory not found: " + dir.string());
        for (const auto& entry : std::filesystem::directory_iterator(dir)) {
            if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
            std::ifstream in(entry.path());
            std::string body((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
            s.overrides_[entry.path().stem().string()] = std::move(body);
        }
        return s;
    }

    PromptTemplate forecast(HistoryMode mode, HistoryFormat format, Task task,
                            ScopeKind scope) const {
        return apply_override(default_forecast_template(mode, format, task, scope));
    }

    PromptTemplate entity_filter() const {
        return apply_override(default_entity_filter_template());
    }

private:
    PromptTemplate apply_override(PromptTemplate t) const {
        auto it = overrides_.find(t.id);
        if (it != overrides_.end()) {
            t.body = it->second;
            t.identifiers = identifiers::all();  // overrides may use any identifier
            check_template(t);
        }
        return t;
    }

    std::map<std::string, std::string> overrides_;
};

}  // namespace tef
