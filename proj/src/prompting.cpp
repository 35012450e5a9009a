#include "fadsicl/prompting.hpp"

namespace fadsicl {

namespace {

// Replaces the single occurrence of `slot`; the replacement text may itself
// contain braces without being re-scanned.
std::string substitute(const std::string& pattern, std::string_view slot,
                       std::string_view value) {
    const std::size_t pos = pattern.find(slot);
    if (pos == std::string::npos) return pattern;
    std::string out;
    out.reserve(pattern.size() + value.size());
    out.append(pattern, 0, pos);
    out.append(value);
    out.append(pattern, pos + slot.size(), std::string::npos);
    return out;
}

}  // namespace

std::string render_demonstration(const PromptTemplate& tmpl, const LabeledExample& ex,
                                 const std::vector<std::string>& verbalizer) {
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= verbalizer.size()) {
        throw_data("MissingVerbalizer",
                   "label " + std::to_string(ex.label) + " has no verbalizer token");
    }
    return substitute(substitute(tmpl.example_pattern, "{input}", ex.text), "{output}",
                      verbalizer[ex.label]);
}

RenderedPrompt render_prompt(const PromptTemplate& tmpl, const std::vector<LabeledExample>& demos,
                             const std::vector<std::string>& verbalizer, std::string_view query) {
    RenderedPrompt out;
    for (const auto& demo : demos) {
        out.text += render_demonstration(tmpl, demo, verbalizer);
        out.text += tmpl.separator;
    }
    out.text += substitute(tmpl.query_pattern, "{input}", query);
    out.demo_count = static_cast<int>(demos.size());
    out.answer_cue_offset = out.text.size();
    return out;
}

PromptContext::PromptContext(PromptTemplate tmpl, std::vector<std::string> verbalizer,
                             std::vector<LabeledExample> demos)
    : tmpl_(std::move(tmpl)), verbalizer_(std::move(verbalizer)), demos_(std::move(demos)) {
    for (const auto& demo : demos_) {
        prefix_ += render_demonstration(tmpl_, demo, verbalizer_);
        prefix_ += tmpl_.separator;
    }
}

RenderedPrompt PromptContext::wrap(std::string_view query) const {
    RenderedPrompt out;
    out.text = prefix_;
    out.text += substitute(tmpl_.query_pattern, "{input}", query);
    out.demo_count = static_cast<int>(demos_.size());
    out.answer_cue_offset = out.text.size();
    return out;
}

}  // namespace fadsicl
