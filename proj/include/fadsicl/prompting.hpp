#pragma once

#include <string>
#include <vector>

#include "fadsicl/core.hpp"

namespace fadsicl {

// A fully rendered prompt. The text ends exactly at the answer cue; the
// model's continuation starts at answer_cue_offset == text.size().
struct RenderedPrompt {
    std::string text;
    int demo_count = 0;
    std::size_t answer_cue_offset = 0;
};

// example_pattern with {input} -> ex.text and {output} -> verbalizer[ex.label].
// Throws DataError("MissingVerbalizer") when the label has no token.
std::string render_demonstration(const PromptTemplate& tmpl, const LabeledExample& ex,
                                 const std::vector<std::string>& verbalizer);

// Wrapped demonstrations joined by the separator, then the query pattern.
// Demo order is taken as given; callers freeze it once per run so every
// sample sees the byte-identical prefix.
RenderedPrompt render_prompt(const PromptTemplate& tmpl, const std::vector<LabeledExample>& demos,
                             const std::vector<std::string>& verbalizer, std::string_view query);

// Caches the rendered demonstration prefix of a run so per-sample wrapping is
// a single concatenation. wrap() output is byte-identical to render_prompt().
class PromptContext {
public:
    PromptContext(PromptTemplate tmpl, std::vector<std::string> verbalizer,
                  std::vector<LabeledExample> demos);

    RenderedPrompt wrap(std::string_view query) const;

    const PromptTemplate& prompt_template() const { return tmpl_; }
    const std::vector<std::string>& verbalizer() const { return verbalizer_; }
    const std::vector<LabeledExample>& demos() const { return demos_; }
    const std::string& prefix() const { return prefix_; }

private:
    PromptTemplate tmpl_;
    std::vector<std::string> verbalizer_;
    std::vector<LabeledExample> demos_;
    std::string prefix_;  // all demo blocks, each with trailing separator
};

}  // namespace fadsicl
