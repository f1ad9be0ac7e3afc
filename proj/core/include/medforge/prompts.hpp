#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "medforge/datamodel.hpp"

namespace medforge {

enum class PromptRole : std::uint8_t {
    FilterEditable,
    EditInstruction,
    OriginalDescription,
    EditedDescription,
    DifferenceDescription,
    Judge1,
    Judge2,
    SFTData,
    BenchQuestion,
    RightAnswer,
    WrongAnswer,
};

inline constexpr std::array<PromptRole, 11> kAllPromptRoles = {
    PromptRole::FilterEditable,      PromptRole::EditInstruction, PromptRole::OriginalDescription,
    PromptRole::EditedDescription,   PromptRole::DifferenceDescription, PromptRole::Judge1,
    PromptRole::Judge2,              PromptRole::SFTData,         PromptRole::BenchQuestion,
    PromptRole::RightAnswer,         PromptRole::WrongAnswer,
};

std::string_view to_string(PromptRole r);
std::optional<PromptRole> parse_prompt_role(std::string_view name);

class TemplateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Template text with named `{slot}` placeholders. `{{` and `}}` render as
// literal braces.
struct PromptTemplate {
    PromptRole role = PromptRole::FilterEditable;
    std::string text;

    // Declared slot names in order of first appearance. Throws TemplateError
    // on an unterminated `{`.
    std::vector<std::string> slots() const;
};

using SlotMap = std::map<std::string, std::string, std::less<>>;

// Throws TemplateError naming the first unfilled slot.
std::string render(const PromptTemplate& tmpl, const SlotMap& slots);

// Short natural-language gloss of a category, e.g. "change in spatial relation".
std::string_view category_description(EditCategory c);
// "Object, Attribute, ..., Universality"
std::string category_list();

// Holds exactly one active template per role.
class PromptRegistry {
public:
    // Built-in defaults for every role.
    static PromptRegistry defaults();

    const PromptTemplate& get(PromptRole role) const;
    void set(PromptTemplate tmpl);

    // Loads `*.txt` files whose first line is `role: <RoleName>`; the rest of
    // the file is the template text. Overrides defaults for the roles found.
    // Throws TemplateError on unknown roles or two files for one role.
    void load_dir(const std::filesystem::path& dir);

    std::string render(PromptRole role, const SlotMap& slots) const;

private:
    std::array<PromptTemplate, 11> templates_{};
};

// Parses the on-disk form (header line + body).
PromptTemplate parse_prompt_file(std::string_view content);
std::string format_prompt_file(const PromptTemplate& tmpl);

}  // namespace medforge
