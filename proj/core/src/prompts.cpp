#include "medforge/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>
#include <set>

namespace medforge {

namespace {

constexpr std::array<std::string_view, 11> kRoleNames = {
    "FilterEditable", "EditInstruction", "OriginalDescription", "EditedDescription",
    "DifferenceDescription", "Judge1", "Judge2", "SFTData", "BenchQuestion",
    "RightAnswer", "WrongAnswer",
};

std::size_t role_index(PromptRole r) { return static_cast<std::size_t>(r); }

bool iequals(std::string_view a, std::string_view b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
           });
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

// Walks the template, invoking on_text for literal runs and on_slot for each
// placeholder.
template <class OnText, class OnSlot>
void scan(std::string_view text, OnText on_text, OnSlot on_slot) {
    std::size_t i = 0;
    while (i < text.size()) {
        char c = text[i];
        if (c == '{') {
            if (i + 1 < text.size() && text[i + 1] == '{') {
                on_text(std::string_view("{"));
                i += 2;
                continue;
            }
            std::size_t close = text.find('}', i + 1);
            if (close == std::string_view::npos) {
                throw TemplateError("unmatched '{' at offset " + std::to_string(i));
            }
            std::string_view name = text.substr(i + 1, close - i - 1);
            if (name.empty() || name.find('{') != std::string_view::npos) {
                throw TemplateError("malformed slot at offset " + std::to_string(i));
            }
            on_slot(name);
            i = close + 1;
        } else if (c == '}' && i + 1 < text.size() && text[i + 1] == '}') {
            on_text(std::string_view("}"));
            i += 2;
        } else {
            std::size_t next = text.find_first_of("{}", i + 1);
            if (next == std::string_view::npos) next = text.size();
            if (c == '}') next = i + 1;
            on_text(text.substr(i, next - i));
            i = next;
        }
    }
}

const char* const kDefaultTemplates[11] = {
    // FilterEditable
    "You are screening image-caption pairs for a controlled image editing dataset.\n"
    "Look at the image and its caption:\n\"{caption}\"\n"
    "Judge image quality (sharpness, a clearly visible main subject), caption clarity and "
    "specificity, and whether the scene can be edited locally without breaking the rest of the image.\n"
    "Answer \"Yes\" if the pair is suitable for editing, otherwise \"No\", then give a short reason.",
    // EditInstruction
    "You plan one minimal, local edit for the image described as:\n\"{caption}\"\n"
    "Choose the single most suitable change type from: {categories}. Prefer types other than "
    "Object whenever a good edit of that kind exists.\n"
    "Reply in exactly this format:\nCategory: <one type>\nInstruction: <one imperative sentence describing the edit>",
    // OriginalDescription
    "Here is an image, its caption and a planned edit.\nCaption: \"{caption}\"\nPlanned edit: \"{instruction}\"\n"
    "Revise the caption only if the image visibly contains elements mentioned in the planned edit that the "
    "caption omits. Do not add anything that is not visible. Return only the final caption.",
    // EditedDescription
    "The first image was edited to produce the second image. The edit type is {category} ({category_description}).\n"
    "Edit instruction: \"{instruction}\"\nCaption of the original image, as an example of the expected style:\n"
    "\"{original_caption}\"\n"
    "Write a caption for the edited image in the same style that accurately reflects the updated content. "
    "Return only the caption.",
    // DifferenceDescription
    "Compare the two captions below.\nOriginal: \"{original_caption}\"\nEdited: \"{edited_caption}\"\n"
    "Describe the single most salient difference in one concise sentence, then classify it as one of: "
    "{categories}.\nReply in exactly this format:\nDifference: <one sentence>\nCategory: <one type>",
    // Judge1
    "You are given an original image and an edited image.\nOriginal caption: \"{original_caption}\"\n"
    "Edited caption: \"{edited_caption}\"\nClaimed difference: \"{difference}\"\n"
    "Does each caption match its image, and does the claimed difference actually hold between the two images? "
    "Answer \"Yes\" or \"No\" first, then explain briefly.",
    // Judge2
    "Check this edited image pair for consistency.\nDifference statement: \"{difference}\"\n"
    "Original caption: \"{original_caption}\"\nEdited caption: \"{edited_caption}\"\n"
    "Is the difference statement visually grounded, and is it the only meaningful change between the images? "
    "Answer \"Yes\" or \"No\" first.",
    // SFTData
    "Turn the following difference between two images into a training example.\nDifference: \"{difference}\"\n"
    "Change type: {category}\nWrite one question asking about the most notable difference between the two "
    "images, and one answer grounded only in the difference above.\nReply in exactly this format:\n"
    "Q: <question>\nA: <answer>",
    // BenchQuestion
    "Two images differ as follows: \"{difference}\"\nOriginal caption: \"{original_caption}\"\n"
    "Edited caption: \"{edited_caption}\"\n"
    "Write {count} differently worded questions that each ask which change happened between the first and "
    "second image. Put one question per line with no numbering.",
    // RightAnswer
    "Question: \"{question}\"\nThe true difference between the images: \"{difference}\"\n"
    "Write the correct answer to the question as one short sentence. Return only the answer.",
    // WrongAnswer
    "Question: \"{question}\"\nTrue difference: \"{difference}\"\nCorrect answer: \"{correct}\"\n"
    "Write {count} plausible but wrong answers that describe subtle changes which did not happen. "
    "Each must differ from the correct answer. Put one answer per line with no numbering.",
};

}  // namespace

std::string_view to_string(PromptRole r) { return kRoleNames.at(role_index(r)); }

std::optional<PromptRole> parse_prompt_role(std::string_view name) {
    name = trim(name);
    for (std::size_t i = 0; i < kRoleNames.size(); ++i) {
        if (iequals(name, kRoleNames[i])) return kAllPromptRoles[i];
    }
    return std::nullopt;
}

std::vector<std::string> PromptTemplate::slots() const {
    std::vector<std::string> out;
    scan(text, [](std::string_view) {}, [&](std::string_view name) {
        if (std::find(out.begin(), out.end(), name) == out.end()) out.emplace_back(name);
    });
    return out;
}

std::string render(const PromptTemplate& tmpl, const SlotMap& slots) {
    std::string out;
    out.reserve(tmpl.text.size());
    scan(tmpl.text, [&](std::string_view t) { out.append(t); }, [&](std::string_view name) {
        auto it = slots.find(name);
        if (it == slots.end()) {
            throw TemplateError("missing slot \"" + std::string(name) + "\" in " +
                                std::string(to_string(tmpl.role)) + " template");
        }
        out.append(it->second);
    });
    return out;
}

std::string_view category_description(EditCategory c) {
    switch (c) {
        case EditCategory::Object: return "an object is added, removed or replaced";
        case EditCategory::Attribute: return "change in an object's attribute such as color, material or size";
        case EditCategory::Scene: return "change in the scene, setting, weather or lighting";
        case EditCategory::Spatial: return "change in spatial relation or position";
        case EditCategory::Action: return "change in an action or pose";
        case EditCategory::Part: return "change to a part of an object";
        case EditCategory::Counting: return "change in the number of objects";
        case EditCategory::Differentiation: return "change that makes similar objects distinguishable or not";
        case EditCategory::Comparison: return "change in a comparative relation such as bigger or taller";
        case EditCategory::Negation: return "something present becomes absent or vice versa";
        case EditCategory::Universality: return "change in whether a property holds for all objects of a kind";
    }
    return "";
}

std::string category_list() {
    std::string out;
    for (auto c : kAllCategories) {
        if (!out.empty()) out += ", ";
        out += to_string(c);
    }
    return out;
}

PromptRegistry PromptRegistry::defaults() {
    PromptRegistry reg;
    for (std::size_t i = 0; i < kAllPromptRoles.size(); ++i) {
        reg.templates_[i] = PromptTemplate{kAllPromptRoles[i], kDefaultTemplates[i]};
    }
    return reg;
}

const PromptTemplate& PromptRegistry::get(PromptRole role) const { return templates_.at(role_index(role)); }

void PromptRegistry::set(PromptTemplate tmpl) {
    (void)tmpl.slots();  // reject malformed templates up front
    templates_.at(role_index(tmpl.role)) = std::move(tmpl);
}

std::string PromptRegistry::render(PromptRole role, const SlotMap& slots) const {
    return medforge::render(get(role), slots);
}

PromptTemplate parse_prompt_file(std::string_view content) {
    std::size_t eol = content.find('\n');
    std::string_view header = content.substr(0, eol);
    std::string_view body = eol == std::string_view::npos ? std::string_view{} : content.substr(eol + 1);
    std::size_t colon = header.find(':');
    if (colon == std::string_view::npos || !iequals(trim(header.substr(0, colon)), "role")) {
        throw TemplateError("prompt file must start with a 'role: <RoleName>' line");
    }
    auto role = parse_prompt_role(header.substr(colon + 1));
    if (!role) throw TemplateError("unknown prompt role \"" + std::string(trim(header.substr(colon + 1))) + "\"");
    while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.remove_suffix(1);
    PromptTemplate t{*role, std::string(body)};
    (void)t.slots();
    return t;
}

std::string format_prompt_file(const PromptTemplate& tmpl) {
    return "role: " + std::string(to_string(tmpl.role)) + "\n" + tmpl.text + "\n";
}

void PromptRegistry::load_dir(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw TemplateError("prompt directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::set<PromptRole> seen;
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        std::string content{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
        PromptTemplate t = parse_prompt_file(content);
        if (!seen.insert(t.role).second) {
            throw TemplateError("two prompt files for role " + std::string(to_string(t.role)) + " in " + dir.string());
        }
        set(std::move(t));
    }
}

}  // namespace medforge
