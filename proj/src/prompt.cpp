#include "curatrix/prompt.hpp"

#include <algorithm>

#include "curatrix/hash.hpp"

namespace curatrix {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Trailing spaces on the first two lines are part of the template.
constexpr std::string_view kPromptHead = "You are an expert in ";
constexpr std::string_view kPromptBody =
    ". Given example image-question-answer tuples, \n"
    "your task is to generate diverse high-quality question-answer pairs relevant \n"
    "to this skill similar to the provided examples.\n"
    "\n"
    "Step-by-Step Process:\n"
    "\n"
    "1. Analyze the Example: Review the provided example question-answer pair to understand the structure, focus, "
    "and context.\n"
    "\n"
    "2. Understand the New Image: Infer relevant details, objects, and themes in the new image, considering how they "
    "relate to the skill.\n"
    "3. Generate Questions: Create questions that reflect the context and content of the new image, ensuring they "
    "align with the skill and follow the example's style.\n"
    "4. If the question is a multiple-choice question, make sure to include the options in the question.\n"
    "5. Formulate Answers: Generate accurate and concise answers to the questions. Ensure each answer directly "
    "corresponds to the content of the new image.\n"
    "\n"
    "Output Format:\n"
    "Return the results as a JSON list of objects. Each object should include:\n"
    "- \"Q\": The generated question (include options if it's multiple-choice).\n"
    "- \"A\": The generated answer.\n"
    "\n"
    "Example Output:\n"
    "[\n"
    "  {\"Q\": \"Generated question 1\", \"A\": \"Generated answer 1\"},\n"
    "  {\"Q\": \"Generated question 2\", \"A\": \"Generated answer 2\"}\n"
    "]";

PromptPart image_part(const ImageRef& image, const ImageStore& store) {
  PromptPart part;
  part.kind = PromptPart::Kind::image;
  part.image = image;
  if (auto bytes = resolve_image_bytes(store, image)) {
    part.data_b64 = base64_encode(*bytes);
    return part;
  }
  if (image.uri.starts_with("http://") || image.uri.starts_with("https://")) return part;
  throw DatasetError("unresolvable image " + image.content_hash + " (" + image.uri + ")");
}

PromptPart text_part(std::string text) {
  PromptPart part;
  part.kind = PromptPart::Kind::text;
  part.text = std::move(text);
  return part;
}

}  // namespace

std::string system_prompt(std::string_view task_name) {
  std::string out(kPromptHead);
  out.append(task_name);
  out.append(kPromptBody);
  return out;
}

PromptPayload build_prompt(std::string_view task_name, std::span<const MultimodalSample> references,
                           const ImageRef& candidate, const ImageStore& store) {
  if (references.empty()) throw Error("build_prompt needs at least one reference sample");
  PromptPayload payload;
  payload.system_text = system_prompt(task_name);
  for (const auto& ref : references) {
    payload.parts.push_back(image_part(ref.image, store));
    payload.parts.push_back(text_part("Q: " + ref.annotation.prompt));
    payload.parts.push_back(text_part("A: " + ref.annotation.response));
  }
  payload.parts.push_back(image_part(candidate, store));
  return payload;
}

ordered_json generation_request(const PromptPayload& payload, std::string_view model, double temperature,
                                ImageEncoding encoding) {
  ordered_json content = ordered_json::array();
  for (const auto& part : payload.parts) {
    ordered_json p;
    if (part.kind == PromptPart::Kind::text) {
      p["type"] = "text";
      p["text"] = part.text;
    } else if (part.data_b64.empty()) {
      p["type"] = "image_url";
      p["image_url"] = {{"url", part.image.uri}};
    } else if (encoding == ImageEncoding::data_url) {
      p["type"] = "image_url";
      p["image_url"] = {{"url", "data:" + part.image.media_type + ";base64," + part.data_b64}};
    } else {
      p["type"] = "image_b64";
      p["image_b64"] = {{"media_type", part.image.media_type}, {"data", part.data_b64}};
    }
    content.push_back(std::move(p));
  }
  ordered_json body;
  body["model"] = model;
  body["messages"] = ordered_json::array({
      ordered_json{{"role", "system"}, {"content", payload.system_text}},
      ordered_json{{"role", "user"}, {"content", std::move(content)}},
  });
  body["temperature"] = temperature;
  return body;
}

namespace {

// End of the bracketed span starting at `open`, skipping brackets inside
// JSON strings; npos when unbalanced.
std::size_t matching_bracket(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '[') {
      ++depth;
    } else if (c == ']') {
      if (--depth == 0) return i;
    }
  }
  return std::string_view::npos;
}

}  // namespace

std::vector<TextAnnotation> parse_generation(std::string_view raw) {
  // The first array of objects wins; otherwise the first array of any kind.
  json array;
  bool found = false;
  for (auto open = raw.find('['); open != std::string_view::npos; open = raw.find('[', open + 1)) {
    const auto close = matching_bracket(raw, open);
    if (close == std::string_view::npos) continue;
    auto candidate = json::parse(raw.substr(open, close - open + 1), nullptr, false);
    if (candidate.is_discarded() || !candidate.is_array()) continue;
    const bool objects = !candidate.empty() && std::all_of(candidate.begin(), candidate.end(),
                                                           [](const json& el) { return el.is_object(); });
    if (!found || objects) {
      array = std::move(candidate);
      found = true;
    }
    if (objects) break;
  }
  if (!found) throw ParseError("no JSON array found");
  if (array.empty()) throw ParseError("empty JSON array");

  std::vector<TextAnnotation> out;
  std::string defects;
  auto defect = [&](const std::string& d) {
    if (!defects.empty()) defects += "; ";
    defects += d;
  };
  for (std::size_t i = 0; i < array.size(); ++i) {
    const auto& el = array[i];
    const auto at = " at element " + std::to_string(i);
    if (!el.is_object()) {
      defect("not an object" + at);
      continue;
    }
    TextAnnotation ann;
    bool ok = true;
    for (const char* key : {"Q", "A"}) {
      auto it = el.find(key);
      if (it == el.end()) {
        defect(std::string("missing ") + key + at);
        ok = false;
      } else if (!it->is_string()) {
        defect(std::string(key) + " not a string" + at);
        ok = false;
      } else if (it->get_ref<const std::string&>().empty()) {
        defect(std::string("empty ") + key + at);
        ok = false;
      } else {
        (key[0] == 'Q' ? ann.prompt : ann.response) = it->get<std::string>();
      }
    }
    if (ok) out.push_back(std::move(ann));
  }
  if (!defects.empty()) throw ParseError(defects);
  return out;
}

}  // namespace curatrix
