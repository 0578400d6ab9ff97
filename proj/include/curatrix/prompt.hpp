#pragma once

// Teacher prompt construction and parsing of the teacher's Q/A output.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "curatrix/dataset.hpp"

namespace curatrix {

struct PromptPart {
  enum class Kind { text, image };

  Kind kind = Kind::text;
  std::string text;
  ImageRef image;
  /// Base64 image bytes; empty means the image travels by URL (image.uri).
  std::string data_b64;

  bool operator==(const PromptPart&) const = default;
};

struct PromptPayload {
  std::string system_text;
  std::vector<PromptPart> parts;

  bool operator==(const PromptPayload&) const = default;
};

/// The fixed instruction text with `task_name` in the task slot.
std::string system_prompt(std::string_view task_name);

/// System text plus, for each reference in order, [image, "Q: " + prompt,
/// "A: " + response], then the candidate image. Images are inlined as base64
/// when their bytes resolve, otherwise sent by http(s) URL; anything else
/// throws naming the content hash.
PromptPayload build_prompt(std::string_view task_name, std::span<const MultimodalSample> references,
                           const ImageRef& candidate, const ImageStore& store);

/// How image parts are written into a chat request.
enum class ImageEncoding {
  b64,       // {"type":"image_b64","image_b64":{"media_type":..,"data":..}}
  data_url,  // {"type":"image_url","image_url":{"url":"data:<media>;base64,.."}}
};

/// The chat-completions request body for a payload.
nlohmann::ordered_json generation_request(const PromptPayload& payload, std::string_view model, double temperature,
                                          ImageEncoding encoding = ImageEncoding::b64);

/// Pulls the first well-formed JSON array out of `raw`, tolerating prose and
/// code fences around it. Each element must carry non-empty string "Q" and
/// "A" fields. Throws ParseError listing every defect.
std::vector<TextAnnotation> parse_generation(std::string_view raw);

}  // namespace curatrix
