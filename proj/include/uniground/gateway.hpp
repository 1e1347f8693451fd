#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "uniground/boxes.hpp"
#include "uniground/types.hpp"

namespace uniground {

struct ProviderConfig {
  std::string endpoint;             // http://host:port/path
  double timeout_seconds = 30.0;    // connect/read/write timeout per attempt
  int max_retries = 2;              // extra attempts after the first
  std::string auth_env = "UG_API_TOKEN";  // env var holding the bearer token
  std::size_t max_payload_bytes = 32u << 20;
  int max_images = 16;   // per VLM request
  int max_in_flight = 8;

  void validate() const;
};

struct PointPrompt {
  int u = 0;
  int v = 0;
  bool positive = true;
};

struct MaskRequest {
  cv::Mat image;  // CV_8UC3, RGB
  std::vector<PointPrompt> prompts;
};

struct MaskResult {
  cv::Mat mask;  // CV_8UC1, 0 / 255, same size as the request image
  double confidence = 0.0;
};

struct MaskResponse {
  std::vector<MaskResult> masks;  // confidence non-increasing
};

/// Exactly one of image / text is set.
struct EmbedRequest {
  cv::Mat image;  // CV_8UC3, RGB; empty for text requests
  std::string text;

  static EmbedRequest from_image(cv::Mat rgb);
  static EmbedRequest from_text(std::string text);
};

struct EmbedResponse {
  Eigen::VectorXf vector;  // non-zero; one dimension per provider
};

struct VlmRequest {
  std::vector<cv::Mat> images;  // CV_8UC3, RGB, ordered
  std::string prompt;
  std::string schema_id;
};

struct VlmResponse {
  std::string text;
};

struct MaskProvider {
  virtual ~MaskProvider() = default;
  virtual MaskResponse segment(const MaskRequest& request) = 0;
};

struct EmbeddingProvider {
  virtual ~EmbeddingProvider() = default;
  virtual EmbedResponse embed(const EmbedRequest& request) = 0;
};

struct VlmProvider {
  virtual ~VlmProvider() = default;
  virtual VlmResponse complete(const VlmRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Wire protocol. JSON bodies with base64 PNG images:
//   vlm:   {"images": [b64...], "prompt": str, "schema": str} -> {"text": str}
//   mask:  {"image": b64, "points": [[u, v, label]...]}
//          -> {"masks": [{"rle": [...], "confidence": f}...]}
//   embed: {"image": b64} or {"text": str} -> {"vector": [f...]}
// Masks travel run-length encoded: row-major runs of alternating value,
// starting with a zero run (possibly of length 0); runs sum to width*height.

std::string base64_encode(const std::uint8_t* data, std::size_t size);
std::string base64_encode(const std::vector<std::uint8_t>& data);
std::vector<std::uint8_t> base64_decode(const std::string& text);

std::vector<int> rle_encode(const cv::Mat& mask);
cv::Mat rle_decode(const std::vector<int>& runs, int width, int height);

nlohmann::json encode_mask_request(const MaskRequest& request);
MaskRequest decode_mask_request(const nlohmann::json& body);
nlohmann::json encode_mask_response(const MaskResponse& response);
MaskResponse decode_mask_response(const nlohmann::json& body, int width, int height);

nlohmann::json encode_embed_request(const EmbedRequest& request);
EmbedRequest decode_embed_request(const nlohmann::json& body);
nlohmann::json encode_embed_response(const EmbedResponse& response);
EmbedResponse decode_embed_response(const nlohmann::json& body);

nlohmann::json encode_vlm_request(const VlmRequest& request);
VlmRequest decode_vlm_request(const nlohmann::json& body);
nlohmann::json encode_vlm_response(const VlmResponse& response);
VlmResponse decode_vlm_response(const nlohmann::json& body);

/// POST body to config.endpoint and return the parsed JSON reply. Payloads
/// over max_payload_bytes fail before any network traffic. Transport errors
/// and 5xx are retried with 1 s, 2 s, 4 s... backoff up to max_retries; 4xx
/// is never retried. Calls are synchronous, so retries cannot reorder a
/// response relative to its own request.
nlohmann::json http_post_json(const ProviderConfig& config, const nlohmann::json& body);

class InFlightGate;

class HttpMaskProvider : public MaskProvider {
 public:
  explicit HttpMaskProvider(ProviderConfig config);
  MaskResponse segment(const MaskRequest& request) override;

 private:
  ProviderConfig config_;
  std::shared_ptr<InFlightGate> gate_;
};

class HttpEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit HttpEmbeddingProvider(ProviderConfig config);
  EmbedResponse embed(const EmbedRequest& request) override;

 private:
  ProviderConfig config_;
  std::shared_ptr<InFlightGate> gate_;
};

class HttpVlmProvider : public VlmProvider {
 public:
  explicit HttpVlmProvider(ProviderConfig config);
  VlmResponse complete(const VlmRequest& request) override;

 private:
  ProviderConfig config_;
  std::shared_ptr<InFlightGate> gate_;
};

// ---------------------------------------------------------------------------
// Deterministic offline providers.

/// Colors the synthetic generator paints objects with; the mock embedder
/// classifies pixels against the same table.
struct PaletteEntry {
  const char* name;
  Rgb rgb;
};
inline constexpr std::array<PaletteEntry, 10> kObjectPalette = {{
    {"red", {220, 30, 30}},
    {"green", {30, 200, 40}},
    {"blue", {40, 60, 220}},
    {"yellow", {230, 220, 40}},
    {"cyan", {40, 210, 210}},
    {"magenta", {210, 40, 200}},
    {"orange", {240, 140, 30}},
    {"purple", {130, 40, 180}},
    {"brown", {140, 90, 40}},
    {"white", {245, 245, 245}},
}};

inline constexpr std::array<const char*, 3> kShapeNames = {"cube", "sphere", "cylinder"};

/// Neutral render background; never used for objects.
inline constexpr Rgb kRenderBackground = {120, 120, 120};

/// Connected components of exact-color regions. Without prompts: every
/// non-background component, largest first (ties by first row-major pixel),
/// confidence 1.0. With prompts: only the component containing the most
/// positive prompts (no hit anywhere -> empty response).
class MockMaskProvider : public MaskProvider {
 public:
  explicit MockMaskProvider(Rgb background = kRenderBackground);
  MaskResponse segment(const MaskRequest& request) override;

 private:
  Rgb background_;
};

/// 64-dim shared image/text space. Images: palette-color histogram with a
/// joint color-shape block (shape scored from silhouette fill and aspect
/// of the dominant color) plus color/shape marginals. Text: fixed vocabulary
/// of the palette colors, shape words with synonyms, and a small noun table
/// where synonym pairs share a latent axis (cosine 0.8). Canonical crop /
/// label pairs reach cosine >= 0.9 and cross-label pairs stay <= 0.3.
class MockEmbeddingProvider : public EmbeddingProvider {
 public:
  static constexpr int kDim = 64;
  EmbedResponse embed(const EmbedRequest& request) override;
};

/// Mock embedding plus seeded Gaussian noise (deterministic per input) and
/// renormalization. Pure function of (input, seed, sigma).
class NoisyEmbeddingProvider : public EmbeddingProvider {
 public:
  NoisyEmbeddingProvider(std::uint64_t seed, double sigma);
  EmbedResponse embed(const EmbedRequest& request) override;

 private:
  std::uint64_t seed_;
  double sigma_;
};

/// Replays a fixed response list in order, repeating the final entry once
/// exhausted. The cursor is the only state; reset() rewinds it.
class ScriptedVlmProvider : public VlmProvider {
 public:
  explicit ScriptedVlmProvider(std::vector<std::string> script);
  VlmResponse complete(const VlmRequest& request) override;
  void reset();
  int call_count() const;

 private:
  std::vector<std::string> script_;
  mutable std::mutex mutex_;
  std::size_t cursor_ = 0;
  int calls_ = 0;
};

/// Adapters for test-local behavior (fuzzers, fault injection).
class FunctionVlmProvider : public VlmProvider {
 public:
  using Fn = std::function<VlmResponse(const VlmRequest&)>;
  explicit FunctionVlmProvider(Fn fn) : fn_(std::move(fn)) {}
  VlmResponse complete(const VlmRequest& request) override { return fn_(request); }

 private:
  Fn fn_;
};

class FunctionEmbeddingProvider : public EmbeddingProvider {
 public:
  using Fn = std::function<EmbedResponse(const EmbedRequest&)>;
  explicit FunctionEmbeddingProvider(Fn fn) : fn_(std::move(fn)) {}
  EmbedResponse embed(const EmbedRequest& request) override { return fn_(request); }

 private:
  Fn fn_;
};

class FunctionMaskProvider : public MaskProvider {
 public:
  using Fn = std::function<MaskResponse(const MaskRequest&)>;
  explicit FunctionMaskProvider(Fn fn) : fn_(std::move(fn)) {}
  MaskResponse segment(const MaskRequest& request) override { return fn_(request); }

 private:
  Fn fn_;
};

// ---------------------------------------------------------------------------
// Ground-truth oracle VLM. Reasoner prompts embed machine-readable lines the
// oracle parses back out:
//   "TASK: name" / "TASK: select" / "TASK: ground"
//   "QUERY: <verbatim query text>"
//   "CENTER: <x> <y> <z>"                      (naming turns)
//   "CANDIDATE <id>: center <x> <y> <z>"        (selection turns)
//   "NAMES: <id>=<name>; ..."                   (optional, selection turns)

struct GroundTruthObject {
  std::string label;  // "<color> <shape>"
  OrientedBox box;
};

struct OracleContext {
  std::vector<GroundTruthObject> objects;
  std::map<std::string, int> target_by_query;  // query text -> object index
};

/// Answers naming turns with the label of the ground-truth box containing
/// (else nearest to) the prompted center, and selection turns with the
/// candidate whose center is nearest the annotated target's box center.
class OracleVlmProvider : public VlmProvider {
 public:
  explicit OracleVlmProvider(OracleContext context);
  VlmResponse complete(const VlmRequest& request) override;

 private:
  OracleContext context_;
};

/// Oracle that degrades without its inputs: selection turns answer correctly
/// only when the prompt carries a NAMES section and the request carries
/// images; otherwise it falls back to the first listed candidate.
class DegradedOracleVlmProvider : public VlmProvider {
 public:
  explicit DegradedOracleVlmProvider(OracleContext context);
  VlmResponse complete(const VlmRequest& request) override;

 private:
  OracleContext context_;
};

/// Prompt-line helpers shared by the reasoner (writers) and oracles
/// (readers).
std::string format_center_line(const Vec3& center);
std::string format_candidate_line(int candidate_id, const Vec3& center);
std::optional<Vec3> parse_center_line(const std::string& prompt);
std::vector<std::pair<int, Vec3>> parse_candidate_lines(const std::string& prompt);
std::optional<std::string> parse_query_line(const std::string& prompt);

}  // namespace uniground
