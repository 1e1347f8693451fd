#include "uniground/gateway.hpp"

#include <httplib.h>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <array>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>

namespace uniground {
namespace {

constexpr char kBase64Table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::vector<std::uint8_t> png_bytes_from_rgb(const cv::Mat& rgb) {
  if (rgb.empty() || rgb.type() != CV_8UC3) {
    throw Error(ErrorCode::InvalidArgument, "wire images must be non-empty CV_8UC3 RGB");
  }
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  std::vector<std::uint8_t> bytes;
  if (!cv::imencode(".png", bgr, bytes)) {
    throw Error(ErrorCode::InvalidArgument, "png encoding failed");
  }
  return bytes;
}

cv::Mat rgb_from_png_bytes(const std::vector<std::uint8_t>& bytes) {
  const cv::Mat bgr = cv::imdecode(bytes, cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw Error(ErrorCode::MalformedResponse, "image payload is not decodable");
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return rgb;
}

std::string image_to_b64(const cv::Mat& rgb) { return base64_encode(png_bytes_from_rgb(rgb)); }

cv::Mat image_from_b64(const std::string& b64) { return rgb_from_png_bytes(base64_decode(b64)); }

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorCode::MalformedResponse, what);
}

struct ParsedEndpoint {
  std::string base;  // scheme://host:port
  std::string path;  // /path or /
};

ParsedEndpoint parse_endpoint(const std::string& endpoint) {
  const auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::InvalidArgument, "endpoint must be an http URL: " + endpoint);
  }
  const std::string scheme = endpoint.substr(0, scheme_end);
  if (scheme != "http") {
    throw Error(ErrorCode::InvalidArgument, "only http endpoints are supported, got " + scheme);
  }
  const auto path_start = endpoint.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {endpoint, "/"};
  return {endpoint.substr(0, path_start), endpoint.substr(path_start)};
}

}  // namespace

/// Blocks callers beyond a fixed in-flight cap.
class InFlightGate {
 public:
  explicit InFlightGate(int cap) : cap_(cap) {}

  class Token {
   public:
    explicit Token(InFlightGate& gate) : gate_(gate) {
      std::unique_lock lock(gate_.mutex_);
      gate_.cv_.wait(lock, [&] { return gate_.in_flight_ < gate_.cap_; });
      ++gate_.in_flight_;
    }
    ~Token() {
      {
        std::lock_guard lock(gate_.mutex_);
        --gate_.in_flight_;
      }
      gate_.cv_.notify_one();
    }

   private:
    InFlightGate& gate_;
  };

 private:
  friend class Token;
  std::mutex mutex_;
  std::condition_variable cv_;
  int in_flight_ = 0;
  int cap_;
};

void ProviderConfig::validate() const {
  if (endpoint.empty()) throw Error(ErrorCode::InvalidArgument, "endpoint is empty");
  if (!(timeout_seconds > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "timeout_seconds must be positive");
  }
  if (max_retries < 0) throw Error(ErrorCode::InvalidArgument, "max_retries must be >= 0");
  if (max_images < 1) throw Error(ErrorCode::InvalidArgument, "max_images must be >= 1");
  if (max_in_flight < 1) throw Error(ErrorCode::InvalidArgument, "max_in_flight must be >= 1");
  parse_endpoint(endpoint);
}

EmbedRequest EmbedRequest::from_image(cv::Mat rgb) {
  EmbedRequest request;
  request.image = std::move(rgb);
  return request;
}

EmbedRequest EmbedRequest::from_text(std::string text) {
  EmbedRequest request;
  request.text = std::move(text);
  return request;
}

std::string base64_encode(const std::uint8_t* data, std::size_t size) {
  std::string out;
  out.reserve((size + 2) / 3 * 4);
  for (std::size_t i = 0; i < size; i += 3) {
    const std::uint32_t b0 = data[i];
    const std::uint32_t b1 = i + 1 < size ? data[i + 1] : 0;
    const std::uint32_t b2 = i + 2 < size ? data[i + 2] : 0;
    const std::uint32_t triple = (b0 << 16) | (b1 << 8) | b2;
    out.push_back(kBase64Table[(triple >> 18) & 0x3f]);
    out.push_back(kBase64Table[(triple >> 12) & 0x3f]);
    out.push_back(i + 1 < size ? kBase64Table[(triple >> 6) & 0x3f] : '=');
    out.push_back(i + 2 < size ? kBase64Table[triple & 0x3f] : '=');
  }
  return out;
}

std::string base64_encode(const std::vector<std::uint8_t>& data) {
  return base64_encode(data.data(), data.size());
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) {
    throw Error(ErrorCode::MalformedResponse, "base64 length not a multiple of 4");
  }
  std::array<int, 256> reverse;
  reverse.fill(-1);
  for (int i = 0; i < 64; ++i) reverse[static_cast<unsigned char>(kBase64Table[i])] = i;

  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2) malformed("base64 padding misplaced");
        ++pad;
        vals[k] = 0;
        continue;
      }
      if (pad > 0) malformed("base64 data after padding");
      vals[k] = reverse[static_cast<unsigned char>(c)];
      if (vals[k] < 0) malformed("base64 contains invalid character");
    }
    const std::uint32_t triple = (static_cast<std::uint32_t>(vals[0]) << 18) |
                                 (static_cast<std::uint32_t>(vals[1]) << 12) |
                                 (static_cast<std::uint32_t>(vals[2]) << 6) |
                                 static_cast<std::uint32_t>(vals[3]);
    out.push_back(static_cast<std::uint8_t>((triple >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((triple >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(triple & 0xff));
  }
  return out;
}

std::vector<int> rle_encode(const cv::Mat& mask) {
  if (mask.empty() || mask.type() != CV_8UC1) {
    throw Error(ErrorCode::InvalidArgument, "rle_encode expects a non-empty CV_8UC1 mask");
  }
  std::vector<int> runs;
  int current = 0;
  int run = 0;
  for (int y = 0; y < mask.rows; ++y) {
    const std::uint8_t* row = mask.ptr<std::uint8_t>(y);
    for (int x = 0; x < mask.cols; ++x) {
      const int v = row[x] ? 1 : 0;
      if (v == current) {
        ++run;
      } else {
        runs.push_back(run);
        current = v;
        run = 1;
      }
    }
  }
  runs.push_back(run);
  return runs;
}

cv::Mat rle_decode(const std::vector<int>& runs, int width, int height) {
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::InvalidArgument, "rle_decode needs positive dimensions");
  }
  long long total = 0;
  for (int r : runs) {
    if (r < 0) malformed("rle run is negative");
    total += r;
  }
  if (total != static_cast<long long>(width) * height) {
    malformed("rle runs do not cover the image");
  }
  cv::Mat mask = cv::Mat::zeros(height, width, CV_8UC1);
  long long pos = 0;
  int value = 0;
  for (int r : runs) {
    if (value) {
      for (long long p = pos; p < pos + r; ++p) {
        mask.ptr<std::uint8_t>(static_cast<int>(p / width))[p % width] = 255;
      }
    }
    pos += r;
    value ^= 1;
  }
  return mask;
}

nlohmann::json encode_mask_request(const MaskRequest& request) {
  nlohmann::json body;
  body["image"] = image_to_b64(request.image);
  auto& points = body["points"] = nlohmann::json::array();
  for (const PointPrompt& p : request.prompts) {
    points.push_back({p.u, p.v, p.positive ? 1 : 0});
  }
  return body;
}

MaskRequest decode_mask_request(const nlohmann::json& body) {
  try {
    MaskRequest request;
    request.image = image_from_b64(body.at("image").get<std::string>());
    for (const auto& p : body.at("points")) {
      if (!p.is_array() || p.size() != 3) malformed("point prompt is not [u, v, label]");
      request.prompts.push_back(
          {p[0].get<int>(), p[1].get<int>(), p[2].get<int>() != 0});
    }
    return request;
  } catch (const nlohmann::json::exception& e) {
    malformed(std::string("mask request: ") + e.what());
  }
}

nlohmann::json encode_mask_response(const MaskResponse& response) {
  nlohmann::json body;
  auto& masks = body["masks"] = nlohmann::json::array();
  for (const MaskResult& m : response.masks) {
    masks.push_back({{"rle", rle_encode(m.mask)}, {"confidence", m.confidence}});
  }
  return body;
}

MaskResponse decode_mask_response(const nlohmann::json& body, int width, int height) {
  try {
    MaskResponse response;
    for (const auto& m : body.at("masks")) {
      MaskResult result;
      result.mask = rle_decode(m.at("rle").get<std::vector<int>>(), width, height);
      result.confidence = m.at("confidence").get<double>();
      if (result.confidence < 0.0 || result.confidence > 1.0) {
        malformed("mask confidence outside [0, 1]");
      }
      if (!response.masks.empty() && result.confidence > response.masks.back().confidence) {
        malformed("mask confidences are not sorted descending");
      }
      response.masks.push_back(std::move(result));
    }
    return response;
  } catch (const nlohmann::json::exception& e) {
    malformed(std::string("mask response: ") + e.what());
  }
}

nlohmann::json encode_embed_request(const EmbedRequest& request) {
  const bool has_image = !request.image.empty();
  const bool has_text = !request.text.empty();
  if (has_image == has_text) {
    throw Error(ErrorCode::InvalidArgument, "embed request needs exactly one of image/text");
  }
  nlohmann::json body;
  if (has_image) {
    body["image"] = image_to_b64(request.image);
  } else {
    body["text"] = request.text;
  }
  return body;
}

EmbedRequest decode_embed_request(const nlohmann::json& body) {
  try {
    const bool has_image = body.contains("image");
    const bool has_text = body.contains("text");
    if (has_image == has_text) malformed("embed request needs exactly one of image/text");
    if (has_image) return EmbedRequest::from_image(image_from_b64(body.at("image").get<std::string>()));
    return EmbedRequest::from_text(body.at("text").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    malformed(std::string("embed request: ") + e.what());
  }
}

nlohmann::json encode_embed_response(const EmbedResponse& response) {
  std::vector<float> values(response.vector.data(), response.vector.data() + response.vector.size());
  return nlohmann::json{{"vector", values}};
}

EmbedResponse decode_embed_response(const nlohmann::json& body) {
  try {
    const auto values = body.at("vector").get<std::vector<float>>();
    EmbedResponse response;
    response.vector = Eigen::Map<const Eigen::VectorXf>(values.data(),
                                                        static_cast<Eigen::Index>(values.size()));
    if (response.vector.size() == 0 || response.vector.norm() == 0.0f) {
      malformed("embedding vector is empty or zero");
    }
    return response;
  } catch (const nlohmann::json::exception& e) {
    malformed(std::string("embed response: ") + e.what());
  }
}

nlohmann::json encode_vlm_request(const VlmRequest& request) {
  nlohmann::json body;
  auto& images = body["images"] = nlohmann::json::array();
  for (const cv::Mat& image : request.images) images.push_back(image_to_b64(image));
  body["prompt"] = request.prompt;
  body["schema"] = request.schema_id;
  return body;
}

VlmRequest decode_vlm_request(const nlohmann::json& body) {
  try {
    VlmRequest request;
    for (const auto& b64 : body.at("images")) {
      request.images.push_back(image_from_b64(b64.get<std::string>()));
    }
    request.prompt = body.at("prompt").get<std::string>();
    request.schema_id = body.at("schema").get<std::string>();
    return request;
  } catch (const nlohmann::json::exception& e) {
    malformed(std::string("vlm request: ") + e.what());
  }
}

nlohmann::json encode_vlm_response(const VlmResponse& response) {
  return nlohmann::json{{"text", response.text}};
}

VlmResponse decode_vlm_response(const nlohmann::json& body) {
  try {
    return {body.at("text").get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    malformed(std::string("vlm response: ") + e.what());
  }
}

nlohmann::json http_post_json(const ProviderConfig& config, const nlohmann::json& body) {
  config.validate();
  const std::string payload = body.dump();
  if (payload.size() > config.max_payload_bytes) {
    throw Error(ErrorCode::PayloadTooLarge,
                std::to_string(payload.size()) + " bytes exceeds limit of " +
                    std::to_string(config.max_payload_bytes));
  }

  const ParsedEndpoint parsed = parse_endpoint(config.endpoint);
  httplib::Client client(parsed.base);
  const auto timeout = std::chrono::duration<double>(config.timeout_seconds);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  httplib::Headers headers;
  if (!config.auth_env.empty()) {
    if (const char* token = std::getenv(config.auth_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }

  for (int attempt = 0;; ++attempt) {
    auto result = client.Post(parsed.path, headers, payload, "application/json");
    const bool transport_failed = !result;
    const int status = transport_failed ? 0 : result->status;
    if (!transport_failed && status >= 200 && status < 300) {
      const auto parsed_body = nlohmann::json::parse(result->body, nullptr, false);
      if (parsed_body.is_discarded()) malformed("response body is not JSON");
      return parsed_body;
    }
    if (!transport_failed && status < 500) {
      throw Error(ErrorCode::BadStatus,
                  "status " + std::to_string(status) + " from " + config.endpoint);
    }
    if (attempt >= config.max_retries) {
      if (transport_failed) {
        throw Error(ErrorCode::Timeout,
                    std::string(httplib::to_string(result.error())) + " calling " + config.endpoint);
      }
      throw Error(ErrorCode::BadStatus,
                  "status " + std::to_string(status) + " from " + config.endpoint +
                      " after " + std::to_string(attempt + 1) + " attempts");
    }
    std::this_thread::sleep_for(std::chrono::seconds(1LL << attempt));
  }
}

HttpMaskProvider::HttpMaskProvider(ProviderConfig config)
    : config_(std::move(config)), gate_(std::make_shared<InFlightGate>(config_.max_in_flight)) {
  config_.validate();
}

MaskResponse HttpMaskProvider::segment(const MaskRequest& request) {
  InFlightGate::Token token(*gate_);
  const nlohmann::json reply = http_post_json(config_, encode_mask_request(request));
  return decode_mask_response(reply, request.image.cols, request.image.rows);
}

HttpEmbeddingProvider::HttpEmbeddingProvider(ProviderConfig config)
    : config_(std::move(config)), gate_(std::make_shared<InFlightGate>(config_.max_in_flight)) {
  config_.validate();
}

EmbedResponse HttpEmbeddingProvider::embed(const EmbedRequest& request) {
  InFlightGate::Token token(*gate_);
  return decode_embed_response(http_post_json(config_, encode_embed_request(request)));
}

HttpVlmProvider::HttpVlmProvider(ProviderConfig config)
    : config_(std::move(config)), gate_(std::make_shared<InFlightGate>(config_.max_in_flight)) {
  config_.validate();
}

VlmResponse HttpVlmProvider::complete(const VlmRequest& request) {
  if (static_cast<int>(request.images.size()) > config_.max_images) {
    throw Error(ErrorCode::InvalidArgument,
                "request carries " + std::to_string(request.images.size()) +
                    " images, limit is " + std::to_string(config_.max_images));
  }
  InFlightGate::Token token(*gate_);
  return decode_vlm_response(http_post_json(config_, encode_vlm_request(request)));
}

}  // namespace uniground
