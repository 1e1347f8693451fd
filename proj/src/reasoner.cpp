#include "uniground/reasoner.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace uniground {

namespace {

constexpr char kNamePromptId[] = "name_candidate";
constexpr char kSpatialPromptId[] = "spatial_select";
constexpr char kCorrectionPromptId[] = "spatial_correction";
constexpr char kCombinedPromptId[] = "ground_combined";
constexpr char kNameSchema[] = "name.v1";
constexpr char kSelectionSchema[] = "selection.v1";
constexpr char kStrictRetrySuffix[] =
    "\nYour previous reply did not follow the requested format. Answer again, exactly in the "
    "format described above.";

std::string trim_copy(const std::string& s) {
  std::size_t begin = 0;
  std::size_t end = s.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) {
    ++begin;
  }
  while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) {
    --end;
  }
  return s.substr(begin, end - begin);
}

std::string run_turn(VlmProvider& vlm, const VlmTurn& turn) {
  VlmRequest request;
  request.images = turn.images;
  request.prompt = turn.prompt;
  request.schema_id = turn.expected_schema;
  return vlm.complete(request).text;
}

std::string format_direction(const AxisLanguageMap::Entry& entry) {
  char buffer[96];
  std::snprintf(buffer, sizeof buffer, "%s = (%.2f, %.2f, %.2f)", entry.phrase.c_str(),
                entry.direction.x(), entry.direction.y(), entry.direction.z());
  return buffer;
}

std::string join_names_line(const std::vector<Candidate>& candidates,
                            const std::map<int, std::string>& names) {
  std::string line = "NAMES: ";
  bool first = true;
  for (const Candidate& candidate : candidates) {
    if (!first) {
      line += "; ";
    }
    first = false;
    const auto it = names.find(candidate.candidate_id);
    line += std::to_string(candidate.candidate_id) + "=" +
            (it == names.end() ? std::string("unknown") : it->second);
  }
  return line;
}

std::string matched_line(const std::set<int>& matched) {
  if (matched.empty()) {
    return "MATCHED: none";
  }
  std::string line = "MATCHED:";
  for (int id : matched) {
    line += " " + std::to_string(id);
  }
  return line;
}

std::string build_selection_prompt(const PromptLibrary& prompts, const GroundingQuery& query,
                                   const std::vector<Candidate>& candidates,
                                   const std::map<int, std::string>& names,
                                   const std::set<int>& matched, const AxisLanguageMap& axis_map,
                                   bool include_axes) {
  std::string prompt = prompts.get(kSpatialPromptId);
  prompt += "\nTASK: select";
  prompt += "\nQUERY: " + query.text;
  for (const Candidate& candidate : candidates) {
    prompt += "\n" + format_candidate_line(candidate.candidate_id, candidate.instance.obb.center);
  }
  if (!names.empty()) {
    prompt += "\n" + join_names_line(candidates, names);
  }
  prompt += "\n" + matched_line(matched);
  if (include_axes) {
    prompt += "\nAXES:\n" + axis_map.to_text();
  }
  return prompt;
}

/// Highest Stage-1 score wins; ties go to the lower candidate id. With a
/// non-empty matched set only its members compete.
int score_fallback_id(const std::vector<Candidate>& candidates, const std::set<int>& matched) {
  const Candidate* best = nullptr;
  for (const Candidate& candidate : candidates) {
    if (!matched.empty() && matched.count(candidate.candidate_id) == 0) {
      continue;
    }
    if (best == nullptr || candidate.score > best->score ||
        (candidate.score == best->score && candidate.candidate_id < best->candidate_id)) {
      best = &candidate;
    }
  }
  if (best == nullptr) {
    // Matched ids that no longer exist in the candidate list: score over all.
    return score_fallback_id(candidates, {});
  }
  return best->candidate_id;
}

struct NamingOutcome {
  std::string name = "unknown";
  std::vector<TurnRecord> records;
  std::exception_ptr failure;
};

NamingOutcome run_naming_turns(const Candidate& candidate, const CandidateViewSet& views,
                               VlmProvider& vlm, const PromptLibrary& prompts) {
  NamingOutcome outcome;
  VlmTurn turn;
  for (const CandidateView& view : views.views) {
    turn.images.push_back(view.image);
  }
  turn.prompt = prompts.get(kNamePromptId);
  turn.prompt += "\nTASK: name";
  turn.prompt += "\n" + format_center_line(candidate.instance.obb.center);
  turn.expected_schema = kNameSchema;

  for (int attempt = 0; attempt < 2; ++attempt) {
    TurnRecord record;
    record.role = "naming";
    record.candidate_id = candidate.candidate_id;
    record.prompt = turn.prompt;
    record.schema_id = turn.expected_schema;
    record.image_count = int(turn.images.size());
    std::string reply;
    bool threw = false;
    try {
      reply = run_turn(vlm, turn);
    } catch (const Error& e) {
      threw = true;
      record.response = std::string("[provider error] ") + e.what();
      if (attempt == 1) {
        outcome.failure = std::current_exception();
      }
    }
    if (!threw) {
      record.response = reply;
    }
    outcome.records.push_back(std::move(record));
    if (!threw) {
      if (const auto name = parse_object_name(reply)) {
        outcome.name = *name;
        return outcome;
      }
    }
    if (outcome.failure) {
      return outcome;
    }
    turn.prompt += kStrictRetrySuffix;
  }
  return outcome;
}

}  // namespace

const PromptLibrary& PromptLibrary::builtin() {
  static const PromptLibrary library = [] {
    PromptLibrary lib;
    lib.templates[kNamePromptId] =
        "These images show one highlighted object from an indoor scene, boxed in each view. "
        "Reply with a short name for the object (a noun phrase such as \"red cube\") and "
        "nothing else.";
    lib.templates[kSpatialPromptId] =
        "These images are annotated overhead renders of a scene. Candidate objects are marked "
        "with numeric ids, and the world axes are drawn in red (+x), green (+y) and blue (+z). "
        "Use the direction mapping below to resolve view-relative language, then choose the "
        "candidate that satisfies the query. Reply with a fenced JSON block of the form "
        "{\"selected_id\": <int>, \"relations\": [<strings>], \"explanation\": <string>}.";
    lib.templates[kCorrectionPromptId] =
        "Your previous selection looks inconsistent with the candidates whose names match the "
        "query. Extra close-up views of your previous pick are appended after the renders. "
        "Reconsider and reply with the same JSON schema.";
    lib.templates[kCombinedPromptId] =
        "You see renders of a 3D scene followed by close-up views of each numbered candidate "
        "object, in the listed order. Pick the candidate the query describes. Reply with a "
        "fenced JSON block of the form {\"selected_id\": <int>, \"relations\": [<strings>], "
        "\"explanation\": <string>}.";
    return lib;
  }();
  return library;
}

PromptLibrary PromptLibrary::load(const std::string& directory) {
  PromptLibrary library = builtin();
  for (auto& [id, text] : library.templates) {
    const std::filesystem::path path = std::filesystem::path(directory) / (id + ".txt");
    std::ifstream in(path);
    if (!in) {
      continue;
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    std::string content = buffer.str();
    while (!content.empty() && (content.back() == '\n' || content.back() == '\r')) {
      content.pop_back();
    }
    if (!content.empty()) {
      text = std::move(content);
    }
  }
  return library;
}

const std::string& PromptLibrary::get(const std::string& id) const {
  const auto it = templates.find(id);
  if (it == templates.end()) {
    throw Error(ErrorCode::InvalidArgument, "unknown prompt id: " + id);
  }
  return it->second;
}

AxisLanguageMap AxisLanguageMap::build(const std::vector<GlobalRender>& renders) {
  const auto horizontal = [](Vec3 v) {
    v.z() = 0.0;
    const double norm = v.norm();
    return norm < 1e-9 ? Vec3::Zero().eval() : Vec3(v / norm);
  };
  AxisLanguageMap map;
  for (const GlobalRender& render : renders) {
    const Eigen::Matrix3d& rotation = render.camera.rotation;
    const Vec3 right = horizontal(rotation.col(0));
    Vec3 depth = horizontal(rotation.col(2));
    if (depth.isZero()) {
      // Straight-down view: image-down stands in for scene depth.
      depth = horizontal(rotation.col(1));
    }
    std::vector<Entry> entries;
    if (!right.isZero()) {
      entries.push_back({"right of", right});
      entries.push_back({"left of", -right});
    }
    if (!depth.isZero()) {
      entries.push_back({"behind", depth});
      entries.push_back({"in front of", -depth});
    }
    entries.push_back({"above", Vec3(0, 0, 1)});
    entries.push_back({"below", Vec3(0, 0, -1)});
    map.per_render.push_back(std::move(entries));
  }
  return map;
}

std::string AxisLanguageMap::to_text() const {
  std::string text;
  for (std::size_t k = 0; k < per_render.size(); ++k) {
    if (k > 0) {
      text += "\n";
    }
    text += "VIEW " + std::to_string(k + 1) + ": ";
    for (std::size_t e = 0; e < per_render[k].size(); ++e) {
      if (e > 0) {
        text += "; ";
      }
      text += format_direction(per_render[k][e]);
    }
  }
  return text;
}

std::string extract_structured_block(const std::string& reply) {
  const std::size_t open = reply.find("```");
  if (open == std::string::npos) {
    return trim_copy(reply);
  }
  std::size_t body = reply.find('\n', open + 3);
  if (body == std::string::npos) {
    return trim_copy(reply.substr(open + 3));
  }
  ++body;
  const std::size_t close = reply.find("```", body);
  if (close == std::string::npos) {
    return trim_copy(reply.substr(body));
  }
  return trim_copy(reply.substr(body, close - body));
}

std::optional<std::string> parse_object_name(const std::string& reply) {
  std::string body = extract_structured_block(reply);
  body = body.substr(0, body.find('\n'));
  std::size_t begin = 0;
  std::size_t end = body.size();
  const auto is_wrapper = [](char c) { return c == '"' || c == '\'' || c == '`'; };
  while (begin < end && is_wrapper(body[begin])) {
    ++begin;
  }
  while (end > begin && (is_wrapper(body[end - 1]) || body[end - 1] == '.')) {
    --end;
  }
  std::string name = trim_copy(body.substr(begin, end - begin));
  if (name.empty() || name.size() > 64) {
    return std::nullopt;
  }
  bool has_alpha = false;
  int words = 1;
  for (char& c : name) {
    const unsigned char uc = static_cast<unsigned char>(c);
    if (std::isalpha(uc)) {
      has_alpha = true;
      c = char(std::tolower(uc));
    } else if (c == ' ') {
      ++words;
    } else if (!std::isdigit(uc) && c != '-') {
      return std::nullopt;
    }
  }
  if (!has_alpha || words > 6) {
    return std::nullopt;
  }
  return name;
}

std::optional<ParsedSelection> parse_selection_reply(const std::string& reply) {
  const nlohmann::json parsed =
      nlohmann::json::parse(extract_structured_block(reply), nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object()) {
    return std::nullopt;
  }
  if (!parsed.contains("selected_id") || !parsed["selected_id"].is_number_integer()) {
    return std::nullopt;
  }
  if (!parsed.contains("relations") || !parsed["relations"].is_array()) {
    return std::nullopt;
  }
  if (!parsed.contains("explanation") || !parsed["explanation"].is_string()) {
    return std::nullopt;
  }
  const auto wide = parsed["selected_id"].get<long long>();
  if (wide < std::numeric_limits<int>::min() || wide > std::numeric_limits<int>::max()) {
    return std::nullopt;
  }
  ParsedSelection selection;
  selection.selected_id = int(wide);
  for (const auto& relation : parsed["relations"]) {
    selection.relations.push_back(relation.is_string() ? relation.get<std::string>()
                                                       : relation.dump());
  }
  selection.explanation = parsed["explanation"].get<std::string>();
  return selection;
}

std::map<int, std::string> name_candidates(const std::vector<Candidate>& candidates,
                                           const std::vector<CandidateViewSet>& view_sets,
                                           VlmProvider& vlm, int max_parallel,
                                           std::vector<TurnRecord>* transcript,
                                           const PromptLibrary& prompts) {
  if (candidates.empty() || view_sets.empty()) {
    throw Error(ErrorCode::InvalidArgument, "naming needs candidates and their view sets");
  }
  if (max_parallel < 1) {
    throw Error(ErrorCode::InvalidArgument, "naming parallelism must be at least one");
  }
  std::map<int, const CandidateViewSet*> views_by_id;
  for (const CandidateViewSet& set : view_sets) {
    views_by_id[set.candidate_id] = &set;
  }
  for (const Candidate& candidate : candidates) {
    if (views_by_id.count(candidate.candidate_id) == 0) {
      throw Error(ErrorCode::InvalidArgument, "candidate has no view set",
                  candidate.candidate_id);
    }
  }

  std::vector<NamingOutcome> outcomes(candidates.size());
  const auto process = [&](std::size_t i) {
    outcomes[i] = run_naming_turns(candidates[i], *views_by_id.at(candidates[i].candidate_id),
                                   vlm, prompts);
  };
  const int workers = std::min<int>(max_parallel, int(candidates.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      process(i);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(std::size_t(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        while (true) {
          const std::size_t i = next.fetch_add(1);
          if (i >= candidates.size()) {
            return;
          }
          process(i);
        }
      });
    }
    for (std::thread& t : pool) {
      t.join();
    }
  }

  std::map<int, std::string> names;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (transcript != nullptr) {
      for (TurnRecord& record : outcomes[i].records) {
        transcript->push_back(std::move(record));
      }
    }
    names[candidates[i].candidate_id] = outcomes[i].name;
  }
  for (const NamingOutcome& outcome : outcomes) {
    if (outcome.failure) {
      std::rethrow_exception(outcome.failure);
    }
  }
  return names;
}

std::set<int> match_target(const GroundingQuery& query, const std::map<int, std::string>& names,
                           EmbeddingProvider& embedder, double match_threshold) {
  if (names.empty()) {
    throw Error(ErrorCode::InvalidArgument, "match_target needs at least one name");
  }
  Eigen::VectorXf query_vec;
  try {
    query_vec = embedder.embed(EmbedRequest::from_text(query.text)).vector;
  } catch (const Error&) {
    return {};
  }
  const double query_norm = query_vec.norm();
  if (query_norm < 1e-12) {
    return {};
  }
  std::set<int> matched;
  for (const auto& [id, name] : names) {
    Eigen::VectorXf name_vec;
    try {
      name_vec = embedder.embed(EmbedRequest::from_text(name)).vector;
    } catch (const Error&) {
      continue;
    }
    if (name_vec.size() != query_vec.size()) {
      continue;
    }
    const double name_norm = name_vec.norm();
    if (name_norm < 1e-12) {
      continue;
    }
    const double cosine = double(query_vec.dot(name_vec)) / (query_norm * name_norm);
    if (cosine >= match_threshold) {
      matched.insert(id);
    }
  }
  return matched;
}

SpatialSelection spatial_select(const GroundingQuery& query,
                                const std::vector<GlobalRender>& renders,
                                const AxisLanguageMap& axis_map,
                                const std::vector<Candidate>& candidates,
                                const std::map<int, std::string>& names,
                                const std::set<int>& matched, VlmProvider& vlm,
                                int max_corrections, std::vector<TurnRecord>* transcript,
                                const PromptLibrary& prompts, bool include_spatial_prompt) {
  if (renders.empty()) {
    throw Error(ErrorCode::InvalidArgument, "spatial selection needs at least one global render");
  }
  if (candidates.empty()) {
    throw Error(ErrorCode::InvalidArgument, "spatial selection needs candidates");
  }
  if (max_corrections < 0) {
    throw Error(ErrorCode::InvalidArgument, "correction budget must be non-negative");
  }

  VlmTurn turn;
  if (include_spatial_prompt) {
    for (const GlobalRender& render : renders) {
      turn.images.push_back(render.image);
    }
  }
  turn.prompt = build_selection_prompt(prompts, query, candidates, names, matched, axis_map,
                                       include_spatial_prompt);
  turn.expected_schema = kSelectionSchema;

  SpatialSelection result;
  while (true) {
    TurnRecord record;
    record.role = "spatial";
    record.prompt = turn.prompt;
    record.schema_id = turn.expected_schema;
    record.image_count = int(turn.images.size());
    std::string reply;
    bool threw = false;
    try {
      reply = run_turn(vlm, turn);
      record.response = reply;
    } catch (const Error& e) {
      threw = true;
      record.response = std::string("[provider error] ") + e.what();
    }
    if (transcript != nullptr) {
      transcript->push_back(std::move(record));
    }
    if (!threw) {
      if (const auto parsed = parse_selection_reply(reply)) {
        result.selected_id = parsed->selected_id;
        result.relations = parsed->relations;
        result.explanation = parsed->explanation;
        return result;
      }
    }
    if (result.rounds_used >= max_corrections) {
      break;
    }
    ++result.rounds_used;
    turn.prompt += kStrictRetrySuffix;
  }

  result.fallback = true;
  result.selected_id = score_fallback_id(candidates, matched);
  result.explanation = "selection schema violated; fell back to the highest-scored candidate";
  return result;
}

GroundingResult ground(const GroundingQuery& query, const std::vector<Candidate>& candidates,
                       const std::vector<GlobalRender>& renders,
                       const std::vector<CandidateViewSet>& view_sets, VlmProvider& vlm,
                       EmbeddingProvider& embedder, const GroundOptions& options) {
  if (candidates.empty()) {
    throw Error(ErrorCode::InvalidArgument, "grounding needs at least one candidate");
  }
  if (renders.empty()) {
    throw Error(ErrorCode::InvalidArgument, "grounding needs at least one global render");
  }
  if (options.max_retries < 0) {
    throw Error(ErrorCode::InvalidArgument, "max_retries must be non-negative");
  }
  {
    std::set<int> covered;
    for (const CandidateViewSet& set : view_sets) {
      covered.insert(set.candidate_id);
    }
    for (const Candidate& candidate : candidates) {
      if (covered.count(candidate.candidate_id) == 0) {
        throw Error(ErrorCode::InvalidArgument, "candidate has no view set",
                    candidate.candidate_id);
      }
    }
  }

  GroundingResult result;
  ReasoningTrace& trace = result.trace;
  const PromptToggles& toggles = options.toggles;

  std::map<int, const Candidate*> by_id;
  std::map<int, const CandidateViewSet*> views_by_id;
  for (const Candidate& candidate : candidates) {
    by_id[candidate.candidate_id] = &candidate;
  }
  for (const CandidateViewSet& set : view_sets) {
    views_by_id[set.candidate_id] = &set;
  }
  const auto valid = [&](int id) { return by_id.count(id) != 0; };
  const AxisLanguageMap axis_map = AxisLanguageMap::build(renders);

  if (!toggles.visual_cot) {
    // Single combined turn: naming, matching and staged selection collapse
    // into one exchange; the retry budget covers schema re-prompts only.
    VlmTurn turn;
    if (toggles.spatial) {
      for (const GlobalRender& render : renders) {
        turn.images.push_back(render.image);
      }
    }
    for (const Candidate& candidate : candidates) {
      for (const CandidateView& view : views_by_id.at(candidate.candidate_id)->views) {
        turn.images.push_back(view.image);
      }
    }
    turn.prompt = PromptLibrary::builtin().get(kCombinedPromptId);
    turn.prompt += "\nTASK: ground";
    turn.prompt += "\nQUERY: " + query.text;
    for (const Candidate& candidate : candidates) {
      turn.prompt +=
          "\n" + format_candidate_line(candidate.candidate_id, candidate.instance.obb.center);
    }
    if (toggles.spatial) {
      turn.prompt += "\nAXES:\n" + axis_map.to_text();
    }
    turn.expected_schema = kSelectionSchema;

    int rounds = 0;
    int selected = 0;
    while (true) {
      TurnRecord record;
      record.role = "combined";
      record.prompt = turn.prompt;
      record.schema_id = turn.expected_schema;
      record.image_count = int(turn.images.size());
      bool parsed_ok = false;
      try {
        const std::string reply = run_turn(vlm, turn);
        record.response = reply;
        if (const auto parsed = parse_selection_reply(reply)) {
          selected = parsed->selected_id;
          trace.explanation = parsed->explanation;
          trace.relations = parsed->relations;
          parsed_ok = true;
        }
      } catch (const Error& e) {
        record.response = std::string("[provider error] ") + e.what();
      }
      trace.transcript.push_back(std::move(record));
      if (parsed_ok || rounds >= options.max_retries) {
        break;
      }
      ++rounds;
      turn.prompt += kStrictRetrySuffix;
    }
    if (!valid(selected)) {
      selected = score_fallback_id(candidates, {});
      trace.explanation = "selection schema violated; fell back to the highest-scored candidate";
    }
    trace.selected = selected;
    trace.correction_rounds = rounds;
    result.box = by_id.at(selected)->instance.obb;
    return result;
  }

  if (toggles.semantic) {
    try {
      trace.names = name_candidates(candidates, view_sets, vlm, options.naming_parallel,
                                    &trace.transcript);
    } catch (const Error&) {
      // Provider outage: reasoning continues with unknown names; the spatial
      // stage has its own fallbacks.
      trace.names.clear();
      for (const Candidate& candidate : candidates) {
        trace.names.emplace(candidate.candidate_id, "unknown");
      }
    }
    trace.matched_target = match_target(query, trace.names, embedder, options.match_threshold);
  }

  SpatialSelection selection =
      spatial_select(query, renders, axis_map, candidates, trace.names, trace.matched_target,
                     vlm, options.max_retries, &trace.transcript, PromptLibrary::builtin(),
                     toggles.spatial);
  int rounds = selection.rounds_used;
  int selected = selection.selected_id;
  trace.explanation = selection.explanation;
  trace.relations = selection.relations;

  const auto inconsistent = [&](int id) {
    return !trace.matched_target.empty() && trace.matched_target.count(id) == 0;
  };

  while ((!valid(selected) || inconsistent(selected)) && rounds < options.max_retries) {
    VlmTurn turn;
    if (toggles.spatial) {
      for (const GlobalRender& render : renders) {
        turn.images.push_back(render.image);
      }
    }
    if (valid(selected)) {
      const auto it = views_by_id.find(selected);
      if (it != views_by_id.end()) {
        for (const CandidateView& view : it->second->views) {
          turn.images.push_back(view.image);
        }
      }
    }
    turn.prompt = PromptLibrary::builtin().get(kCorrectionPromptId);
    turn.prompt += "\n" +
                   build_selection_prompt(PromptLibrary::builtin(), query, candidates,
                                          trace.names, trace.matched_target, axis_map,
                                          toggles.spatial);
    turn.prompt += "\nPREVIOUS: " + std::to_string(selected);
    turn.expected_schema = kSelectionSchema;

    TurnRecord record;
    record.role = "correction";
    record.prompt = turn.prompt;
    record.schema_id = turn.expected_schema;
    record.image_count = int(turn.images.size());
    ++rounds;
    try {
      const std::string reply = run_turn(vlm, turn);
      record.response = reply;
      if (const auto parsed = parse_selection_reply(reply)) {
        selected = parsed->selected_id;
        trace.explanation = parsed->explanation;
        trace.relations = parsed->relations;
      }
    } catch (const Error& e) {
      record.response = std::string("[provider error] ") + e.what();
    }
    trace.transcript.push_back(std::move(record));
  }

  if (!valid(selected)) {
    selected = score_fallback_id(candidates, {});
  }
  trace.selected = selected;
  trace.correction_rounds = rounds;
  result.box = by_id.at(selected)->instance.obb;
  return result;
}

void write_trace(const ReasoningTrace& trace, const std::string& directory) {
  std::filesystem::create_directories(directory);
  nlohmann::json body;
  body["selected"] = trace.selected;
  body["explanation"] = trace.explanation;
  body["correction_rounds"] = trace.correction_rounds;
  body["names"] = nlohmann::json::object();
  for (const auto& [id, name] : trace.names) {
    body["names"][std::to_string(id)] = name;
  }
  body["matched_target"] = trace.matched_target;
  body["relations"] = trace.relations;
  body["transcript"] = nlohmann::json::array();
  for (const TurnRecord& record : trace.transcript) {
    nlohmann::json entry;
    entry["role"] = record.role;
    entry["candidate_id"] = record.candidate_id;
    entry["prompt"] = record.prompt;
    entry["response"] = record.response;
    entry["schema_id"] = record.schema_id;
    entry["image_count"] = record.image_count;
    body["transcript"].push_back(std::move(entry));
  }
  const std::filesystem::path path = std::filesystem::path(directory) / "trace.json";
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::MissingFile, "cannot open trace file for writing: " + path.string());
  }
  out << body.dump(2) << "\n";
  if (!out) {
    throw Error(ErrorCode::CorruptFile, "failed writing trace file: " + path.string());
  }
}

}  // namespace uniground
