#pragma once

#include <optional>
#include <set>

#include "uniground/viewfactory.hpp"

namespace uniground {

/// Versioned prompt templates addressed by id. `load` overlays files named
/// `<id>.txt` from a directory onto the built-in texts, so deployments can
/// edit prompts without rebuilding.
struct PromptLibrary {
  std::map<std::string, std::string> templates;

  static const PromptLibrary& builtin();
  static PromptLibrary load(const std::string& directory);
  const std::string& get(const std::string& id) const;  // unknown id throws
};

/// View-relative direction phrases expressed as world-space unit vectors,
/// one block per global render, consistent with that render's camera frame.
struct AxisLanguageMap {
  struct Entry {
    std::string phrase;
    Vec3 direction = Vec3::Zero();
  };

  std::vector<std::vector<Entry>> per_render;

  static AxisLanguageMap build(const std::vector<GlobalRender>& renders);
  std::string to_text() const;
};

struct VlmTurn {
  std::vector<cv::Mat> images;
  std::string prompt;
  std::string expected_schema;
};

/// One prompt/response exchange, kept verbatim for the trace artifact.
struct TurnRecord {
  std::string role;  // "naming" | "spatial" | "correction" | "combined"
  int candidate_id = 0;
  std::string prompt;
  std::string response;
  std::string schema_id;
  int image_count = 0;
};

struct ReasoningTrace {
  std::map<int, std::string> names;  // candidate_id -> inferred name
  std::set<int> matched_target;
  std::vector<std::string> relations;
  int selected = 0;
  std::string explanation;
  int correction_rounds = 0;
  std::vector<TurnRecord> transcript;
};

struct SpatialSelection {
  int selected_id = 0;
  std::string explanation;
  std::vector<std::string> relations;
  int rounds_used = 0;   // schema re-prompts consumed from the correction budget
  bool fallback = false; // schema failed past the budget; id chosen from scores
};

/// Ablation switches over the reasoning recipe. `spatial` feeds the annotated
/// global renders (and the axis text) to selection turns; `semantic` runs the
/// naming turns and name matching; `visual_cot` keeps the staged turns, and
/// turning it off collapses everything into one combined selection turn.
struct PromptToggles {
  bool spatial = true;
  bool semantic = true;
  bool visual_cot = true;
};

struct GroundOptions {
  int max_retries = 1;
  double match_threshold = 0.6;
  int naming_parallel = 4;
  PromptToggles toggles;
};

struct GroundingResult {
  ReasoningTrace trace;
  OrientedBox box;
};

/// First fenced block of the reply (language tag skipped), else the whole
/// reply; trimmed.
std::string extract_structured_block(const std::string& reply);

/// A reply parses as a name when its first line, after stripping fences,
/// quotes and a trailing period, is 1..6 words of letters, digits or
/// hyphens (at least one letter), at most 64 chars. Returned lowercased.
std::optional<std::string> parse_object_name(const std::string& reply);

struct ParsedSelection {
  int selected_id = 0;
  std::vector<std::string> relations;
  std::string explanation;
};

/// Strict schema: JSON object with integer `selected_id`, array `relations`
/// and string `explanation`. Non-string relation entries are kept as their
/// JSON dump.
std::optional<ParsedSelection> parse_selection_reply(const std::string& reply);

/// One VLM turn per candidate over its view set; an unparsable reply earns
/// one retry turn before the name falls back to "unknown". A provider error
/// is retried once too; a second error aborts the whole call. Turns for
/// distinct candidates run on up to `max_parallel` threads; results and
/// transcript order stay deterministic.
std::map<int, std::string> name_candidates(const std::vector<Candidate>& candidates,
                                           const std::vector<CandidateViewSet>& view_sets,
                                           VlmProvider& vlm, int max_parallel = 4,
                                           std::vector<TurnRecord>* transcript = nullptr,
                                           const PromptLibrary& prompts = PromptLibrary::builtin());

/// Candidates whose name embedding reaches `match_threshold` cosine with the
/// full query embedding. Provider failures yield the empty set (for the
/// query) or skip the name.
std::set<int> match_target(const GroundingQuery& query, const std::map<int, std::string>& names,
                           EmbeddingProvider& embedder, double match_threshold = 0.6);

/// Single selection turn over all global renders; a schema-violating reply is
/// re-prompted while `max_corrections` rounds remain, then the fallback picks
/// the highest-scored matched candidate (or overall top score when nothing
/// matched). With `include_spatial_prompt` false the turn carries no render
/// images and no axis text; candidate centers and names stay.
SpatialSelection spatial_select(const GroundingQuery& query,
                                const std::vector<GlobalRender>& renders,
                                const AxisLanguageMap& axis_map,
                                const std::vector<Candidate>& candidates,
                                const std::map<int, std::string>& names,
                                const std::set<int>& matched, VlmProvider& vlm,
                                int max_corrections = 1,
                                std::vector<TurnRecord>* transcript = nullptr,
                                const PromptLibrary& prompts = PromptLibrary::builtin(),
                                bool include_spatial_prompt = true);

/// Naming -> matching -> spatial selection -> bounded correction loop ->
/// projection onto the candidate set. Corrections fire while the selected id
/// is invalid or lies outside a non-empty matched set, sharing one budget of
/// `max_retries` rounds with spatial re-prompts; each correction turn adds
/// the selected candidate's views to the global renders. Provider failures
/// never escape: they degrade to "unknown" names and score fallbacks.
/// options.toggles prunes the recipe (see PromptToggles).
GroundingResult ground(const GroundingQuery& query, const std::vector<Candidate>& candidates,
                       const std::vector<GlobalRender>& renders,
                       const std::vector<CandidateViewSet>& view_sets, VlmProvider& vlm,
                       EmbeddingProvider& embedder, const GroundOptions& options = {});

/// Write `trace.json` into the directory (created if missing).
void write_trace(const ReasoningTrace& trace, const std::string& directory);

}  // namespace uniground
