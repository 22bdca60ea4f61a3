#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "steer/autouser.hpp"
#include "steer/feedback.hpp"
#include "steer/record.hpp"
#include "steer/selectors.hpp"
#include "steer/surrogate_env.hpp"

namespace steer {

using json = nlohmann::ordered_json;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// JSON has no infinity; untried operators carry "inf" in the UCB index list.
inline json number_or_inf(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}

inline double number_or_inf(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw std::invalid_argument("not a number: " + s);
  }
  return j.get<double>();
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Environment

inline void to_json(json& j, const NamedPredicateSpec& p) {
  j = json{{"id", p.id}, {"abstraction_level", p.abstraction_level}};
}
inline void from_json(const json& j, NamedPredicateSpec& p) {
  j.at("id").get_to(p.id);
  j.at("abstraction_level").get_to(p.abstraction_level);
}

inline void to_json(json& j, const EnvConfig& c) {
  j = json{{"input_dims", c.input_dims},
           {"question_dims", c.question_dims},
           {"predicate_catalog", c.predicate_catalog},
           {"master_seed", c.master_seed},
           {"trisect_probability", c.trisect_probability},
           {"box_sample_cap", c.box_sample_cap}};
}
inline void from_json(const json& j, EnvConfig& c) {
  detail::get_if(j, "input_dims", c.input_dims);
  detail::get_if(j, "question_dims", c.question_dims);
  detail::get_if(j, "predicate_catalog", c.predicate_catalog);
  detail::get_if(j, "master_seed", c.master_seed);
  detail::get_if(j, "trisect_probability", c.trisect_probability);
  detail::get_if(j, "box_sample_cap", c.box_sample_cap);
}

inline void to_json(json& j, const StateParams& p) {
  j = json{{"refinement_depth", p.refinement_depth},
           {"sampling_radius", p.sampling_radius},
           {"reuse_reach", p.reuse_reach},
           {"split_question_vars_only", p.split_question_vars_only},
           {"merge_iters", p.merge_iters},
           {"merge_precision", p.merge_precision()},
           {"merge_precision_level", p.merge_precision_level},
           {"produce_greater_abstraction", p.produce_greater_abstraction},
           {"disallowed_predicates", p.disallowed_predicates},
           {"noise_draw", p.noise_draw}};
}
inline void from_json(const json& j, StateParams& p) {
  j.at("refinement_depth").get_to(p.refinement_depth);
  j.at("sampling_radius").get_to(p.sampling_radius);
  j.at("reuse_reach").get_to(p.reuse_reach);
  j.at("split_question_vars_only").get_to(p.split_question_vars_only);
  j.at("merge_iters").get_to(p.merge_iters);
  j.at("merge_precision_level").get_to(p.merge_precision_level);
  j.at("produce_greater_abstraction").get_to(p.produce_greater_abstraction);
  j.at("disallowed_predicates").get_to(p.disallowed_predicates);
  j.at("noise_draw").get_to(p.noise_draw);
}

/// Box samples are written only when present (golden files keep them,
/// interaction logs do not).
inline void to_json(json& j, const DescriptionStats& s) {
  j = json{{"n_boxes", s.n_boxes},
           {"unique_named", s.unique_named},
           {"named_occurrences", s.named_occurrences},
           {"box_ranges", s.box_ranges},
           {"disjuncts", s.disjuncts},
           {"conjuncts", s.conjuncts},
           {"vol_named_total", s.vol_named_total},
           {"vol_named_unique", s.vol_named_unique},
           {"vol_box_total", s.vol_box_total},
           {"vol_box_unique", s.vol_box_unique},
           {"vol_conjunct_total", s.vol_conjunct_total},
           {"vol_conjunct_unique", s.vol_conjunct_unique},
           {"box_multiplicity", s.box_multiplicity},
           {"named_multiset", s.named_multiset},
           {"fingerprint", s.fingerprint}};
  if (!s.box_volumes.empty()) {
    j["box_volumes"] = s.box_volumes;
    j["box_side_sums"] = s.box_side_sums;
  }
}
inline void from_json(const json& j, DescriptionStats& s) {
  j.at("n_boxes").get_to(s.n_boxes);
  j.at("unique_named").get_to(s.unique_named);
  j.at("named_occurrences").get_to(s.named_occurrences);
  j.at("box_ranges").get_to(s.box_ranges);
  j.at("disjuncts").get_to(s.disjuncts);
  j.at("conjuncts").get_to(s.conjuncts);
  j.at("vol_named_total").get_to(s.vol_named_total);
  j.at("vol_named_unique").get_to(s.vol_named_unique);
  j.at("vol_box_total").get_to(s.vol_box_total);
  j.at("vol_box_unique").get_to(s.vol_box_unique);
  j.at("vol_conjunct_total").get_to(s.vol_conjunct_total);
  j.at("vol_conjunct_unique").get_to(s.vol_conjunct_unique);
  j.at("box_multiplicity").get_to(s.box_multiplicity);
  j.at("named_multiset").get_to(s.named_multiset);
  j.at("fingerprint").get_to(s.fingerprint);
  detail::get_if(j, "box_volumes", s.box_volumes);
  detail::get_if(j, "box_side_sums", s.box_side_sums);
}

inline void to_json(json& j, const SurrogateState& s) {
  j = json{{"question_id", s.question_id},
           {"t", s.t},
           {"params", s.params},
           {"stats", s.stats},
           {"features", s.features}};
}
inline void from_json(const json& j, SurrogateState& s) {
  j.at("question_id").get_to(s.question_id);
  j.at("t").get_to(s.t);
  j.at("params").get_to(s.params);
  j.at("stats").get_to(s.stats);
  j.at("features").get_to(s.features);
}

// ---------------------------------------------------------------------------
// Feedback, traces, verdicts, records

inline const char* to_string(UserOpAction a) {
  switch (a) {
    case UserOpAction::apply_operator: return "apply_operator";
    case UserOpAction::history_travel: return "history_travel";
    case UserOpAction::list_disallowed: return "list_disallowed";
  }
  return "?";
}

inline UserOpAction user_action_from_string(const std::string& s) {
  if (s == "apply_operator") return UserOpAction::apply_operator;
  if (s == "history_travel") return UserOpAction::history_travel;
  if (s == "list_disallowed") return UserOpAction::list_disallowed;
  throw std::invalid_argument("unknown user action: " + s);
}

inline void to_json(json& j, const Feedback& f) {
  j = json{{"kind", std::string(to_string(f.kind))}};
  if (f.kind != FeedbackKind::user_op) return;
  j["action"] = to_string(f.action);
  if (f.operator_index) j["operator"] = *f.operator_index;
  if (f.travel_to) j["travel_to"] = *f.travel_to;
}

/// Strict parser shared by logs and the HTTP API; throws invalid_argument
/// on anything malformed.
inline Feedback feedback_from_json(const json& j) {
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
    throw std::invalid_argument("feedback needs a string 'kind'");
  Feedback f;
  f.kind = feedback_from_string(j["kind"].get<std::string>());
  if (f.kind != FeedbackKind::user_op) return f;
  if (!j.contains("action") || !j["action"].is_string())
    throw std::invalid_argument("'u' feedback needs an 'action'");
  f.action = user_action_from_string(j["action"].get<std::string>());
  switch (f.action) {
    case UserOpAction::apply_operator:
      if (!j.contains("operator") || !j["operator"].is_number_integer())
        throw std::invalid_argument("apply_operator needs an integer 'operator'");
      f.operator_index = j["operator"].get<int>();
      break;
    case UserOpAction::history_travel:
      if (!j.contains("travel_to") || !j["travel_to"].is_number_integer())
        throw std::invalid_argument("history_travel needs an integer 'travel_to'");
      f.travel_to = j["travel_to"].get<std::int64_t>();
      break;
    case UserOpAction::list_disallowed: break;
  }
  return f;
}

inline void from_json(const json& j, Feedback& f) { f = feedback_from_json(j); }

inline void to_json(json& j, const DecisionTrace& d) {
  json ucb = json::array();
  for (double x : d.ucb_indices) ucb.push_back(detail::number_or_inf(x));
  j = json{{"d_samp", d.d_samp},
           {"ucb_indices", ucb},
           {"chosen", d.chosen},
           {"fell_back", d.fell_back},
           {"entropy", d.entropy}};
}
inline void from_json(const json& j, DecisionTrace& d) {
  j.at("d_samp").get_to(d.d_samp);
  d.ucb_indices.clear();
  for (const auto& x : j.at("ucb_indices")) d.ucb_indices.push_back(detail::number_or_inf(x));
  j.at("chosen").get_to(d.chosen);
  j.at("fell_back").get_to(d.fell_back);
  j.at("entropy").get_to(d.entropy);
}

inline void to_json(json& j, const AutouserVerdict& v) {
  j = json{{"psi", v.psi},
           {"s1", v.s1},
           {"s2", v.s2},
           {"alpha_draw", v.alpha_draw ? json(*v.alpha_draw) : json()},
           {"threshold", v.threshold ? json(*v.threshold) : json()},
           {"global_success", v.global_success},
           {"response", std::string(to_string(v.response))},
           {"opinion_strength", v.opinion_strength ? json(*v.opinion_strength) : json()},
           {"termination", v.termination}};
}
inline void from_json(const json& j, AutouserVerdict& v) {
  j.at("psi").get_to(v.psi);
  j.at("s1").get_to(v.s1);
  j.at("s2").get_to(v.s2);
  v.alpha_draw.reset();
  v.threshold.reset();
  v.opinion_strength.reset();
  if (!j.at("alpha_draw").is_null()) v.alpha_draw = j["alpha_draw"].get<double>();
  if (!j.at("threshold").is_null()) v.threshold = j["threshold"].get<double>();
  if (!j.at("opinion_strength").is_null()) v.opinion_strength = j["opinion_strength"].get<double>();
  j.at("global_success").get_to(v.global_success);
  v.response = feedback_from_string(j.at("response").get<std::string>());
  j.at("termination").get_to(v.termination);
}

inline void to_json(json& j, const InteractionRecord& r) {
  j = json{{"session_id", r.session_id},
           {"question_id", r.question_id},
           {"t", r.t},
           {"seq", r.seq},
           {"produced_by", r.produced_by},
           {"generating_request",
            r.generating_request ? json(std::string(to_string(*r.generating_request))) : json()},
           {"state", r.state},
           {"request", r.request ? json(*r.request) : json()},
           {"chosen", r.chosen ? json(*r.chosen) : json()},
           {"fell_back", r.fell_back},
           {"reward", r.reward ? json(*r.reward) : json()},
           {"trace", r.trace ? json(*r.trace) : json()},
           {"verdict", r.verdict ? json(*r.verdict) : json()},
           {"weights_l1", r.weights_l1},
           {"weights_min", r.weights_min},
           {"weights_max", r.weights_max},
           {"weights_hash", r.weights_hash}};
  if (r.weights) j["weights"] = *r.weights;
}
inline void from_json(const json& j, InteractionRecord& r) {
  j.at("session_id").get_to(r.session_id);
  j.at("question_id").get_to(r.question_id);
  j.at("t").get_to(r.t);
  j.at("seq").get_to(r.seq);
  j.at("produced_by").get_to(r.produced_by);
  r.generating_request.reset();
  if (!j.at("generating_request").is_null())
    r.generating_request = feedback_from_string(j["generating_request"].get<std::string>());
  j.at("state").get_to(r.state);
  r.request.reset();
  r.chosen.reset();
  r.reward.reset();
  r.trace.reset();
  r.verdict.reset();
  r.weights.reset();
  if (!j.at("request").is_null()) r.request = feedback_from_json(j["request"]);
  if (!j.at("chosen").is_null()) r.chosen = j["chosen"].get<int>();
  j.at("fell_back").get_to(r.fell_back);
  if (!j.at("reward").is_null()) r.reward = j["reward"].get<int>();
  if (!j.at("trace").is_null()) r.trace = j["trace"].get<DecisionTrace>();
  if (!j.at("verdict").is_null()) r.verdict = j["verdict"].get<AutouserVerdict>();
  j.at("weights_l1").get_to(r.weights_l1);
  j.at("weights_min").get_to(r.weights_min);
  j.at("weights_max").get_to(r.weights_max);
  j.at("weights_hash").get_to(r.weights_hash);
  if (j.contains("weights")) r.weights = j["weights"].get<std::vector<double>>();
}

// ---------------------------------------------------------------------------
// Configs

inline void to_json(json& j, const AutouserConfig& c) {
  j = json{{"k_au", c.k_au},
           {"gamma1", c.gamma1},
           {"gamma2", c.gamma2},
           {"max_adjustments", c.max_adjustments},
           {"k_stall", c.k_stall},
           {"ecdf_band", {c.ecdf_low, c.ecdf_high}},
           {"sign_convention_flip", c.sign_convention_flip}};
}
inline void from_json(const json& j, AutouserConfig& c) {
  detail::get_if(j, "k_au", c.k_au);
  detail::get_if(j, "gamma1", c.gamma1);
  detail::get_if(j, "gamma2", c.gamma2);
  detail::get_if(j, "max_adjustments", c.max_adjustments);
  detail::get_if(j, "k_stall", c.k_stall);
  if (j.contains("ecdf_band")) {
    const auto& b = j["ecdf_band"];
    if (!b.is_array() || b.size() != 2) throw std::invalid_argument("ecdf_band must be [low, high]");
    c.ecdf_low = b[0].get<double>();
    c.ecdf_high = b[1].get<double>();
  }
  detail::get_if(j, "sign_convention_flip", c.sign_convention_flip);
}

inline void to_json(json& j, const SelectorConfig& c) {
  j = json{{"alphas", c.alphas},
           {"product_alpha", c.product_alpha},
           {"n_projections", c.n_projections},
           {"enable_knn", c.enable_knn},
           {"knn_z", c.knn_z},
           {"featurization_refresh", c.featurization_refresh}};
}
inline void from_json(const json& j, SelectorConfig& c) {
  detail::get_if(j, "alphas", c.alphas);
  detail::get_if(j, "product_alpha", c.product_alpha);
  detail::get_if(j, "n_projections", c.n_projections);
  detail::get_if(j, "enable_knn", c.enable_knn);
  detail::get_if(j, "knn_z", c.knn_z);
  detail::get_if(j, "featurization_refresh", c.featurization_refresh);
}

inline void to_json(json& j, const SelectorSpec& s) {
  j = json{{"id", s.id}, {"kind", to_string(s.kind)}, {"name", s.name}};
  if (s.op >= 0) j["op"] = s.op;
  if (!s.op_set.empty()) j["op_set"] = s.op_set;
  if (s.field >= 0) j["field"] = s.field;
  if (s.projection >= 0) {
    j["projection"] = s.projection;
    j["featurization"] = to_string(s.featurization);
  }
  if (s.alpha > 0.0) j["alpha"] = s.alpha;
  if (s.knn_z > 0) j["z"] = s.knn_z;
  if (!s.depends_on.empty()) j["depends_on"] = s.depends_on;
}

// ---------------------------------------------------------------------------
// Files

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path);
}

/// Reads an EnvConfig from a JSON document; missing keys keep their defaults.
inline EnvConfig load_env_config(const std::string& path) {
  EnvConfig cfg;
  try {
    read_json_file(path).get_to(cfg);
    cfg.validate();
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return cfg;
}

}  // namespace steer
