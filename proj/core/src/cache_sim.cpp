#include "blockattn/cache_sim.hpp"

#include <set>

#include <json.hpp>

namespace blockattn {

void CacheScenario::validate() const {
  if (system_prompt_len <= 0) throw ContractError("system prompt length must be positive");
  for (const auto& [id, len] : docs)
    if (len <= 0) throw ContractError("document length must be positive: " + id);
  for (const auto& r : requests) {
    if (r.query_len <= 0) throw ContractError("query length must be positive");
    for (const auto& id : r.doc_ids)
      if (!docs.count(id)) throw ContractError("request names unknown document: " + id);
  }
}

CacheScenario CacheScenario::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("scenario JSON parse error: ") + e.what());
  }
  CacheScenario s;
  try {
    s.system_prompt_len = j.at("system_prompt_len").get<std::int64_t>();
    for (const auto& [id, len] : j.at("docs").items())
      s.docs[id] = len.get<std::int64_t>();
    for (const auto& rj : j.at("requests")) {
      Request r;
      for (const auto& id : rj.at("docs")) r.doc_ids.push_back(id.get<std::string>());
      r.query_len = rj.at("query_len").get<std::int64_t>();
      s.requests.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("scenario JSON schema error: ") + e.what());
  }
  s.validate();
  return s;
}

std::string CacheScenario::to_json_text() const {
  nlohmann::json j;
  j["system_prompt_len"] = system_prompt_len;
  j["docs"] = nlohmann::json::object();
  for (const auto& [id, len] : docs) j["docs"][id] = len;
  j["requests"] = nlohmann::json::array();
  for (const auto& r : requests) {
    nlohmann::json rj;
    rj["docs"] = r.doc_ids;
    rj["query_len"] = r.query_len;
    j["requests"].push_back(rj);
  }
  return j.dump(2);
}

namespace {

// Symbolic prompt segments: the system prompt, each document by id, and a
// per-request unique query segment.
struct Segment {
  std::string id;
  std::int64_t len;
};

std::vector<Segment> request_segments(const CacheScenario& s, std::size_t request_index) {
  std::vector<Segment> segs;
  segs.push_back({"sys", s.system_prompt_len});
  const auto& r = s.requests[request_index];
  for (const auto& id : r.doc_ids) segs.push_back({"doc:" + id, s.docs.at(id)});
  segs.push_back({"query#" + std::to_string(request_index), r.query_len});
  return segs;
}

}  // namespace

std::vector<RequestStats> simulate_prefix_cache(const CacheScenario& scenario) {
  scenario.validate();
  std::vector<RequestStats> out;
  std::vector<Segment> cached;  // the most recently cached monolithic prompt
  for (std::size_t k = 0; k < scenario.requests.size(); ++k) {
    const std::vector<Segment> segs = request_segments(scenario, k);
    RequestStats rs;
    std::size_t i = 0;
    for (; i < segs.size() && i < cached.size(); ++i) {
      if (segs[i].id != cached[i].id) break;
      rs.hit_tokens += segs[i].len;
    }
    for (; i < segs.size(); ++i) rs.miss_tokens += segs[i].len;
    cached = segs;
    out.push_back(rs);
  }
  return out;
}

std::vector<RequestStats> simulate_block_cache(const CacheScenario& scenario) {
  scenario.validate();
  std::vector<RequestStats> out;
  std::set<std::string> encoded;
  for (std::size_t k = 0; k < scenario.requests.size(); ++k) {
    const auto& r = scenario.requests[k];
    RequestStats rs;
    if (encoded.count("sys")) {
      rs.hit_tokens += scenario.system_prompt_len;
    } else {
      rs.miss_tokens += scenario.system_prompt_len;
      encoded.insert("sys");
    }
    for (const auto& id : r.doc_ids) {
      if (encoded.count("doc:" + id)) {
        rs.hit_tokens += scenario.docs.at(id);
      } else {
        rs.miss_tokens += scenario.docs.at(id);
        encoded.insert("doc:" + id);
      }
    }
    rs.miss_tokens += r.query_len;  // the query is always fresh
    out.push_back(rs);
  }
  return out;
}

CostModel prefill_cost(std::int64_t context_len, const BlockPartition& partition,
                       std::int64_t query_len) {
  partition.validate();
  if (partition.total_len() != context_len)
    throw ContractError("partition must cover the context");
  if (query_len <= 0) throw ContractError("query length must be positive");
  const std::uint64_t total = static_cast<std::uint64_t>(context_len + query_len);

  CostModel cm;
  cm.full_pairs = total * (total + 1) / 2;
  // block-local causal pairs for every context block
  for (const auto& [lo, hi] : partition.ranges) {
    const std::uint64_t b = static_cast<std::uint64_t>(hi - lo);
    cm.block_pairs += b * (b + 1) / 2;
  }
  // query rows attend over the whole context plus their own causal prefix
  const std::uint64_t q = static_cast<std::uint64_t>(query_len);
  cm.block_pairs += q * static_cast<std::uint64_t>(context_len) + q * (q + 1) / 2;
  return cm;
}

}  // namespace blockattn
