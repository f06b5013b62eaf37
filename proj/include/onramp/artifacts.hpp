#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "onramp/csv.hpp"
#include "onramp/merge_extractor.hpp"
#include "onramp/nhmm/selection.hpp"
#include "onramp/segmenter.hpp"
#include "onramp/tskm/kmeans.hpp"

namespace onramp::io {

using nlohmann::json;

inline std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw InputError("missing artifact: " + p.string());
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InputError("cannot write " + p.string());
  return out;
}

inline json read_json_file(const std::filesystem::path& p) {
  auto in = open_in(p);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw SchemaError(p.string() + ": " + e.what());
  }
}

template <class F>
void for_each_jsonl(const std::filesystem::path& p, F&& f) {
  auto in = open_in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw SchemaError(p.string() + ":" + std::to_string(n) + ": " + e.what());
    }
    f(j);
  }
}

// -------------------------------------------------------------- events

inline json to_json(const MergeEvent& e) {
  json ids = json::array();
  for (const auto& f : e.neighbor_ids) {
    json row = json::array();
    for (const auto& id : f) row.push_back(id ? json(*id) : json(nullptr));
    ids.push_back(row);
  }
  return {{"event_id", e.event_id}, {"vehicle_id", e.vehicle_id}, {"t_cross", e.t_cross}, {"t_start", e.t_start},
          {"t_end", e.t_end},       {"O", e.O},                   {"X", e.X},             {"neighbor_ids", ids}};
}

inline MergeEvent event_from_json(const json& j) {
  try {
    MergeEvent e;
    e.event_id = j.at("event_id").get<std::string>();
    e.vehicle_id = j.at("vehicle_id").get<TrackId>();
    e.t_cross = j.at("t_cross").get<FrameIndex>();
    e.t_start = j.at("t_start").get<FrameIndex>();
    e.t_end = j.at("t_end").get<FrameIndex>();
    e.O = j.at("O").get<std::vector<Behavior>>();
    e.X = j.at("X").get<std::vector<Covariates>>();
    for (const auto& row : j.at("neighbor_ids")) {
      NeighborIds ids;
      for (std::size_t r = 0; r < 4 && r < row.size(); ++r)
        if (!row[r].is_null()) ids[r] = row[r].get<TrackId>();
      e.neighbor_ids.push_back(ids);
    }
    return e;
  } catch (const json::exception& ex) {
    throw SchemaError(std::string("malformed event: ") + ex.what());
  }
}

inline void write_events(const std::filesystem::path& p, const std::vector<MergeEvent>& events) {
  auto out = open_out(p);
  for (const auto& e : events) out << to_json(e).dump() << '\n';
}

inline std::vector<MergeEvent> read_events(const std::filesystem::path& p) {
  std::vector<MergeEvent> out;
  for_each_jsonl(p, [&](const json& j) { out.push_back(event_from_json(j)); });
  return out;
}

inline void write_discards(const std::filesystem::path& p, const std::vector<Discard>& d) {
  auto out = open_out(p);
  csv::write_row(out, {"track_id", "t_cross", "reason"});
  for (const auto& x : d) csv::write_row(out, {csv::format(x.track_id), csv::format(x.t_cross), x.reason});
}

// -------------------------------------------------------------- states

/// event_id -> 0-based decoded states. Files carry 1-based labels.
using StateTable = std::map<EventId, std::vector<int>>;

inline void write_states(std::ostream& out, const EventId& id, FrameIndex t_start, const std::vector<int>& q) {
  for (std::size_t t = 0; t < q.size(); ++t)
    csv::write_row(out, {id, csv::format(t_start + static_cast<FrameIndex>(t)), csv::format(std::int64_t{q[t] + 1})});
}

inline StateTable read_states(const std::filesystem::path& p) {
  auto in = open_in(p);
  const csv::Table t = csv::Table::read(in);
  const std::size_t ce = t.column("event_id"), cf = t.column("frame"), cs = t.column("state");
  StateTable out;
  std::map<EventId, FrameIndex> last;
  for (const auto& row : t.rows()) {
    const auto f = csv::parse_int(row[cf]);
    const auto s = csv::parse_int(row[cs]);
    if (!f || !s || *s < 1) throw SchemaError(p.string() + ": bad state row for " + row[ce]);
    auto it = last.find(row[ce]);
    if (it != last.end() && *f != it->second + 1) throw SchemaError(p.string() + ": frames of " + row[ce] + " are not contiguous");
    last[row[ce]] = *f;
    out[row[ce]].push_back(static_cast<int>(*s - 1));
  }
  return out;
}

// -------------------------------------------------------------- models

inline json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) throw SchemaError("matrix has wrong row count");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& r = j[static_cast<std::size_t>(i)];
    if (!r.is_array() || static_cast<Eigen::Index>(r.size()) != cols) throw SchemaError("matrix has wrong column count");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = r[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline json params_json(const nhmm::NhmmParams& p) {
  json mu = json::array(), sigma = json::array();
  for (int k = 0; k < p.K; ++k) {
    mu.push_back(matrix_json(p.mu[static_cast<std::size_t>(k)].transpose())[0]);
    sigma.push_back(matrix_json(p.sigma[static_cast<std::size_t>(k)]));
  }
  json pi0 = json::array();
  for (int k = 0; k < p.K; ++k) pi0.push_back(p.pi0[k]);
  return {{"K", p.K}, {"mu", mu}, {"sigma", sigma}, {"xi", matrix_json(p.xi)}, {"rho", matrix_json(p.rho)}, {"pi0", pi0}};
}

inline nhmm::NhmmParams params_from_json(const json& j) {
  try {
    const int K = j.at("K").get<int>();
    nhmm::NhmmParams p = nhmm::NhmmParams::zeros(K);
    for (int k = 0; k < K; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      p.mu[ks] = matrix_from_json(json::array({j.at("mu").at(ks)}), 1, 4).transpose();
      p.sigma[ks] = matrix_from_json(j.at("sigma").at(ks), 4, 4);
    }
    p.xi = matrix_from_json(j.at("xi"), K, K);
    p.rho = matrix_from_json(j.at("rho"), K, static_cast<Eigen::Index>(kCovariateDim));
    for (int k = 0; k < K; ++k) p.pi0[k] = j.at("pi0").at(static_cast<std::size_t>(k)).get<double>();
    return p;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed model parameters: ") + e.what());
  }
}

inline json scaler_json(const nhmm::CovariateScaler& s) {
  return {{"mean", s.mean}, {"sd", s.sd}, {"active", s.active}};
}

inline nhmm::CovariateScaler scaler_from_json(const json& j) {
  nhmm::CovariateScaler s;
  try {
    s.mean = j.at("mean").get<Covariates>();
    s.sd = j.at("sd").get<Covariates>();
    s.active = j.at("active").get<std::array<bool, kCovariateDim>>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed scaler: ") + e.what());
  }
  return s;
}

struct ModelRecord {
  EventId event_id;
  int K = 0;
  nhmm::NhmmParams params;
  nhmm::CovariateScaler scaler;
  std::vector<nhmm::BicRow> bic;
  std::vector<nhmm::CoefficientSummary> significance;
  nhmm::ChainInfo chain;
  std::size_t draws = 0;
};

inline json to_json(const ModelRecord& m) {
  json bic = json::array();
  for (const auto& r : m.bic)
    bic.push_back({{"K", r.K}, {"loglik", r.loglik}, {"parameters", r.parameters}, {"bic", r.bic}, {"degenerate", r.degenerate}});
  json sig = json::array();
  for (const auto& s : m.significance)
    sig.push_back({{"state", s.state + 1},
                   {"covariate", kCovariateNames[s.covariate]},
                   {"active", s.active},
                   {"mean", s.mean},
                   {"lower", s.lower},
                   {"upper", s.upper},
                   {"mean_raw", s.mean_raw},
                   {"lower_raw", s.lower_raw},
                   {"upper_raw", s.upper_raw},
                   {"significant", s.significant}});
  Eigen::MatrixXd xi_raw, rho_raw;
  m.scaler.to_raw_scale(m.params.xi, m.params.rho, xi_raw, rho_raw);
  return {{"event_id", m.event_id},
          {"K", m.K},
          {"posterior_mean", params_json(m.params)},
          {"raw_scale", {{"xi", matrix_json(xi_raw)}, {"rho", matrix_json(rho_raw)}}},
          {"scaler", scaler_json(m.scaler)},
          {"bic_table", bic},
          {"significance", sig},
          {"chain",
           {{"seed", m.chain.seed},
            {"iterations", m.chain.iterations},
            {"burn_in", m.chain.burn_in},
            {"thinning", m.chain.thinning},
            {"draws", m.draws},
            {"degenerate_state", m.chain.degenerate_state},
            {"warnings", m.chain.warnings}}}};
}

inline ModelRecord model_from_json(const json& j) {
  ModelRecord m;
  try {
    m.event_id = j.at("event_id").get<std::string>();
    m.K = j.at("K").get<int>();
    m.params = params_from_json(j.at("posterior_mean"));
    m.scaler = scaler_from_json(j.at("scaler"));
    for (const auto& r : j.at("bic_table")) {
      nhmm::BicRow b;
      b.K = r.at("K").get<int>();
      b.loglik = r.at("loglik").get<double>();
      b.parameters = r.at("parameters").get<std::size_t>();
      b.bic = r.at("bic").get<double>();
      b.degenerate = r.at("degenerate").get<bool>();
      m.bic.push_back(b);
    }
    for (const auto& s : j.at("significance")) {
      nhmm::CoefficientSummary c;
      c.state = s.at("state").get<int>() - 1;
      const auto name = s.at("covariate").get<std::string>();
      for (std::size_t k = 0; k < kCovariateDim; ++k)
        if (name == kCovariateNames[k]) c.covariate = k;
      c.active = s.at("active").get<bool>();
      c.mean = s.at("mean").get<double>();
      c.lower = s.at("lower").get<double>();
      c.upper = s.at("upper").get<double>();
      c.mean_raw = s.at("mean_raw").get<double>();
      c.lower_raw = s.at("lower_raw").get<double>();
      c.upper_raw = s.at("upper_raw").get<double>();
      c.significant = s.at("significant").get<bool>();
      m.significance.push_back(c);
    }
    const auto& ch = j.at("chain");
    m.chain.seed = ch.at("seed").get<std::uint64_t>();
    m.chain.iterations = ch.at("iterations").get<std::size_t>();
    m.chain.burn_in = ch.at("burn_in").get<std::size_t>();
    m.chain.thinning = ch.at("thinning").get<std::size_t>();
    m.chain.degenerate_state = ch.at("degenerate_state").get<bool>();
    m.chain.warnings = ch.at("warnings").get<std::vector<std::string>>();
    m.draws = ch.at("draws").get<std::size_t>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed model file: ") + e.what());
  }
  return m;
}

// ---------------------------------------------------------- primitives

inline json to_json(const Primitive& p) {
  return {{"primitive_id", p.primitive_id}, {"event_id", p.event_id},   {"state_label", p.state_label + 1},
          {"start_frame", p.start_frame},   {"end_frame", p.end_frame}, {"series", p.series}};
}

inline Primitive primitive_from_json(const json& j) {
  try {
    Primitive p;
    p.primitive_id = j.at("primitive_id").get<std::string>();
    p.event_id = j.at("event_id").get<std::string>();
    p.state_label = j.at("state_label").get<int>() - 1;
    p.start_frame = j.at("start_frame").get<FrameIndex>();
    p.end_frame = j.at("end_frame").get<FrameIndex>();
    p.series = j.at("series").get<std::vector<Behavior>>();
    return p;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed primitive: ") + e.what());
  }
}

inline std::vector<Primitive> read_primitives(const std::filesystem::path& p) {
  std::vector<Primitive> out;
  for_each_jsonl(p, [&](const json& j) { out.push_back(primitive_from_json(j)); });
  return out;
}

}  // namespace onramp::io
