#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "onramp/pipeline.hpp"

using namespace onramp;
using namespace onramp::pipeline;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("onramp_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

PipelineConfig base(const fs::path& out) {
  PipelineConfig c;
  c.output_dir = out;
  c.fit.iterations = 400;
  c.fit.burn_in = 200;
  c.fit.thinning = 1;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::map<std::string, std::string>> rows(const fs::path& p) {
  std::ifstream in(p);
  const auto t = csv::Table::read(in);
  std::vector<std::map<std::string, std::string>> out;
  for (const auto& r : t.rows()) {
    std::map<std::string, std::string> m;
    for (std::size_t c = 0; c < t.header().size(); ++c) m[t.header()[c]] = c < r.size() ? r[c] : "";
    out.push_back(m);
  }
  return out;
}

std::size_t lines(const fs::path& p) {
  const auto s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

// Events whose single state covers each family member.
void write_family_inputs(const fs::path& out, const std::vector<tskm::Series>& members) {
  std::vector<MergeEvent> events;
  auto states = io::open_out(out / "states.csv");
  csv::write_row(states, {"event_id", "frame", "state"});
  for (std::size_t i = 0; i < members.size(); ++i) {
    MergeEvent e;
    e.event_id = "fam" + std::to_string(i);
    e.O = members[i];
    e.X.assign(e.O.size(), Covariates{});
    e.neighbor_ids.assign(e.O.size(), NeighborIds{});
    e.t_end = static_cast<FrameIndex>(e.O.size()) - 1;
    io::write_states(states, e.event_id, 0, std::vector<int>(e.O.size(), 0));
    events.push_back(std::move(e));
  }
  io::write_events(out / "events.jsonl", events);
}

std::string minimal_config() { return R"({"config_version": 1})"; }

}  // namespace

// ---------------------------------------------------------------- config

TEST(Config, DefaultsAndOverrides) {
  const auto c = parse_config(json::parse(R"({
    "config_version": 1, "seed": 9, "jobs": 2, "output_dir": "res",
    "nhmm": {"iterations": 100, "burn_in": 50, "fixed_k": 3},
    "tskm": {"k_min": 2, "k_max": 4, "band": 5},
    "segmentation": {"min_frames": 7},
    "synth": {"n_merges": 5, "arc": true},
    "input": {"tracks": "t.csv", "geometry": "/abs/g.json"}
  })"), "/cfg");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.jobs, 2);
  EXPECT_EQ(c.fit.iterations, 100u);
  EXPECT_EQ(*c.fixed_k, 3);
  EXPECT_EQ(c.tskm_k_min, 2);
  EXPECT_EQ(*c.tskm.dtw.band, 5u);
  EXPECT_EQ(c.min_frames, 7u);
  EXPECT_TRUE(c.layout.arc);
  EXPECT_EQ(c.scene_spec.n_merges, 5u);
  EXPECT_EQ(c.tracks_path, fs::path("/cfg/t.csv"));
  EXPECT_EQ(c.geometry_path, fs::path("/abs/g.json"));
  EXPECT_EQ(c.output_dir, fs::path("res"));
}

TEST(Config, UnknownKeysAreErrors) {
  for (const char* text : {R"({"config_version": 1, "sed": 3})", R"({"config_version": 1, "nhmm": {"iteration": 3}})",
                           R"({"config_version": 1, "tskm": {"kk": 3}})"}) {
    try {
      parse_config(json::parse(text));
      FAIL() << text;
    } catch (const SchemaError& e) {
      EXPECT_NE(std::string(e.what()).find("unknown key"), std::string::npos) << e.what();
    }
  }
}

TEST(Config, VersionTypeAndBounds) {
  EXPECT_THROW(parse_config(json::parse(R"({"seed": 1})")), SchemaError);
  EXPECT_THROW(parse_config(json::parse(R"({"config_version": 2})")), SchemaError);
  EXPECT_THROW(parse_config(json::parse(R"({"config_version": 1, "seed": "x"})")), SchemaError);
  EXPECT_THROW(parse_config(json::parse(R"({"config_version": 1, "nhmm": {"iterations": 10, "burn_in": 10}})")), SchemaError);
  EXPECT_THROW(parse_config(json::parse(R"({"config_version": 1, "nhmm": {"credible_level": 1.5}})")), SchemaError);
  EXPECT_THROW(parse_config(json::parse(R"({"config_version": 1, "extraction": {"smoothing_window": 4}})")), SchemaError);
  EXPECT_THROW(parse_config(json::parse(R"({"config_version": 1, "jobs": 0})")), SchemaError);
  EXPECT_NO_THROW(parse_config(json::parse(minimal_config())));
}

// ---------------------------------------------------------------- extract

TEST(Extract, SyntheticSceneGivesLedgerCount) {
  const auto out = scratch("extract25");
  auto c = base(out);
  c.scene_spec = {25, 0, 0.0};
  std::ostringstream log;
  ASSERT_EQ(cmd_synth(c, log), 0);
  EXPECT_EQ(cmd_extract(c, log), 0) << log.str();
  EXPECT_EQ(lines(out / "events.jsonl"), 25u);
  const json ledger = io::read_json_file(out / "scene" / "ledger.json");
  EXPECT_EQ(ledger.at("merges").size(), 25u);
  EXPECT_EQ(rows(out / "discards.csv").size(), 0u);
}

TEST(Extract, InvalidMergesLandInDiscards) {
  const auto out = scratch("extract_invalid");
  auto c = base(out);
  c.scene_spec = {20, 0, 0.5};
  std::ostringstream log;
  ASSERT_EQ(cmd_synth(c, log), 0);
  ASSERT_EQ(cmd_extract(c, log), 0);
  EXPECT_EQ(lines(out / "events.jsonl"), 10u);
  EXPECT_EQ(rows(out / "discards.csv").size(), 10u);
}

TEST(Extract, EmptySceneExitsTwo) {
  const auto out = scratch("extract_empty");
  auto c = base(out);
  {
    auto g = io::open_out(out / "g.json");
    write_geometry(g, synth::make_layout_geometry(synth::SceneLayout{}));
    auto t = io::open_out(out / "t.csv");
    t << "track_id,frame_id,timestamp_ms,agent_type,x,y,vx,vy,psi_rad,length,width\n";
  }
  c.tracks_path = out / "t.csv";
  c.geometry_path = out / "g.json";
  std::ostringstream log;
  EXPECT_EQ(cmd_extract(c, log), 2);
  EXPECT_NE(log.str().find("no merging events"), std::string::npos);
}

TEST(Extract, MalformedCsvNamesColumn) {
  const auto out = scratch("extract_bad");
  auto c = base(out);
  {
    auto g = io::open_out(out / "g.json");
    write_geometry(g, synth::make_layout_geometry(synth::SceneLayout{}));
    auto t = io::open_out(out / "t.csv");
    t << "track_id,frame_id,timestamp_ms,agent_type,x,y,vx,vy,length,width\n1,0,0,car,0,0,0,0,4,2\n";
  }
  c.tracks_path = out / "t.csv";
  c.geometry_path = out / "g.json";
  std::ostringstream log;
  EXPECT_EQ(cmd_extract(c, log), 1);
  EXPECT_NE(log.str().find("psi_rad"), std::string::npos) << log.str();
  c.tracks_path = out / "absent.csv";
  EXPECT_EQ(cmd_extract(c, log), 1);
}

// ---------------------------------------------------------------- fit

TEST(Fit, BicModeRecoversThreeStates) {
  const auto out = scratch("fit_bic");
  auto c = base(out);
  c.fit.iterations = 600;
  c.fit.burn_in = 300;
  c.k_max = 5;
  auto data = fixtures::nhmm_data(fixtures::three_state_truth(), 20, 400, 91, {0, 2});
  io::write_events(out / "events.jsonl", data.events);
  std::ostringstream log;
  ASSERT_EQ(cmd_fit(c, log), 0) << log.str();
  std::map<std::string, int> votes;
  std::size_t row_count = 0;
  for (const auto& r : rows(out / "bic_table.csv")) {
    ++row_count;
    if (r.at("selected") == "true") ++votes[r.at("K")];
  }
  EXPECT_EQ(row_count, 20u * 5u);
  const auto mode = std::max_element(votes.begin(), votes.end(), [](auto& a, auto& b) { return a.second < b.second; });
  EXPECT_EQ(mode->first, "3") << "votes for 3: " << votes["3"];
  EXPECT_EQ(lines(out / "states.csv"), 1u + 20u * 400u);
}

TEST(Fit, FixedKHasNoSweepRows) {
  const auto out = scratch("fit_fixed");
  auto c = base(out);
  c.fixed_k = 3;
  auto data = fixtures::nhmm_data(fixtures::three_state_truth(), 4, 200, 92, {0, 2});
  io::write_events(out / "events.jsonl", data.events);
  std::ostringstream log;
  ASSERT_EQ(cmd_fit(c, log), 0) << log.str();
  EXPECT_EQ(rows(out / "bic_table.csv").size(), 0u);
  std::size_t models = 0;
  for (const auto& e : fs::directory_iterator(out / "models")) {
    ++models;
    EXPECT_EQ(io::model_from_json(io::read_json_file(e.path())).K, 3);
  }
  EXPECT_EQ(models, 4u);
}

TEST(Fit, OneCorruptedEventIsTolerated) {
  const auto out = scratch("fit_corrupt");
  auto c = base(out);
  c.fixed_k = 2;
  auto data = fixtures::nhmm_data(fixtures::three_state_truth(), 10, 60, 93, {0, 2});
  data.events[4].O.resize(30);  // O and X no longer line up
  io::write_events(out / "events.jsonl", data.events);
  std::ostringstream log;
  EXPECT_EQ(cmd_fit(c, log), 0) << log.str();
  std::size_t models = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(out / "models")) ++models;
  EXPECT_EQ(models, 9u);
  const auto failures = rows(out / "fit_failures.csv");
  ASSERT_EQ(failures.size(), 1u);
  EXPECT_EQ(failures[0].at("event_id"), "syn4");
  EXPECT_NE(log.str().find("syn4"), std::string::npos);
  // two bad events out of ten drop below the 90% bar
  data.events[7].X.resize(10);
  io::write_events(out / "events.jsonl", data.events);
  EXPECT_EQ(cmd_fit(c, log), 1);
}

TEST(Fit, OutputIndependentOfJobs) {
  const auto a = scratch("fit_jobs_a"), b = scratch("fit_jobs_b");
  auto data = fixtures::nhmm_data(fixtures::three_state_truth(), 6, 60, 94, {0, 2});
  for (const auto& d : {a, b}) io::write_events(d / "events.jsonl", data.events);
  auto ca = base(a), cb = base(b);
  ca.k_max = cb.k_max = 3;
  cb.jobs = 4;
  std::ostringstream log;
  ASSERT_EQ(cmd_fit(ca, log), 0);
  ASSERT_EQ(cmd_fit(cb, log), 0);
  EXPECT_EQ(slurp(a / "bic_table.csv"), slurp(b / "bic_table.csv"));
  EXPECT_EQ(slurp(a / "states.csv"), slurp(b / "states.csv"));
  EXPECT_EQ(slurp(a / "models" / "syn3.model.json"), slurp(b / "models" / "syn3.model.json"));
}

TEST(Fit, PooledWritesOneModel) {
  const auto out = scratch("fit_pooled");
  auto c = base(out);
  c.pooled = true;
  c.fixed_k = 3;
  auto data = fixtures::nhmm_data(fixtures::three_state_truth(), 5, 60, 95, {0, 2});
  io::write_events(out / "events.jsonl", data.events);
  std::ostringstream log;
  ASSERT_EQ(cmd_fit(c, log), 0) << log.str();
  EXPECT_TRUE(fs::exists(out / "models" / "pooled.model.json"));
  EXPECT_EQ(io::read_states(out / "states.csv").size(), 5u);
}

TEST(Fit, MissingEventsFile) {
  const auto out = scratch("fit_missing");
  std::ostringstream log;
  EXPECT_EQ(cmd_fit(base(out), log), 1);
  EXPECT_NE(log.str().find("events.jsonl"), std::string::npos);
}

// ---------------------------------------------------------------- cluster

TEST(Cluster, ThreeFamiliesSuggestThree) {
  const auto out = scratch("cluster_fam");
  const auto fam = synth::gen_primitive_families(fixtures::family_templates(), 0.05, 30, 61);
  write_family_inputs(out, fam.primitives);
  auto c = base(out);
  c.tskm_k_min = 1;
  c.tskm_k_max = 6;
  std::ostringstream log;
  ASSERT_EQ(cmd_cluster(c, log), 0) << log.str();
  const auto curve = rows(out / "inertia_curve.csv");
  ASSERT_EQ(curve.size(), 6u);
  EXPECT_EQ(curve[0].at("change_rate"), "");
  int first_flat = 7;
  for (const auto& r : curve)
    if (!r.at("change_rate").empty() && std::stod(r.at("change_rate")) < 0.05) {
      first_flat = std::stoi(r.at("k"));
      break;
    }
  EXPECT_EQ(first_flat - 1, 3);
  const json cl = io::read_json_file(out / "clusters.json");
  EXPECT_EQ(cl.at("suggested_k"), 3);
  EXPECT_EQ(cl.at("k"), 3);
  std::vector<int> got;
  for (const auto& a : cl.at("assignments")) got.push_back(a.at("cluster").get<int>());
  std::vector<int> truth(fam.labels.begin(), fam.labels.end());
  EXPECT_DOUBLE_EQ(tskm::adjusted_rand_index(got, truth), 1.0);
}

TEST(Cluster, KEqualsCountGivesZeroInertia) {
  const auto out = scratch("cluster_sat");
  const auto fam = synth::gen_primitive_families(fixtures::family_templates(), 0.3, 2, 62, 0.2, 1.0);
  write_family_inputs(out, fam.primitives);
  auto c = base(out);
  c.tskm_k = 6;
  std::ostringstream log;
  ASSERT_EQ(cmd_cluster(c, log), 0) << log.str();
  EXPECT_EQ(io::read_json_file(out / "clusters.json").at("inertia").get<double>(), 0.0);
  c.tskm_k = 7;
  EXPECT_EQ(cmd_cluster(c, log), 1);
  EXPECT_NE(log.str().find("6 primitives for k = 7"), std::string::npos) << log.str();
}

TEST(Cluster, MinFramesAboveAllLengths) {
  const auto out = scratch("cluster_minframes");
  const auto fam = synth::gen_primitive_families(fixtures::family_templates(), 0.3, 2, 63, 0.2, 1.0);
  write_family_inputs(out, fam.primitives);
  auto c = base(out);
  c.min_frames = 100;
  std::ostringstream log;
  EXPECT_EQ(cmd_cluster(c, log), 1);
  EXPECT_NE(log.str().find("zero primitives"), std::string::npos);
}

TEST(Cluster, PrimitivesRecordBounds) {
  const auto out = scratch("cluster_prims");
  MergeEvent e;
  e.event_id = "9_50";
  e.t_start = 40;
  e.O.assign(30, Behavior{1, 2, 3, 4});
  e.X.assign(30, Covariates{});
  e.t_end = 69;
  io::write_events(out / "events.jsonl", {e});
  {
    auto s = io::open_out(out / "states.csv");
    csv::write_row(s, {"event_id", "frame", "state"});
    std::vector<int> q(30, 0);
    std::fill(q.begin() + 12, q.end(), 1);
    io::write_states(s, e.event_id, e.t_start, q);
  }
  auto c = base(out);
  c.tskm_k = 1;
  std::ostringstream log;
  ASSERT_EQ(cmd_cluster(c, log), 0) << log.str();
  const auto prims = io::read_primitives(out / "primitives.jsonl");
  ASSERT_EQ(prims.size(), 2u);
  EXPECT_EQ(prims[0].start_frame, 40);
  EXPECT_EQ(prims[0].end_frame, 51);
  EXPECT_EQ(prims[1].state_label, 1);
  EXPECT_EQ(prims[1].primitive_id, "9_50#1");
}

// ---------------------------------------------------------------- report

namespace {

// extract-free pipeline over NHMM synthetic events
void fit_and_cluster(const PipelineConfig& c, const std::vector<MergeEvent>& events) {
  io::write_events(c.output_dir / "events.jsonl", events);
  std::ostringstream log;
  ASSERT_EQ(cmd_fit(c, log), 0) << log.str();
  ASSERT_EQ(cmd_cluster(c, log), 0) << log.str();
}

}  // namespace

TEST(Report, SingleEventSingleCluster) {
  const auto out = scratch("report_single");
  auto c = base(out);
  c.fixed_k = 1;
  c.tskm_k = 1;
  const auto data = fixtures::nhmm_data(fixtures::three_state_truth(), 1, 40, 71, {0});
  fit_and_cluster(c, data.events);
  std::ostringstream log;
  ASSERT_EQ(cmd_report(c, log), 0) << log.str();
  const auto f = rows(out / "pattern_frequency.csv");
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(std::stod(f[0].at("share")), 1.0);
  EXPECT_EQ(f[0].at("count"), "1");
  const auto chains = rows(out / "pattern_chains.csv");
  ASSERT_EQ(chains.size(), 1u);
  EXPECT_EQ(chains[0].at("chain"), "1");
}

TEST(Report, HomogeneousModelHasConstantTransitions) {
  const auto out = scratch("report_homog");
  auto c = base(out);
  c.fixed_k = 2;
  c.tskm_k = 1;
  const auto data = fixtures::nhmm_data(fixtures::two_state_truth(0.0), 1, 60, 72, {0, 1, 2});
  fit_and_cluster(c, data.events);
  const fs::path model = out / "models" / "syn0.model.json";
  json m = io::read_json_file(model);
  for (auto& row : m["posterior_mean"]["rho"])
    for (auto& v : row) v = 0.0;
  {
    auto o = io::open_out(model);
    o << m.dump(1);
  }
  std::ostringstream log;
  ASSERT_EQ(cmd_report(c, log), 0) << log.str();
  std::map<std::pair<std::string, std::string>, double> mean;
  for (const auto& r : rows(out / "transition_mean.csv"))
    mean[{r.at("from_state"), r.at("to_state")}] = std::stod(r.at("probability"));
  ASSERT_EQ(mean.size(), 4u);
  const auto series = rows(out / "transition_series.csv");
  EXPECT_EQ(series.size(), 60u * 4u);
  for (const auto& r : series)
    EXPECT_NEAR(std::stod(r.at("probability")), (mean[{r.at("from_state"), r.at("to_state")}]), 1e-10);
}

TEST(Report, TransitionSeriesRecomputesFromModel) {
  const auto out = scratch("report_recompute");
  auto c = base(out);
  c.fixed_k = 2;
  c.tskm_k = 1;
  const auto data = fixtures::nhmm_data(fixtures::two_state_truth(2.0), 2, 50, 73, {0, 1});
  fit_and_cluster(c, data.events);
  std::ostringstream log;
  ASSERT_EQ(cmd_report(c, log), 0) << log.str();
  const auto rec = io::model_from_json(io::read_json_file(out / "models" / "syn1.model.json"));
  const auto series = rows(out / "transition_series.csv");
  std::size_t checked = 0;
  for (const auto& r : series) {
    if (r.at("event_id") != "syn1") continue;
    const auto t = static_cast<std::size_t>(std::stoll(r.at("frame")));
    const Eigen::MatrixXd A = nhmm::transition_matrix_at(rec.params, rec.scaler.apply(data.events[1].X[t]));
    EXPECT_NEAR(std::stod(r.at("probability")), A(std::stoi(r.at("from_state")) - 1, std::stoi(r.at("to_state")) - 1), 1e-12);
    ++checked;
  }
  EXPECT_EQ(checked, 50u * 4u);
}

TEST(Report, SignificanceRanksActiveCovariates) {
  const auto out = scratch("report_sig");
  auto c = base(out);
  c.fixed_k = 2;
  c.tskm_k = 2;
  c.fit.iterations = 800;
  c.fit.burn_in = 400;
  auto truth = fixtures::two_state_truth(2.0);
  truth.rho(0, 2) = -2.0;
  const auto data = fixtures::nhmm_data(truth, 10, 200, 74, {0, 1, 2, 3, 4, 5});
  fit_and_cluster(c, data.events);
  std::ostringstream log;
  ASSERT_EQ(cmd_report(c, log), 0) << log.str();
  auto r = rows(out / "significance_counts.csv");
  ASSERT_EQ(r.size(), kCovariateDim);
  std::stable_sort(r.begin(), r.end(), [](auto& a, auto& b) {
    return std::stoi(a.at("models_significant")) > std::stoi(b.at("models_significant"));
  });
  std::set<std::string> top = {r[0].at("covariate"), r[1].at("covariate")};
  EXPECT_EQ(top, (std::set<std::string>{"dx_f", "dx_ft"}));
  EXPECT_GT(std::stoi(r[1].at("models_significant")), std::stoi(r[2].at("models_significant")));
}

TEST(Report, MissingArtifactIsNamed) {
  const auto out = scratch("report_missing");
  auto c = base(out);
  c.fixed_k = 1;
  c.tskm_k = 1;
  const auto data = fixtures::nhmm_data(fixtures::three_state_truth(), 1, 40, 75, {0});
  fit_and_cluster(c, data.events);
  fs::remove(out / "clusters.json");
  std::ostringstream log;
  EXPECT_EQ(cmd_report(c, log), 1);
  EXPECT_NE(log.str().find("clusters.json"), std::string::npos) << log.str();
}

// ---------------------------------------------------------------- CLI

#ifdef ONRAMP_CLI
TEST(Cli, RejectsUnknownConfigKey) {
  const auto out = scratch("cli_cfg");
  {
    auto f = io::open_out(out / "c.json");
    f << R"({"config_version": 1, "nhmm": {"K": 3}})";
  }
  const std::string cmd = std::string(ONRAMP_CLI) + " --config " + (out / "c.json").string() + " --out " +
                          (out / "o").string() + " synth 2>" + (out / "log").string();
  EXPECT_NE(std::system(cmd.c_str()), 0);
  EXPECT_NE(slurp(out / "log").find("nhmm.K"), std::string::npos);
}

TEST(Cli, SynthExtractThroughBinary) {
  const auto out = scratch("cli_run");
  {
    auto f = io::open_out(out / "c.json");
    f << R"({"config_version": 1, "synth": {"n_merges": 6}})";
  }
  const std::string pre = std::string(ONRAMP_CLI) + " --config " + (out / "c.json").string() + " --seed 3 --out " + (out / "o").string();
  EXPECT_EQ(std::system((pre + " synth 2>/dev/null").c_str()), 0);
  EXPECT_EQ(std::system((pre + " extract 2>/dev/null").c_str()), 0);
  EXPECT_EQ(lines(out / "o" / "events.jsonl"), 6u);
  EXPECT_NE(std::system((pre + " bogus 2>/dev/null").c_str()), 0);
}
#endif
