#include <string>

#include <gtest/gtest.h>

#include "delqg/io.hpp"
#include "support.hpp"

namespace delqg {
namespace {

std::string parse_error_path(const Json& j) {
  try {
    problem_from_json(j);
  } catch (const ParseError& e) {
    return e.path();
  }
  return "<no error>";
}

TEST(HexFloat, Format) {
  EXPECT_EQ(hex_float(1.0), "0x1p+0");
  EXPECT_EQ(hex_float(-3.0), "-0x1.8p+1");
  EXPECT_EQ(hex_float(0.0), "0x0p+0");
  EXPECT_THROW(hex_float(std::numeric_limits<double>::infinity()), Overflow);
  const double v = 0.1;
  EXPECT_EQ(std::strtod(hex_float(v).c_str(), nullptr), v);
}

TEST(Problem, RoundTripIsExact) {
  const Problem pr = testing::four_agent_instance(3, 0.2);
  for (Encoding enc : {Encoding::kDecimal, Encoding::kHex}) {
    const Json j = Json::parse(problem_to_json(pr, enc).dump());
    const Problem q = problem_from_json(j);
    EXPECT_EQ(q.tau, pr.tau);
    EXPECT_EQ(q.topology.closure(), pr.topology.closure());
    EXPECT_EQ(q.plant.A(), pr.plant.A());
    EXPECT_EQ(q.plant.B1(), pr.plant.B1());
    EXPECT_EQ(q.plant.B2(), pr.plant.B2());
    EXPECT_EQ(q.plant.C1(), pr.plant.C1());
    EXPECT_EQ(q.plant.C2(), pr.plant.C2());
    EXPECT_EQ(q.plant.D12(), pr.plant.D12());
    EXPECT_EQ(q.plant.D21(), pr.plant.D21());
  }
  Json hex = problem_to_json(pr, Encoding::kHex);
  EXPECT_TRUE(hex["agents"][0]["A"][0][0].is_string());
}

TEST(Problem, GraphPresetField) {
  Json j = problem_to_json(testing::four_agent_instance(1, 0.0));
  j.erase("adjacency");
  j["graph"] = "fig1";
  EXPECT_EQ(problem_from_json(j).topology.closure(),
            Topology::four_agent_example().closure());
  j["graph"] = "ring";
  EXPECT_EQ(parse_error_path(j), "/graph");
}

TEST(Problem, ErrorsCarryJsonPointer) {
  const Json good = problem_to_json(testing::four_agent_instance(2, 0.0));
  Json j = good;
  j["agents"][1]["A"][1].push_back(1.0);
  EXPECT_EQ(parse_error_path(j), "/agents/1/A/1");  // ragged row
  j = good;
  j["agents"][2]["B2"] = Json::array({Json::array({1.0, 2.0}), Json::array({3.0, 4.0})});
  EXPECT_EQ(parse_error_path(j), "/agents/2/B2");
  j = good;
  j["agents"][0]["C2"][0][1] = "0x1.zz";
  EXPECT_EQ(parse_error_path(j), "/agents/0/C2/0/1");
  j = good;
  j.erase("D12");
  EXPECT_EQ(parse_error_path(j), "/D12");
  j = good;
  j["format"] = "something.else";
  EXPECT_EQ(parse_error_path(j), "/format");
  j = good;
  j["tau"] = -1.0;
  EXPECT_EQ(parse_error_path(j), "/tau");
  j = good;
  j["adjacency"][0][1] = 2;
  EXPECT_EQ(parse_error_path(j), "/adjacency/0/1");
}

TEST(Controller, RoundTripPreservesResponse) {
  const Problem pr = testing::four_agent_instance(5, 0.2);
  const DecentralizedController K = synthesize_all(pr.plant, pr.topology, 0.2);
  for (Encoding enc : {Encoding::kDecimal, Encoding::kHex}) {
    ControllerExportOptions o;
    o.encoding = enc;
    o.kernel_step = 0.05;
    const Json j = Json::parse(controller_to_json(K, o).dump());
    EXPECT_EQ(j["agents"][0]["kernels"]["u"].size(), 5u);
    EXPECT_FALSE(j["agents"][3].contains("kernels"));
    const DecentralizedController R = controller_from_json(j);
    ASSERT_EQ(R.size(), 4);
    EXPECT_EQ(R.tau, K.tau);
    for (int i = 0; i < 4; ++i) {
      EXPECT_EQ(R.agents[i].F, K.agents[i].F);
      EXPECT_EQ(R.agents[i].L, K.agents[i].L);
      EXPECT_EQ(R.agents[i].fir_u.B_far, K.agents[i].fir_u.B_far);
      EXPECT_EQ(R.agents[i].state_dim(), K.agents[i].state_dim());
    }
    for (double w : {0.0, 1.0, 7.0}) {
      EXPECT_EQ(controller_response(pr.plant, R, w),
                controller_response(pr.plant, K, w));
    }
  }
  ControllerExportOptions bad;
  bad.kernel_step = 0.03;
  EXPECT_THROW(controller_to_json(K, bad), NonIntegerDelayRatio);
}

TEST(Controller, RejectsInconsistentFile) {
  const Problem pr = testing::four_agent_instance(6, 0.1);
  Json j = controller_to_json(synthesize_all(pr.plant, pr.topology, 0.1));
  j["agents"][1]["own"] = 9;
  EXPECT_THROW(controller_from_json(j), ParseError);
  j = controller_to_json(synthesize_all(pr.plant, pr.topology, 0.1));
  j["coupling"] = "telepathy";
  EXPECT_THROW(controller_from_json(j), ParseError);
}

TEST(Files, MissingAndMalformed) {
  EXPECT_THROW(read_json_file("/nonexistent/problem.json"), ParseError);
  const std::string path = ::testing::TempDir() + "delqg_malformed.json";
  write_text_file(path, "{\"format\": ");
  try {
    read_problem(path);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("malformed JSON"), std::string::npos);
  }
}

TEST(Presets, Names) {
  EXPECT_EQ(topology_preset("chain", 3).closure(), Topology::chain(3).closure());
  EXPECT_EQ(topology_preset("none", 2).closure(),
            Topology::disconnected(2).closure());
  EXPECT_THROW(topology_preset("fig1", 3), InfeasibleDims);
  EXPECT_THROW(topology_preset("ring", 3), InfeasibleDims);
}

}  // namespace
}  // namespace delqg
