#include <gtest/gtest.h>

#include <fstream>

#include "httplib.h"
#include "lpm/cloud/http_api.hpp"
#include "support/fixtures.hpp"

using namespace lpm;
using fixtures::TempDir;

namespace {

struct Api {
  Api() : mc(config()) {
    api.start("127.0.0.1", 0);
    client = std::make_unique<httplib::Client>("127.0.0.1", api.port());
  }

  cloud::CloudConfig config() {
    cloud::CloudConfig c;
    c.store_dir = dir.path();
    c.catalog.entries.push_back({"bearing", "fan-unit-A", cloud::OrderAction::replace, {10.0, 0.0}});
    c.catalog.entries.push_back({"imbalance", "rotor-hub", cloud::OrderAction::inspect, {0.0, 10.0}});
    return c;
  }

  std::string alert(std::uint64_t seq, double score) {
    auto r = mc.ingest_event("edge-1", seq,
                             {"fan-1", static_cast<std::int64_t>(seq), score, {9.0, 1.0}, 1.5, 1});
    return r.alert_id.value_or("");
  }

  Json get(const std::string& path, int expect) {
    auto res = client->Get(path);
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, expect) << path << " -> " << res->body;
    EXPECT_EQ(res->get_header_value("Content-Type"), "application/json");
    return parse_canonical(res->body);
  }

  Json post(const std::string& path, const std::string& body, int expect) {
    auto res = client->Post(path, body, "application/json");
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, expect) << path << " -> " << res->body;
    return parse_canonical(res->body);
  }

  TempDir dir{"lpm-http"};
  cloud::MaintenanceCloud mc;
  cloud::HttpApi api{mc};
  std::unique_ptr<httplib::Client> client;
};

}  // namespace

TEST(Http, AlertListAfterOneAlert) {
  Api a;
  a.alert(1, 3.5);
  const auto j = a.get("/alerts", 200);
  ASSERT_EQ(j["alerts"].size(), 1u);
  EXPECT_EQ(j["total"], 1);
  const auto& al = j["alerts"][0];
  EXPECT_EQ(al["equipment_id"], "fan-1");
  EXPECT_EQ(al["score"], 3.5);
  EXPECT_EQ(al["severity"], "critical");
  EXPECT_EQ(al["prediction"]["cause"], "bearing");
}

TEST(Http, AlertPaginationNewestFirst) {
  Api a;
  for (std::uint64_t s = 1; s <= 5; ++s) a.alert(s, 3.0 + 0.1 * static_cast<double>(s));
  const auto page = a.get("/alerts?limit=2&offset=1", 200);
  ASSERT_EQ(page["alerts"].size(), 2u);
  EXPECT_EQ(page["alerts"][0]["window_index"], 4);
  EXPECT_EQ(page["alerts"][1]["window_index"], 3);
  EXPECT_EQ(page["total"], 5);
  EXPECT_EQ(a.get("/alerts?offset=9", 200)["alerts"].size(), 0u);
  EXPECT_TRUE(a.get("/alerts?limit=-1", 400).contains("error"));
  a.get("/alerts?limit=abc", 400);
}

TEST(Http, UnknownIdsAreNotFound) {
  Api a;
  EXPECT_TRUE(a.get("/alerts/alert-404", 404).contains("error"));
  a.get("/predictions/pred-404", 404);
  a.get("/equipment/fan-9/prediction", 404);
  a.post("/orders/ord-404/approve", "", 404);
  a.get("/no/such/route", 404);
}

TEST(Http, OrderFlowAndConflicts) {
  Api a;
  const auto alert_id = a.alert(1, 3.2);
  const auto alert = a.get("/alerts/" + alert_id, 200);
  const auto pred = a.get("/equipment/fan-1/prediction", 200);
  EXPECT_EQ(pred["prediction_id"], alert["prediction"]["prediction_id"]);
  EXPECT_EQ(a.get("/predictions/" + pred["prediction_id"].get<std::string>(), 200), pred);

  const auto order = a.post("/orders", Json{{"prediction_id", pred["prediction_id"]}}.dump(), 201);
  EXPECT_EQ(order["status"], "PROPOSED");
  EXPECT_EQ(order["part"], "fan-unit-A");
  EXPECT_EQ(order["action"], "REPLACE");
  a.post("/orders", Json{{"prediction_id", pred["prediction_id"]}}.dump(), 409);

  const auto id = order["order_id"].get<std::string>();
  const auto done = a.post("/orders/" + id + "/approve", "", 200);
  EXPECT_EQ(done["status"], "SUBMITTED");
  EXPECT_TRUE(done["audit"].contains("APPROVED"));
  EXPECT_TRUE(a.post("/orders/" + id + "/approve", "", 409).contains("error"));
  a.post("/orders/" + id + "/reject", "", 409);

  const auto list = a.get("/orders", 200);
  ASSERT_EQ(list["orders"].size(), 1u);
  EXPECT_EQ(list["orders"][0]["status"], "SUBMITTED");
  EXPECT_EQ(a.mc.erp().submitted(), 1u);
}

TEST(Http, ErpOutageThenListRetries) {
  Api a;
  a.alert(1, 3.2);
  const auto pred = a.get("/equipment/fan-1/prediction", 200);
  const auto order = a.post("/orders", Json{{"prediction_id", pred["prediction_id"]}}.dump(), 201);
  a.mc.erp().set_available(false);
  const auto id = order["order_id"].get<std::string>();
  EXPECT_EQ(a.post("/orders/" + id + "/approve", "", 200)["status"], "APPROVED");
  a.mc.erp().set_available(true);
  EXPECT_EQ(a.get("/orders", 200)["orders"][0]["status"], "SUBMITTED");
}

TEST(Http, RejectFlow) {
  Api a;
  a.alert(1, 3.2);
  const auto pred = a.get("/equipment/fan-1/prediction", 200);
  const auto order = a.post("/orders", Json{{"prediction_id", pred["prediction_id"]}}.dump(), 201);
  const auto id = order["order_id"].get<std::string>();
  EXPECT_EQ(a.post("/orders/" + id + "/reject", "", 200)["status"], "REJECTED");
  a.post("/orders/" + id + "/approve", "", 409);
}

TEST(Http, MalformedBodiesAreBadRequest) {
  Api a;
  a.post("/orders", "{nope", 400);
  a.post("/orders", "[1,2]", 400);
  a.post("/orders", "{}", 400);
  a.post("/orders", R"({"prediction_id": 7})", 400);
  a.post("/admin/retrain", "{}", 400);
}

TEST(Http, RulesListing) {
  Api a;
  rules::DetectionRule r;
  r.lower = {8, 0};
  r.upper = {10, 2};
  r.rule_id = rules::rule_id_for(r.lower, r.upper, 0.0);
  a.mc.merge_rule("edge-1", 1, rules::to_proposal(r));
  const auto j = a.get("/rules", 200);
  ASSERT_EQ(j["rules"].size(), 1u);
  EXPECT_EQ(j["rules"][0]["rule_id"], r.rule_id);
  EXPECT_EQ(j["rules"][0]["source"], "EDGE_PROPOSED");
}

TEST(Http, AdminRetrainAndDistribute) {
  Api a;
  EXPECT_EQ(a.post("/admin/retrain", R"({"edge_id":"edge-1"})", 422)["error"].get<std::string>().find("200") !=
                std::string::npos,
            true);
  a.post("/admin/distribute", R"({"edge_id":"edge-1"})", 404);

  protocol::RawBatchChunkPayload chunk;
  chunk.segment_id = "edge-1-000000000000";
  for (int i = 0; i < 300; ++i)
    chunk.records.push_back({i, {std::sin(i * 0.7), std::cos(i * 1.3)}, 1.0});
  auto reply = a.mc.handle_line(protocol::encode(protocol::make_envelope("edge-1", 1, 0, chunk)), nullptr);
  ASSERT_TRUE(reply);

  const auto rt = a.post("/admin/retrain", R"({"edge_id":"edge-1"})", 200);
  EXPECT_EQ(rt["model_version"], 1);
  EXPECT_EQ(rt["records"], 300);
  const auto d = a.post("/admin/distribute", "{}", 200);
  ASSERT_EQ(d["deliveries"].size(), 1u);
  EXPECT_EQ(d["deliveries"][0]["status"], "pending");
  EXPECT_EQ(d["deliveries"][0]["model_version"], 1);
}
