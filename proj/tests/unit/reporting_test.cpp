// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "paving/reporting.hpp"

namespace paving {
namespace {

using nlohmann::json;

json rate(double r, double lo, double hi) { return {{"rate", r}, {"lower", lo}, {"upper", hi}}; }

// Sentinel values that no arithmetic on real data would produce.
json main_row(const std::string& name) {
  return {{"name", name},
          {"edit", {{"refusal", rate(12.345, 1.111, 22.229)}}},
          {"benign", {{"preservation_pp", 97.125}}},
          {"harmful", {{"preservation_pp", 93.875}, {"refusal", rate(81.0625, 70.5, 88.25)}}},
          {"harmful_drift", -3.0625}};
}

TEST(Reporting, SentinelsPassThroughUnchanged) {
  const Rendered r = render({main_row("sentinel")}, main_table_spec());
  EXPECT_EQ(r.tsv,
            "Row\tEdit ref.\tEdit ref. [95% CI]\tP_B\tP_H\tHarmful ref.\tHarmful ref. [95% CI]\tDrift\n"
            "sentinel\t12.3\t[1.1, 22.2]\t97.1\t93.9\t81.1\t[70.5, 88.2]\t-3.1\n");
}

TEST(Reporting, MissingFieldNamesTheCell) {
  json row = main_row("broken");
  row["harmful"].erase("preservation_pp");
  try {
    render({main_row("ok"), row}, main_table_spec());
    FAIL() << "expected RenderError";
  } catch (const RenderError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("row 1"), std::string::npos) << what;
    EXPECT_NE(what.find("'P_H'"), std::string::npos) << what;
  }
}

TEST(Reporting, WrongTypeIsARenderError) {
  json row = main_row("typed");
  row["harmful_drift"] = true;
  EXPECT_THROW(render({row}, main_table_spec()), RenderError);
  EXPECT_THROW(render({json{{"name", 3.5}}}, TableSpec{"t", {{"Name", "/name"}}}), RenderError);
}

TEST(Reporting, EmptyTableIsTheHeaderOnly) {
  const Rendered r = render({}, gap_table_spec());
  EXPECT_EQ(r.tsv, "G_route_B\tG_route_H\tG_edit_E\tG_H\tKeep-side gain\n");
  EXPECT_EQ(r.text.substr(0, r.text.find('\n')), "Oracle gaps (pp)");
}

TEST(Reporting, NullAndFormats) {
  const TableSpec spec{"formats",
                       {{"Flag", "/f", CellFormat::flag},
                        {"Signed", "/s", CellFormat::signed_number, 2},
                        {"Spread", "/m", CellFormat::mean_std, 3},
                        {"Maybe", "/x", CellFormat::number}}};
  const json row = {{"f", true}, {"s", 0.5}, {"m", {{"mean", 0.25}, {"std", 0.125}, {"n", 4}}}, {"x", nullptr}};
  const json empty = {{"f", false}, {"s", -2.0}, {"m", {{"mean", 0.0}, {"std", 0.0}, {"n", 0}}}, {"x", "inf"}};
  const Rendered r = render({row, empty}, spec);
  EXPECT_EQ(r.tsv, "Flag\tSigned\tSpread\tMaybe\nyes\t+0.50\t0.250 ± 0.125\tn/a\nno\t-2.00\tn/a\tinf\n");
}

TEST(Reporting, AlignmentCountsCodePoints) {
  const TableSpec spec{"w", {{"A", "/a", CellFormat::mean_std, 1}, {"B", "/b"}}};
  const Rendered r = render({json{{"a", {{"mean", 1.0}, {"std", 2.0}, {"n", 1}}}, {"b", "x"}}}, spec);
  // "1.0 ± 2.0" is nine columns wide.
  EXPECT_EQ(r.text, "w\nA          B\n------------\n1.0 ± 2.0  x\n");
}

TEST(Reporting, RenderingIsByteStable) {
  const std::vector<json> rows{main_row("a"), main_row("b")};
  const Rendered x = render(rows, main_table_spec());
  const Rendered y = render(json::parse(json(rows).dump()).get<std::vector<json>>(), main_table_spec());
  EXPECT_EQ(x.text, y.text);
  EXPECT_EQ(x.tsv, y.tsv);
}

TEST(Reporting, NonFiniteNumbersBecomeStrings) {
  EXPECT_EQ(number_json(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(number_json(-std::numeric_limits<double>::infinity()), "-inf");
  EXPECT_EQ(number_json(std::nan("")), "nan");
  EXPECT_EQ(number_json(1.5), 1.5);
}

TEST(Reporting, RateJsonCarriesTheInterval) {
  RateCI r;
  r.successes = 443;
  r.n = 500;
  r.rate = 88.6;
  r.lower = 85.5;
  r.upper = 91.1;
  const json j = to_json(r);
  EXPECT_EQ(j["successes"], 443);
  EXPECT_EQ(j["lower"], 85.5);
  EXPECT_EQ(j["upper"], 91.1);
}

}  // namespace
}  // namespace paving
