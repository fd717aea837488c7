#include <gtest/gtest.h>

#include <httplib.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "gigaslide/cli.hpp"
#include "support.hpp"

using namespace gigaslide;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

class Cli : public ::testing::Test {
 protected:
  Outcome run(std::vector<std::string> args) {
    args.insert(args.begin(), {"--data", dir.path().string()});
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
  }

  std::string write_png(const std::string& name, const Raster& img) {
    const auto p = dir / name;
    codec::write_file(p, codec::encode_png(img));
    return p.string();
  }

  std::string write_text(const std::string& name, const std::string& text) {
    const auto p = dir / name;
    std::ofstream(p) << text;
    return p.string();
  }

  // Blob slide ingested plus users ann/bob/exp in batch b.
  void blob_setup() {
    ASSERT_EQ(run({"ingest", write_png("blob.png", testing_support::stained_blob(1024, 1024, 512, 512, 300))}).code, 0);
    for (const auto* u : {"ann", "bob"}) ASSERT_EQ(run({"user", "add", u}).code, 0);
    ASSERT_EQ(run({"user", "add", "exp", "--role", "expert"}).code, 0);
    ASSERT_EQ(run({"batch", "create", "b", "--slides", "blob"}).code, 0);
    ASSERT_EQ(run({"batch", "assign", "b", "--users", "ann,bob,exp"}).code, 0);
  }

  std::string constant_file(double prob) {
    store::Store db((dir / "gigaslide.db").string());
    Config cfg;
    cfg.data_dir = dir.path();
    const auto grid = pipeline::patch_grid_for(db, cfg, "blob");
    std::vector<heatmap::PatchPrediction> rows;
    for (auto i : grid.kept) rows.push_back({"blob", grid.positions[i].x, grid.positions[i].y, prob});
    return write_text("const.csv", heatmap::format_predictions_csv(rows));
  }

  testing_support::TempDir dir{"cli"};
};

double number_after(const std::string& text, const std::string& key) {
  const auto at = text.find(key);
  if (at == std::string::npos) return -1;
  return std::stod(text.substr(at + key.size()));
}

}  // namespace

TEST_F(Cli, IngestWritesElevenLevels) {
  std::mt19937_64 rng(1);
  const auto r = run({"ingest", write_png("img.png", testing_support::random_raster(rng, 1000, 800)), "--name", "s1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("11 levels"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "slides" / "s1.dzi"));
  for (int level = 0; level <= 10; ++level)
    EXPECT_TRUE(fs::is_directory(dir / "slides" / "s1_files" / std::to_string(level))) << level;
  EXPECT_FALSE(fs::exists(dir / "slides" / "s1_files" / "11"));
}

TEST_F(Cli, IngestRejectsDuplicatesAndUpsampling) {
  std::mt19937_64 rng(2);
  const auto img = write_png("img.png", testing_support::random_raster(rng, 300, 200));
  ASSERT_EQ(run({"ingest", img, "--name", "a"}).code, 0);
  const auto dup = run({"ingest", img, "--name", "a"});
  EXPECT_NE(dup.code, 0);
  EXPECT_NE(dup.err.find("conflict"), std::string::npos);
  EXPECT_EQ(run({"ingest", img, "--name", "a", "--force"}).code, 0);
  EXPECT_NE(run({"ingest", img, "--name", "up", "--scan-mag", "10", "--target-mag", "20"}).code, 0);
  const auto missing = run({"ingest", (dir / "nope.png").string()});
  EXPECT_NE(missing.code, 0);
  EXPECT_NE(missing.err.find("io"), std::string::npos);
}

TEST_F(Cli, ForcedReingestIsByteIdentical) {
  std::mt19937_64 rng(3);
  const auto img = write_png("img.png", testing_support::random_raster(rng, 600, 500));
  ASSERT_EQ(run({"ingest", img, "--name", "a"}).code, 0);
  auto snapshot = [&] {
    std::map<std::string, std::vector<std::uint8_t>> files;
    for (const auto& e : fs::recursive_directory_iterator(dir / "slides"))
      if (e.is_regular_file()) files[fs::relative(e.path(), dir.path()).string()] = codec::read_file(e.path());
    return files;
  };
  const auto before = snapshot();
  ASSERT_EQ(run({"ingest", img, "--name", "a", "--force"}).code, 0);
  EXPECT_EQ(snapshot(), before);
}

TEST_F(Cli, BatchAdministration) {
  {
    store::Store db((dir / "gigaslide.db").string());
    for (int i = 0; i < 106; ++i) {
      store::Slide s;
      s.name = "wsi" + std::to_string(i);
      s.width = s.height = 100;
      db.add_slide(s);
    }
  }
  std::string slides, users;
  for (int i = 0; i < 106; ++i) slides += (i ? "," : "") + std::string("wsi") + std::to_string(i);
  for (int i = 0; i < 10; ++i) {
    ASSERT_EQ(run({"user", "add", "p" + std::to_string(i), "--token", "t" + std::to_string(i)}).code, 0);
    users += (i ? "," : "") + std::string("p") + std::to_string(i);
  }
  ASSERT_EQ(run({"batch", "create", "dense", "--slides", slides, "--dense"}).code, 0);
  ASSERT_EQ(run({"batch", "assign", "dense", "--users", users}).code, 0);
  const auto list = run({"batch", "list"});
  EXPECT_NE(list.out.find("dense\tslides=106\tdense=true\tusers=p0,p1,"), std::string::npos) << list.out;

  // every assignee can read the manifest
  store::Store db((dir / "gigaslide.db").string());
  Config cfg;
  cfg.data_dir = dir.path();
  api::Server server(db, cfg);
  const int port = server.bind_any();
  std::thread t([&] { server.listen(); });
  server.wait_until_ready();
  for (int i = 0; i < 10; ++i) {
    httplib::Client c("127.0.0.1", port);
    c.set_default_headers({{"X-Api-Token", "t" + std::to_string(i)}});
    auto r = c.Get("/api/batches/dense/manifest");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(nlohmann::json::parse(r->body)["slides"].size(), 106u);
  }
  server.stop();
  t.join();

  EXPECT_NE(run({"batch", "assign", "dense", "--users", "ghost"}).code, 0);
  EXPECT_NE(run({"batch", "create", "x", "--slides", "nowhere"}).code, 0);
}

TEST_F(Cli, PredictFromProbabilityFiles) {
  blob_setup();
  auto high = run({"predict", "--slide", "blob", "--predictions", constant_file(0.9)});
  ASSERT_EQ(high.code, 0) << high.err;
  EXPECT_EQ(number_after(high.out, "regions: "), 1);
  EXPECT_EQ(number_after(high.out, "proposals created: "), 3);  // one per user view

  auto low = run({"predict-ingest", "blob", constant_file(0.1)});
  ASSERT_EQ(low.code, 0) << low.err;
  EXPECT_EQ(number_after(low.out, "proposals created: "), 0);

  const auto off = write_text("off.csv", "slide,x,y,prob\nblob,0,0,0.5\nblob,7,0,0.5\nblob,0,9,0.5\n");
  auto bad = run({"predict", "--slide", "blob", "--predictions", off});
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.err.find("validation"), std::string::npos);
  EXPECT_NE(bad.err.find(": 2 3"), std::string::npos) << bad.err;
}

TEST_F(Cli, PredictNeedsExactlyOneSource) {
  blob_setup();
  EXPECT_EQ(run({"predict", "--slide", "blob"}).code, 2);
  const auto f = constant_file(0.9);
  EXPECT_EQ(run({"predict", "--slide", "blob", "--predictions", f, "--model", f}).code, 2);
  EXPECT_NE(run({"predict", "--slide", "nope", "--predictions", f}).code, 0);
}

TEST_F(Cli, TrainOnTwoClusterManifests) {
  std::vector<double> teacher, student;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto data = fixtures::two_clusters(seed);
    std::ostringstream lab, unl, held;
    lab.precision(17);
    unl.precision(17);
    held.precision(17);
    lab << "label,f0,f1\n";
    for (std::size_t i = 0; i < data.labeled.features.size(); ++i)
      lab << data.labeled.labels[i] << ',' << data.labeled.features[i][0] << ',' << data.labeled.features[i][1] << '\n';
    unl << "f0,f1\n";
    for (const auto& v : data.unlabeled) unl << v[0] << ',' << v[1] << '\n';
    held << "label,f0,f1\n";
    for (std::size_t i = 0; i < data.heldout.size(); ++i)
      held << data.heldout_labels[i] << ',' << data.heldout[i][0] << ',' << data.heldout[i][1] << '\n';
    const auto model = (dir / "model.json").string();
    const auto r = run({"train", "--labeled", write_text("l.csv", lab.str()), "--unlabeled", write_text("u.csv", unl.str()),
                        "--heldout", write_text("h.csv", held.str()), "--out", model, "--seed", std::to_string(seed)});
    ASSERT_EQ(r.code, 0) << r.err;
    teacher.push_back(number_after(r.out, "teacher accuracy: "));
    student.push_back(number_after(r.out, "student accuracy: "));
    const auto doc = nlohmann::json::parse(cli::read_text(model));
    EXPECT_EQ(semisup::model_from_json(doc).feature_extractor, "precomputed");
    // same numbers as the library-level benchmark
    const auto lib = fixtures::run_teacher_student(seed);
    EXPECT_NEAR(teacher.back(), lib.teacher, 1e-4);
    EXPECT_NEAR(student.back(), lib.student, 1e-4);
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return (v[4] + v[5]) / 2;
  };
  EXPECT_GE(median(student), median(teacher));
  EXPECT_EQ(run({"train", "--labeled", "x", "--unlabeled", "y", "--out", "z"}).code, 2);  // --seed is required
}

TEST_F(Cli, ReportOnEmptyStore) {
  const auto r = run({"report", "timing"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "annotator,mean_minutes,wsi_count\n");
  const auto file = (dir / "t.json").string();
  EXPECT_EQ(run({"report", "timing", "--format", "json", "--out", file}).code, 0);
  EXPECT_TRUE(nlohmann::json::parse(cli::read_text(file))["rows"].empty());
  EXPECT_NE(run({"report", "nonsense"}).code, 0);
}

TEST_F(Cli, ServeFailsOnOccupiedPort) {
  httplib::Server blocker;
  const int port = blocker.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  const auto r = run({"serve", "--host", "127.0.0.1", "--port", std::to_string(port)});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("cannot bind"), std::string::npos);
}

TEST_F(Cli, UsersAndEnvironment) {
  const auto added = run({"user", "add", "carol", "--role", "expert", "--token", "secret"});
  ASSERT_EQ(added.code, 0);
  EXPECT_EQ(added.out, "carol\texpert\tsecret\n");
  EXPECT_NE(run({"user", "add", "carol"}).code, 0);
  EXPECT_EQ(run({"user", "add", "dave", "--role", "boss"}).code, 2);
  EXPECT_EQ(run({"user", "list"}).out, "carol\texpert\n");

  // the flag wins over the environment
  testing_support::TempDir other("cli-env");
  ::setenv("GIGASLIDE_DATA", other.path().c_str(), 1);
  EXPECT_EQ(run({"user", "list"}).out, "carol\texpert\n");
  std::ostringstream out, err;
  EXPECT_EQ(cli::run({"user", "list"}, out, err), 0);
  EXPECT_EQ(out.str(), "");
  EXPECT_TRUE(fs::exists(other / "gigaslide.db"));
  ::unsetenv("GIGASLIDE_DATA");
}
