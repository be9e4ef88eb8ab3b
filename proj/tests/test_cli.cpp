#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "mfc/cli.hpp"
#include "mfc/hash.hpp"

using namespace mfc;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json tiny_overrides(uint64_t corpus_seed = 3) {
    return json{
        {"corpus",
         {{"seed", corpus_seed},
          {"base_speakers", 4},
          {"target_speakers", 2},
          {"utts_per_base", 5},
          {"test_utts", 4},
          {"target_ref_utts", 2},
          {"t_min", 40},
          {"t_max", 48}}},
        {"aux", {{"n_base_speakers", 4}}},
        {"model", {{"style_hidden", 4}, {"enc_width", 8}, {"enc_blocks", 1}, {"dec_hidden", 8}}},
        {"pretrain",
         {{"asr_epochs", 2},
          {"cls_epochs", 2},
          {"ser_epochs", 2},
          {"cm_epochs", 1},
          {"ind_steps", 40},
          {"batch", 8}}},
        {"base", {{"epochs", 2}, {"batch_size", 8}, {"lr_init", 1e-3}}},
        {"adapt", {{"epochs", 4}, {"simu_batch", 2}, {"simu_batch_large", 2}, {"lr_init", 1e-3}}},
        {"ablate", {{"seeds", {1}}, {"settings", {1}}, {"targets", {4}}}}};
}

struct CliLab {
    fs::path root = fs::temp_directory_path() / "mfc_cli_lab";
    fs::path cfg_file = root / "config.json";
    std::string out = (root / "exp").string();

    CliLab() {
        fs::remove_all(root);
        fs::create_directories(root);
        std::ofstream f(cfg_file);
        f << tiny_overrides().dump(2);
    }

    int run(std::vector<std::string> args, bool with_config = true) {
        std::vector<std::string> full = {"--out", out};
        if (with_config) {
            full.push_back("--config");
            full.push_back(cfg_file.string());
        }
        for (auto& a : args) full.push_back(a);
        return cli::run(full);
    }
};

CliLab& lab() {
    static CliLab instance;
    return instance;
}

}  // namespace

TEST_CASE("cli: prerequisites are enforced with staleness exit codes") {
    CliLab& L = lab();
    CHECK(L.run({"pretrain"}) == 3);    // corpus missing
    CHECK(L.run({"train-base"}) == 3);  // corpus missing
    CHECK(L.run({"eval"}) == 3);        // nothing adapted
}

TEST_CASE("cli: full tiny pipeline runs and is idempotent") {
    CliLab& L = lab();
    REQUIRE(L.run({"gen-corpus"}) == 0);
    REQUIRE(L.run({"gen-corpus"}) == 0);  // rerun with same config: no-op
    CHECK(fs::exists(fs::path(L.out) / "corpus" / "manifest.json"));

    REQUIRE(L.run({"pretrain"}) == 0);
    CHECK(fs::exists(fs::path(L.out) / "aux" / "pretrain_summary.json"));
    REQUIRE(L.run({"train-base"}) == 0);
    CHECK(fs::exists(fs::path(L.out) / "base" / "base.ckpt"));

    REQUIRE(L.run({"adapt", "--target", "4", "--utts", "1", "--seed", "1"}) == 0);
    const fs::path ckpt = fs::path(L.out) / "adapt" / "t4_u1_s1_full" / "adapted.ckpt";
    CHECK(fs::exists(ckpt));

    REQUIRE(L.run({"eval", "--target", "4", "--utts", "1", "--seed", "1", "--csv"}) == 0);
    const fs::path report = fs::path(L.out) / "eval" / "report_full_t4_u1_s1.json";
    REQUIRE(fs::exists(report));
    const std::string h1 = sha256_file(report);

    // rerun the stage and the report byte-identically reproduces
    REQUIRE(L.run({"eval", "--target", "4", "--utts", "1", "--seed", "1", "--csv"}) == 0);
    CHECK(sha256_file(report) == h1);

    SUBCASE("adaptation is idempotent and refuses bad settings") {
        const std::string ck1 = sha256_file(ckpt);
        REQUIRE(L.run({"adapt", "--target", "4", "--utts", "1", "--seed", "1"}) == 0);
        CHECK(sha256_file(ckpt) == ck1);
        CHECK(L.run({"adapt", "--target", "4", "--utts", "3"}) == 2);   // not a valid set size
        CHECK(L.run({"adapt", "--target", "0", "--utts", "1"}) == 4);   // not a target speaker
    }

    SUBCASE("speaker table command emits the comparison") {
        REQUIRE(L.run({"eval", "--speaker-table"}) == 0);
        CHECK(fs::exists(fs::path(L.out) / "eval" / "speaker_table.json"));
    }

    SUBCASE("changed corpus config refuses to overwrite without force") {
        fs::path cfg2 = lab().root / "config2.json";
        {
            std::ofstream f(cfg2);
            f << tiny_overrides(99).dump(2);
        }
        std::vector<std::string> args = {"--out", lab().out, "--config", cfg2.string(), "gen-corpus"};
        CHECK(cli::run(args) == 2);
        args = {"--out", lab().out, "--config", cfg2.string(), "--force", "gen-corpus"};
        CHECK(cli::run(args) == 0);
        // restore the original corpus for later test cases
        args = {"--out", lab().out, "--config", lab().cfg_file.string(), "--force", "gen-corpus"};
        CHECK(cli::run(args) == 0);
        args = {"--out", lab().out, "--config", lab().cfg_file.string(), "--force", "pretrain"};
        CHECK(cli::run(args) == 0);
        args = {"--out", lab().out, "--config", lab().cfg_file.string(), "--force", "train-base"};
        CHECK(cli::run(args) == 0);
    }
}

TEST_CASE("cli: flag overrides beat the config file") {
    CliLab& L = lab();
    fs::path out2 = lab().root / "exp2";
    std::vector<std::string> args = {"--out", out2.string(), "--config", L.cfg_file.string(),
                                     "gen-corpus", "--seed", "17"};
    REQUIRE(cli::run(args) == 0);
    std::ifstream f(out2 / "corpus" / "manifest.json");
    json manifest;
    f >> manifest;
    CHECK(manifest["config"]["seed"].get<uint64_t>() == 17);
}

TEST_CASE("cli: parse errors exit with the config-error code") {
    CHECK(cli::run({"--out"}) == 2);
    CHECK(cli::run({"definitely-not-a-command"}) == 2);
}
