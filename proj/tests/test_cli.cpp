#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "sspl/config.hpp"
#include "sspl/errors.hpp"

using namespace sspl;
namespace fs = std::filesystem;

#ifndef SSPL_TOOL_PATH
#define SSPL_TOOL_PATH "./sspl"
#endif

namespace {

int run_tool(const std::string& args) {
    const std::string cmd = std::string(SSPL_TOOL_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string temp_path(const std::string& name) {
    return (fs::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("config: parsing, comments, and overrides") {
    const std::string path = temp_path("sspl_cfg.txt");
    {
        std::ofstream f(path);
        f << "# a comment\n";
        f << "epochs = 12\n";
        f << "scaling = minmax  # trailing comment\n";
        f << "lr_heads=2e-3\n";
    }
    auto cfg = KeyValueConfig::load_file(path);
    CHECK(cfg.get_int("epochs", 0) == 12);
    CHECK(cfg.get_str("scaling", "") == "minmax");
    CHECK(cfg.get_double("lr_heads", 0) == doctest::Approx(2e-3));
    CHECK(cfg.get_int("missing", 7) == 7);

    cfg.set_assignment("epochs=3");
    CHECK(cfg.get_int("epochs", 0) == 3);
    CHECK_THROWS_AS(cfg.set_assignment("notanassignment"), UsageError);
    CHECK_THROWS_AS((void)cfg.get_int("scaling", 0), UsageError);
    fs::remove(path);
}

TEST_CASE("cli: exit codes for usage, data, and success paths") {
    // unknown subcommand -> usage error
    CHECK(run_tool("frobnicate") == 1);

    // eval on a missing dataset file -> data error
    CHECK(run_tool("eval --set eval_dataset=/nonexistent.bin") == 2);

    const std::string data = temp_path("sspl_cli_data.bin");
    const std::string ckpt = temp_path("sspl_cli_model.ckpt");

    // generate a small dataset
    REQUIRE(run_tool("gen-data --set out=" + data + " --set count=12 --seed 9") == 0);

    // corrupting the magic makes every consumer fail with a data error
    {
        std::fstream f(data, std::ios::in | std::ios::out | std::ios::binary);
        f.write("JUNK", 4);
    }
    CHECK(run_tool("eval --set eval_dataset=" + data) == 2);
    REQUIRE(run_tool("gen-data --set out=" + data + " --set count=12 --seed 9") == 0);

    // a one-epoch training run and evaluation complete cleanly
    REQUIRE(run_tool("train --set dataset=" + data + " --set checkpoint=" + ckpt +
                     " --set epochs=1 --set batch_size=4 --set use_pcm=false --seed 9") == 0);
    CHECK(run_tool("eval --set checkpoint=" + ckpt + " --set eval_dataset=" + data) == 0);

    //evaluating a checkpoint against mismatched dims is rejected
    const std::string small = temp_path("sspl_cli_small.bin");
    REQUIRE(run_tool("gen-data --set out=" + small +
                     " --set count=4 --set image_size=32 --seed 9") == 0);
    CHECK(run_tool("eval --set checkpoint=" + ckpt + " --set eval_dataset=" + small) == 2);

    fs::remove(data);
    fs::remove(ckpt);
    fs::remove(small);
}
