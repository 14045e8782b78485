// SIGKILL the real binary at arbitrary points and check the run directory.

#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <future>

#include "doctest.h"
#include "mock_server.hpp"
#include "run_helpers.hpp"
#include "panoweave/png_io.hpp"

using namespace panoweave;
using namespace std::chrono_literals;
using pwtest::TempDir;
namespace fs = std::filesystem;

namespace {

void quiet()
{
    const int null = open("/dev/null", O_WRONLY);
    dup2(null, STDOUT_FILENO);
    dup2(null, STDERR_FILENO);
}

pid_t spawn(const std::vector<std::string>& args)
{
    const pid_t pid = fork();
    REQUIRE(pid >= 0);
    if (pid == 0) {
        quiet();
        std::vector<char*> argv;
        for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
        argv.push_back(nullptr);
        unsetenv(kGeneratorUrlEnv);
        unsetenv(kFaultPointEnv);
        execv(PANOWEAVE_BIN, argv.data());
        _exit(127);
    }
    return pid;
}

// 0 = exited normally with status 0, 9 = SIGKILLed, anything else fails.
int reap(pid_t pid)
{
    int status = 0;
    waitpid(pid, &status, 0);
    if (WIFSIGNALED(status)) return WTERMSIG(status);
    return WIFEXITED(status) && WEXITSTATUS(status) == 0 ? 0 : -1;
}

int free_port()
{
    const int fd = socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
    socklen_t len = sizeof addr;
    getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    close(fd);
    return ntohs(addr.sin_port);
}

// Loadable, internally consistent, and equal to a replay of its manifest.
void check_consistent(const fs::path& dir)
{
    const Run run = Run::open(dir);
    run.manifest().check();
    for (const auto& entry : fs::recursive_directory_iterator(dir)) CHECK(entry.path().extension() != ".tmp");
    CHECK_FALSE(fs::exists(dir / "COMMIT"));
    for (const auto& s : run.manifest().steps)
        if (s.ok()) CHECK(fs::exists(dir / "steps" / (std::to_string(s.index) + ".png")));
    ReferenceGenerator gen;
    CHECK(replay(dir, gen) == run.state());
}

}  // namespace

TEST_CASE("kill -9 of the CLI during auto leaves a consistent run")
{
    TempDir tmp;
    const fs::path input = tmp / "view.png";
    save_png(input, pwtest::input_view(128));
    REQUIRE(reap(spawn({"panoweave", "init", "--input", input.string(), "--pano-width", "512", "--out",
                        (tmp / "run").string()})) == 0);

    int kills = 0;
    for (int delay_ms : {40, 90, 160, 250, 400, 70, 130, 600}) {
        const pid_t pid = spawn({"panoweave", "auto", (tmp / "run").string(), "--steps", "all"});
        std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
        kill(pid, SIGKILL);
        const int how = reap(pid);
        REQUIRE((how == 0 || how == SIGKILL));
        kills += how == SIGKILL;
        check_consistent(tmp / "run");
    }
    CHECK(kills > 0);
    REQUIRE(reap(spawn({"panoweave", "auto", (tmp / "run").string(), "--steps", "all"})) == 0);
    const Run done = Run::open(tmp / "run");
    CHECK(done.complete());
    CHECK(done.manifest().ok_steps() <= 26);
    check_consistent(tmp / "run");

    // Same steps as an uninterrupted run.
    REQUIRE(reap(spawn({"panoweave", "init", "--input", input.string(), "--pano-width", "512", "--out",
                        (tmp / "clean").string()})) == 0);
    REQUIRE(reap(spawn({"panoweave", "auto", (tmp / "clean").string(), "--steps", "all"})) == 0);
    CHECK(read_file(tmp / "clean" / "state.png") == read_file(tmp / "run" / "state.png"));
}

TEST_CASE("kill -9 of the server during a step leaves a consistent run")
{
    TempDir tmp;
    const int port = free_port();
    auto start = [&] {
        const pid_t pid = spawn({"panoweave", "serve", "--port", std::to_string(port), "--data", tmp.path().string()});
        httplib::Client cli("127.0.0.1", port);
        for (int i = 0; i < 200; ++i) {
            if (auto r = cli.Get("/runs"); r && r->status == 200) return pid;
            std::this_thread::sleep_for(25ms);
        }
        FAIL("server did not come up");
        return pid;
    };

    pid_t pid = start();
    httplib::Client cli("127.0.0.1", port);
    cli.set_read_timeout(60, 0);
    httplib::MultipartFormDataItems items{
        {"config", nlohmann::json{{"pano_width", 512}}.dump(), "", "application/json"},
        {"image", [] { auto b = encode_png(pwtest::input_view(128)); return std::string(b.begin(), b.end()); }(),
         "v.png", "image/png"}};
    const auto created = cli.Post("/runs", items);
    REQUIRE(created);
    REQUIRE(created->status == 201);
    const std::string id = nlohmann::json::parse(created->body).at("run_id");

    for (int delay_ms : {60, 150, 300}) {
        auto stream = std::async(std::launch::async, [&] {
            httplib::Client c("127.0.0.1", port);
            c.set_read_timeout(60, 0);
            return c.Post("/runs/" + id + "/auto", R"({"steps": "all"})", "application/json");
        });
        std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
        kill(pid, SIGKILL);
        CHECK(reap(pid) == SIGKILL);
        stream.wait();
        check_consistent(tmp / id);
        pid = start();
    }

    // The restarted server serves the recovered run and can finish it.
    const auto rest = cli.Post("/runs/" + id + "/auto", R"({"steps": "all"})", "application/json");
    REQUIRE(rest);
    CHECK(rest->status == 200);
    CHECK(nlohmann::json::parse(cli.Get("/runs/" + id)->body).at("status") == "complete");
    kill(pid, SIGTERM);
    CHECK(reap(pid) == 0);
    check_consistent(tmp / id);
}

TEST_CASE("CLI exit codes")
{
    TempDir tmp;
    const fs::path input = tmp / "view.png";
    save_png(input, pwtest::input_view());
    CHECK(reap(spawn({"panoweave", "init", "--input", input.string(), "--pano-width", "255", "--out",
                      (tmp / "odd").string()})) == -1);
    auto code = [](pid_t pid) {
        int status = 0;
        waitpid(pid, &status, 0);
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    };
    CHECK(code(spawn({"panoweave", "init", "--input", input.string(), "--pano-width", "255", "--out",
                      (tmp / "odd").string()})) == 2);
    CHECK(code(spawn({"panoweave", "bogus"})) == 2);
    REQUIRE(code(spawn({"panoweave", "init", "--input", input.string(), "--pano-width", "256", "--out",
                        (tmp / "r").string()})) == 0);
    CHECK(code(spawn({"panoweave", "export", (tmp / "r").string(), "--out", (tmp / "o.png").string()})) == 4);
    CHECK(code(spawn({"panoweave", "step", (tmp / "r").string(), "--yaw", "0", "--pitch", "0"})) == 2);
    CHECK(code(spawn({"panoweave", "auto", (tmp / "r").string(), "--steps", "three"})) == 2);
    CHECK(code(spawn({"panoweave", "step", (tmp / "r").string(), "--prompt", "dusk", "--seed", "3"})) == 0);

    // Generator endpoint from the environment: nothing listens there.
    const pid_t pid = fork();
    if (pid == 0) {
        quiet();
        setenv(kGeneratorUrlEnv, ("http://127.0.0.1:" + std::to_string(free_port()) + "/x").c_str(), 1);
        execl(PANOWEAVE_BIN, "panoweave", "step", (tmp / "r").c_str(), nullptr);
        _exit(127);
    }
    CHECK(code(pid) == 3);
    const Run run = Run::open(tmp / "r");
    CHECK(run.manifest().steps.size() == 2);
    CHECK_FALSE(run.manifest().steps.back().ok());

    CHECK(code(spawn({"panoweave", "auto", (tmp / "r").string(), "--steps", "all"})) == 0);
    CHECK(code(spawn({"panoweave", "export", (tmp / "r").string(), "--out", (tmp / "o.png").string()})) == 0);
    CHECK(fs::exists(tmp / "o_U.png"));
}
