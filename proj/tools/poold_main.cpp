#include <string>
#include <vector>

#include <poold/cli.hpp>

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return poold::cli::run(std::move(args));
}
