#include <vector>

#include "arc/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return arc::cli::run(args);
}
