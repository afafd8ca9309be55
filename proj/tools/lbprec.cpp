#include <string>
#include <vector>

#include "lbp/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return lbp::cli::run(args);
}
