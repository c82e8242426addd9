#include <string>
#include <vector>

#include "voxsr/cli.hpp"

int main(int argc, char** argv) {
    return voxsr::run_command(std::vector<std::string>(argv + 1, argv + argc));
}
