#include "mfc/cli.hpp"

int main(int argc, char** argv) {
    return mfc::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
