#include "groundkit/cli.hpp"

int main(int argc, char** argv) {
    return groundkit::cli::main(argc, argv);
}
