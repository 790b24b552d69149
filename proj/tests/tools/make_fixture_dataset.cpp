// Writes a small synthetic PNG dataset in the expected directory layout,
// for driving the CLI end to end.
//
// usage: make_fixture_dataset <root> <count> <size> [seed]

#include <cstdio>
#include <cstdlib>
#include <filesystem>

#include "miniseg/image_io.hpp"
#include "testing/synthetic.hpp"

namespace fs = std::filesystem;
using namespace miniseg;

int main(int argc, char** argv) {
    if (argc < 4) {
        std::fprintf(stderr, "usage: %s <root> <count> <size> [seed]\n",
                     argv[0]);
        return 2;
    }
    const fs::path root = argv[1];
    const std::size_t count = std::strtoull(argv[2], nullptr, 10);
    const std::size_t size = std::strtoull(argv[3], nullptr, 10);
    const std::uint64_t seed = argc > 4 ? std::strtoull(argv[4], nullptr, 10) : 7;

    for (const char* split : {"train", "val"}) {
        fs::create_directories(root / "images" / split);
        fs::create_directories(root / "annotations" / split);
    }
    auto samples = testing::synthetic_dataset(count + 2, size, size, 8, seed);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const bool val = i >= count;
        const char* split = val ? "val" : "train";
        char stem[32];
        std::snprintf(stem, sizeof stem, "sample_%03zu", i);
        write_png((root / "images" / split / (std::string(stem) + ".png"))
                      .string(),
                  tensor_to_image(samples[i].image));
        write_png(
            (root / "annotations" / split / (std::string(stem) + ".png"))
                .string(),
            label_to_image(samples[i].label));
    }
    std::printf("wrote %zu train + 2 val samples under %s\n", count,
                root.string().c_str());
    return 0;
}
