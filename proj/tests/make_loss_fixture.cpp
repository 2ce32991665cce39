// Prints the reference loss curve checked by the trainer tests.
// Usage: make_loss_fixture > tests/data/loss_curve_200.csv

#include <charconv>
#include <cstdio>

#include "dmsva/synthgen.hpp"
#include "dmsva/trainer.hpp"

using namespace dmsva;

int main() {
    const synth::LatentWorld w = synth::build_world(synth::WorldSpec{});
    num::Rng rng(1);
    const auto data = synth::make_dataset(w, 4096, {0.5, 0.25, 0.25}, rng).pairs;
    train::TrainConfig cfg;
    cfg.steps = 200;
    const auto r = train::fit(train::init_model(cfg, 32, 32), data, cfg);
    std::printf("step,total\n");
    for (std::size_t s = 0; s < r.history.size(); s += (s < 10 ? 1 : 10)) {
        char buf[32];
        const auto res = std::to_chars(buf, buf + sizeof buf, r.history[s].total,
                                       std::chars_format::general, 17);
        std::printf("%zu,%.*s\n", s, static_cast<int>(res.ptr - buf), buf);
    }
    return 0;
}
