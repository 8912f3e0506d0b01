#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "repq/config.hpp"
#include "repq/errors.hpp"

using namespace repq;

TEST_CASE("parse -> serialize -> parse is the identity") {
    const std::string text = R"(
# toy run
[network]
widths = 8,16
blocks = 1,2
classes = 5

[block]
variant = s3

[train]
lr0 = 0.05
epochs = 3
seed = 42

[quant]
method = mse

[data]
source = synth
synth_n = 100
)";
    const RunConfig a = parse_config(text);
    const RunConfig b = parse_config(serialize_config(a));
    CHECK(a == b);
    CHECK(a.variant == Variant::s3);
    CHECK(a.loss == LossMode::plain_l2); // derived from the variant
    CHECK(a.widths == std::vector<int>{8, 16});
    CHECK(a.method == CalibMethod::mse);
    CHECK(a.seed == 42);
}

TEST_CASE("s0 defaults to the custom loss; explicit loss wins") {
    RunConfig a = parse_config("[block]\nvariant = s0\n");
    CHECK(a.loss == LossMode::custom_l2);
    RunConfig b = parse_config("[block]\nvariant = s0\n[train]\nloss = custom_nodenom\n");
    CHECK(b.loss == LossMode::custom_l2_no_denom);
    RunConfig c = parse_config("[block]\nvariant = flags\nm1 = true\nm4 = true\n");
    CHECK(c.loss == LossMode::plain_l2);
    CHECK(c.m4);
}

TEST_CASE("unknown keys and sections are all reported at once") {
    try {
        parse_config("[network]\nwidth = 4\n[block]\nvariant = s9\n[bogus]\nx = 1\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("unknown key 'width'") != std::string::npos);
        CHECK(msg.find("expected s0..s4 or flags") != std::string::npos);
        CHECK(msg.find("unknown section [bogus]") != std::string::npos);
    }
}

TEST_CASE("value and semantic validation") {
    CHECK_THROWS_AS(parse_config("[train]\nepochs = -1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[train]\nlr0 = abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[network]\nwidths = 4,8\nblocks = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[data]\nsource = cifar10\n"), ConfigError); // dir required
    CHECK_THROWS_AS(parse_config("[quant]\nbits = 90\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("no equals sign here\n"), ConfigError);
}

TEST_CASE("network_spec reflects the variant and flags") {
    const RunConfig cfg = parse_config("[block]\nvariant = flags\nm2 = true\nm4 = true\n");
    const NetworkSpec spec = cfg.network_spec();
    CHECK(spec.variant == Variant::custom);
    CHECK(spec.m2);
    CHECK_FALSE(spec.m3);
    CHECK(spec.m4);
    const BlockConfig bc = spec.block_config(8, 8, 1, 1);
    CHECK_FALSE(bc.bn_on_identity);
    CHECK(bc.bn_on_1x1);
    CHECK(bc.post_bn);
}

TEST_CASE("comments and blank lines are ignored") {
    const RunConfig cfg = parse_config("# header\n\n[train]\nepochs = 7 # trailing\n");
    CHECK(cfg.epochs == 7);
}
