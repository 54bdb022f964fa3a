#include "doctest_torch.hpp"

#include "dagan/discriminator.hpp"
#include "dagan/errors.hpp"
#include "support.hpp"

using namespace dagan;
using namespace dagan::discriminator;

TEST_SUITE("discriminator") {

TEST_CASE("four 3x3 stride-2 convolutions with the declared widths") {
    Discriminator d;
    CHECK(d->conv_layer_count() == 4);
    std::vector<int64_t> outs;
    int64_t in = 1;
    for (const auto& kv : d->named_modules("", false)) {
        if (auto* conv = kv.value()->as<torch::nn::Conv2d>()) {
            CHECK(conv->options.in_channels() == in);
            CHECK(conv->options.kernel_size()->at(0) == 3);
            CHECK(conv->options.stride()->at(0) == 2);
            in = conv->options.out_channels();
            outs.push_back(in);
        }
    }
    CHECK(outs == std::vector<int64_t>{32, 64, 128, 256});
    CHECK(Discriminator(DiscriminatorOptions{true})->conv_layer_count() == 4);
}

TEST_CASE("zero head scores exactly one half") {
    Discriminator d;
    {
        torch::NoGradGuard ng;
        d->head()->weight.zero_();
        d->head()->bias.zero_();
    }
    const auto out = d->forward(torch::rand({3, 1, 32, 32}));
    CHECK(out.sizes() == torch::IntArrayRef({3}));
    CHECK(torch::equal(out, torch::full({3}, 0.5)));
}

TEST_CASE("outputs stay strictly inside (0, 1)") {
    torch::manual_seed(1);
    Discriminator d;
    for (double scale : {1.0, 1e3, 1e6}) {
        const auto out = d->forward(torch::randn({4, 1, 16, 16}) * scale);
        CHECK(out.min().item<float>() > 0.0f);
        CHECK(out.max().item<float>() < 1.0f);
    }
    {
        torch::NoGradGuard ng;
        d->head()->bias.fill_(1e4);
    }
    const auto saturated = d->forward(torch::rand({2, 1, 16, 16}));
    CHECK(saturated.max().item<float>() < 1.0f);
}

TEST_CASE("conditional discriminator takes both images") {
    torch::manual_seed(2);
    Discriminator d(DiscriminatorOptions{true});
    const auto map = torch::rand({2, 1, 32, 32});
    const auto out = d->forward(map, torch::rand({2, 3, 32, 32}), torch::rand({2, 3, 32, 32}));
    CHECK(out.sizes() == torch::IntArrayRef({2}));
    CHECK_THROWS_AS(d->forward(map), ShapeError);
}

TEST_CASE("undersized or malformed maps are rejected") {
    Discriminator d;
    CHECK_THROWS_AS(d->forward(torch::rand({1, 1, 8, 8})), ShapeError);
    CHECK_THROWS_AS(d->forward(torch::rand({1, 2, 32, 32})), ShapeError);
}

TEST_CASE("input and parameter gradients match central differences") {
    torch::manual_seed(3);
    Discriminator d;
    d->to(torch::kDouble);
    auto map = torch::rand({1, 1, 16, 16}, torch::kDouble).requires_grad_(true);
    auto g = testing::gradient_check([&] { return d->forward(map).sum(); }, {map}, 1e-6, 256);
    CHECK_MESSAGE(g.relative_error < 1e-4, "err " << g.relative_error);
    CHECK(g.auto_norm > 0.0);
    g = testing::gradient_check([&] { return d->forward(map).sum(); }, d->parameters(), 1e-6, 16);
    CHECK_MESSAGE(g.relative_error < 1e-4, "err " << g.relative_error);
}

}  // TEST_SUITE
