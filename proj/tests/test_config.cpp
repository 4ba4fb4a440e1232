#include <doctest.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tenvoo/checkpoint.hpp"
#include "tenvoo/config.hpp"
#include "tenvoo/ddpm.hpp"

using namespace tenvoo;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
    const fs::path p = fs::temp_directory_path() / "tenvoo_test_config";
    fs::create_directories(p);
    return p;
}

bool throws_with(const std::string& text, const char* frag) {
    try {
        (void)parse_config_text(text);
        return false;
    } catch (const std::invalid_argument& e) {
        return std::string(e.what()).find(frag) != std::string::npos;
    }
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), {});
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("empty document yields the defaults with a stable canonical form") {
    const ExperimentConfig c = parse_config_text("{}");
    CHECK(c.model.widths == (std::vector<std::int64_t>{8, 16, 64}));
    CHECK(c.diffusion.timesteps == 50);
    CHECK(c.training.max_steps == 200);
    CHECK(c.data.tags.count("pretrain") == 1);
    CHECK(c.data.tags.count("shiftA") == 1);
    CHECK(config_to_json(c) == config_to_json(default_config()));
    CHECK(config_hash(c) == config_hash(default_config()));

    const ExperimentConfig c2 = parse_config_text(R"({"training":{"seed":99}})");
    CHECK(config_hash(c2) != config_hash(c));
    const ExperimentConfig c3 = parse_config_text(config_to_json(c2));
    CHECK(config_to_json(c3) == config_to_json(c2));
}

TEST_CASE("unknown keys are rejected with their full path") {
    CHECK(throws_with(R"({"bogus":1})", "$.bogus"));
    CHECK(throws_with(R"({"model":{"depth":3}})", "model.depth"));
    CHECK(throws_with(R"({"data":{"tags":{"pretrain":{"speed":1}}}})", "data.tags.pretrain.speed"));
}

TEST_CASE("out-of-range and ill-typed settings are rejected with context") {
    CHECK(throws_with(R"({"diffusion":{"timesteps":0}})", "timesteps"));
    CHECK(throws_with(R"({"diffusion":{"beta_start":0.5,"beta_end":0.1}})", "beta_end"));
    CHECK(throws_with(R"({"adapter":{"kind":"quanta_linear"}})", "adapter.kind"));
    CHECK(throws_with(R"({"adapter":{"kind":"qlora"}})", "adapter.kind"));
    CHECK(throws_with(R"({"training":{"optimizer":"rmsprop"}})", "adam"));
    CHECK(throws_with(R"({"training":{"lr":0}})", "training.lr"));
    CHECK(throws_with(R"({"model":{"widths":[8,16]}})", "widths"));
    CHECK(throws_with(R"({"model":{"gn_groups":3}})", "gn_groups"));
    CHECK(throws_with(R"({"data":{"finetune_tag":"nope"}})", "finetune_tag"));
    CHECK(throws_with(R"({"data":{"split_fraction":1.0}})", "split_fraction"));
    CHECK(throws_with("not json", "not valid JSON"));
}

TEST_CASE("the output dir comes from the file unless the environment overrides") {
    const fs::path p = scratch_dir() / "cfg.json";
    std::ofstream(p) << R"({"output":{"dir":"from_file"}})";
    unsetenv("TENVOO_OUT");
    CHECK(load_config(p.string()).out_dir == "from_file");
    setenv("TENVOO_OUT", "/tmp/override", 1);
    CHECK(load_config(p.string()).out_dir == "/tmp/override");
    unsetenv("TENVOO_OUT");
}

TEST_CASE("checkpoints restore adapted models, optimizer state and training") {
    const fs::path dir = scratch_dir();
    const ExperimentConfig cfg = parse_config_text(
        R"({"model":{"widths":[4,8,8],"time_embed_dim":8},
            "diffusion":{"timesteps":6},
            "adapter":{"kind":"tenvoo_l","rank":2,"scaling":1.5}})");
    UNetLite model(cfg.model, 31);
    CheckpointMeta meta;
    meta.model_seed = 31;
    meta.has_adapters = true;
    meta.adapter = cfg.adapter;
    meta.adapter_seed = 77;
    model.attach_adapters(cfg.adapter.kind, cfg.adapter.rank, cfg.adapter.joint_mode, 77,
                          cfg.adapter.scaling);
    const DiffusionSchedule s = make_schedule(6, 1e-4, 0.02);
    AdamOptimizer opt(1e-3);
    Rng rng(5), vr(9);
    std::vector<Tensor> batch;
    batch.push_back(Tensor::random_uniform({8, 8, 8}, vr, -1.0, 1.0));
    batch.push_back(Tensor::random_uniform({8, 8, 8}, vr, -1.0, 1.0));
    for (int i = 0; i < 3; ++i) {
        meta.step++;
        (void)train_step(model, batch, s, rng, opt);
    }

    const fs::path ckpt = dir / "m.ckpt";
    save_checkpoint(ckpt.string(), model, cfg, meta, &opt);
    Checkpoint ck = load_checkpoint(ckpt.string());
    CHECK(ck.meta.step == 3);
    CHECK(ck.meta.has_adapters);
    CHECK(ck.meta.adapter_seed == 77);
    CHECK(ck.config_hash == config_hash(cfg));
    REQUIRE(ck.adam != nullptr);
    CHECK(ck.adam->t() == opt.t());
    REQUIRE(ck.adam->slots().size() == opt.slots().size());
    for (const auto& [name, slot] : opt.slots()) {
        const AdamSlot& ls = ck.adam->slots().at(name);
        CHECK(ls.m.data == slot.m.data);
        CHECK(ls.v.data == slot.v.data);
    }

    Tensor x = Tensor::random_normal({1, 1, 8, 8, 8}, vr);
    CHECK(model.forward_eval(x, {2}, s.T).data == ck.model->forward_eval(x, {2}, s.T).data);

    SUBCASE("continued training matches an uninterrupted run bit-exactly") {
        Rng r_a(123), r_b(123);
        const TrainStepResult a = train_step(model, batch, s, r_a, opt);
        const TrainStepResult b = train_step(*ck.model, batch, s, r_b, *ck.adam);
        CHECK(a.loss == b.loss);
        CHECK(a.grad_norm == b.grad_norm);
        CHECK(model.forward_eval(x, {2}, s.T).data == ck.model->forward_eval(x, {2}, s.T).data);
    }

    SUBCASE("inspection names the step and adapter") {
        const std::string info = inspect_checkpoint(ckpt.string());
        CHECK(info.find("tenvoo_l rank 2") != std::string::npos);
        CHECK(info.find("step: 3") != std::string::npos);
    }

    SUBCASE("corrupted files are rejected") {
        std::string bytes = slurp(ckpt);
        bytes[0] = 'X';
        const fs::path bad = dir / "bad.ckpt";
        std::ofstream(bad, std::ios::binary).write(bytes.data(),
                                                   static_cast<std::streamsize>(bytes.size()));
        CHECK_THROWS_AS((void)load_checkpoint(bad.string()), std::runtime_error);

        const std::string good = slurp(ckpt);
        const fs::path trunc = dir / "tr.ckpt";
        std::ofstream(trunc, std::ios::binary)
            .write(good.data(), static_cast<std::streamsize>(good.size() / 2));
        CHECK_THROWS_AS((void)load_checkpoint(trunc.string()), std::runtime_error);
    }
}

TEST_CASE("plain checkpoints omit adapters and optimizer state") {
    const fs::path ckpt = scratch_dir() / "base.ckpt";
    const ExperimentConfig cfg =
        parse_config_text(R"({"model":{"widths":[4,4,8],"time_embed_dim":8}})");
    UNetLite model(cfg.model, 3);
    CheckpointMeta meta;
    meta.model_seed = 3;
    save_checkpoint(ckpt.string(), model, cfg, meta, nullptr);
    Checkpoint ck = load_checkpoint(ckpt.string());
    CHECK(ck.adam == nullptr);
    CHECK_FALSE(ck.meta.has_adapters);
    Rng vr(4);
    Tensor x = Tensor::random_normal({1, 1, 8, 8, 8}, vr);
    CHECK(model.forward_eval(x, {0}, 50).data == ck.model->forward_eval(x, {0}, 50).data);

    const DiffusionSchedule s = make_schedule(4, 1e-4, 0.02);
    std::vector<Tensor> batch{Tensor::random_uniform({8, 8, 8}, vr, -1.0, 1.0)};
    Rng r_a(7), r_b(7);
    CHECK(train_step_sgd(model, batch, s, r_a, 1e-3).loss ==
          train_step_sgd(*ck.model, batch, s, r_b, 1e-3).loss);
}

}  // TEST_SUITE("config")
