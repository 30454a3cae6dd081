#include <gtest/gtest.h>

#include <filesystem>

#include "tgpt/checkpoint.hpp"
#include "tgpt/config.hpp"

using namespace tgpt;

TEST(Config, DefaultsValidateAndRoundTrip) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.k_ctg, 32u);
    EXPECT_EQ(c.k_con, 64u);
    EXPECT_EQ(c.batch_size, 8u);
    EXPECT_EQ(c.iterations, 2000u);
    EXPECT_EQ(c.weight_decay, 1e-4);
    const auto back = TrainConfig::parse(c.serialize());
    EXPECT_EQ(back.serialize(), c.serialize());
}

TEST(Config, ParseSetsFieldsAndSkipsComments) {
    const auto c = TrainConfig::parse("# toy\nlr = 0.001\n\nloss_terms=none\nshare_bonder=true\n");
    EXPECT_EQ(c.lr, 0.001);
    EXPECT_EQ(c.loss_terms, "none");
    EXPECT_TRUE(c.share_bonder);
}

TEST(Config, UnknownKeyRejected) {
    EXPECT_THROW(TrainConfig::parse("learning_rate=0.1\n"), std::invalid_argument);
    TrainConfig c;
    EXPECT_THROW(c.set("itertions", "5"), std::invalid_argument);
}

TEST(Config, InvalidValuesRejected) {
    for (const char* text : {"loss_terms=half\n", "supervision_space=pixel\n", "bonder_depth=9\n", "lr=0\n",
                             "lora_policy=all\n", "iterations=abc\n", "d=62\n"}) {
        EXPECT_ANY_THROW(TrainConfig::parse(text).validate()) << text;
    }
}

TEST(Config, LossTermToggles) {
    EXPECT_TRUE(uses_category(LossTerms::both));
    EXPECT_TRUE(uses_content(LossTerms::content_only));
    EXPECT_FALSE(uses_category(LossTerms::content_only));
    EXPECT_FALSE(uses_content(LossTerms::none));
    EXPECT_EQ(parse_loss_terms("category_only"), LossTerms::category_only);
}

TEST(Config, SplitList) {
    EXPECT_EQ(split_list(" a, b ,c"), (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_TRUE(split_list("").empty());
}

TEST(Checkpoint, EncodeDecodeRoundTrip) {
    Checkpoint ck{"a=1\nb=two\n",
                  {{"w", Tensor<float>::from({2, 3}, {1, 2, 3, 4, 5, 6})}, {"b", Tensor<float>::from({1}, {-0.5F})}}};
    const auto bytes = encode_checkpoint(ck);
    EXPECT_EQ(bytes.substr(0, 8), "TGPTCKPT");
    const auto back = decode_checkpoint(bytes);
    EXPECT_EQ(back.config, ck.config);
    ASSERT_EQ(back.records.size(), 2u);
    EXPECT_EQ(back.records[0].first, "w");
    EXPECT_EQ(back.records[0].second.shape(), (Shape{2, 3}));
    EXPECT_EQ(back.records[0].second.values(), ck.records[0].second.values());
    EXPECT_EQ(back.config_map().at("b"), "two");
    EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, CorruptInputsRejected) {
    const auto bytes = encode_checkpoint({"x=1\n", {{"w", Tensor<float>::from({2}, {1, 2})}}});
    EXPECT_ANY_THROW(decode_checkpoint("NOTACKPT" + bytes.substr(8)));
    EXPECT_ANY_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 1)));
    EXPECT_ANY_THROW(decode_checkpoint(bytes + "x"));
    auto bad_version = bytes;
    bad_version[8] = 9;
    EXPECT_ANY_THROW(decode_checkpoint(bad_version));
}

TEST(Checkpoint, FileRoundTripLeavesNoTemporary) {
    const auto dir = std::filesystem::temp_directory_path() / "tgpt_ckpt_test";
    std::filesystem::remove_all(dir);
    const Checkpoint ck{"k=v\n", {{"t", Tensor<float>::from({1}, {3})}}};
    save_checkpoint(dir / "m.ckpt", ck);
    EXPECT_TRUE(std::filesystem::exists(dir / "m.ckpt"));
    EXPECT_FALSE(std::filesystem::exists(dir / "m.ckpt.tmp"));
    EXPECT_EQ(load_checkpoint(dir / "m.ckpt").records[0].second.item(), 3.0F);
    EXPECT_ANY_THROW(load_checkpoint(dir / "missing.ckpt"));
    std::filesystem::remove_all(dir);
}
