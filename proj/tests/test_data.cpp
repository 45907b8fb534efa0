#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <type_traits>

#include "dada/container.hpp"
#include "dada/data.hpp"

namespace dada {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "dada_test_data";
    fs::create_directories(dir);
    return dir / name;
}

SynthConfig small_config(int per_domain = 200) { return SynthConfig::standard(3, per_domain, per_domain); }

TEST(Synth, DeterministicGivenSeed) {
    auto a = synth_generate(small_config());
    auto b = synth_generate(small_config());
    EXPECT_EQ(a, b);
    EXPECT_EQ(mixture_checksum(a), mixture_checksum(b));
}

TEST(Synth, PinnedChecksumsDifferAcrossSeeds) {
    auto c7 = small_config();
    auto c8 = small_config();
    c8.seed = 8;
    const auto k7 = mixture_checksum(synth_generate(c7));
    const auto k8 = mixture_checksum(synth_generate(c8));
    EXPECT_NE(k7, k8);
    // Regression values, computed once from the generator.
    EXPECT_EQ(k7, 4134611215u);
    EXPECT_EQ(k8, 2350311424u);
}

TEST(Synth, SplitsDomainsAndBalance) {
    auto m = synth_generate(small_config());
    ASSERT_EQ(m.source.size(), 200u);
    ASSERT_EQ(m.target.size(), 600u);
    EXPECT_EQ(m.domain_names.size(), 4u);
    std::vector<int> counts(5);
    for (const auto& e : m.source) {
        EXPECT_EQ(e.hidden_domain_id, 0);
        ++counts[static_cast<std::size_t>(e.class_label)];
    }
    for (int c : counts) EXPECT_NEAR(c, 40, 1);
    std::vector<std::vector<int>> per_domain(4, std::vector<int>(5));
    for (const auto& e : m.target) {
        ASSERT_GE(e.hidden_domain_id, 1);
        ASSERT_LE(e.hidden_domain_id, 3);
        ++per_domain[static_cast<std::size_t>(e.hidden_domain_id)][static_cast<std::size_t>(e.class_label)];
    }
    for (int d = 1; d <= 3; ++d)
        for (int c : per_domain[static_cast<std::size_t>(d)]) EXPECT_NEAR(c, 40, 1);
}

TEST(Synth, ImagesAreFiniteAndInUnitRange) {
    auto m = synth_generate(SynthConfig::standard(5, 30, 30));
    for (const auto* split : {&m.source, &m.target})
        for (const auto& e : *split) {
            EXPECT_EQ(e.image.size(), 3 * 16 * 16);
            EXPECT_TRUE(e.image.allFinite());
            EXPECT_GE(e.image.minCoeff(), 0.0f);
            EXPECT_LE(e.image.maxCoeff(), 1.0f);
            EXPECT_LT(e.class_label, m.num_classes);
        }
}

TEST(Synth, ClassesRenderDistinctGlyphs) {
    DomainTransform clean;
    std::vector<RowVector<float>> means;
    for (int k = 0; k < max_glyph_classes; ++k) {
        Rng rng(3);
        RowVector<float> sum = RowVector<float>::Zero(3 * 16 * 16);
        for (int i = 0; i < 20; ++i) sum += render_glyph(k, clean, {3, 16, 16}, rng);
        means.push_back(sum / 20);
    }
    for (int a = 0; a < max_glyph_classes; ++a)
        for (int b = a + 1; b < max_glyph_classes; ++b)
            EXPECT_GT((means[static_cast<std::size_t>(a)] - means[static_cast<std::size_t>(b)]).norm(), 1.0)
                << a << " vs " << b;
}

TEST(Synth, RejectsInvalidConfigurations) {
    auto one_domain = small_config();
    one_domain.domains.resize(1);
    EXPECT_THROW(synth_generate(one_domain), ConfigError);

    auto one_class = small_config();
    one_class.num_classes = 1;
    EXPECT_THROW(synth_generate(one_class), ConfigError);

    auto too_few = small_config();
    too_few.domains[2].count = 4;
    EXPECT_THROW(synth_generate(too_few), ConfigError);

    auto identical = small_config();
    identical.domains[2].transform = identical.domains[1].transform;
    EXPECT_THROW(synth_generate(identical), ConfigError);
    identical.allow_identical_domains = true;
    EXPECT_NO_THROW(synth_generate(identical));
}

TEST(Container, MixtureRoundTripsExactly) {
    auto m = synth_generate(SynthConfig::standard(1, 5, 5));
    ASSERT_EQ(m.source.size() + m.target.size(), 10u);
    const auto path = scratch("ten.dada");
    save_mixture(m, path);
    EXPECT_EQ(load_mixture(path), m);
}

TEST(Container, VersionMismatchIsDistinct) {
    const auto path = scratch("v0.dada");
    Container c{"dataset", {{"format_version", "0"}}, {}};
    write_container(path, c, "0");
    EXPECT_THROW(read_container(path, "dataset"), FormatVersionError);
    EXPECT_THROW(load_mixture(path), FormatVersionError);
}

TEST(Container, TruncationAndCorruptionAreDistinct) {
    auto m = synth_generate(SynthConfig::standard(1, 5, 5));
    const auto path = scratch("cut.dada");
    save_mixture(m, path);
    const auto full = fs::file_size(path);

    auto copy_prefix = [&](const fs::path& dst, std::uintmax_t bytes) {
        fs::copy_file(path, dst, fs::copy_options::overwrite_existing);
        fs::resize_file(dst, bytes);
    };
    const auto half = scratch("half.dada");
    copy_prefix(half, full / 2);
    EXPECT_THROW(load_mixture(half), ChecksumError);

    const auto stub = scratch("stub.dada");
    copy_prefix(stub, 40);
    EXPECT_THROW(load_mixture(stub), TruncatedFileError);

    const auto flipped = scratch("flip.dada");
    fs::copy_file(path, flipped, fs::copy_options::overwrite_existing);
    {
        std::fstream f(flipped, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(static_cast<std::streamoff>(full - 100));
        f.put('\x7f');
    }
    EXPECT_THROW(load_mixture(flipped), ChecksumError);

    const auto missing = scratch("absent.dada");
    fs::remove(missing);
    EXPECT_THROW(load_mixture(missing), DataError);
}

TEST(Container, KindMismatchRejected) {
    const auto path = scratch("kind.dada");
    write_container(path, Container{"checkpoint", nlohmann::json::object(), {}});
    EXPECT_THROW(read_container(path, "dataset"), DataError);
}

DomainMixture sized_mixture(int n_source, int n_target) {
    auto c = SynthConfig::standard(1, n_source, n_target);
    return synth_generate(c);
}

TEST(Batches, RemainderDropped) {
    auto m = sized_mixture(100, 150);
    BatchStream s(m, 32, 1);
    EXPECT_EQ(s.steps_per_epoch(), 3);
    auto [src, tgt] = s.next();
    EXPECT_EQ(src.images.rows(), 32);
    EXPECT_EQ(src.labels.size(), 32u);
    EXPECT_EQ(tgt.images.rows(), 32);
}

TEST(Batches, SameSeedSameOrder) {
    auto m = sized_mixture(100, 150);
    BatchStream a(m, 16, 5), b(m, 16, 5), c(m, 16, 6);
    EXPECT_EQ(a.epoch_plan(0), b.epoch_plan(0));
    EXPECT_NE(a.epoch_plan(0), c.epoch_plan(0));
    for (int i = 0; i < 10; ++i) {
        auto [sa, ta] = a.next();
        auto [sb, tb] = b.next();
        EXPECT_EQ(sa.images, sb.images);
        EXPECT_EQ(sa.labels, sb.labels);
        EXPECT_EQ(ta.images, tb.images);
    }
}

TEST(Batches, EpochIsPermutationSubsetAndReshuffles) {
    auto m = sized_mixture(100, 150);
    BatchStream s(m, 32, 9);
    for (int epoch = 0; epoch < 2; ++epoch) {
        auto [src, tgt] = s.epoch_plan(epoch);
        for (const auto* plan : {&src, &tgt}) {
            std::set<int> seen;
            for (const auto& batch : *plan)
                for (int i : batch) {
                    EXPECT_TRUE(seen.insert(i).second) << "duplicate index " << i;
                    EXPECT_GE(i, 0);
                }
            EXPECT_EQ(seen.size(), 96u);
        }
        for (const auto& batch : tgt)
            for (int i : batch) EXPECT_LT(i, 150);
    }
    EXPECT_NE(s.epoch_plan(0), s.epoch_plan(1));
}

TEST(Batches, StreamFollowsPlanAcrossEpochsAndSeek) {
    auto m = sized_mixture(40, 60);
    BatchStream s(m, 8, 3);
    std::vector<Matrix<float>> seen;
    for (int i = 0; i < 12; ++i) seen.push_back(s.next().first.images);
    EXPECT_EQ(s.epoch(), 2);
    EXPECT_EQ(s.position(), 2);
    const auto plan = s.epoch_plan(1);
    EXPECT_EQ(seen[6], stack_images(m.source, plan.first[1]));
    BatchStream r(m, 8, 3);
    r.seek(1, 1);
    EXPECT_EQ(r.next().first.images, seen[6]);
}

TEST(Batches, Preconditions) {
    auto m = sized_mixture(40, 60);
    EXPECT_THROW(BatchStream(m, 41, 1), ConfigError);
    EXPECT_THROW(BatchStream(m, 0, 1), ConfigError);
    DomainMixture empty = m;
    empty.target.clear();
    EXPECT_THROW(BatchStream(empty, 8, 1), DataError);
}

TEST(Batches, TargetRecordIsImageOnly) {
    auto m = sized_mixture(40, 60);
    BatchStream s(m, 8, 3);
    auto [images] = s.next().second;  // exactly one field
    static_assert(std::is_same_v<decltype(images), Matrix<float>>);
    EXPECT_EQ(images.rows(), 8);
}

}  // namespace
}  // namespace dada
