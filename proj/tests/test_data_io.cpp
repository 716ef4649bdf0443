#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <vector>

#include <pcmsr/compress.hpp>
#include <pcmsr/data_io.hpp>
#include <pcmsr/nn.hpp>
#include <pcmsr/repair.hpp>
#include <pcmsr/serialize.hpp>

using namespace pcmsr;
namespace fs = std::filesystem;
using io::IdxError;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("pcmsr_test_" + std::to_string(Catch::getSeed()) + "_" +
                                            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    fs::path operator/(const std::string& name) const { return path / name; }
};

void write(const fs::path& p, const std::vector<unsigned char>& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

IdxError::Reason idx_failure(const fs::path& img, const fs::path& lab) {
    try {
        (void)io::load_idx(img, lab);
    } catch (const IdxError& e) {
        return e.reason();
    }
    FAIL("load_idx accepted a malformed file");
    return IdxError::Reason::missing_file;
}

std::string missing_path(const std::function<void()>& f) {
    try {
        f();
    } catch (const FormatError& e) {
        return e.path();
    }
    return "<no error>";
}

quant::QuantizationScheme scheme() {
    return quant::QuantizationScheme::make({0.0312, {1, 2, 3, 5, 8}}, {0.0457, {1, 2, 4, 6}}, 0.01, 0.005);
}

} // namespace

TEST_CASE("IDX: hand-built 2x2 fixture") {
    TempDir dir;
    // images: magic 0x00000803, n = 1, 2 x 2, pixels 0 85 170 255
    write(dir / "img", {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 85, 170, 255});
    write(dir / "lab", {0, 0, 8, 1, 0, 0, 0, 1, 7});
    const auto d = io::load_idx(dir / "img", dir / "lab");
    CHECK(d.images.shape() == std::vector<std::size_t>{1, 2, 2});
    CHECK(d.images.values() == std::vector<double>{0.0, 85.0 / 255.0, 170.0 / 255.0, 1.0});
    CHECK(d.labels == std::vector<int>{7});
}

TEST_CASE("IDX: distinct rejections") {
    TempDir dir;
    const auto [img, lab] = io::encode_idx(3, 2, 2, std::vector<unsigned char>(12, 9), {1, 2, 3});
    write(dir / "img", img);
    write(dir / "lab", lab);
    REQUIRE(io::load_idx(dir / "img", dir / "lab").size() == 3);

    CHECK(idx_failure(dir / "lab", dir / "lab") == IdxError::Reason::wrong_magic);
    CHECK(idx_failure(dir / "img", dir / "img") == IdxError::Reason::wrong_magic);
    CHECK(idx_failure(dir / "nope", dir / "lab") == IdxError::Reason::missing_file);

    write(dir / "short", std::vector<unsigned char>(img.begin(), img.end() - 1));
    CHECK(idx_failure(dir / "short", dir / "lab") == IdxError::Reason::truncated);
    write(dir / "stub", std::vector<unsigned char>(img.begin(), img.begin() + 6));
    CHECK(idx_failure(dir / "stub", dir / "lab") == IdxError::Reason::truncated);

    const auto [img2, lab2] = io::encode_idx(2, 2, 2, std::vector<unsigned char>(8, 1), {1, 2});
    write(dir / "lab2", lab2);
    CHECK(idx_failure(dir / "img", dir / "lab2") == IdxError::Reason::count_mismatch);
}

TEST_CASE("IDX: multi-byte dimensions are big-endian") {
    TempDir dir;
    std::vector<unsigned char> pixels(300 * 1 * 2);
    for (std::size_t k = 0; k < pixels.size(); ++k) pixels[k] = static_cast<unsigned char>(k % 256);
    std::vector<unsigned char> labels(300);
    for (std::size_t k = 0; k < 300; ++k) labels[k] = static_cast<unsigned char>(k % 10);
    const auto [img, lab] = io::encode_idx(300, 1, 2, pixels, labels);
    // 300 = 0x012c: the count bytes must read 00 00 01 2c
    CHECK(std::vector<unsigned char>(img.begin() + 4, img.begin() + 8) == std::vector<unsigned char>{0, 0, 1, 0x2c});
    write(dir / "img", img);
    write(dir / "lab", lab);
    const auto d = io::load_idx(dir / "img", dir / "lab");
    CHECK(d.size() == 300);
    CHECK(d.images.shape() == std::vector<std::size_t>{300, 1, 2});
    CHECK(d.images[599] == static_cast<double>(599 % 256) / 255.0);
}

TEST_CASE("IDX: official MNIST test file when present") {
    const fs::path img = "data/t10k-images-idx3-ubyte", lab = "data/t10k-labels-idx1-ubyte";
    if (!fs::exists(img) || !fs::exists(lab)) {
        SUCCEED("MNIST files not present");
        return;
    }
    const auto d = io::load_idx(img, lab);
    CHECK(d.images.shape() == std::vector<std::size_t>{10000, 28, 28});
}

TEST_CASE("synthetic digits: determinism, class layout, range") {
    CHECK(io::synthetic_digits(4, 50).images == io::synthetic_digits(4, 50).images);
    CHECK_FALSE(io::synthetic_digits(4, 50).images == io::synthetic_digits(5, 50).images);
    const auto d = io::synthetic_digits(1, 10);
    CHECK(d.labels == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    CHECK(d.images.shape() == std::vector<std::size_t>{10, 8, 8});
    for (double v : io::synthetic_digits(2, 200).images.values()) CHECK((v >= 0.0 && v <= 1.0));
    CHECK_THROWS_AS(io::synthetic_digits(1, 0), InvalidArgument);
}

TEST_CASE("synthetic digits: a linear classifier learns them") {
    nn::TrainConfig cfg;
    cfg.lambda_small = cfg.lambda_large = 0.0;
    cfg.epochs = 30;
    cfg.lr = 0.2;
    const auto net = nn::train(nn::make_dense_network({64, 10}, 1), io::synthetic_digits(1, 2000), cfg);
    CHECK(nn::evaluate(net, io::synthetic_digits(2, 500)).accuracy > 0.7);
}

TEST_CASE("serializer: record round trip with random contents") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        io::Record r("random");
        std::vector<double> f(static_cast<std::size_t>(trial * 7));
        for (double& v : f) v = standard_normal(rng) * 1e3;
        if (!f.empty()) f[0] = -0.0;
        std::vector<std::int64_t> i(static_cast<std::size_t>(trial));
        for (auto& v : i) v = static_cast<std::int64_t>(rng());
        std::string s;
        for (int k = 0; k < trial; ++k) s.push_back(static_cast<char>(rng() & 0xff));
        r.put("f", f);
        r.put("i", i);
        r.put("s", s);
        const auto back = io::Record::decode(r.encode());
        CHECK(back.kind() == "random");
        CHECK(back.f64("f").size() == f.size());
        for (std::size_t k = 0; k < f.size(); ++k)
            CHECK(std::bit_cast<std::uint64_t>(back.f64("f")[k]) == std::bit_cast<std::uint64_t>(f[k]));
        CHECK(back.i64("i") == i);
        CHECK(back.bytes("s") == s);
    }
}

TEST_CASE("serializer: network round trip gives identical forward outputs") {
    TempDir dir;
    const auto net = nn::make_network({}, 9);
    io::save_network(dir / "n.psrb", net);
    const auto back = io::load_network(dir / "n.psrb");
    CHECK(back == net);
    const auto x = io::synthetic_digits(1, 20).flat();
    CHECK(nn::forward(back, x) == nn::forward(net, x));
}

TEST_CASE("serializer: missing field, wrong kind, version and truncation") {
    io::Record partial("network");
    partial.put_int("rng_seed", 1);
    partial.put_int("layer_count", 1);
    const auto path = missing_path([&] { (void)io::decode_network(partial.encode()); });
    CHECK(path.rfind("layer.0.", 0) == 0);

    io::Record r("other");
    CHECK(missing_path([&] { (void)io::decode_network(r.encode()); }) == "kind");

    auto bytes = io::encode_network(nn::make_network({}, 1));
    auto v2 = bytes;
    v2[4] = 2;
    CHECK(missing_path([&] { (void)io::decode_network(v2); }) == "version");
    bytes.resize(bytes.size() - 3);
    CHECK(missing_path([&] { (void)io::decode_network(bytes); }) != "<no error>");

    io::Record typed("x");
    typed.put("a", std::vector<double>{1.0});
    CHECK(missing_path([&] { (void)typed.i64("a"); }) == "a");
}

TEST_CASE("serializer: scheme JSON round trip and stable digest") {
    TempDir dir;
    auto s = scheme();
    s.error = 1.25e-5;
    io::save_scheme(dir / "s.json", s);
    const auto back = io::load_scheme(dir / "s.json");
    CHECK(back == s);
    CHECK(compress::scheme_digest(back) == compress::scheme_digest(s));

    quant::DecomposedLayer d{IntMatrix(2, 3), IntMatrix(2, 3)};
    d.m_pos.data = {1, 0, 8, 2, 0, 5};
    d.m_neg.data = {0, 6, 1, 0, 4, 0};
    CHECK(compress::encode(d, back).first.header == compress::encode(d, s).first.header);
    CHECK(compress::decode(compress::encode(d, s).first, back) == d.m_pos);

    auto j = io::scheme_json(s);
    j["pos"]["base"] = 0.05;
    CHECK(missing_path([&] { (void)io::scheme_from(j); }).rfind("sq[", 0) == 0);
    j = io::scheme_json(s);
    j.erase("epsilon_read");
    CHECK(missing_path([&] { (void)io::scheme_from(j); }) == "epsilon_read");
    j = io::scheme_json(s);
    j["version"] = 9;
    CHECK(missing_path([&] { (void)io::scheme_from(j); }) == "version");
    j = io::scheme_json(s);
    j["neg"]["multiples"] = "1,2";
    CHECK(missing_path([&] { (void)io::scheme_from(j); }) == "neg.multiples");
}

TEST_CASE("serializer: decomposition and analog network round trips") {
    const auto s = scheme();
    const auto net = nn::make_dense_network({6, 5, 4}, 2);
    const auto layers = xbar::decompose_network(net, s);
    const auto dec = io::decode_decomposition(io::encode_decomposition(layers, io::hex(compress::scheme_digest(s))));
    CHECK(dec.layers == layers);
    CHECK(dec.scheme_digest == io::hex(compress::scheme_digest(s)));

    Rng rng(4);
    auto anet = xbar::program_network(net, layers, s, device::DeviceConfig{}, 0.0, rng);
    anet.output_scales = {1.1, 0.97};
    CHECK(io::decode_analog(io::encode_analog(anet)) == anet);
}

TEST_CASE("serializer: timeline JSON round trip") {
    repair::TimelineLog log;
    log.config = {2, 300.0, 1, 7};
    log.series = {"self_repair", "self_repair_adjusted"};
    log.rows = {{0, 0, 0.0, "self_repair", 0.9, 0.89, 0.0, false, 0, 0},
                {0, 1, 300.0, "self_repair", 0.8, 0.1 + 0.2, 812.5, true, 14, 3}};
    repair::RepairEvent ev;
    ev.step = 1;
    ev.t = 300.0;
    ev.layers_repaired = {0, 2};
    ev.weights_touched = 7;
    ev.pulses = 14;
    ev.irreversible_count = 3;
    ev.pre_probe_error = 812.5;
    ev.post_probe_error = 40.25;
    ev.accuracy_pre = 0.8;
    ev.accuracy_post = 0.85;
    log.events = {ev};
    log.step_variance = repair::step_variances(log);
    const auto back = io::timeline_from(io::timeline_json(log));
    CHECK(back.rows == log.rows);
    CHECK(back.series == log.series);
    REQUIRE(back.events.size() == 1);
    CHECK(back.events[0].layers_repaired == ev.layers_repaired);
    CHECK(back.events[0].post_probe_error == ev.post_probe_error);
    CHECK(back.step_variance == log.step_variance);
    CHECK(io::timeline_csv(log).rfind("seed,step,t,variant,accuracy,f1,probe_error,repaired,pulses,irreversible\n", 0) == 0);
}
