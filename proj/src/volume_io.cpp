#include "voxsr/volume_io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace voxsr {

namespace {

using nlohmann::json;

json parse_json_file(const std::filesystem::path& path, const char* stage) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::storage, stage, "cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail(ErrorKind::invalid_input, stage, path.string() + ": " + e.what());
    }
    return j;
}

std::size_t dtype_size(const std::string& dtype) {
    if (dtype == "u8") return 1;
    if (dtype == "u16") return 2;
    if (dtype == "f32") return 4;
    fail(ErrorKind::invalid_input, "ingest", "unsupported dtype '" + dtype + "'");
}

std::vector<char> read_file_bytes(const std::filesystem::path& path, const char* stage) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::storage, stage, "cannot open " + path.string());
    in.seekg(0, std::ios::end);
    std::vector<char> bytes(static_cast<std::size_t>(in.tellg()));
    in.seekg(0);
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!in) fail(ErrorKind::storage, stage, "short read on " + path.string());
    return bytes;
}

// Reads one whitespace-delimited PGM header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
            continue;
        }
        if (!std::isspace(c)) {
            tok.push_back(static_cast<char>(c));
            while ((c = in.peek()) != EOF && !std::isspace(c)) {
                tok.push_back(static_cast<char>(in.get()));
            }
            return tok;
        }
    }
    return tok;
}

}  // namespace

Sidecar read_sidecar(const std::filesystem::path& path) {
    json j = parse_json_file(path, "ingest");
    Sidecar sc;
    try {
        auto dims = j.at("dims");
        auto sp = j.at("spacing_um");
        if (dims.size() != 3 || sp.size() != 3)
            fail(ErrorKind::invalid_input, "ingest", "dims and spacing_um must have 3 entries");
        sc.dims = {dims[0].get<std::size_t>(), dims[1].get<std::size_t>(),
                   dims[2].get<std::size_t>()};
        sc.spacing_um = {sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()};
        sc.dtype = j.at("dtype").get<std::string>();
    } catch (const json::exception& e) {
        fail(ErrorKind::invalid_input, "ingest", path.string() + ": " + e.what());
    }
    dtype_size(sc.dtype);
    if (sc.dims.total() == 0)
        fail(ErrorKind::invalid_input, "ingest", "sidecar dims are zero");
    return sc;
}

RawVolume read_raw_volume(const std::filesystem::path& raw_path,
                          const std::filesystem::path& sidecar_path) {
    Sidecar sc = read_sidecar(sidecar_path);
    std::vector<char> bytes = read_file_bytes(raw_path, "ingest");
    const std::size_t expect = sc.dims.total() * dtype_size(sc.dtype);
    if (bytes.size() != expect)
        fail(ErrorKind::invalid_input, "ingest",
             raw_path.string() + ": size " + std::to_string(bytes.size()) +
                 " does not match sidecar (" + std::to_string(expect) + " bytes)");

    RawVolume raw;
    raw.dims = sc.dims;
    raw.spacing = sc.spacing_um;
    raw.data.resize(sc.dims.total());
    if (sc.dtype == "u8") {
        for (std::size_t i = 0; i < raw.data.size(); ++i)
            raw.data[i] = static_cast<float>(static_cast<u8>(bytes[i]));
    } else if (sc.dtype == "u16") {
        for (std::size_t i = 0; i < raw.data.size(); ++i) {
            u16 v;
            std::memcpy(&v, bytes.data() + 2 * i, 2);
            raw.data[i] = static_cast<float>(v);
        }
    } else {
        std::memcpy(raw.data.data(), bytes.data(), bytes.size());
    }
    return raw;
}

void write_pgm16(const std::filesystem::path& path, const u16* data, std::size_t height,
                 std::size_t width) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::storage, "ingest", "cannot create " + path.string());
    out << "P5\n" << width << " " << height << "\n65535\n";
    std::vector<u8> row(width * 2);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            u16 v = data[y * width + x];
            row[2 * x] = static_cast<u8>(v >> 8);  // big-endian per the netpbm spec
            row[2 * x + 1] = static_cast<u8>(v & 0xff);
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) fail(ErrorKind::storage, "ingest", "short write on " + path.string());
}

std::vector<u16> read_pgm16(const std::filesystem::path& path, std::size_t& height,
                            std::size_t& width) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::storage, "ingest", "cannot open " + path.string());
    if (pgm_token(in) != "P5")
        fail(ErrorKind::invalid_input, "ingest", path.string() + ": not a P5 PGM");
    try {
        width = std::stoull(pgm_token(in));
        height = std::stoull(pgm_token(in));
        std::size_t maxval = std::stoull(pgm_token(in));
        if (maxval < 256 || maxval > 65535)
            fail(ErrorKind::invalid_input, "ingest",
                 path.string() + ": expected a 16-bit PGM (maxval in [256, 65535])");
    } catch (const std::logic_error&) {
        fail(ErrorKind::invalid_input, "ingest", path.string() + ": malformed PGM header");
    }
    // Header tokens end with exactly one whitespace byte before the samples;
    // pgm_token leaves that separator in the stream, so skip it here.
    in.get();
    std::vector<u8> bytes(height * width * 2);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!in) fail(ErrorKind::invalid_input, "ingest", path.string() + ": truncated pixel data");
    std::vector<u16> px(height * width);
    for (std::size_t i = 0; i < px.size(); ++i)
        px[i] = static_cast<u16>((bytes[2 * i] << 8) | bytes[2 * i + 1]);
    return px;
}

RawVolume read_slice_stack(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        fail(ErrorKind::invalid_input, "ingest", dir.string() + " is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
    }
    if (files.empty())
        fail(ErrorKind::invalid_input, "ingest", "no .pgm slices in " + dir.string());
    std::sort(files.begin(), files.end());

    RawVolume raw;
    raw.dims.z = files.size();
    for (std::size_t z = 0; z < files.size(); ++z) {
        std::size_t h = 0, w = 0;
        std::vector<u16> px = read_pgm16(files[z], h, w);
        if (z == 0) {
            raw.dims.y = h;
            raw.dims.x = w;
            raw.data.resize(raw.dims.total());
        } else if (h != raw.dims.y || w != raw.dims.x) {
            fail(ErrorKind::invalid_input, "ingest",
                 files[z].string() + ": slice dims differ from the first slice");
        }
        float* dst = raw.data.data() + z * raw.dims.y * raw.dims.x;
        for (std::size_t i = 0; i < px.size(); ++i) dst[i] = static_cast<float>(px[i]);
    }

    auto sidecar = dir / "sidecar.json";
    if (std::filesystem::exists(sidecar)) {
        json j = parse_json_file(sidecar, "ingest");
        if (j.contains("spacing_um")) {
            auto sp = j["spacing_um"];
            if (sp.size() != 3)
                fail(ErrorKind::invalid_input, "ingest", "spacing_um must have 3 entries");
            raw.spacing = {sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()};
        }
    }
    return raw;
}

}  // namespace voxsr
