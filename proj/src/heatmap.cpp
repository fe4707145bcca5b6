#include "corrnet/heatmap.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace corrnet {

namespace fs = std::filesystem;

std::uint8_t gate_to_pixel(double v) {
  const double p = std::round((v + 0.5) * 255.0);
  return std::uint8_t(std::clamp(p, 0.0, 255.0));
}

void write_pgm(const fs::path& path, const std::vector<std::uint8_t>& pixels, Index height, Index width) {
  if (Index(pixels.size()) != height * width) throw ShapeError("write_pgm: pixel count does not match size");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P5\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), std::streamsize(pixels.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::vector<std::uint8_t> read_pgm(const fs::path& path, Index* height, Index* width) {
  std::ifstream is(path, std::ios::binary);
  std::string magic;
  Index w = 0, h = 0;
  int maxval = 0;
  if (!(is >> magic >> w >> h >> maxval) || magic != "P5" || maxval != 255) {
    throw std::runtime_error(path.string() + " is not an 8-bit P5 image");
  }
  is.get();
  std::vector<std::uint8_t> pixels(std::size_t(w * h));
  if (!is.read(reinterpret_cast<char*>(pixels.data()), std::streamsize(pixels.size()))) {
    throw std::runtime_error("truncated image " + path.string());
  }
  if (height) *height = h;
  if (width) *width = w;
  return pixels;
}

std::vector<std::uint8_t> map_pixels(const Tensor<float>& maps, Index t, Index slot) {
  if (maps.rank() != 4) throw ShapeError("map_pixels: expected [T, K, H, W]");
  const Index H = maps.dim(2), W = maps.dim(3);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(H * W));
  const float* src = maps.data() + (t * maps.dim(1) + slot) * H * W;
  for (Index p = 0; p < H * W; ++p) out[std::size_t(p)] = gate_to_pixel(src[p]);
  return out;
}

std::vector<std::uint8_t> channel_mean_pixels(const Tensor<float>& maps, Index t) {
  if (maps.rank() != 4) throw ShapeError("channel_mean_pixels: expected [T, C, H, W]");
  const Index C = maps.dim(1), HW = maps.dim(2) * maps.dim(3);
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> frame(
      maps.data() + t * C * HW, C, HW);
  const Eigen::VectorXd mean = frame.cast<double>().colwise().mean().transpose();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(HW));
  for (Index p = 0; p < HW; ++p) out[std::size_t(p)] = gate_to_pixel(mean[p]);
  return out;
}

std::vector<Peak> peak_trace(const Tensor<float>& maps) {
  if (maps.rank() != 4) throw ShapeError("peak_trace: expected [T, K, H, W]");
  const Index T = maps.dim(0), K = maps.dim(1), H = maps.dim(2), W = maps.dim(3);
  std::vector<Peak> out;
  for (Index t = 0; t < T; ++t)
    for (Index k = 0; k < K; ++k) {
      const float* m = maps.data() + (t * K + k) * H * W;
      Index best = 0;
      for (Index p = 1; p < H * W; ++p)
        if (m[p] > m[best]) best = p;
      out.push_back({t, k, best / W, best % W, m[best]});
    }
  return out;
}

std::vector<double> gate_magnitudes(const Tensor<float>& gates) {
  if (gates.rank() != 2) throw ShapeError("gate_magnitudes: expected [T, C]");
  std::vector<double> out;
  auto m = gates.matrix(gates.dim(0), gates.dim(1));
  for (Index t = 0; t < gates.dim(0); ++t) out.push_back(m.row(t).cast<double>().cwiseAbs().mean());
  return out;
}

namespace {

std::string numbered(const std::string& stem, Index t, Index slot = -1) {
  std::ostringstream os;
  os << stem << "_t" << std::setw(3) << std::setfill('0') << t;
  if (slot >= 0) os << "_n" << slot;
  os << ".pgm";
  return os.str();
}

}  // namespace

std::vector<fs::path> dump_stage_maps(const std::vector<StageTrace<float>>& traces, const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw std::runtime_error("cannot create " + out.string() + ": " + ec.message());
  std::vector<fs::path> written;
  for (const auto& tr : traces) {
    const std::string stage = "st" + std::to_string(tr.stage);
    const auto& a = tr.gated_maps;
    for (Index t = 0; t < a.dim(0); ++t)
      for (Index l = 0; l < a.dim(1); ++l) {
        written.push_back(out / numbered(stage + "_ahat", t, l));
        write_pgm(written.back(), map_pixels(a, t, l), a.dim(2), a.dim(3));
      }
    const auto& m = tr.identification;
    for (Index t = 0; t < m.dim(0); ++t) {
      written.push_back(out / numbered(stage + "_m", t));
      write_pgm(written.back(), channel_mean_pixels(m, t), m.dim(2), m.dim(3));
    }
    written.push_back(out / (stage + "_u.txt"));
    {
      std::ofstream os(written.back());
      os << std::setprecision(9);
      for (double v : gate_magnitudes(tr.gates)) os << v << "\n";
    }
    written.push_back(out / (stage + "_peaks.txt"));
    {
      std::ofstream os(written.back());
      os << "# t slot y x value\n" << std::setprecision(9);
      for (const auto& p : peak_trace(a)) os << p.t << " " << p.slot << " " << p.y << " " << p.x << " " << p.value << "\n";
    }
  }
  return written;
}

}  // namespace corrnet
