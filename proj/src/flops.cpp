#include "corrnet/flops.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace corrnet {

void FlopReport::add(std::string name, std::string formula, std::map<std::string, double> variables, double count) {
  entries_.push_back({std::move(name), std::move(formula), std::move(variables), count});
}

void FlopReport::append(const FlopReport& other, const std::string& prefix) {
  for (auto e : other.entries_) {
    e.name = prefix + e.name;
    entries_.push_back(std::move(e));
  }
}

double FlopReport::total() const {
  double t = 0.0;
  for (const auto& e : entries_) t += e.count;
  return t;
}

std::string FlopReport::to_text() const {
  std::size_t name_w = 5, formula_w = 7;
  for (const auto& e : entries_) {
    name_w = std::max(name_w, e.name.size());
    formula_w = std::max(formula_w, e.formula.size());
  }
  std::ostringstream os;
  os << std::left << std::setw(int(name_w)) << "name" << "  " << std::setw(int(formula_w)) << "formula" << "  "
     << std::right << std::setw(16) << "multiply-adds" << "\n";
  for (const auto& e : entries_) {
    os << std::left << std::setw(int(name_w)) << e.name << "  " << std::setw(int(formula_w)) << e.formula << "  "
       << std::right << std::setw(16) << std::fixed << std::setprecision(0) << e.count << "\n";
  }
  os << std::left << std::setw(int(name_w + formula_w + 2)) << "total" << "  " << std::right << std::setw(16)
     << std::fixed << std::setprecision(0) << total() << "\n";
  os << std::left << std::setw(int(name_w + formula_w + 2)) << "gflops" << "  " << std::right << std::setw(16)
     << std::setprecision(6) << gflops() << "\n";
  return os.str();
}

std::string FlopReport::to_key_values() const {
  std::ostringstream os;
  os << std::setprecision(17);
  for (const auto& e : entries_) os << e.name << "=" << e.count << "\n";
  os << "total=" << total() << "\n";
  os << "gflops=" << gflops() << "\n";
  return os.str();
}

double conv_flops(double out_elements, double kernel_volume, double in_channels, double groups) {
  return out_elements * kernel_volume * in_channels / groups;
}

FlopReport count_pairwise_correlation(double T, double C, double H, double W, double neighbors) {
  FlopReport r;
  r.add("pairwise_affinity", "N*T*C*H^2*W^2", {{"N", neighbors}, {"T", T}, {"C", C}, {"H", H}, {"W", W}},
        neighbors * T * C * H * H * W * W);
  return r;
}

FlopReport count_compressed_correlation(double T, double C, double H, double W, double L) {
  const std::map<std::string, double> v{{"T", T}, {"C", C}, {"H", H}, {"W", W}, {"L", L}};
  FlopReport r;
  r.add("aggregation", "2*T*C*H*W", v, 2 * T * C * H * W);
  r.add("attention", "T*(2*C*H*W+2*H*W+3*C^2)", v, T * (2 * C * H * W + 2 * H * W + 3 * C * C));
  r.add("descriptor_fusion", "3*T*C", v, 3 * T * C);
  if (L > 0) {
    r.add("correlation_maps", "T*L*C*H*W", v, T * L * C * H * W);
    r.add("trajectory_aggregation", "T*L*C*H*W", v, T * L * C * H * W);
  }
  return r;
}

FlopReport count_identification(double T, double C, double H, double W, const IdentificationConfig& cfg) {
  const double Cr = double(reduced_channels(Index(C), cfg.reduction));
  const double G = cfg.groups == 0 ? Cr : double(cfg.groups);
  const double K = double(cfg.kernel_t * cfg.kernel_s * cfg.kernel_s);
  const double B = double(cfg.spatial_scales * cfg.temporal_scales);
  const std::map<std::string, double> v{{"T", T}, {"C", C}, {"H", H}, {"W", W}, {"Cr", Cr},
                                        {"G", G}, {"K", K}, {"B", B}};
  FlopReport r;
  r.add("reduce", "T*H*W*Cr*C", v, conv_flops(T * H * W * Cr, 1, C));
  r.add("branches", "B*T*H*W*Cr*K*Cr/G", v, B * conv_flops(T * H * W * Cr, K, Cr, G));
  r.add("branch_mix", "B*T*H*W*Cr", v, B * T * H * W * Cr);
  r.add("recover", "T*H*W*C*Cr", v, conv_flops(T * H * W * C, 1, Cr));
  r.add("fuse", "T*C*H*W", v, T * C * H * W);
  return r;
}

FlopReport count_temporal_attention(double T, double C, double H, double W, const TemporalAttentionConfig& cfg) {
  const double Cr = double(reduced_channels(Index(C), cfg.reduction));
  const double M = cfg.branches, P = double(cfg.kernel);
  const std::map<std::string, double> v{{"T", T}, {"C", C}, {"H", H}, {"W", W}, {"Cr", Cr}, {"M", M}, {"P", P}};
  FlopReport r;
  r.add("pool", "T*C*H*W", v, T * C * H * W);
  r.add("reduce", "T*Cr*C", v, conv_flops(T * Cr, 1, C));
  r.add("branches", "M*T*Cr*P", v, M * conv_flops(T * Cr, P, 1));
  r.add("branch_mix", "M*T*Cr", v, M * T * Cr);
  r.add("recover", "T*C*Cr", v, conv_flops(T * C, 1, Cr));
  r.add("apply", "T*C*H*W", v, T * C * H * W);
  return r;
}

FlopReport count_model(const ModelConfig& cfg, double frames) {
  cfg.validate();
  const double T = frames;
  FlopReport r;
  double in = double(cfg.input_channels);
  for (std::size_t k = 0; k < cfg.stage_channels.size(); ++k) {
    const int stage = int(k) + 1;
    const double out = double(cfg.stage_channels[k]);
    const double n = double(cfg.spatial_extent(stage));
    const std::map<std::string, double> v{{"T", T}, {"Cout", out}, {"Cin", in}, {"H", n}, {"W", n}};
    r.add("backbone.s" + std::to_string(stage), "T*Cout*H*W*9*Cin", v, conv_flops(T * out * n * n, 9, in));
    in = out;
    if (!cfg.st_stages) continue;
    auto it = std::find(cfg.st_after.begin(), cfg.st_after.end(), stage);
    if (it == cfg.st_after.end()) continue;
    const double L = cfg.windows[std::size_t(it - cfg.st_after.begin())];
    const auto prefix = "st" + std::to_string(stage) + ".";
    r.append(count_compressed_correlation(T, out, n, n, L), prefix + "corr.");
    r.append(count_identification(T, out, n, n, cfg.identification), prefix + "id.");
    r.append(count_temporal_attention(T, out, n, n, cfg.temporal), prefix + "ta.");
  }
  const double d = double(cfg.feature_dim()), hc = double(cfg.head_channels), H = double(cfg.hidden);
  const double last = double(cfg.spatial_extent(int(cfg.stage_channels.size())));
  r.add("pool", "T*d*H*W", {{"T", T}, {"d", d}, {"H", last}, {"W", last}}, T * d * last * last);
  r.add("head.conv1", "T*hc*5*d", {{"T", T}, {"hc", hc}, {"d", d}}, conv_flops(T * hc, 5, d));
  r.add("head.conv2", "(T/2)*hc*5*hc", {{"T", T}, {"hc", hc}}, conv_flops(T / 2 * hc, 5, hc));
  double rnn_in = hc;
  for (int layer = 0; layer < cfg.rnn_layers; ++layer) {
    r.add("rnn.l" + std::to_string(layer), "2*(T/4)*4*Hd*(In+Hd)", {{"T", T}, {"Hd", H}, {"In", rnn_in}},
          2 * (T / 4) * 4 * H * (rnn_in + H));
    rnn_in = 2 * H;
  }
  const double K = cfg.classes();
  r.add("classifier", "(T/4)*K*2*Hd", {{"T", T}, {"K", K}, {"Hd", H}}, (T / 4) * K * 2 * H);
  return r;
}

std::vector<StageShape> resnet18_stages() { return {{128, 28, 2}, {256, 14, 6}, {512, 7, 10}}; }

}  // namespace corrnet
