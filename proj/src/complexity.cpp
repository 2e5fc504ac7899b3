#include <iomanip>
#include <sstream>

#include "cmunext/complexity.hpp"

namespace cmx {

namespace {

ComplexityReport build_report(const Model& model, Shape4 input, int flops_per_mac) {
    Profiler prof;
    model.profile(prof, input);

    ComplexityReport report;
    report.input_shape = input;
    report.per_layer = prof.rows();
    report.flops_per_mac = flops_per_mac;
    for (const auto& row : report.per_layer) {
        report.total_params += row.params;
        report.total_state += row.state;
        report.total_macs += row.macs;
        if (row.is_conv) report.conv_macs += row.macs;
    }
    return report;
}

}  // namespace

ComplexityReport count_params(const Model& model) {
    // Parameter counts are shape-independent; profile at the smallest legal
    // input and drop the per-layer op counts.
    ComplexityReport report =
        build_report(model, Shape4{1, model.desc().config.in_channels, 16, 16}, 1);
    for (auto& row : report.per_layer) row.macs = 0;
    report.total_macs = 0;
    report.conv_macs = 0;
    return report;
}

ComplexityReport count_macs(const Model& model, Shape4 input, int flops_per_mac) {
    if (flops_per_mac != 1 && flops_per_mac != 2) {
        throw ConfigError("flops_per_mac must be 1 or 2");
    }
    return build_report(model, input, flops_per_mac);
}

std::string ComplexityReport::table() const {
    std::ostringstream os;
    std::size_t name_w = 10;
    for (const auto& row : per_layer) name_w = std::max(name_w, row.name.size());
    os << std::left << std::setw(static_cast<int>(name_w) + 2) << "layer" << std::right
       << std::setw(12) << "params" << std::setw(16) << "ops" << "\n";
    for (const auto& row : per_layer) {
        os << std::left << std::setw(static_cast<int>(name_w) + 2) << row.name << std::right
           << std::setw(12) << row.params << std::setw(16)
           << row.macs * static_cast<std::uint64_t>(flops_per_mac) << "\n";
    }
    os << "\n";
    os << "input shape          " << input_shape.str() << "\n";
    os << "trainable params     " << total_params << " (" << std::fixed << std::setprecision(3)
       << params_m() << " M)\n";
    os << "running-stat values  " << total_state << "\n";
    if (total_macs > 0) {
        os << "total ops            " << total_macs * static_cast<std::uint64_t>(flops_per_mac)
           << " (" << std::setprecision(3) << gflops() << " GFLOPs, " << flops_per_mac
           << " FLOP/MAC)\n";
        os << "conv-only MACs       " << conv_macs << " (" << std::setprecision(3)
           << static_cast<double>(conv_macs) / 1e9 << " G)\n";
    }
    return os.str();
}

std::string ComplexityReport::machine_lines() const {
    std::ostringstream os;
    for (const auto& row : per_layer) {
        os << row.name << "," << row.params << ","
           << row.macs * static_cast<std::uint64_t>(flops_per_mac) << "\n";
    }
    os << "total," << total_params << "," << total_macs * static_cast<std::uint64_t>(flops_per_mac)
       << "\n";
    return os.str();
}

}  // namespace cmx
