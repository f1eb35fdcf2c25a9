// SPDX-License-Identifier: Apache-2.0
//
// Metric report writers (CSV + summary JSON).

#include "manas/metrics.hpp"

#include <fstream>
#include <iomanip>

#include "json.hpp"

namespace manas {

void write_metric_csv(const std::string& path, const MetricReport& r) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path);
    ReferenceScores ref;
    f << "# full-scale reference (not desk-reproducible): DID-MDN " << ref.did_mdn_psnr
      << " dB / " << ref.did_mdn_ssim << ", RainCityscapes " << ref.rain_cityscapes_psnr
      << " dB / " << ref.rain_cityscapes_ssim << "\n";
    f << "image,psnr_db,ssim\n";
    f << std::setprecision(10);
    for (const auto& row : r.rows) f << row.image << "," << row.psnr_db << "," << row.ssim << "\n";
    if (!f) throw DataError("write failure: " + path);
}

void write_metric_summary(const std::string& path, const MetricReport& r) {
    nlohmann::json doc;
    doc["mean_psnr"] = r.mean_psnr;
    doc["mean_ssim"] = r.mean_ssim;
    doc["count"] = r.count;
    ReferenceScores ref;
    doc["reference"] = {
        {"note", "full-scale, not desk-reproducible"},
        {"did_mdn", {{"psnr", ref.did_mdn_psnr}, {"ssim", ref.did_mdn_ssim}}},
        {"rain_cityscapes",
         {{"psnr", ref.rain_cityscapes_psnr}, {"ssim", ref.rain_cityscapes_ssim}}},
    };
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path);
    f << doc.dump(2) << "\n";
    if (!f) throw DataError("write failure: " + path);
}

}  // namespace manas
