#include <doctest.h>

#include <fstream>

#include "modcon/errors.hpp"
#include "modcon/plot.hpp"
#include "reference_solver.hpp"

using namespace modcon;

namespace {

void write(const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p);
    f << text;
}

}  // namespace

TEST_CASE("chart type follows the CSV header") {
    testsupport::TempDir dir("plot");
    write(dir / "sweep.csv", "layer,kind,accuracy,n_test\n0,residual,0.5,400\n1,residual,0.9,400\n");
    write(dir / "bins.csv", "bin_lo,bin_hi,count,mean_strength,var_strength\n-1,0,3,0.7,0.01\n0,1,0,0,0\n");
    write(dir / "records.csv", "sample_id,confidence,conflict_strength,aligned_modality\na,0.5,0.9,image\n");
    write(dir / "heads.csv", "layer,head,delta_text,delta_image\n0,0,0.1,0.0\n0,1,0.0,0.2\n");
    write(dir / "profile.csv",
          "layer,detection_text,detection_text_sd,detection_image,detection_image_sd,resolution_text,"
          "resolution_text_sd,resolution_image,resolution_image_sd\n0,1,0.1,1,0.1,2,0.2,2,0.2\n1,2,0.1,1,0.1,2,0.2,2,0.2\n");
    CHECK(detect_plot_kind(read_csv(dir / "sweep.csv")) == PlotKind::sweep);
    CHECK(detect_plot_kind(read_csv(dir / "bins.csv")) == PlotKind::bins);
    CHECK(detect_plot_kind(read_csv(dir / "records.csv")) == PlotKind::records);
    CHECK(detect_plot_kind(read_csv(dir / "heads.csv")) == PlotKind::head_deltas);
    CHECK(detect_plot_kind(read_csv(dir / "profile.csv")) == PlotKind::layer_profile);
    for (const char* name : {"sweep", "bins", "records", "heads", "profile"}) {
        const auto svg = dir / (std::string(name) + ".svg");
        plot_csv(dir / (std::string(name) + ".csv"), svg);
        const auto text = testsupport::read_file(svg);
        CHECK(text.rfind("<svg", 0) == 0);
        CHECK(text.find("</svg>") != std::string::npos);
    }
}

TEST_CASE("unknown or malformed CSV is a data error") {
    testsupport::TempDir dir("plot-bad");
    write(dir / "x.csv", "foo,bar\n1,2\n");
    CHECK_THROWS_AS(plot_csv(dir / "x.csv", dir / "x.svg"), DataError);
    write(dir / "y.csv", "layer,kind,accuracy\n0,residual\n");
    CHECK_THROWS_AS(read_csv(dir / "y.csv"), DataError);
}
