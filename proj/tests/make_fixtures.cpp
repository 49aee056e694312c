// Regenerates the golden files in tests/fixtures. Run once after a verified
// change of behaviour; the unit tests only read them.

#include "tforce/eval.hpp"
#include "tforce/models.hpp"
#include "tforce/pipeline.hpp"
#include "tforce/recording.hpp"
#include "tforce/synth.hpp"

#include "fixture_inputs.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

using namespace tforce;

namespace {

void write_matrix(const std::filesystem::path& p, const Eigen::MatrixXd& m, const std::string& what) {
  std::ofstream out(p);
  out << "# " << what << ", " << m.rows() << " x " << m.cols() << ", row-major\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << pipeline::format_double(m(r, c)) << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  const std::filesystem::path dir = argc > 1 ? argv[1] : TFORCE_FIXTURE_DIR;
  std::filesystem::create_directories(dir);

  const auto tip = geometry::fingertip_layout();
  {
    const auto p = synth::build_sensor_params(tip, synth::curved_settings(42));
    Rng rng(42);
    const auto x = synth::sensor_response(fixtures::synth_contact(), tip, p, rng);
    std::ofstream out(dir / "synth_seed42.txt");
    out << "# sensor_response, curved settings seed 42, rng seed 42\n";
    for (Eigen::Index k = 0; k < x.size(); ++k) out << pipeline::format_double(x[k]) << '\n';
  }

  const Eigen::MatrixXd X = fixtures::net_input();
  write_matrix(dir / "m4_golden.txt", nn::mlp_forward(fixtures::mlp_theta(), 90, X), "mlp_forward seed-0 weights");
  write_matrix(dir / "m5_golden.txt",
               nn::cnn_forward(fixtures::cnn_theta(), {6, 5}, X, fixtures::cnn_running()),
               "cnn_forward seed-0 weights");

  {
    const auto layout = geometry::phalanx_layout();
    const auto p = synth::build_sensor_params(layout, synth::flat_settings(11));
    const auto raw = synth::generate_recording(synth::default_press_script(layout, 11, 8.0), layout, p,
                                               geometry::default_finger_chain());
    const auto rec = pipeline::preprocess(raw);
    pipeline::write_recording(rec, dir / "stream_rec", "fixture: phalanx, flat settings seed 11, 8 s, processed");
    const auto model = models::fit_least_squares(pipeline::standardize(rec), models::ModelKind::M3L, layout, 33.0);
    models::save_model(model, dir / "stream_m3l.json");
    const auto res = eval::stream_eval(model, pipeline::read_recording(dir / "stream_rec"), layout);
    std::ofstream out(dir / "stream_report.txt");
    out << "# e_r_mean e_r_std mag_err_mean ang_err_mean n_used n_excluded\n";
    const auto& r = res.report;
    out << pipeline::format_double(r.e_r_mean) << '\n'
        << pipeline::format_double(r.e_r_std) << '\n'
        << pipeline::format_double(r.mag_err_mean) << '\n'
        << pipeline::format_double(r.ang_err_mean) << '\n'
        << r.n_used << '\n'
        << r.n_excluded << '\n';
  }
  std::cout << "fixtures written to " << dir << '\n';
  return 0;
}
