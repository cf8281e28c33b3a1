//! Regenerates the bundled synthetic fixtures under `data/`. Every
//! fixture is deterministic, so re-running leaves the repository
//! unchanged.
//!
//! Usage: `cargo run -p nvsim-cli --bin gen_fixtures [data_dir]`

use std::path::PathBuf;

use nvsim_core::estimators::sample_orientation_histogram;
use nvsim_core::localization::{synthesize_spot_array, write_image_binary, SpotArraySpec};
use nvsim_core::photonics::saturation_model;
use nvsim_core::rng::rng_from_seed;

fn effmap_csv(radius: f64, r0: f64, eta0: f64, step: f64) -> String {
    let mut csv = String::from("dr_nm,eta_x,eta_y\n");
    let n = (radius / step).round() as usize;
    for i in 0..=n {
        let r = radius * i as f64 / n as f64;
        let eta = eta0 * (-(r / r0) * (r / r0)).exp();
        csv.push_str(&format!("{r},{eta},{eta}\n"));
    }
    csv
}

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"));
    std::fs::create_dir_all(&dir).expect("create data dir");

    // Radially decaying collection-efficiency sweeps standing in for
    // full-wave simulation outputs.
    std::fs::write(
        dir.join("effmap_280nm_synthetic.csv"),
        effmap_csv(140.0, 84.0, 0.8, 5.0),
    )
    .unwrap();
    std::fs::write(
        dir.join("effmap_480nm_synthetic.csv"),
        effmap_csv(240.0, 144.0, 0.8, 5.0),
    )
    .unwrap();

    // Orientation histogram sampled from the distinct-count model at λ = 2.
    let mut rng = rng_from_seed(7);
    let hist = sample_orientation_histogram(2.0, 121, &mut rng).unwrap();
    let mut csv = String::from("l,count\n");
    for (l, count) in hist.counts.iter().enumerate() {
        csv.push_str(&format!("{l},{count}\n"));
    }
    std::fs::write(dir.join("hist_lambda2_seed7.csv"), csv).unwrap();

    // Spot-array mesa image: 54 spots jittered by √(102² + 41²) nm under
    // a 235 nm PSF (realized jitter pinned to the nominal value).
    let spec = SpotArraySpec {
        pixel_pitch_nm: 40.0,
        spot_spacing_nm: 2200.0,
        n_cols: 6,
        n_rows: 9,
        margin_nm: 1400.0,
        amplitude: 400.0,
        psf_sigma_nm: 235.0,
        jitter_sigma_nm: (102.0f64 * 102.0 + 41.0 * 41.0).sqrt(),
        offset: 20.0,
        noise_sigma: 8.0,
        normalize_jitter: true,
    };
    let (image, _targets) = synthesize_spot_array(&spec, 4242).unwrap();
    write_image_binary(&image, &dir.join("mesa_synthetic.img")).unwrap();

    // Saturation curve of a typical single-NV pillar.
    let mut csv = String::from("P_mW,PL_cps\n");
    for i in 0..50 {
        let p = 0.01 * 1.15f64.powi(i);
        let pl = saturation_model(969_300.0, 1.5e6, 5e4, p);
        csv.push_str(&format!("{p},{pl}\n"));
    }
    std::fs::write(dir.join("saturation_example.csv"), csv).unwrap();

    println!("fixtures written to {}", dir.display());
}
