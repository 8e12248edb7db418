use trnn_core::synth::*;
use std::time::Instant;

fn main() {
    let cfg = SyntheticConfig::default();
    let t = Instant::now();
    let report = run_recovery(&cfg).unwrap();
    println!("elapsed {:.1}s, diverged {}", t.elapsed().as_secs_f64(), report.diverged_count());
    for &sigma in &cfg.noise_sigmas {
        let l = report.median_rmse("linear", sigma).unwrap();
        let tt = report.median_rmse("tt", sigma).unwrap();
        let tr = report.median_rmse("tr", sigma).unwrap();
        println!("sigma {sigma:<5} linear {l:.6} tt {tt:.6} tr {tr:.6}  tr<lin={} tr<tt={}", tr < l, tr < tt);
    }
    // per-seed comparison at 0.05
    let mut wins = 0;
    for &seed in &cfg.seeds {
        let lin = report.cells.iter().find(|c| c.model == "linear" && c.sigma == 0.05 && c.seed == seed).unwrap().rmse;
        let tr = report.cells.iter().find(|c| c.model == "tr" && c.sigma == 0.05 && c.seed == seed).unwrap().rmse;
        let tt = report.cells.iter().find(|c| c.model == "tt" && c.sigma == 0.05 && c.seed == seed).unwrap().rmse;
        if tr < lin { wins += 1; }
        println!("seed {seed}: lin {lin:.6} tt {tt:.6} tr {tr:.6}");
    }
    println!("tr beats linear on {wins}/10 seeds at sigma 0.05");
}
