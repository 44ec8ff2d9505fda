use qbr::likelihood::{fisher_information, ScalarModel};
use qbr::simlab::*;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("are");
    match which {
        "are" => {
            // criterion 7 calibration: ratio for various range multipliers
            for mult in [5.0, 6.0, 8.0] {
                let t = Instant::now();
                let rep = run_are_study::<f64>(&[(5.0, 0.5)], 20_000, 400, mult, 42).unwrap();
                let ratio = rep.extras["are_ratio_highest_snr"];
                println!("mult={mult}: ratio={ratio:.4}  ({:?})", t.elapsed());
            }
        }
        "fisher" => {
            let t = Instant::now();
            for (r, l) in [(2.0, 3.0), (3.0, 5.0), (5.0, 8.0), (8.0, 12.0)] {
                let m = ScalarModel::new(0.5, 1.0, r, l).unwrap();
                let ti = Instant::now();
                let fi = fisher_information(&m).unwrap();
                println!(
                    "R={r} L={l}: pi={:.6} piDot={:.6} I={:.6e} I*L2R2={:.4}  ({:?})",
                    fi.pi, fi.pi_dot, fi.info, fi.info * l * l * r * r, ti.elapsed()
                );
            }
            println!("total {:?}", t.elapsed());
        }
        "sketch" => {
            // one rep at full criterion-8 scale to project runtime
            let sc = Scenario::<f64> {
                design: DesignKind::GaussianIid,
                d: 10,
                beta_star: Scenario::<f64>::unit_beta_ten(),
                sigma: 1.0,
                n: 100_000,
                ranges: qbr::quantize::RangePolicy::empirical_fixed(1.0, 1.0),
                seed: 7,
            };
            let t = Instant::now();
            let rep = run_sketch_study(&sc, &[2500, 5000, 10_000, 20_000], 2).unwrap();
            println!("2 reps took {:?}", t.elapsed());
            println!("slope_all={:?}", rep.extras.get("loglog_slope_all"));
            println!("slope_top3={:?}", rep.extras.get("loglog_slope_top3"));
            for (k, v) in &rep.extras { println!("  {k} = {v:.6}"); }
        }
        "rate" => {
            // criterion 4 sanity at reduced reps
            let mut sc = Scenario::<f64> {
                design: DesignKind::GaussianIid,
                d: 5,
                beta_star: vec![0.5, -0.5, 0.5, -0.3, 0.387298334620742],
                sigma: 1.0,
                n: 1000,
                ranges: qbr::quantize::RangePolicy::empirical_fixed(1.0, 1.0),
                seed: 11,
            };
            let norm: f64 = sc.beta_star.iter().map(|b| b * b).sum::<f64>();
            println!("beta norm^2 = {norm}");
            let mut meds = vec![];
            for n in [1000usize, 10_000, 100_000] {
                sc.n = n;
                let t = Instant::now();
                let rep = run_coverage_study(&sc, 30, 0.95, None, None).unwrap();
                let mses: Vec<f64> = rep.groups[0].records.iter()
                    .filter_map(|r| r.fields.get("mse").copied()).map(|m| m.sqrt()).collect();
                let med = qbr::stats::median(&mses);
                println!("n={n}: median err={med:.5} ({:?})", t.elapsed());
                meds.push((n as f64, med));
            }
            println!("slope = {:.4}", qbr::stats::log_log_slope(&meds));
        }
        _ => eprintln!("unknown probe"),
    }
}
