use qbr::simlab::*;

fn main() {
    let variants: Vec<(usize, Vec<f64>, &str)> = vec![
        (4, vec![0.5, -0.5, 0.5, -0.5], "d4-unit"),
        (3, vec![0.6, -0.48, 0.64], "d3-unit"),
        (4, vec![0.0; 4], "d4-zero"),
        (2, vec![0.8, -0.6], "d2-unit"),
    ];
    for (d, beta, label) in variants {
        let norm: f64 = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        let sc = Scenario::<f64> {
            design: DesignKind::GaussianIid,
            d,
            beta_star: beta,
            sigma: 1.0,
            n: 40_000,
            ranges: qbr::quantize::RangePolicy::empirical_fixed(1.0, norm),
            seed: 99,
        };
        let rep = run_sketch_study(&sc, &[1000, 2000, 4000, 8000], 300).unwrap();
        let ms = [1000.0, 2000.0, 4000.0, 8000.0];
        let mses: Vec<f64> = ms.iter().map(|m| rep.extras[&format!("mean_mse/m={m}")]).collect();
        // fit MSE = c1/m + c2/m^2 from the 2000 and 8000 points, check at 4000
        let (m1, m2) = (2000.0, 8000.0);
        let (y1, y2) = (mses[1], mses[3]);
        let c2 = (y1 * m1 - y2 * m2) / (1.0 / m1 - 1.0 / m2);
        let c1 = y2 * m2 - c2 / m2;
        let check = c1 / 4000.0 + c2 / 4000.0f64.powi(2);
        // predicted top-3 slope on the real grid {5000, 10000, 20000}
        let pred = |m: f64| c1 / m + c2 / m / m;
        let slope = (pred(20000.0).ln() - pred(5000.0).ln()) / (20000f64.ln() - 5000f64.ln());
        println!("{label}: mses={mses:?}");
        println!("  c1={c1:.1} c2/c1={:.0} check4000={check:.5} vs {:.5}  predicted top3 slope={slope:.4}", c2 / c1, mses[2]);
    }
}
