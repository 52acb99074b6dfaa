use multi_pfa::simulate::*;
use std::time::Instant;
fn main() {
    for &count_raw in &[true, false] {
        let cfg = SimConfig {
            scenario: Scenario::Independent,
            n: 500, p: 500, p1: 10, rho: 0.0,
            beta_active: 1.0, k: 10, t_fixed: 1e-4, alpha: 0.05,
            reps: 50, seed: 20260810,
            grid: GridSpec::default(),
            count_raw,
            estimator: FactorRegressionConfig::L2,
        };
        let t0 = Instant::now();
        let res = run_monte_carlo(&cfg).unwrap();
        let el = t0.elapsed();
        for s in &res.summaries {
            println!(
                "count_raw={count_raw} c={} | med FDP(t)={:.5} (ref .00433) | mean R={:.2} (ref 5.80) | mean S={:.2} (ref 5.75) | med t_a={:.3e} (ref 1.60e-3) | mean S(t_a)={:.2} (ref 8.37)",
                s.category, s.median_fdp_t, s.mean_r_t, s.mean_s_t,
                s.median_t_alpha.unwrap_or(f64::NAN), s.mean_s_t_alpha
            );
        }
        println!("  elapsed: {el:?}  ({:.0} ms/rep)", el.as_millis() as f64 / 50.0);
    }
}
