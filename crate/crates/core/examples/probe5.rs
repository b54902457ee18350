use asymptopt::geometry::ConvexSet;
use asymptopt::problems::{make_least_squares, solve_kkt_ground_truth};
use asymptopt::rng::trial_seed;
use asymptopt::solvers::{
    parallel_trials, run_dual_averaging_variant, run_riemannian_da, RiemannianConfig, StepSchedule,
};
use asymptopt::DVector;

fn main() {
    let p = make_least_squares(
        DVector::from_vec(vec![1.0, 1.0]),
        1.0,
        ConvexSet::unit_ball(2),
    )
    .unwrap();
    let s = StepSchedule::new(1.0, 0.75).unwrap();
    let k = 10_000;
    let kkt = solve_kkt_ground_truth(&p).unwrap();
    let v = DVector::from_vec(vec![1.0, -1.0]);

    let da = parallel_trials(1000, |t| {
        let trace = run_dual_averaging_variant(&p, &s, trial_seed(106, 0, t as u64), k)?;
        Ok(v.dot(&trace.scaled_average_deviation(&kkt.x_star, 0.5, k)))
    })
    .unwrap();
    let config = RiemannianConfig::new(0.5, 0.4).unwrap();
    let riem = parallel_trials(1000, |t| {
        let trace = run_riemannian_da(&p, &s, &config, trial_seed(106, 1, t as u64), k)?;
        Ok(v.dot(&trace.scaled_average_deviation(&kkt.x_star, 0.5, k)))
    })
    .unwrap();

    let report = |name: &str, xs: &[f64]| {
        let mut sorted: Vec<f64> = xs.iter().map(|x| x.abs()).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let var_all: f64 = {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
        };
        let trimmed: Vec<f64> = {
            let mut v: Vec<f64> = xs.to_vec();
            v.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
            v[..xs.len() - 5].to_vec()
        };
        let var_trim: f64 = {
            let m = trimmed.iter().sum::<f64>() / trimmed.len() as f64;
            trimmed.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (trimmed.len() - 1) as f64
        };
        println!(
            "{name}: var {var_all:.3}, trimmed-5 var {var_trim:.3}, top-5 |stat| {:?}",
            &sorted[sorted.len() - 5..]
        );
    };
    report("variant-da", &da);
    report("riemannian", &riem);
}
