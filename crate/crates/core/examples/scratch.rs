use pelkit::init::var_ols;
use pelkit::moments::{sample_moments, MomentModel, VarMoments};
use pelkit::penalty::PenaltySpec;
use pelkit::simlab::{DgpCase, Var1Config, Var1Design};
use pelkit::solver::{fit_pel, select_tuning, FitOptions, TuningGrid};
use std::time::Instant;

fn main() {
    let cfg = Var1Config::new(50, 10, DgpCase::I, 42);
    let design = Var1Design::new(cfg).unwrap();
    let theta0 = design.theta0().clone();

    let data = design.simulate(0);
    let (ols, _) = var_ols(&data, 1).unwrap();
    let model = VarMoments::new(data, 1).unwrap();
    let ols_err = (&ols - &theta0).norm_squared() / 100.0;
    println!("ols mse {:.5}", ols_err);

    let mut opts = FitOptions::default();
    opts.max_outer = 600;
    opts.theta_tol = 1e-6;
    opts.dual.kkt_tol = 1e-7;

    for &nu in &[0.01, 0.03, 0.1, 0.2] {
        for &pi in &[0.03, 0.1, 0.3] {
            let p1 = PenaltySpec::scad(pi).unwrap();
            let p2 = PenaltySpec::lasso(nu).unwrap();
            let start = Instant::now();
            match fit_pel(&model, &p1, &p2, &ols, &opts) {
                Ok(fit) => {
                    let err = (&fit.theta - &theta0).norm_squared() / 100.0;
                    let sm = sample_moments(&model, &fit.theta).unwrap();
                    let hits =
                        (0..100).filter(|&j| theta0[j] != 0.0 && fit.theta[j] != 0.0).count();
                    println!(
                        "nu {nu:.3} pi {pi:.3}: {:>10.2?} mse {err:.5} bic {:7.3} active {:3} (hits {hits}/10) dual {:3} |gbar| {:6.3} iters {}",
                        start.elapsed(),
                        fit.bic,
                        fit.active_set.len(),
                        fit.dual.active_set.len(),
                        sm.gbar.norm(),
                        fit.outer_iterations,
                    );
                }
                Err(e) => println!("nu {nu:.3} pi {pi:.3}: {:>10.2?} ERROR {e}", start.elapsed()),
            }
        }
    }

    // end-to-end selection over a 3x3 grid
    let grid = TuningGrid::new(vec![0.03, 0.1, 0.2], vec![0.03, 0.1, 0.3]).unwrap();
    let start = Instant::now();
    match select_tuning(&model, &grid, &ols, &opts) {
        Ok(fit) => {
            let err = (&fit.theta - &theta0).norm_squared() / 100.0;
            println!(
                "selected nu {:.3} pi {:.3}: mse {err:.5} in {:?}",
                fit.nu,
                fit.pi,
                start.elapsed()
            );
        }
        Err(e) => println!("selection failed: {e}"),
    }
    let _ = model.param_dim();
}
