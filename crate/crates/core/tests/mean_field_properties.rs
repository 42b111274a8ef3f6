use island_diffusions::coefficients::CoefficientSpec;
use island_diffusions::mean_field::{duality_gap, DualityConfig, InitialLaw, MeanFieldSolver};
use island_diffusions::rng::derive_seed;
use island_diffusions::sde_sim::TimeGrid;
use island_diffusions::stats::ks_two_sample;
use rayon::prelude::*;

fn small_budget(seed: u64) -> DualityConfig {
    DualityConfig { tree_replicates: 4000, mv_replicates: 200, npart: 200, dt: 1e-2, seed, ..Default::default() }
}

#[test]
fn particles_are_exchangeable() {
    let spec = CoefficientSpec::logistic(1.0, 1.0, 1.0).unwrap();
    let solver = MeanFieldSolver { keep_paths: false, ..MeanFieldSolver::new(&spec) };
    let grid = TimeGrid::new(0.0, 1.0, 1e-2).unwrap();
    let init = vec![0.2, 1.5, 0.7, 0.0, 1.0, 0.4, 2.0, 0.9];
    // Moving the value 0.2 from particle 0 to particle 3 must move its law with it.
    let mut permuted = init.clone();
    permuted.swap(0, 3);
    let terminal = |law: &InitialLaw, who: usize, tag: u64| -> Vec<f64> {
        (0..4000u64)
            .into_par_iter()
            .map(|r| solver.run(law, init.len(), &grid, derive_seed(tag, &[r])).unwrap().terminal[who])
            .collect()
    };
    let a = terminal(&InitialLaw::Samples(init.clone()), 0, 1);
    let b = terminal(&InitialLaw::Samples(permuted), 3, 2);
    let ks = ks_two_sample(&a, &b);
    assert!(ks.p_value > 0.001, "{ks:?}");
}

#[test]
fn both_sides_decrease_in_x_and_y() {
    let run = |x: f64, y: f64| duality_gap(1.0, 1.0, 1.0, x, y, 1.0, &small_budget(3)).unwrap();
    let xs = [0.5, 1.0, 2.0].map(|x| run(x, 1.0));
    let ys = [0.5, 1.0, 2.0].map(|y| run(1.0, y));
    for w in xs.windows(2) {
        // Same trees for every x, so the tree side is ordered path by path.
        assert!(w[1].lhs < w[0].lhs);
        assert!(w[0].rhs - w[1].rhs > 3.0 * w[0].se_rhs.hypot(w[1].se_rhs), "{w:?}");
    }
    for w in ys.windows(2) {
        assert!(w[1].rhs < w[0].rhs);
        assert!(w[0].lhs - w[1].lhs > 3.0 * w[0].se_lhs.hypot(w[1].se_lhs), "{w:?}");
    }
}

#[test]
fn particle_count_refinement_is_within_noise() {
    let coarse = DualityConfig { npart: 250, mv_replicates: 400, tree_replicates: 2, ..small_budget(4) };
    let fine = DualityConfig { npart: 1000, seed: 5, ..coarse };
    let a = duality_gap(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, &coarse).unwrap();
    let b = duality_gap(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, &fine).unwrap();
    assert!((a.rhs - b.rhs).abs() < 3.0 * a.se_rhs.hypot(b.se_rhs), "{a:?} vs {b:?}");
}

#[test]
fn point_start_keeps_particles_in_domain() {
    let spec = CoefficientSpec::selection_mutation(1.0, 1.0).unwrap();
    let grid = TimeGrid::new(0.0, 2.0, 1e-2).unwrap();
    let ens = MeanFieldSolver::new(&spec).run(&InitialLaw::Point(0.5), 300, &grid, 6).unwrap();
    for p in ens.paths.unwrap() {
        assert!(p.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
