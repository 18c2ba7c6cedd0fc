//! Property tests for the structural invariants.

use effmass::bands::{self, LatticeSpec};
use effmass::firstorder::{DriveSpec, FirstOrderEngine, WavepacketSpec};
use effmass::scenario::{self, PhysicalParams};
use proptest::prelude::*;

fn base_params() -> PhysicalParams {
    scenario::preset("rb-s7").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Scaling is homogeneous: multiplying the acceleration scales F̃
    /// linearly and the Bloch period inversely.
    #[test]
    fn scale_homogeneity(factor in 0.1_f64..10.0) {
        let p1 = base_params();
        let mut p2 = p1.clone();
        p2.lattice_acceleration *= factor;
        let s1 = scenario::scale(&p1).unwrap();
        let s2 = scenario::scale(&p2).unwrap();
        let ratio = s2.f_tilde / s1.f_tilde;
        prop_assert!((ratio - factor).abs() < 1e-12 * factor);
        let tb_ratio = s1.bloch_period.unwrap() / s2.bloch_period.unwrap();
        prop_assert!((tb_ratio - factor).abs() < 1e-12 * factor);
    }

    /// Extended-zone periodicity holds bit-for-bit for quasimomenta whose
    /// zone translation is exact in binary floating point.
    #[test]
    fn extended_zone_periodicity(ticks in -512_i32..512, zones in -3_i64..=3) {
        let k = ticks as f64 / 512.0;
        let spec = LatticeSpec::new(9.0, 8).unwrap();
        let a = bands::solve_bloch(&spec, k).unwrap();
        let b = bands::solve_bloch(&spec, k + 2.0 * zones as f64).unwrap();
        for n in 0..8 {
            prop_assert_eq!(a.energies[n], b.energies[n]);
        }
    }

    /// Momentum matrix is symmetric and its diagonal matches the band slope.
    #[test]
    fn momentum_matrix_symmetry(ticks in -250_i32..250) {
        let k = ticks as f64 / 256.0;
        let spec = LatticeSpec::new(7.0, 8).unwrap();
        let sol = bands::solve_bloch(&spec, k).unwrap();
        let p = sol.momentum_elements();
        for n in 0..8 {
            for m in 0..8 {
                prop_assert!((p[n][m] - p[m][n]).abs() < 1e-14);
            }
        }
    }
}

proptest! {
    // the dynamical-phase engine is heavier; fewer cases
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// γ phases are additive along the drifting trajectory.
    #[test]
    fn gamma_additivity(
        kappa in -0.4_f64..0.4,
        t1 in 0.1_f64..2.0,
        t2 in 0.1_f64..2.0,
    ) {
        let spec = LatticeSpec::new(7.0, 8).unwrap();
        let drive = DriveSpec::new(0.1734, 1.0).unwrap();
        let mut engine = FirstOrderEngine::new(
            spec,
            WavepacketSpec::new(0, 0.2).unwrap(),
            drive,
        ).unwrap();
        for band in 0..3 {
            let whole = engine.gamma(band, kappa, t1 + t2).unwrap();
            let a = engine.gamma(band, kappa, t1).unwrap();
            let b = engine.gamma(band, kappa + 0.1734 * t1, t2).unwrap();
            prop_assert!((whole - (a + b)).abs() < 1e-8);
        }
    }
}
