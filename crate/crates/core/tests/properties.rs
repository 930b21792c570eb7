mod common;

use proptest::prelude::*;

use common::naive_fields;
use vepic::diagnostics::observed_order;
use vepic::dynamics::{euler_full_step, rk4_step, FieldModel, FormulaVariant};
use vepic::harness::io::{read_snapshot_binary, read_snapshot_csv, write_snapshot_binary, write_snapshot_csv};
use vepic::kernel::{cumulative, hat};
use vepic::{Execution, KernelWidth, ParticleEnsemble, SortedFieldView};

fn ensemble(max_n: usize, mass: f64) -> impl Strategy<Value = ParticleEnsemble> {
    prop::collection::vec((0.3f64..3.0, -0.9f64..0.9, 0.0f64..0.6, 0.0f64..1.0), 1..max_n).prop_map(move |ps| {
        let n = ps.len() as f64;
        let (mut r, mut w, mut l, mut m) = (vec![], vec![], vec![], vec![]);
        for (a, b, c, d) in ps {
            r.push(a);
            w.push(b);
            l.push(c);
            m.push(d * mass / n);
        }
        ParticleEnsemble::new(r, w, l, m, 0.0).unwrap()
    })
}

fn width(d: f64) -> KernelWidth {
    KernelWidth::new(d).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cumulative_is_monotone_and_odd(z in -3.0f64..3.0, dz in 0.0f64..1.0, d in 0.01f64..2.0) {
        let dw = width(d);
        prop_assert!(cumulative(z + dz, dw) >= cumulative(z, dw));
        prop_assert!((cumulative(z, dw) + cumulative(-z, dw) - 1.0).abs() <= 1e-15);
        prop_assert!((hat(z, dw) - hat(-z, dw)).abs() == 0.0);
    }

    #[test]
    fn deposit_matches_direct_sums(e in ensemble(60, 0.3), d in 0.05f64..0.25, q in 0.01f64..3.5) {
        prop_assume!(e.r.iter().all(|&r| r > d));
        let view = SortedFieldView::build(&e, width(d)).unwrap();
        let fast = view.deposit(q);
        let got = [fast.rho, fast.p, fast.j, view.mass_at(q)];
        for (g, (want, scale)) in got.iter().zip(naive_fields(&e, d, q)) {
            prop_assert!((g - want).abs() <= 1e-13 * scale.max(f64::MIN_POSITIVE), "{g} vs {want}");
        }
    }

    #[test]
    fn mass_is_monotone_and_bounded(e in ensemble(60, 0.3), d in 0.05f64..0.25) {
        prop_assume!(e.r.iter().all(|&r| r > d));
        let view = SortedFieldView::build(&e, width(d)).unwrap();
        let total = view.total_em();
        let mut prev = 0.0;
        for i in 0..=400 {
            let r = 4.0 * i as f64 / 400.0;
            let m = view.mass_at(r);
            prop_assert!(m >= prev - 1e-15 * total && m <= total * (1.0 + 1e-15));
            prev = m;
        }
        prop_assert_eq!(view.mass_at(view.r_out()), total);
    }

    #[test]
    fn metric_signs_hold(e in ensemble(60, 0.25), d in 0.05f64..0.25) {
        prop_assume!(e.r.iter().all(|&r| r > d));
        let view = SortedFieldView::build(&e, width(d)).unwrap();
        prop_assume!(view.max_compactness(Execution::Sequential) < 0.95);
        let samples = view.sample_at_particles(Execution::Sequential).unwrap();
        for (n, s) in samples.iter().enumerate() {
            prop_assert!(s.lam >= -1e-15);
            prop_assert!(s.mu <= 1e-15);
            prop_assert!(s.lam + s.mu <= 1e-15);
            prop_assert!((s.lapse_ratio() * e.w[n] / e.energy(n)).abs() < 1.0);
        }
    }

    #[test]
    fn exterior_is_schwarzschild(e in ensemble(40, 0.3), d in 0.05f64..0.25, gap in 0.0f64..30.0) {
        prop_assume!(e.r.iter().all(|&r| r > d));
        let view = SortedFieldView::build(&e, width(d)).unwrap();
        let r = view.r_out() + gap;
        let s = view.sample_at(r).unwrap();
        let m = view.total_em();
        prop_assert!((s.lam + s.mu).abs() <= 1e-13);
        prop_assert!((s.mu - 0.5 * (1.0 - 2.0 * m / r).ln()).abs() <= 1e-13);
    }

    #[test]
    fn steps_keep_l_and_signs(e in ensemble(40, 0.1), dt in 1e-3f64..0.02) {
        let d = 0.1;
        prop_assume!(e.r.iter().all(|&r| r > d + 0.05));
        let model = FieldModel::SelfConsistent(width(d));
        let a = rk4_step(&e, &model, dt, Execution::Sequential).unwrap();
        prop_assert!(a.l().iter().zip(e.l()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert!(a.m.iter().all(|&m| m >= 0.0));
        if let Ok(b) = euler_full_step(&e, width(d), dt, FormulaVariant::Corrected, Execution::Sequential) {
            prop_assert!(b.next.l().iter().zip(e.l()).all(|(x, y)| x.to_bits() == y.to_bits()));
            prop_assert!(b.next.m.iter().all(|&m| m >= 0.0));
        }
    }

    #[test]
    fn parallel_matches_sequential_bitwise(e in ensemble(300, 0.2)) {
        let d = width(0.1);
        prop_assume!(e.r.iter().all(|&r| r > 0.15));
        let view = SortedFieldView::build(&e, d).unwrap();
        prop_assert_eq!(
            view.sample_at_particles(Execution::Sequential).unwrap(),
            view.sample_at_particles(Execution::Parallel).unwrap()
        );
        let model = FieldModel::SelfConsistent(d);
        prop_assert_eq!(
            rk4_step(&e, &model, 0.01, Execution::Sequential).unwrap(),
            rk4_step(&e, &model, 0.01, Execution::Parallel).unwrap()
        );
        let s = euler_full_step(&e, d, 0.01, FormulaVariant::Corrected, Execution::Sequential).map(|s| s.next).ok();
        let p = euler_full_step(&e, d, 0.01, FormulaVariant::Corrected, Execution::Parallel).map(|s| s.next).ok();
        prop_assert_eq!(s, p);
    }

    #[test]
    fn snapshots_round_trip_exactly(e in ensemble(50, 1.0), t in 0.0f64..100.0) {
        let mut e = e;
        e.time = t;
        let mut csv = Vec::new();
        write_snapshot_csv(&e, &mut csv).unwrap();
        prop_assert_eq!(&read_snapshot_csv(&csv[..]).unwrap(), &e);
        let mut bin = Vec::new();
        write_snapshot_binary(&e, &mut bin).unwrap();
        prop_assert_eq!(&read_snapshot_binary(&bin[..]).unwrap(), &e);
    }

    #[test]
    fn order_fit_recovers_power_laws(c in 0.01f64..100.0, p in 0.2f64..4.0, h0 in 0.05f64..1.0) {
        let h: Vec<f64> = (0..4).map(|k| h0 / f64::powi(2.0, k)).collect();
        let e: Vec<f64> = h.iter().map(|x| c * x.powf(p)).collect();
        prop_assert!((observed_order(&e, &h).unwrap() - p).abs() < 1e-9);
    }
}
