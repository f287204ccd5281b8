mod support;

use std::thread;

use orthoprompt::{
    decompose, purify, refine, ConceptBases, EmbeddingMatrix, Granularity, Mode, RefinementConfig,
    DEFAULT_RANK_TOL,
};
use support::*;

fn bases(inst: &Instance) -> ConceptBases {
    ConceptBases::from_concepts(&inst.express, Some(&inst.suppress), DEFAULT_RANK_TOL).unwrap()
}

#[test]
fn per_token_purify_matches_direct_formula() {
    let mut rng = rng(1);
    for _ in 0..20 {
        let s = gaussian(&mut rng, 7, 11);
        let e = gaussian(&mut rng, 7, 11);
        let got = purify(&s, &e, Granularity::PerToken, 1e-12).unwrap();
        let want = reject_rows(&s, &e, 1e-12);
        assert!(got.max_abs_diff(&want).unwrap() <= 1e-10);
    }
}

#[test]
fn purify_is_orthogonal_per_row() {
    let mut rng = rng(2);
    for _ in 0..100 {
        let s = gaussian(&mut rng, 9, 16);
        let e = gaussian(&mut rng, 9, 16);
        let sp = purify(&s, &e, Granularity::PerToken, 1e-12).unwrap();
        for (a, b) in sp.row_iter().zip(e.row_iter()) {
            assert!(row_dot(a, b).abs() <= 1e-5 * (row_norm(a) * row_norm(b) + 1e-12));
        }
    }
}

#[test]
fn flattened_purify_is_globally_orthogonal() {
    let mut rng = rng(3);
    for _ in 0..100 {
        let s = gaussian(&mut rng, 5, 12);
        let e = gaussian(&mut rng, 5, 12);
        let sp = purify(&s, &e, Granularity::Flattened, 1e-12).unwrap();
        let ip = sp.inner(&e).unwrap();
        assert!(ip.abs() <= 1e-5 * sp.frobenius_norm() * e.frobenius_norm());
    }
}

#[test]
fn hand_example_through_flattened_mode() {
    // One row, so both granularities must agree.
    let x = EmbeddingMatrix::from_rows(&[[1.0, 1.0]]).unwrap();
    let exp = EmbeddingMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
    let b = ConceptBases::from_concepts(&exp, Some(&x), DEFAULT_RANK_TOL).unwrap();
    for g in [Granularity::PerToken, Granularity::Flattened] {
        let cfg = RefinementConfig::default().with_granularity(g);
        let d = refine(&x, &b.express, &b.suppress, &cfg, None).unwrap();
        assert_eq!(d.x_refined.as_slice(), &[1.0, 0.0]);
    }
}

#[test]
fn dual_preserves_express_inner_products() {
    let mut rng = rng(4);
    for _ in 0..100 {
        let inst = random_instance(&mut rng);
        let b = bases(&inst);
        let alpha = rng_alpha(&mut rng);
        let cfg = RefinementConfig::default().with_alpha(alpha);
        let d = refine(&inst.x, &b.express, &b.suppress, &cfg, None).unwrap();
        for i in 0..inst.x.rows() {
            let before = row_dot(inst.x.row(i), d.e.row(i));
            let after = row_dot(d.x_refined.row(i), d.e.row(i));
            assert!((after - before).abs() <= 1e-5 * (before.abs() + 1e-12));
        }
        assert!(d.max_orthogonality_residual(cfg.epsilon) <= 1e-5);
    }
}

fn rng_alpha(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    use rand::Rng;
    rng.random_range(0.05..=1.0)
}

#[test]
fn single_changes_express_inner_products() {
    let mut rng = rng(5);
    for _ in 0..50 {
        let inst = overlapping_instance(&mut rng);
        let b = bases(&inst);
        let cfg = RefinementConfig::default().with_mode(Mode::Single);
        let d = refine(&inst.x, &b.express, &b.suppress, &cfg, None).unwrap();
        let (i, se) = (0..inst.x.rows())
            .map(|i| (i, row_dot(d.s.row(i), d.e.row(i))))
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        assert!(se.abs() > 1e-6);
        let before = row_dot(inst.x.row(i), d.e.row(i));
        let after = row_dot(d.x_refined.row(i), d.e.row(i));
        assert!((after - before).abs() > 1e-5 * before.abs());
    }
}

#[test]
fn refinement_is_affine_in_alpha() {
    let mut rng = rng(6);
    for _ in 0..30 {
        let inst = random_instance(&mut rng);
        let b = bases(&inst);
        let (a1, a2) = (0.2, 0.9);
        let run = |a: f64| {
            refine(
                &inst.x,
                &b.express,
                &b.suppress,
                &RefinementConfig::default().with_alpha(a),
                None,
            )
            .unwrap()
        };
        let (r1, r2) = (run(a1), run(a2));
        let diff = r1.x_refined.sub_scaled(1.0, &r2.x_refined).unwrap();
        let expected = r1.s_pure.scaled(a2 - a1).unwrap();
        assert!(diff.max_abs_diff(&expected).unwrap() <= 1e-9);
    }
}

#[test]
fn dual_does_not_expand_suppress_energy() {
    let mut rng = rng(7);
    for _ in 0..50 {
        let inst = random_instance(&mut rng);
        let b = bases(&inst);
        let d = refine(
            &inst.x,
            &b.express,
            &b.suppress,
            &RefinementConfig::default(),
            None,
        )
        .unwrap();
        let after = b.suppress.energy(&d.x_refined).unwrap();
        assert!(after <= d.s.frobenius_norm() + 1e-12);
        // A second pass keeps shrinking it.
        let d2 = refine(
            &d.x_refined,
            &b.express,
            &b.suppress,
            &RefinementConfig::default(),
            None,
        )
        .unwrap();
        assert!(b.suppress.energy(&d2.x_refined).unwrap() <= after + 1e-12);
    }
}

#[test]
fn rank_zero_suppress_is_a_no_op() {
    let mut rng = rng(8);
    let inst = random_instance(&mut rng);
    let b = ConceptBases::from_concepts(&inst.express, None, DEFAULT_RANK_TOL).unwrap();
    let d = refine(
        &inst.x,
        &b.express,
        &b.suppress,
        &RefinementConfig::default(),
        None,
    )
    .unwrap();
    assert_eq!(d.x_refined, inst.x);
    let (_, s) = decompose(&inst.x, &b.express, &b.suppress).unwrap();
    assert_eq!(s.frobenius_norm(), 0.0);
}

#[test]
fn concurrent_refinement_matches_sequential() {
    let mut rng = rng(9);
    let inst = random_instance(&mut rng);
    let b = bases(&inst);
    let sequential: Vec<_> = Mode::ALL[..2]
        .iter()
        .map(|&m| {
            refine(
                &inst.x,
                &b.express,
                &b.suppress,
                &RefinementConfig::default().with_mode(m),
                None,
            )
            .unwrap()
        })
        .collect();
    let parallel: Vec<_> = thread::scope(|scope| {
        let handles: Vec<_> = Mode::ALL[..2]
            .iter()
            .map(|&m| {
                let (x, b) = (&inst.x, &b);
                scope.spawn(move || {
                    refine(
                        x,
                        &b.express,
                        &b.suppress,
                        &RefinementConfig::default().with_mode(m),
                        None,
                    )
                    .unwrap()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(sequential, parallel);
}
