//! Randomized invariants. Each block states a law the crate is supposed to
//! satisfy everywhere, not just at the worked examples: metric axioms and
//! strong hyperbolicity in the models, exact four-point degeneracy on trees,
//! the cocycle law for Busemann functions, form preservation for Lorentz
//! maps, group laws for free-product words, slow growth for Patterson
//! weights, and the full redistribution pipeline on random uniform
//! structures.

use proptest::prelude::*;

use workbench_core::actions::{FactorElem, FactorGroup, Letter, SchottkyAction, Word};
use workbench_core::bim::{self, BimConfig};
use workbench_core::coarse::{gromov_product, GromovContext, Site};
use workbench_core::measures::{
    ball_mass, horoball_depth, patterson_weight, CuspLaw, CuspedRay, GlobalMeasureContext,
    NormStream, RayLetter,
};
use workbench_core::models::{self, busemann, BoundaryPoint, LorentzMap, Model, ModelPoint};
use workbench_core::partition::{
    ahlfors_check, thick_substructure_measure, uniform_structure, validate,
};
use workbench_core::rtree::{RTree, TreePos};
use workbench_core::tol;

fn ball_point(n: usize) -> impl Strategy<Value = ModelPoint> {
    (prop::collection::vec(-1.0f64..1.0, n), 0.05f64..0.9).prop_map(move |(x, t)| {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let coords: Vec<f64> = if norm < 1e-3 {
            let mut c = vec![0.0; n];
            c[0] = t;
            c
        } else {
            x.iter().map(|v| v * t / norm).collect()
        };
        ModelPoint::ball(coords).expect("scaled coordinates stay inside the ball")
    })
}

fn boundary_direction(n: usize) -> impl Strategy<Value = BoundaryPoint> {
    prop::collection::vec(-1.0f64..1.0, n).prop_map(move |x| {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let u: Vec<f64> = if norm < 1e-3 {
            let mut c = vec![0.0; n];
            c[0] = 1.0;
            c
        } else {
            x.iter().map(|v| v / norm).collect()
        };
        BoundaryPoint::from_direction(Model::Ball, u).expect("unit directions are boundary data")
    })
}

fn random_tree_with(k: usize) -> impl Strategy<Value = (RTree, Vec<TreePos>)> {
    (3usize..18).prop_flat_map(move |n| {
        (
            prop::collection::vec((0usize..1 << 20, 0.1f64..4.0), n - 1),
            prop::collection::vec((any::<bool>(), 0usize..1 << 20, 0.02f64..0.98), k),
        )
            .prop_map(move |(raw, pts)| {
                let edges: Vec<(usize, usize, f64)> = raw
                    .into_iter()
                    .enumerate()
                    .map(|(i, (r, w))| (r % (i + 1), i + 1, w))
                    .collect();
                let tree = RTree::from_edges(n, &edges).expect("parent links form a tree");
                let pos: Vec<TreePos> = pts
                    .into_iter()
                    .map(|(on_edge, r, t)| {
                        if on_edge {
                            TreePos::Edge { edge: r % (n - 1), t }
                        } else {
                            TreePos::Vertex(r % n)
                        }
                    })
                    .collect();
                (tree, pos)
            })
    })
}

// Kept small: lifts carry cosh of the diameter, so large configurations
// push the embedded points off the quadric at validation scale.
fn small_tree_with(k: usize) -> impl Strategy<Value = (RTree, Vec<TreePos>)> {
    (3usize..10).prop_flat_map(move |n| {
        (
            prop::collection::vec((0usize..1 << 20, 0.05f64..0.8), n - 1),
            prop::collection::vec((any::<bool>(), 0usize..1 << 20, 0.02f64..0.98), k),
        )
            .prop_map(move |(raw, pts)| {
                let edges: Vec<(usize, usize, f64)> = raw
                    .into_iter()
                    .enumerate()
                    .map(|(i, (r, w))| (r % (i + 1), i + 1, w))
                    .collect();
                let tree = RTree::from_edges(n, &edges).expect("parent links form a tree");
                let pos: Vec<TreePos> = pts
                    .into_iter()
                    .map(|(on_edge, r, t)| {
                        if on_edge {
                            TreePos::Edge { edge: r % (n - 1), t }
                        } else {
                            TreePos::Vertex(r % n)
                        }
                    })
                    .collect();
                (tree, pos)
            })
    })
}

fn f2_word(len: usize) -> impl Strategy<Value = Vec<Letter>> {
    prop::collection::vec((0usize..2, prop::sample::select(vec![-3i64, -2, -1, 1, 2, 3])), 0..len)
        .prop_map(|raw| {
            raw.into_iter()
                .map(|(factor, p)| Letter { factor, elem: FactorElem::Power(p) })
                .collect()
        })
}

fn cusped_ray() -> impl Strategy<Value = CuspedRay> {
    (
        any::<bool>(),
        prop::collection::vec((1i64..4, 2u32..9, any::<bool>()), 1..5),
    )
        .prop_map(|(cusp_first, raw)| {
            let letters: Vec<RayLetter> = raw
                .into_iter()
                .enumerate()
                .map(|(i, (p, n, neg))| {
                    if (i % 2 == 0) == cusp_first {
                        RayLetter::Cusp { norm: n }
                    } else {
                        RayLetter::Translation { power: if neg { -p } else { p } }
                    }
                })
                .collect();
            CuspedRay::new(letters).expect("alternating letters form a ray")
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hyperbolic_distance_is_a_metric(
        n in 2usize..5,
        seeds in prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 4), 0.05f64..0.9), 3),
    ) {
        let pts: Vec<ModelPoint> = seeds
            .into_iter()
            .map(|(x, t)| {
                let x = &x[..n];
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
                ModelPoint::ball(x.iter().map(|v| v * t / norm).collect()).unwrap()
            })
            .collect();
        let (x, y, z) = (&pts[0], &pts[1], &pts[2]);
        let dxy = models::dist(x, y).unwrap();
        let dyx = models::dist(y, x).unwrap();
        prop_assert!(dxy >= 0.0);
        prop_assert!((dxy - dyx).abs() <= tol::IDENTITY * (1.0 + dxy));
        prop_assert!(models::dist(x, x).unwrap() <= tol::EXACT);
        let (dxz, dzy) = (models::dist(x, z).unwrap(), models::dist(z, y).unwrap());
        prop_assert!(dxy <= dxz + dzy + tol::EXACT);
    }

    #[test]
    fn gromov_products_are_strongly_hyperbolic(
        w in ball_point(3),
        x in ball_point(3),
        y in ball_point(3),
        z in ball_point(3),
    ) {
        let ctx = GromovContext::model(w.clone()).unwrap();
        let base = Site::Model(w);
        let p = |a: &ModelPoint, b: &ModelPoint| {
            gromov_product(&ctx, &Site::Model(a.clone()), &Site::Model(b.clone()), &base).unwrap()
        };
        let lhs = (-p(&x, &y)).exp();
        let rhs = (-p(&x, &z)).exp() + (-p(&z, &y)).exp();
        prop_assert!(lhs <= rhs + tol::EXACT);
    }

    #[test]
    fn busemann_is_a_cocycle(
        xi in boundary_direction(3),
        x in ball_point(3),
        y in ball_point(3),
        z in ball_point(3),
    ) {
        let bxy = busemann(&xi, &x, &y).unwrap();
        let byz = busemann(&xi, &y, &z).unwrap();
        let bxz = busemann(&xi, &x, &z).unwrap();
        prop_assert!((bxy + byz - bxz).abs() <= tol::EXACT);
        let dxy = models::dist(&x, &y).unwrap();
        prop_assert!(bxy.abs() <= dxy + tol::EXACT);
    }

    #[test]
    fn lorentz_maps_preserve_the_form_and_distances(
        moves in prop::collection::vec((0usize..3, -1.2f64..1.2), 1..4),
        x in ball_point(3),
        y in ball_point(3),
    ) {
        let mut map = LorentzMap::identity(3);
        for (kind, t) in moves {
            let step = match kind {
                0 => LorentzMap::boost(1, t, 3).unwrap(),
                1 => LorentzMap::boost(2, t, 3).unwrap(),
                _ => LorentzMap::rotation(1, 2, t, 3).unwrap(),
            };
            map = map.compose(&step);
        }
        prop_assert!(map.lorentz_defect() <= tol::MATRIX);
        let d = models::dist(&x, &y).unwrap();
        let dm = models::dist(&map.apply(&x).unwrap(), &map.apply(&y).unwrap()).unwrap();
        prop_assert!((d - dm).abs() <= tol::MATRIX * (1.0 + d));
    }

    #[test]
    fn tree_four_point_defect_vanishes((tree, pos) in random_tree_with(4)) {
        let d = |a: &TreePos, b: &TreePos| tree.dist(a, b);
        let (x, y, z, w) = (&pos[0], &pos[1], &pos[2], &pos[3]);
        let sums = [
            d(x, y) + d(z, w),
            d(x, z) + d(y, w),
            d(x, w) + d(y, z),
        ];
        let mut sorted = sums;
        sorted.sort_by(f64::total_cmp);
        // The two largest pairings agree on a tree.
        prop_assert!(sorted[2] - sorted[1] <= tol::IDENTITY * (1.0 + sorted[2]));
    }

    #[test]
    fn tree_products_obey_the_ultrametric_inequality((tree, pos) in random_tree_with(4)) {
        let (o, x, y, z) = (&pos[0], &pos[1], &pos[2], &pos[3]);
        let pxy = tree.gromov(o, x, y);
        let pxz = tree.gromov(o, x, z);
        let pzy = tree.gromov(o, z, y);
        prop_assert!(pxy >= pxz.min(pzy) - tol::IDENTITY * (1.0 + pxy.abs()));
    }

    #[test]
    fn free_product_words_form_a_group(
        a in f2_word(6),
        b in f2_word(6),
        c in f2_word(6),
    ) {
        let action = SchottkyAction::new(vec![
            FactorGroup::Cyclic { r: 1.0 },
            FactorGroup::Cyclic { r: 1.0 },
        ])
        .unwrap();
        let (a, b, c) = (
            action.reduce(&a).unwrap(),
            action.reduce(&b).unwrap(),
            action.reduce(&c).unwrap(),
        );
        let ab_c = action.mul(&action.mul(&a, &b), &c);
        let a_bc = action.mul(&a, &action.mul(&b, &c));
        prop_assert_eq!(&ab_c, &a_bc);
        prop_assert_eq!(action.inv(&action.inv(&a)), a.clone());
        prop_assert_eq!(action.mul(&a, &action.inv(&a)), Word::identity());
        let norm_ab = action.norm(&action.mul(&a, &b));
        prop_assert!(norm_ab <= action.norm(&a) + action.norm(&b) + tol::IDENTITY);
        prop_assert!((action.norm(&action.inv(&a)) - action.norm(&a)).abs() <= tol::IDENTITY);
    }

    #[test]
    fn patterson_weights_grow_slowly(
        branch in 2u32..6,
        step in 0.2f64..2.0,
        delta in 0.3f64..1.5,
        damp in 1.05f64..2.0,
        quota in 1.0f64..20.0,
        probes in prop::collection::vec(0.0f64..200.0, 8),
    ) {
        for stream in [
            NormStream::Geometric { branch, step },
            NormStream::Damped { delta, step, damp },
        ] {
            let weight = patterson_weight(&stream, quota, 6).unwrap();
            let mut sorted = probes.clone();
            sorted.sort_by(f64::total_cmp);
            for pair in sorted.windows(2) {
                // Nondecreasing, and the local exponent never exceeds the cap.
                prop_assert!(weight.ln_k(pair[1]) >= weight.ln_k(pair[0]) - 1e-15);
                let eps = weight.epsilon_ln(pair[0]);
                prop_assert!((0.0..=0.04 + tol::IDENTITY).contains(&eps));
                prop_assert!(weight.epsilon_ln(pair[1]) <= eps + tol::IDENTITY);
            }
        }
    }

    #[test]
    fn cusped_ray_masses_decrease_and_depths_are_lipschitz(
        ray in cusped_ray(),
        raw_ts in prop::collection::vec(0.0f64..1.0, 4),
    ) {
        let ctx = GlobalMeasureContext {
            delta: 3.0f64.ln(),
            delta_p: 2.0f64.ln(),
            cusp: CuspLaw::SubsetTower,
            t0: 0.5,
            theta: 1.0,
            mu_p_atom: 0.0,
            near_monotone_c: 1.0,
            converse_applies: true,
        };
        let span = ray.total_norm() as f64 - 1e-6;
        let mut ts: Vec<f64> = raw_ts.iter().map(|t| t * span).collect();
        ts.sort_by(f64::total_cmp);
        for pair in ts.windows(2) {
            let m0 = ball_mass(&ray, pair[0]).unwrap();
            let m1 = ball_mass(&ray, pair[1]).unwrap();
            prop_assert!(m1 <= m0 + tol::IDENTITY);
            prop_assert!(m1 > 0.0);
            let h0 = horoball_depth(&ctx, &ray, pair[0]).unwrap();
            let h1 = horoball_depth(&ctx, &ray, pair[1]).unwrap();
            prop_assert!((h1 - h0).abs() <= (pair[1] - pair[0]) + tol::EXACT);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bim_embeddings_reproduce_cosh_distances((tree, pos) in small_tree_with(5)) {
        let cfg = match BimConfig::from_tree(std::f64::consts::E, &tree, &pos) {
            Ok(cfg) => cfg,
            // Coincident sample positions are fine to skip; the embedding
            // needs distinct points.
            Err(_) => return Ok(()),
        };
        let embedded = bim::embed(&cfg).unwrap();
        for i in 0..pos.len() {
            for j in (i + 1)..pos.len() {
                let d = models::dist(&embedded[i], &embedded[j]).unwrap();
                let want = cfg.dist(i, j).exp();
                prop_assert!((d.cosh() - want).abs() <= tol::MATRIX * (1.0 + want));
            }
        }
    }

    #[test]
    fn uniform_structures_pass_the_redistribution_pipeline(
        arity in 2usize..4,
        ratio in 0.35f64..0.75,
        depth in 5usize..7,
        frac in 0.3f64..0.95,
    ) {
        let s = frac * (arity as f64).ln() / -ratio.ln();
        let st = uniform_structure(arity, ratio, 1.0, depth).unwrap();
        validate(&st, Some(s)).unwrap();
        let sub = thick_substructure_measure(&st, s).unwrap();
        let mu = sub.leaf_measure();
        prop_assert!((mu.total_mass() - 1.0).abs() <= tol::IDENTITY);
        let report = ahlfors_check(&sub, &st).unwrap();
        prop_assert!(report.c_lower >= report.envelope_lower);
        prop_assert!(report.c_upper <= report.envelope_upper);
    }
}
