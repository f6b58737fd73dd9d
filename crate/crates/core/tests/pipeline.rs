use acc_core::analysis::compare;
use acc_core::baselines::{solve_force_based, solve_qnl};
use acc_core::cgspace::{build_cgmap, Grading, RegionPartition};
use acc_core::crack::{solve_crack, CrackMethod, CrackModel};
use acc_core::enrichment::{enrich_and_solve, EnrichmentConfig};
use acc_core::model::{solve_atomistic, BoundarySpec, Chain, ExternalForce, Potential};
use acc_core::reduction::solve_standard_galerkin;

fn point_force_setup(n: usize) -> (Chain, ExternalForce, RegionPartition) {
    let c = Chain::new(n, Potential::harmonic(4.0, 1.4), BoundarySpec::DirichletExtrapolated).unwrap();
    let f = ExternalForce::PointForce { atom: n / 2 + 2, magnitude: 1.0 };
    let part = RegionPartition::two_region(n, n / 2, &Grading::Uniform { stride: 8 }, 0).unwrap();
    (c, f, part)
}

#[test]
fn enrichment_beats_standard_galerkin() {
    let (c, f, part) = point_force_setup(256);
    let cg = build_cgmap(&c, &part).unwrap();
    let reference = solve_atomistic(&c, &f).unwrap();
    let eps = c.epsilon();
    let g = solve_standard_galerkin(&cg, &c, &f, false).unwrap();
    let eg = compare(&g.u, &reference, eps, "galerkin").unwrap();
    let (_, e) = enrich_and_solve(&cg, &c, &f, &EnrichmentConfig::new(6, 4), false).unwrap();
    let ee = compare(&e.u, &reference, eps, "enriched").unwrap();
    assert!(ee.w1inf() < 0.1 * eg.w1inf(), "{} vs {}", ee.w1inf(), eg.w1inf());
}

#[test]
fn baselines_converge_to_reference() {
    let mut prev = f64::INFINITY;
    for n in [128, 256, 512] {
        let (c, f, _) = point_force_setup(n);
        let reference = solve_atomistic(&c, &f).unwrap();
        let q = solve_qnl(&c, n / 2, &f).unwrap();
        let fb = solve_force_based(&c, n / 2, &f).unwrap();
        let eq = compare(&q.u, &reference, c.epsilon(), "qnl").unwrap().w1inf();
        let ef = compare(&fb.u, &reference, c.epsilon(), "fb").unwrap().w1inf();
        assert!(eq > 0.0 && ef > 0.0);
        assert!(eq < prev);
        prev = eq;
    }
}

#[test]
fn crack_galerkin_tracks_atomistic_tip() {
    let n = 256;
    let chain = Chain::new(n, Potential::harmonic(4.0, 0.4), BoundarySpec::Traction { load: 1.0 }).unwrap();
    let model = CrackModel::new(&chain, 0.5, 0.5, n / 2 + 2).unwrap();
    let part = RegionPartition::two_region(n, n / 2, &Grading::Uniform { stride: 8 }, 0).unwrap();
    let cg = build_cgmap(&chain, &part).unwrap();
    let a = solve_crack(&model, &CrackMethod::Atomistic, None).unwrap();
    let g = solve_crack(&model, &CrackMethod::Galerkin, Some(&cg)).unwrap();
    let tip = model.tip() - 1;
    assert!(a.u[tip] > 0.0);
    assert!((g.u[tip] - a.u[tip]).abs() <= 1e-2 * a.u[tip].abs());
}
