//! Pure loss functions against the scalar-loop references on random pairs.

use lfdisp_core::lightfield::DisparityMap;
use lfdisp_core::loss::{loss_grad, loss_mae, loss_normal};
use lfdisp_core::metrics::badpix;
use lfdisp_testkit::{loss_grad_reference, loss_mae_reference, loss_normal_reference};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pair(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (DisparityMap, DisparityMap) {
    let d: Vec<f32> = (0..h * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let g: Vec<f32> = (0..h * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
    (
        DisparityMap::new(h, w, d).unwrap(),
        DisparityMap::new(h, w, g).unwrap(),
    )
}

fn as_f64(m: &DisparityMap) -> Vec<f64> {
    m.values.iter().map(|&v| v as f64).collect()
}

#[test]
fn losses_agree_with_loop_references() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for case in 0..20 {
        let h = rng.gen_range(2..12);
        let w = rng.gen_range(2..12);
        let (d, g) = random_pair(&mut rng, h, w);
        let (df, gf) = (as_f64(&d), as_f64(&g));

        let mae = loss_mae(&d, &g).unwrap();
        let mae_ref = loss_mae_reference(&df, &gf);
        assert!((mae - mae_ref).abs() < 1e-7, "case {case} mae: {mae} vs {mae_ref}");

        let lg = loss_grad(&d, &g).unwrap();
        let lg_ref = loss_grad_reference(&df, &gf, h, w);
        assert!((lg - lg_ref).abs() < 1e-7, "case {case} grad: {lg} vs {lg_ref}");

        let ln = loss_normal(&d, &g).unwrap();
        let ln_ref = loss_normal_reference(&df, &gf, h, w);
        assert!((ln - ln_ref).abs() < 1e-7, "case {case} normal: {ln} vs {ln_ref}");
    }
}

#[test]
fn badpix_agrees_with_direct_count_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    for _ in 0..10 {
        let (d, g) = random_pair(&mut rng, 9, 7);
        for tau in [0.01, 0.03, 0.07, 0.5] {
            let expected = d
                .values
                .iter()
                .zip(&g.values)
                .filter(|(a, b)| (**a as f64 - **b as f64).abs() > tau)
                .count() as f64
                / d.values.len() as f64;
            assert_eq!(badpix(&d, &g, tau, None).unwrap(), expected);
        }
    }
}
