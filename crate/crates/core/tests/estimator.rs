use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use truncreg::{estimate, generate, ols, DVector, GeneratorConfig, SgdConfig, ZDraw};

fn halfline_config(w_star: &[f64]) -> GeneratorConfig {
    serde_json::from_value(serde_json::json!({
        "w_star": w_star,
        "covariates": {"type": "gaussian_iid", "k": w_star.len(), "clip": 3.0},
        "set": {"type": "halfline", "from": 0.5},
    }))
    .unwrap()
}

#[test]
fn truncated_fit_beats_least_squares() {
    let w_star = [1.0, -0.5, 0.25];
    let spec = halfline_config(&w_star).build().unwrap();
    let data = generate(&spec, 3000, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
    let mut cfg = SgdConfig::new(3.0, 3.0);
    cfg.passes = 5;
    cfg.z_draw = ZDraw::Paired;
    cfg.seed = 4;
    let truth = DVector::from_row_slice(&w_star);
    let fit = DVector::from_vec(estimate(&data, &spec.set, &cfg).unwrap().w_hat);
    let ls = ols(&data).unwrap();
    let (e_fit, e_ls) = ((&fit - &truth).norm(), (&ls - &truth).norm());
    assert!(e_fit < 0.2, "fit error {e_fit}");
    assert!(e_fit * 2.0 < e_ls, "fit {e_fit} vs least squares {e_ls}");
}

#[test]
fn same_seed_same_estimate() {
    let spec = halfline_config(&[0.5, 0.5]).build().unwrap();
    let data = generate(&spec, 400, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let cfg = SgdConfig::new(3.0, 3.0);
    let a = estimate(&data, &spec.set, &cfg).unwrap();
    let b = estimate(&data, &spec.set, &cfg).unwrap();
    assert_eq!(a, b);
}
