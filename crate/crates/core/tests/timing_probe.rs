use gpgmnet_core::model::*;
use gpgmnet_core::tensor::{gradcheck::random_tensor, Mode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

#[test]
#[ignore]
fn timing_probe() {
    for (label, channels, widths, n_jmrm, scale, side, batch) in [
        ("default-x4-infer40", 64usize, 32usize, 5usize, 4usize, 40usize, 1usize),
        ("default-x2-train40", 64, 32, 5, 2, 40, 1),
        ("small16-x2-train40-b4", 16, 16, 2, 2, 40, 4),
        ("small16-x2-train40-b2", 16, 16, 2, 2, 40, 2),
        ("small24-x2-train40-b2", 24, 16, 2, 2, 40, 2),
    ] {
        let cfg = ModelConfig {
            scale,
            channels,
            cccb_width: widths,
            sscb_width: widths,
            n_jmrm,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = init_params(&cfg, &mut rng).unwrap();
        let x = random_tensor([batch, 3, side, side], 0.0, 1.0, &mut rng);

        let t0 = Instant::now();
        let fwd = gpgmnet_forward(&x, &params, &cfg, Mode::Train, &mut rng).unwrap();
        let t_fwd = t0.elapsed();
        let dout = fwd.output.map(|v| v * 1e-3);
        let t1 = Instant::now();
        let _ = gpgmnet_backward(&fwd.cache, &params, &cfg, &dout).unwrap();
        let t_bwd = t1.elapsed();

        let t2 = Instant::now();
        let _ = gpgmnet_infer(&x, &params, &cfg).unwrap();
        let t_inf = t2.elapsed();
        println!("{label}: fwd={:?} bwd={:?} infer={:?} iter~{:?}", t_fwd, t_bwd, t_inf, t_fwd + t_bwd);
    }
}
