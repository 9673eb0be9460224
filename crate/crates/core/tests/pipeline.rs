//! Cross-module integration: corpus -> dataset -> denoiser training ->
//! pool -> scoring -> fusion, with the persistence and determinism
//! contracts that span module boundaries.

use fusebench_core::corpus::generate_corpus;
use fusebench_core::fusion::{fuse, oracle_weights, softmax_weights};
use fusebench_core::image::psnr;
use fusebench_core::nn::{Checkpoint, DncnnConfig};
use fusebench_core::noise::{make_dataset, NoiseSpec};
use fusebench_core::pool::{
    classic_denoisers, denoise_cnn, run_pool, train_cnn_denoiser, DenoiserHandle,
    DenoiserTrainConfig,
};
use fusebench_core::scorer::{ScoreMode, Scorer, ScoringNetConfig};

#[test]
fn denoiser_training_checkpoint_and_inference_contracts() {
    let dir = tempfile::tempdir().unwrap();
    generate_corpus(dir.path().join("clean"), 4, 64, 1, 3).unwrap();
    let spec = NoiseSpec::awgn(25.0, 17);
    let manifest = make_dataset(dir.path().join("clean"), &spec, 48, 8, dir.path().join("data"))
        .unwrap();

    let cfg = DenoiserTrainConfig {
        arch: DncnnConfig {
            depth: 5,
            width: 16,
            channels: 1,
        },
        iters: 150,
        batch: 4,
        patch: 24,
        lr: 2e-3,
        seed: 9,
    };
    let ckpt_path = dir.path().join("dn.ckpt");
    let (ckpt, losses) = train_cnn_denoiser(&cfg, &manifest, 25.0, &ckpt_path).unwrap();

    // The residual MSE halves from its early average at desk scale.
    let head: f64 = losses[..15].iter().sum::<f64>() / 15.0;
    let tail: f64 = losses[losses.len() - 15..].iter().sum::<f64>() / 15.0;
    assert!(
        tail <= 0.5 * head,
        "training loss should at least halve: {head:.5} -> {tail:.5}"
    );

    // Round trip: loaded checkpoint reproduces in-memory inference <= 1e-6.
    let (_, noisy, clean) = &manifest.load_pairs().unwrap()[0];
    let direct = denoise_cnn(&cfg.arch, &ckpt.params, noisy).unwrap();
    let loaded = Checkpoint::load(&ckpt_path).unwrap();
    let via_disk = denoise_cnn(&cfg.arch, &loaded.params, noisy).unwrap();
    let max = direct
        .data()
        .iter()
        .zip(via_disk.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(max <= 1e-6, "checkpoint roundtrip drifted by {max}");

    // Inference is deterministic and actually denoises at its level.
    let handle = DenoiserHandle::trained_cnn("dn25", &ckpt_path).unwrap();
    let a = handle.denoise(noisy, "x").unwrap();
    let b = handle.denoise(noisy, "x").unwrap();
    assert_eq!(a, b);
    let gain = psnr(&a, clean, 1.0).unwrap() - psnr(noisy, clean, 1.0).unwrap();
    assert!(gain >= 3.0, "matched-sigma denoiser gain {gain:.2} dB");
}

#[test]
fn scorer_pool_fusion_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    generate_corpus(dir.path().join("clean"), 3, 64, 1, 5).unwrap();
    let spec = NoiseSpec::awgn(30.0, 21);
    let manifest = make_dataset(dir.path().join("clean"), &spec, 64, 3, dir.path().join("data"))
        .unwrap();
    let pool = classic_denoisers();
    let scorer = Scorer::init(
        ScoringNetConfig {
            levels: 3,
            base_channels: 4,
            image_channels: 1,
            dropout_rate: 0.1,
            mc_dropout_enabled: true,
        },
        77,
    )
    .unwrap();

    for (id, noisy, clean) in manifest.load_pairs().unwrap() {
        let out = run_pool(&pool, &noisy, &id).unwrap();
        assert_eq!(out.len(), pool.len());

        // Even an untrained scorer must produce a valid convex fusion.
        let scores: Vec<_> = out
            .results
            .iter()
            .map(|(name, img)| {
                scorer
                    .score(&noisy, img, name, ScoreMode::Eval)
                    .unwrap()
                    .score
            })
            .collect();
        let weights = softmax_weights(&scores).unwrap();
        let fused = fuse(&out, &weights).unwrap();
        assert_eq!(fused.shape(), noisy.shape());

        // The oracle never loses to the best member or the blind fusion.
        let ow = oracle_weights(&out, &clean).unwrap();
        let oracle_fused = fuse(&out, &ow.as_weights().unwrap()).unwrap();
        let oracle_psnr = psnr(&oracle_fused, &clean, 1.0).unwrap();
        let best = out
            .images()
            .map(|img| psnr(img, &clean, 1.0).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(oracle_psnr >= best);
        assert!(oracle_psnr >= psnr(&fused, &clean, 1.0).unwrap());
    }
}
