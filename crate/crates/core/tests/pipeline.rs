//! End-to-end behaviour across modules: train, checkpoint, transmit, score.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use djscc::codec::CodecConfig;
use djscc::evaluation::{bits_per_image, djscc_roundtrip, mse, run_sweep, Scheme, SweepConfig};
use djscc::image::Image;
use djscc::link::{bits_per_index, webee_baseline_roundtrip, ChannelKind, ChannelModel, Framing};
use djscc::semantic_kb::{load_kb, save_kb, SemanticCodebook};
use djscc::training::{
    load_checkpoint, read_idx_images, save_checkpoint, train, Checkpoint, DatasetKind, ImageSet,
    TrainConfig, TrainReport, KB_FILE, REPORT_FILE,
};
use djscc::Error;

fn fixture() -> ImageSet {
    read_idx_images(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/mnist64-images-idx3-ubyte"
    ))
    .unwrap()
}

fn small_run(seed: u64) -> (CodecConfig, TrainConfig) {
    let codec = CodecConfig::new(1, 16, 28).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        codebook_size: 32,
        seed,
        train_limit: Some(32),
        ..TrainConfig::published(DatasetKind::Mnist)
    };
    (codec, cfg)
}

#[test]
fn fixture_holds_ten_digit_classes_in_unit_range() {
    let set = fixture();
    assert_eq!((set.len(), set.shape()), (64, (28, 28, 1)));
    for i in 0..set.len() {
        let im = set.image(i);
        assert!(im.data().iter().all(|v| (0.0..=1.0).contains(v)));
        // every digit has ink and background
        assert!(im.data().iter().any(|&v| v > 0.5) && im.data().contains(&0.0));
    }
}

#[test]
fn train_save_load_and_sweep() {
    let (codec, cfg) = small_run(3);
    let data = fixture();
    let mut seen = Vec::new();
    let out = train(&cfg, &codec, &data, |e| seen.push(e.epoch)).unwrap();
    assert_eq!(seen, vec![1, 2]);
    assert_eq!(out.report.epochs.len(), 2);
    assert!(out
        .report
        .epochs
        .iter()
        .all(|e| e.steps == 2 && e.utilization > 0.0));

    let dir = tempfile::tempdir().unwrap();
    let ck = Checkpoint::new(DatasetKind::Mnist, codec, out.params, out.kb);
    save_checkpoint(dir.path(), &ck, Some(&out.report), Some("seed = 3\n")).unwrap();
    let back = load_checkpoint(dir.path()).unwrap();
    assert_eq!(back.kb, ck.kb);
    assert_eq!(back.params.tensors(), ck.params.tensors());
    let report = TrainReport::read_csv(dir.path().join(REPORT_FILE)).unwrap();
    assert_eq!(report.epochs.len(), 2);

    // loaded and in-memory checkpoints decode identically
    let src = data.image(40);
    let a = djscc_roundtrip(&src, &ck, &ChannelModel::identity()).unwrap();
    let b = djscc_roundtrip(&src, &back, &ChannelModel::identity()).unwrap();
    assert_eq!(a.image, b.image);
    assert_eq!(a.sent, a.received);
    // 32 codewords need 5 bits, 36 per packet, so 49 slots take two packets
    assert_eq!(a.transmission.wire_bits, 400);

    let sweep_cfg = SweepConfig {
        snr_list_db: vec![-15.0, 10.0],
        images_per_point: 8,
        eval_batch: 3,
        ..SweepConfig::published(DatasetKind::Mnist)
    };
    let res = run_sweep(&sweep_cfg, Some(&back), &data).unwrap();
    assert_eq!(res.rows.len(), 4);
    let dead = res.row(DatasetKind::Mnist, Scheme::Djscc, -15.0).unwrap();
    assert_eq!(dead.packet_loss_fraction, 1.0);
    // with every packet lost, the decoder sees the codebook mean everywhere
    assert!(dead.mse_stderr < dead.mse);
    let djscc_bits = res
        .row(DatasetKind::Mnist, Scheme::Djscc, 10.0)
        .unwrap()
        .bits_per_image;
    assert_eq!(djscc_bits, 400);
}

#[test]
fn swapping_the_knowledge_base_file_is_detected() {
    let (codec, cfg) = small_run(4);
    let out = train(
        &TrainConfig { epochs: 1, ..cfg },
        &codec,
        &fixture(),
        |_| {},
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ck = Checkpoint::new(DatasetKind::Mnist, codec, out.params, out.kb);
    save_checkpoint(dir.path(), &ck, None, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let other = SemanticCodebook::random(32, 16, &mut rng).unwrap();
    save_kb(&other, dir.path().join(KB_FILE)).unwrap();
    assert!(matches!(
        load_checkpoint(dir.path()),
        Err(Error::KbDesync { .. })
    ));
    assert_eq!(load_kb(dir.path().join(KB_FILE)).unwrap(), other);
}

#[test]
fn training_is_reproducible_from_the_seed() {
    let (codec, cfg) = small_run(5);
    let data = fixture();
    let trace = |cfg: &TrainConfig| {
        train(cfg, &codec, &data, |_| {})
            .unwrap()
            .report
            .epochs
            .iter()
            .map(|e| (e.reconstruction, e.codebook, e.commitment, e.utilization))
            .collect::<Vec<_>>()
    };
    let first = trace(&cfg);
    assert_eq!(first, trace(&cfg));
    assert_ne!(first, trace(&TrainConfig { seed: 6, ..cfg }));
}

#[test]
fn sweeps_are_reproducible_and_seed_sensitive() {
    let data = fixture();
    let cfg = SweepConfig {
        snr_list_db: vec![-5.0, 0.0],
        schemes: vec![Scheme::Webee],
        images_per_point: 16,
        ..SweepConfig::published(DatasetKind::Mnist)
    };
    let a = run_sweep(&cfg, None, &data).unwrap();
    let b = run_sweep(&cfg, None, &data).unwrap();
    assert_eq!(a.rows, b.rows);
    let c = run_sweep(&SweepConfig { seed: 1, ..cfg }, None, &data).unwrap();
    assert_ne!(a.rows, c.rows);
}

#[test]
fn webee_loss_degrades_with_falling_snr() {
    let data = fixture();
    let cfg = SweepConfig {
        snr_list_db: vec![-15.0, -10.0, -5.0, 0.0, 5.0, 10.0],
        schemes: vec![Scheme::Webee],
        images_per_point: 64,
        ..SweepConfig::published(DatasetKind::Mnist)
    };
    let res = run_sweep(&cfg, None, &data).unwrap();
    let rows = res.series(DatasetKind::Mnist, Scheme::Webee);
    for w in rows.windows(2) {
        assert!(w[0].snr_db < w[1].snr_db);
        assert!(w[0].packet_loss_fraction >= w[1].packet_loss_fraction);
        let slack = 2.0 * (w[0].mse_stderr.powi(2) + w[1].mse_stderr.powi(2)).sqrt();
        assert!(
            w[1].mse <= w[0].mse + slack,
            "{} dB -> {} dB",
            w[0].snr_db,
            w[1].snr_db
        );
    }
}

fn random_image(rng: &mut ChaCha8Rng, side: usize, channels: usize) -> Image {
    Image::new(
        side,
        side,
        channels,
        (0..side * side * channels).map(|_| rng.gen()).collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ber_and_loss_never_improve_as_snr_falls(lo in -30.0f64..30.0, gap in 0.0f64..20.0, floor in 0.0f64..0.01) {
        let mut a = ChannelModel::new(ChannelKind::Composite, lo, 0);
        a.ber_floor = floor;
        let b = a.with_snr(lo + gap);
        prop_assert!(a.ber() >= b.ber());
        prop_assert!(a.packet_loss_probability() >= b.packet_loss_probability());
        prop_assert!(a.ber() <= 0.5 && b.ber() >= floor);
    }

    #[test]
    fn identity_webee_error_is_bounded_by_quantization(seed in any::<u64>(), cifar in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (side, ch) = if cifar { (32, 3) } else { (28, 1) };
        let src = random_image(&mut rng, side, ch);
        let out = webee_baseline_roundtrip(&src, &ChannelModel::identity()).unwrap();
        prop_assert_eq!(&out, &src.quantized());
        // rounding to 8 bits moves each pixel by at most half a level
        prop_assert!(mse(&src, &out).unwrap() <= (0.5f64 / 255.0).powi(2));
    }

    #[test]
    fn djscc_bit_budget_follows_field_width(k in 2usize..=4096, cifar in any::<bool>()) {
        let dataset = if cifar { DatasetKind::Cifar10 } else { DatasetKind::Mnist };
        let slots: usize = if cifar { 64 } else { 49 };
        let width = (usize::BITS - (k - 1).leading_zeros()) as usize;
        prop_assert_eq!(bits_per_index(k).unwrap(), width);
        let per_packet = 184 / width;
        let bits = bits_per_image(Scheme::Djscc, dataset, k).unwrap();
        prop_assert_eq!(bits, slots.div_ceil(per_packet) * 200);
        prop_assert_eq!(Framing::dense(width).unwrap().wire_bits(slots), bits);
    }
}
