//! Drives the `djscc` binary end to end on a synthetic MNIST layout built
//! by tiling the 64 vendored digits up to the standard split sizes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use djscc::evaluation::{Scheme, SweepResult};
use djscc::training::{read_idx_images, write_idx_images, ImageSet, KB_FILE, SNAPSHOT_FILE};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_djscc"));
    c.env_remove("DJSCC_DATA_ROOT");
    c
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output {
        status,
        stdout,
        stderr,
    } = cmd.output().unwrap();
    (
        status.code().unwrap_or(-1),
        String::from_utf8(stdout).unwrap(),
        String::from_utf8(stderr).unwrap(),
    )
}

struct Shared {
    _dir: tempfile::TempDir,
    data: PathBuf,
    checkpoint: PathBuf,
    train_stdout: String,
    config: PathBuf,
}

fn tiled(base: &ImageSet, n: usize) -> ImageSet {
    let pixels = (0..n)
        .flat_map(|i| base.bytes(i % base.len()).to_vec())
        .collect();
    ImageSet::new(28, 28, 1, pixels).unwrap()
}

fn write_config(dir: &Path, name: &str, data_root: &Path, out: &Path, extra: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(
        &path,
        format!(
            "dataset = \"mnist\"\nseed = 11\nout = {out:?}\ndata_root = {data_root:?}\n\n\
             [train]\nepochs = 1\nbatch_size = 16\ntrain_limit = 32\n\n\
             [sweep]\nimages_per_point = 12\neval_batch = 5\n{extra}"
        ),
    )
    .unwrap();
    path
}

fn shared() -> &'static Shared {
    static S: OnceLock<Shared> = OnceLock::new();
    S.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let base = read_idx_images(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../core/tests/fixtures/mnist64-images-idx3-ubyte"
        ))
        .unwrap();
        let data = dir.path().join("data");
        fs::create_dir_all(data.join("mnist")).unwrap();
        write_idx_images(
            data.join("mnist/train-images-idx3-ubyte"),
            &tiled(&base, 60_000),
        )
        .unwrap();
        write_idx_images(
            data.join("mnist/t10k-images-idx3-ubyte"),
            &tiled(&base, 10_000),
        )
        .unwrap();
        let checkpoint = dir.path().join("ck");
        let config = write_config(dir.path(), "mnist.cfg", &data, &checkpoint, "");
        let (code, train_stdout, err) = run(bin().args(["train", "--config"]).arg(&config));
        assert_eq!(code, 0, "{err}");
        Shared {
            _dir: dir,
            data,
            checkpoint,
            train_stdout,
            config,
        }
    })
}

fn epoch_one(stdout: &str) -> String {
    stdout
        .lines()
        .find(|l| l.split_whitespace().next() == Some("1"))
        .expect("epoch line")
        .to_string()
}

#[test]
fn train_writes_a_checkpoint_with_published_codebook_shape() {
    let s = shared();
    let kb = fs::read(s.checkpoint.join(KB_FILE)).unwrap();
    assert_eq!(&kb[..8], b"DJSCKB1\0");
    assert_eq!(u32::from_le_bytes(kb[8..12].try_into().unwrap()), 512);
    assert_eq!(u32::from_le_bytes(kb[12..16].try_into().unwrap()), 256);
    assert_eq!(kb.len(), 16 + 512 * 256 * 4 + 32);
    for f in ["params.bin", "train_report.csv", SNAPSHOT_FILE] {
        assert!(s.checkpoint.join(f).is_file(), "{f} missing");
    }
    let header = s
        .train_stdout
        .lines()
        .find(|l| l.trim_start().starts_with("epoch"))
        .unwrap();
    for col in ["recon", "codebook", "commit", "total", "util"] {
        assert!(header.contains(col));
    }
}

#[test]
fn same_seed_reproduces_the_epoch_line_and_snapshot_reproduces_the_run() {
    let s = shared();
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = run(bin()
        .args(["train", "--config"])
        .arg(&s.config)
        .arg("--out")
        .arg(dir.path().join("again")));
    assert_eq!(code, 0, "{err}");
    assert_eq!(epoch_one(&out), epoch_one(&s.train_stdout));

    // the snapshot alone is enough to rerun
    let (code, out, err) = run(bin()
        .args(["train", "--config"])
        .arg(s.checkpoint.join(SNAPSHOT_FILE))
        .arg("--out")
        .arg(dir.path().join("from_snapshot")));
    assert_eq!(code, 0, "{err}");
    assert_eq!(epoch_one(&out), epoch_one(&s.train_stdout));

    let (code, out, _) = run(bin()
        .args(["train", "--config"])
        .arg(&s.config)
        .args(["--seed", "12", "--out"])
        .arg(dir.path().join("other")));
    assert_eq!(code, 0);
    assert_ne!(epoch_one(&out), epoch_one(&s.train_stdout));
}

#[test]
fn missing_dataset_root_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let cfg = write_config(dir.path(), "c.cfg", &missing, &dir.path().join("o"), "");
    let (code, _, err) = run(bin().args(["train", "--config"]).arg(&cfg));
    assert_eq!(code, 2);
    assert!(err.contains(&missing.display().to_string()), "{err}");

    // the environment variable takes precedence over the file
    let (code, _, err) = run(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .env("DJSCC_DATA_ROOT", dir.path().join("also_missing")));
    assert_eq!(code, 2);
    assert!(err.contains("also_missing"), "{err}");
}

#[test]
fn bad_configs_exit_2_with_line_anchored_messages() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    fs::write(
        &path,
        "dataset = \"mnist\"\n[train]\nepochs = 2\nlearning_rate = 0.1\n",
    )
    .unwrap();
    let (code, _, err) = run(bin().args(["train", "--config"]).arg(&path));
    assert_eq!(code, 2);
    assert!(err.contains(&format!("{}:4:", path.display())), "{err}");

    fs::write(&path, "dataset = \"svhn\"\n").unwrap();
    let (code, _, err) = run(bin().args(["sweep", "--config"]).arg(&path));
    assert_eq!(code, 2);
    assert!(err.contains(&format!("{}:1:", path.display())), "{err}");

    let (code, _, _) = run(bin().args(["sweep", "--schemes", "smoke-signals"]));
    assert_eq!(code, 2);
}

fn read_sweep(dir: &Path) -> SweepResult {
    SweepResult::read_csv(dir.join("sweep.csv")).unwrap()
}

#[test]
fn baseline_only_sweep_needs_no_checkpoint() {
    let s = shared();
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(bin()
        .args(["sweep", "--config"])
        .arg(&s.config)
        .args(["--schemes", "webee", "--out"])
        .arg(dir.path()));
    assert_eq!(code, 0, "{err}");
    let res = read_sweep(dir.path());
    assert_eq!(res.rows.len(), 6);
    assert!(res
        .rows
        .iter()
        .all(|r| r.scheme == Scheme::Webee && r.images == 12));
    for f in [
        "mse_vs_snr.svg",
        "ssim_vs_snr.svg",
        "bits_per_image.svg",
        SNAPSHOT_FILE,
    ] {
        let meta = fs::metadata(dir.path().join(f)).unwrap();
        assert!(meta.len() > 0, "{f} is empty");
    }

    // asking for the learned scheme without a checkpoint is a usage error
    let (code, _, err) = run(bin()
        .args(["sweep", "--config"])
        .arg(&s.config)
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(code, 2);
    assert!(err.contains("checkpoint"), "{err}");
}

#[test]
fn full_sweep_has_six_rows_per_scheme() {
    let s = shared();
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = run(bin()
        .args(["sweep", "--config"])
        .arg(&s.config)
        .arg("--checkpoint")
        .arg(&s.checkpoint)
        .args(["--snr", "-15,-10,-5,0,5,10", "--out"])
        .arg(dir.path()));
    assert_eq!(code, 0, "{err}");
    let res = read_sweep(dir.path());
    for scheme in [Scheme::Djscc, Scheme::Webee] {
        assert_eq!(res.rows.iter().filter(|r| r.scheme == scheme).count(), 6);
    }
    assert!(res
        .rows
        .iter()
        .filter(|r| r.scheme == Scheme::Djscc)
        .all(|r| r.bits_per_image == 600));
    assert!(out.contains("results written"));
    let svg = fs::read_to_string(dir.path().join("mse_vs_snr.svg")).unwrap();
    assert!(svg.contains("<svg") && svg.contains("djscc / mnist") && svg.contains("webee / mnist"));
}

#[test]
fn swapped_knowledge_base_is_refused() {
    let s = shared();
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck");
    fs::create_dir_all(&ck).unwrap();
    for entry in fs::read_dir(&s.checkpoint).unwrap() {
        let p = entry.unwrap().path();
        fs::copy(&p, ck.join(p.file_name().unwrap())).unwrap();
    }
    // flip one codebook float and re-seal the file so only the content differs
    let mut kb = djscc::semantic_kb::load_kb(ck.join(KB_FILE))
        .unwrap()
        .into_vectors();
    kb[0] += 1.0;
    let kb = djscc::semantic_kb::SemanticCodebook::new(512, 256, kb).unwrap();
    djscc::semantic_kb::save_kb(&kb, ck.join(KB_FILE)).unwrap();
    let (code, _, err) = run(bin()
        .args(["sweep", "--config"])
        .arg(&s.config)
        .arg("--checkpoint")
        .arg(&ck)
        .arg("--out")
        .arg(dir.path().join("o")));
    assert_eq!(code, 2);
    assert!(err.contains("knowledge base desynchronized"), "{err}");
}

fn write_png(path: &Path, side: u32, rgb: bool) {
    if rgb {
        image::RgbImage::from_fn(side, side, |x, y| {
            image::Rgb([(x * 8) as u8, (y * 8) as u8, 128])
        })
        .save(path)
        .unwrap();
    } else {
        image::GrayImage::from_fn(side, side, |x, y| image::Luma([((x * y) % 256) as u8]))
            .save(path)
            .unwrap();
    }
}

fn field(stats: &str, name: &str) -> f64 {
    let words: Vec<&str> = stats.split_whitespace().collect();
    let i = words
        .iter()
        .position(|w| *w == name)
        .unwrap_or_else(|| panic!("{name} missing in {stats}"));
    words[i + 1].parse().unwrap()
}

#[test]
fn roundtrip_reports_consistent_link_statistics() {
    let s = shared();
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("digit.png");
    write_png(&src, 28, false);

    let (code, out, err) = run(bin()
        .args(["roundtrip", "--checkpoint"])
        .arg(&s.checkpoint)
        .arg("--image")
        .arg(&src)
        .args(["--snr", "0", "--channel", "identity", "--out"])
        .arg(dir.path().join("clean")));
    assert_eq!(code, 0, "{err}");
    let stats = out.lines().next().unwrap();
    assert_eq!(field(stats, "bits"), 600.0);
    assert_eq!(field(stats, "lost"), 0.0);
    assert_eq!(field(stats, "erased_slots"), 0.0);
    let rec = image::open(dir.path().join("clean/reconstruction.png")).unwrap();
    assert_eq!((rec.width(), rec.height()), (28, 28));

    let (code, out, err) = run(bin()
        .args(["roundtrip", "--checkpoint"])
        .arg(&s.checkpoint)
        .arg("--image")
        .arg(&src)
        .args(["--snr", "-15", "--out"])
        .arg(dir.path().join("noisy")));
    assert_eq!(code, 0, "{err}");
    let stats = out.lines().next().unwrap();
    let (packets, lost, erased) = (
        field(stats, "packets"),
        field(stats, "lost"),
        field(stats, "erased_slots"),
    );
    assert_eq!(packets, 3.0);
    assert!(lost >= 0.0 && lost <= packets);
    // 49 slots in packets of 20, 20 and 9
    let slots = [20.0, 20.0, 9.0];
    assert!(
        (0..8u32).any(|mask| {
            let picked: Vec<f64> = (0..3)
                .filter(|b| mask & (1 << b) != 0)
                .map(|b| slots[b])
                .collect();
            picked.len() as f64 == lost && picked.iter().sum::<f64>() == erased
        }),
        "{stats}"
    );
}

#[test]
fn roundtrip_rejects_mismatched_images_with_both_shapes() {
    let s = shared();
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("cifar.png");
    write_png(&src, 32, true);
    let (code, _, err) = run(bin()
        .args(["roundtrip", "--checkpoint"])
        .arg(&s.checkpoint)
        .arg("--image")
        .arg(&src)
        .args(["--snr", "5", "--out"])
        .arg(dir.path()));
    assert_eq!(code, 2);
    assert!(err.contains("32x32x3") && err.contains("28x28x1"), "{err}");
}

#[test]
fn inspect_kb_prints_shape_hash_and_utilization() {
    let s = shared();
    let (code, out, err) = run(bin().arg("inspect-kb").arg(s.checkpoint.join(KB_FILE)));
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("K 512") && out.contains("J 256"));
    let hash = out.lines().find_map(|l| l.strip_prefix("hash ")).unwrap();
    assert_eq!(hash.len(), 64);

    let (code, out, err) = run(bin()
        .arg("inspect-kb")
        .arg(&s.checkpoint)
        .args(["--images", "50"])
        .env("DJSCC_DATA_ROOT", &s.data));
    assert_eq!(code, 0, "{err}");
    assert!(out.contains(&format!("hash {hash}")));
    let measured = out.lines().find(|l| l.contains("test images")).unwrap();
    assert!(measured.starts_with("utilization "), "{measured}");
    assert!(out.lines().any(|l| l.contains("training epoch 1")));
}
