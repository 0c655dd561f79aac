use std::path::{Path, PathBuf};
use std::process::Command;

use candle_core::Tensor;
use ndarray::Array2;
use tcgan::trainer::Representation;
use tcgan_cli::{
    cmd_eval, cmd_report, cmd_traverse, evaluate_on, train_config, CliError, ExperimentConfig,
    TraversalSpec, Variable,
};

const SMALL: &str = r#"
[arch]
base_channels = 8
generator_channels = 16
feature_width = 32
tcd_hidden = 64
tcd_layers = 2

[metrics]
z_diff_votes = 200
"#;

fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let path = dir.join(format!("{name}.toml"));
    let text = format!("output_dir = \"{name}\"\n{extra}\n{SMALL}");
    std::fs::write(&path, text).unwrap();
    path
}

fn tcgan_bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_tcgan"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

/// Trains `epochs` epochs of the small profile and returns the run dir.
fn small_run(dir: &Path, name: &str, train: &str) -> PathBuf {
    let cfg = ExperimentConfig::load(&write_config(dir, name, &format!("[train]\n{train}"))).unwrap();
    train_config(&cfg).unwrap().output_dir
}

#[test]
fn train_writes_config_checkpoints_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run", "[train]\nepochs = 2");
    let out = tcgan_bin(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    let resolved = std::fs::read_to_string(run.join("resolved_config.toml")).unwrap();
    // every default is materialized
    for key in ["lr_generator", "beta_tc", "n_bins", "x_positions", "noise"] {
        assert!(resolved.contains(key), "{key} missing from\n{resolved}");
    }
    let ckpts: Vec<_> = std::fs::read_dir(run.join("checkpoints")).unwrap().collect();
    assert!(!ckpts.is_empty());
    let log = std::fs::read_to_string(run.join("loss_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2 * (256 / 64));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_run(dir.path(), "a", "epochs = 1\nseed = 4");
    let mut cfg = ExperimentConfig::load(&a.join("resolved_config.toml")).unwrap();
    cfg.output_dir = dir.path().join("b");
    let b = train_config(&cfg).unwrap().output_dir;
    let log = |d: &Path| std::fs::read_to_string(d.join("loss_log.jsonl")).unwrap();
    assert_eq!(log(&a), log(&b));
}

#[test]
fn ablation_configs_differ_only_in_beta() {
    let dir = tempfile::tempdir().unwrap();
    let on = ExperimentConfig::load(&write_config(dir.path(), "on", "")).unwrap();
    let off = ExperimentConfig::load(&write_config(dir.path(), "off", "[train]\nbeta_tc = 0.0")).unwrap();
    let diff: Vec<(String, String)> = on
        .to_toml()
        .lines()
        .zip(off.to_toml().lines())
        .filter(|(a, b)| a != b)
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    assert_eq!(diff.len(), 2, "{diff:?}");
    assert!(diff[0].0.starts_with("output_dir"));
    assert_eq!(diff[1], ("beta_tc = 0.001".into(), "beta_tc = 0.0".into()));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let typo = write_config(dir.path(), "typo", "[train]\nbetaa = 0.0");
    let out = tcgan_bin(&["train", "--config", typo.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("betaa"));

    let missing = dir.path().join("nope.safetensors");
    let out = tcgan_bin(&[
        "traverse",
        "--checkpoint",
        missing.to_str().unwrap(),
        "--out",
        dir.path().join("g.png").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));

    let wild = write_config(dir.path(), "wild", "[train]\nepochs = 1\nlr_discriminator = 1e30\nlr_generator = 1e30");
    let out = tcgan_bin(&["train", "--config", wild.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn eval_is_deterministic_and_checks_the_profile() {
    let dir = tempfile::tempdir().unwrap();
    let run = small_run(dir.path(), "run", "epochs = 1\neval_every = 0");
    let ckpt = run.join("checkpoints/last.safetensors");
    let cfg = dir.path().join("run.toml");
    let (r1, p1) = cmd_eval(&ckpt, &cfg, None, Some(&dir.path().join("r1.json"))).unwrap();
    let (_, p2) = cmd_eval(&ckpt, &cfg, None, Some(&dir.path().join("r2.json"))).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(r1.settings.metric.n_bins, 20);
    let json = std::fs::read_to_string(&p1).unwrap();
    assert!(json.contains("\"n_bins\": 20") && json.contains("\"seed\": 0"));

    let other = write_config(dir.path(), "other", "[latent]\ncontinuous = 4\nnoise = 6");
    assert!(matches!(cmd_eval(&ckpt, &other, None, None), Err(CliError::Config(m)) if m.contains("profile")));
}

/// Reads each square back from the pixels: the identity oracle.
struct SquareReader;

impl Representation for SquareReader {
    fn encode(&self, images: &Tensor) -> tcgan::Result<Array2<f64>> {
        let (n, _, h, w) = images.dims4()?;
        let px: Vec<f32> = images.flatten_all()?.to_vec1()?;
        let mut out = Array2::zeros((n, 3));
        for i in 0..n {
            let img = &px[i * h * w..(i + 1) * h * w];
            let on: Vec<(usize, usize)> = (0..h * w).filter(|&j| img[j] > 0.0).map(|j| (j % w, j / w)).collect();
            let (x0, x1) = (on.iter().map(|p| p.0).min().unwrap(), on.iter().map(|p| p.0).max().unwrap());
            let (y0, y1) = (on.iter().map(|p| p.1).min().unwrap(), on.iter().map(|p| p.1).max().unwrap());
            out[[i, 0]] = (x0 + x1) as f64;
            out[[i, 1]] = (y0 + y1) as f64;
            out[[i, 2]] = (x1 - x0) as f64;
        }
        Ok(out)
    }
}

/// One-hot of each [`SquareReader`] reading, for the classifier-based metric.
struct OneHotSquareReader;

const READING_LEVELS: usize = 64;

impl Representation for OneHotSquareReader {
    fn encode(&self, images: &Tensor) -> tcgan::Result<Array2<f64>> {
        let levels = SquareReader.encode(images)?;
        let mut out = Array2::zeros((levels.nrows(), levels.ncols() * READING_LEVELS));
        for ((i, k), &v) in levels.indexed_iter() {
            out[[i, k * READING_LEVELS + v as usize]] = 1.0;
        }
        Ok(out)
    }
}

#[test]
fn identity_oracle_scores() {
    let cfg = ExperimentConfig::from_toml("output_dir = \"x\"\n").unwrap();
    let ds = cfg.dataset.load().unwrap();
    let levels = evaluate_on(&SquareReader, &ds, &cfg.metrics).unwrap();
    assert!(levels.sap >= 0.9, "{}", levels.sap);
    assert!(levels.z_diff >= 0.95, "{}", levels.z_diff);
    assert!(levels.jemmig >= 0.8, "{}", levels.jemmig);
    assert!(levels.modularity >= 0.95, "{}", levels.modularity);
    // never-active one-hot columns score 0 on modularity, so only
    // explicitness is read from this representation
    let onehot = evaluate_on(&OneHotSquareReader, &ds, &cfg.metrics).unwrap();
    assert!(onehot.explicitness >= 0.99, "{}", onehot.explicitness);
}

#[test]
fn traversal_grid_layout_and_continuity() {
    let dir = tempfile::tempdir().unwrap();
    let run = small_run(dir.path(), "run", "epochs = 1\neval_every = 0");
    let ckpt = run.join("checkpoints/last.safetensors");
    let spec = TraversalSpec::default();
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    cmd_traverse(&ckpt, &spec, &a).unwrap();
    cmd_traverse(&ckpt, &spec, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let img = image::open(&a).unwrap().to_luma8();
    assert_eq!(img.dimensions(), (10 * 32, 8 * 32));

    let narrow = TraversalSpec {
        variable: Variable::Continuous(1),
        range: (0.5 - 1e-6, 0.5),
        steps: 2,
        ..TraversalSpec::default()
    };
    cmd_traverse(&ckpt, &narrow, &a).unwrap();
    let img = image::open(&a).unwrap().to_luma8();
    assert_eq!(img.dimensions(), (2 * 32, 8 * 32));
    let mut worst = 0i32;
    for y in 0..img.height() {
        for x in 0..32 {
            let d = img.get_pixel(x, y).0[0] as i32 - img.get_pixel(x + 32, y).0[0] as i32;
            worst = worst.max(d.abs());
        }
    }
    assert!(worst <= 1, "columns differ by {worst} levels");

    let bad = TraversalSpec { range: (1.0, 1.0), ..TraversalSpec::default() };
    assert!(matches!(cmd_traverse(&ckpt, &bad, &a), Err(CliError::Config(_))));
}

#[test]
fn report_groups_by_config() {
    let dir = tempfile::tempdir().unwrap();
    let runs = vec![
        small_run(dir.path(), "on0", "epochs = 1\nseed = 0"),
        small_run(dir.path(), "on1", "epochs = 1\nseed = 1"),
        small_run(dir.path(), "off0", "epochs = 1\nseed = 0\nbeta_tc = 0.0"),
    ];
    let table = cmd_report(&runs, None).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "{table}");
    let single = rows.iter().find(|r| r.split_whitespace().nth(2) == Some("0")).unwrap();
    assert_eq!(single.split_whitespace().nth(3), Some("1"));
    assert!(single.contains("± 0.0000"));
    assert!(cmd_report(&[], None).is_err());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap();
        cfg.validate().unwrap();
        n += 1;
    }
    assert!(n >= 2);
}
