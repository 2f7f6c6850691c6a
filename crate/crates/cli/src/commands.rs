use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use oucd_core::checkpoint::Checkpoint;
use oucd_core::model::{dump_feature_maps, render_rf_table, rf_table, Oucd};
use oucd_core::rain::{
    build_manifest, generate_scene, list_pngs, load_image, save_image, synthesize_pair, Manifest, RainParams, Split,
};
use oucd_core::seed::derive_seed;
use oucd_core::tensor::gradcheck::{gradient_check_all, GradOp, Precision};
use oucd_core::train::{
    evaluate, identity_report, infer_full, load_network, load_split, run_ablation_with, timing_report, Sample, Trainer,
};
use oucd_core::{Error, Result};

use crate::config::{RunConfig, CONFIG_FILE};
use crate::{ConfigArgs, PrecisionArg, SplitArg};

const CHECKPOINT_FILE: &str = "checkpoint.oucd";
const TRAIN_LOG: &str = "train.log";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_config(args: &ConfigArgs, data_dir: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    if let Some(dir) = data_dir {
        cfg.data.dir = dir;
    }
    Ok(cfg)
}

fn parse_size(raw: &str) -> Result<(usize, usize)> {
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::Usage(format!("bad image size {raw:?}; expected SIZE or HEIGHTxWIDTH")))
    };
    match raw.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => parse(raw).map(|s| (s, s)),
    }
}

pub struct SynthArgs {
    pub clean_dir: Option<PathBuf>,
    pub scenes: Option<usize>,
    pub size: String,
    pub params: Option<PathBuf>,
    pub scale_rain: bool,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub cfg: ConfigArgs,
}

pub fn synth(a: SynthArgs) -> Result<ExitCode> {
    let mut cfg = load_config(&a.cfg, None)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(path) = &a.params {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.rain = toml::from_str::<RainParams>(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        cfg.rain.validate()?;
    }

    let sources: Vec<(String, Source)> = match (&a.clean_dir, a.scenes) {
        (Some(dir), _) => {
            if !dir.is_dir() {
                return Err(Error::Usage(format!("clean directory {} does not exist", dir.display())));
            }
            let names = list_pngs(dir)?;
            if names.is_empty() {
                return Err(Error::Usage(format!("clean directory {} holds no PNG files", dir.display())));
            }
            names.into_iter().map(|n| (n.clone(), Source::File(dir.join(n)))).collect()
        }
        (None, Some(0)) => return Err(Error::Usage("--scenes must be positive".into())),
        (None, Some(n)) => {
            let (h, w) = parse_size(&a.size)?;
            (0..n).map(|i| (format!("{i:04}.png"), Source::Scene(h, w, i))).collect()
        }
        (None, None) => return Err(Error::Usage("synth needs --clean-dir or --scenes".into())),
    };

    let (clean_out, rainy_out) = (a.out_dir.join("clean"), a.out_dir.join("rainy"));
    create_dir(&clean_out)?;
    create_dir(&rainy_out)?;
    let mut used_counts = Vec::new();
    for (name, source) in &sources {
        let clean = match source {
            Source::File(path) => load_image(path)?,
            Source::Scene(h, w, i) => generate_scene(*h, *w, derive_seed(cfg.seed, &format!("scene/{i}"))),
        };
        let s = clean.shape();
        let mut params = cfg.rain.clone().with_seed(derive_seed(cfg.seed, &format!("rain/{name}")));
        if a.scale_rain {
            params = params.scaled_to(s.h, s.w);
        }
        if !used_counts.contains(&params.streak_count) {
            used_counts.push(params.streak_count);
        }
        let pair = synthesize_pair(&clean, &params)?;
        save_image(&pair.clean, &clean_out.join(name))?;
        save_image(&pair.rainy, &rainy_out.join(name))?;
    }
    let manifest = build_manifest(&a.out_dir, cfg.data.fractions, cfg.seed)?;
    cfg.data.dir = a.out_dir.clone();
    match used_counts.as_slice() {
        [one] => cfg.rain.streak_count = *one,
        _ => eprintln!("warning: streak counts were scaled per image size; config.toml keeps the unscaled range"),
    }
    cfg.write_to(&a.out_dir)?;
    println!(
        "wrote {} pairs to {} (train {}, val {}, test {})",
        sources.len(),
        a.out_dir.display(),
        manifest.files(Split::Train).len(),
        manifest.files(Split::Val).len(),
        manifest.files(Split::Test).len()
    );
    Ok(ExitCode::SUCCESS)
}

enum Source {
    File(PathBuf),
    Scene(usize, usize, usize),
}

fn load_samples(cfg: &RunConfig, split: Split) -> Result<Vec<Sample>> {
    let manifest = Manifest::read(&cfg.data.dir.join("manifest.txt"))?;
    let samples = load_split(&cfg.data.dir, &manifest, split)?;
    if samples.is_empty() {
        return Err(Error::Usage(format!("the {} split of {} is empty", split.name(), cfg.data.dir.display())));
    }
    Ok(samples)
}

fn save_snapshot(dir: &Path, err: &Error) -> Result<()> {
    let Error::NonFinite { snapshot, .. } = err else {
        return Ok(());
    };
    let out = dir.join("nonfinite_batch");
    create_dir(&out)?;
    for (i, name) in snapshot.names.iter().enumerate() {
        save_image(&snapshot.rainy.sample(i), &out.join(format!("rainy_{name}")))?;
        save_image(&snapshot.clean.sample(i), &out.join(format!("clean_{name}")))?;
    }
    eprintln!("offending batch written to {}", out.display());
    Ok(())
}

pub fn train(
    output_dir: &Path,
    data_dir: Option<PathBuf>,
    resume: Option<&Path>,
    args: &ConfigArgs,
) -> Result<ExitCode> {
    let cfg = load_config(args, data_dir)?;
    let data = load_samples(&cfg, Split::Train)?;
    cfg.write_to(output_dir)?;
    let train_cfg = cfg.train_config();
    let mut trainer = match resume {
        Some(path) => Trainer::resume(train_cfg, &Checkpoint::load(path)?)?,
        None => Trainer::new(train_cfg)?,
    };
    let log_path = output_dir.join(TRAIN_LOG);
    let file = if resume.is_some() {
        File::options().append(true).create(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let mut io_err = None;
    let outcome = trainer.run(&data, |line| {
        println!("{line}");
        if let Err(e) = writeln!(log, "{line}") {
            io_err.get_or_insert(e);
        }
    });
    if let Err(e) = outcome {
        save_snapshot(output_dir, &e)?;
        return Err(e);
    }
    if let Some(e) = io_err {
        return Err(Error::io(&log_path, e));
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let ckpt_path = output_dir.join(CHECKPOINT_FILE);
    trainer.checkpoint().save(&ckpt_path)?;
    println!("trained {} steps over {} epochs; checkpoint {}", trainer.step(), trainer.epoch(), ckpt_path.display());
    Ok(ExitCode::SUCCESS)
}

/// The explicit config if given, else the one stored beside the checkpoint, else defaults.
fn config_for_checkpoint(ckpt: &Path, args: &ConfigArgs, data_dir: Option<PathBuf>) -> Result<RunConfig> {
    let beside = ckpt.parent().map(|d| d.join(CONFIG_FILE)).filter(|p| p.is_file());
    let file = args.config.clone().or(beside);
    let resolved = ConfigArgs { config: file, overrides: args.overrides.clone() };
    load_config(&resolved, data_dir)
}

fn load_checkpointed(ckpt: &Path, cfg: &RunConfig) -> Result<Oucd> {
    load_network(&cfg.arch(), &Checkpoint::load(ckpt)?)
}

pub fn infer(ckpt: &Path, input: &Path, output_dir: &Path, args: &ConfigArgs) -> Result<ExitCode> {
    let cfg = config_for_checkpoint(ckpt, args, None)?;
    let net = load_checkpointed(ckpt, &cfg)?;
    let inputs: Vec<(String, PathBuf)> = if input.is_dir() {
        list_pngs(input)?.into_iter().map(|n| (n.clone(), input.join(n))).collect()
    } else if input.is_file() {
        let name = input
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| Error::Usage(format!("input {} has no file name", input.display())))?;
        vec![(name, input.to_path_buf())]
    } else {
        return Err(Error::Usage(format!("input {} does not exist", input.display())));
    };
    if inputs.is_empty() {
        return Err(Error::Usage(format!("no PNG files in {}", input.display())));
    }
    create_dir(output_dir)?;
    for (name, path) in &inputs {
        let y = load_image(path)?;
        let out = infer_full(&net, &y)?;
        let dest = output_dir.join(Path::new(name).with_extension("png"));
        save_image(&out, &dest)?;
        println!("{} -> {}", path.display(), dest.display());
    }
    cfg.write_to(output_dir)?;
    Ok(ExitCode::SUCCESS)
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    }
}

pub fn eval(
    ckpt: &Path,
    output_dir: &Path,
    data_dir: Option<PathBuf>,
    split: SplitArg,
    timing: Option<(usize, usize)>,
    args: &ConfigArgs,
) -> Result<ExitCode> {
    let cfg = config_for_checkpoint(ckpt, args, data_dir)?;
    let net = load_checkpointed(ckpt, &cfg)?;
    let samples = load_samples(&cfg, split_of(split))?;
    let report = evaluate(&net, &samples)?;
    let identity = identity_report(&samples)?;
    let timing = timing.map(|(side, reps)| timing_report(&net, side, side, reps)).transpose()?;

    let mut text = report.to_text();
    text.push_str(&format!(
        "identity baseline: PSNR {:.3} dB, SSIM {:.4}\n",
        identity.mean_psnr(),
        identity.mean_ssim()
    ));
    if let Some(t) = &timing {
        text.push_str(&format!("{t}\n"));
    }
    let parse = |s: String| serde_json::from_str::<serde_json::Value>(&s).expect("report JSON is valid");
    let mut json = serde_json::json!({
        "split": split_of(split).name(),
        "model": parse(report.to_json()),
        "identity": parse(identity.to_json()),
    });
    if let Some(t) = &timing {
        json["timing"] = serde_json::json!({
            "height": t.height,
            "width": t.width,
            "seconds": t.seconds,
            "samples": t.samples,
            "hardware": t.hardware,
        });
    }
    create_dir(output_dir)?;
    write_text(&output_dir.join("eval.txt"), &text)?;
    write_text(&output_dir.join("eval.json"), &serde_json::to_string_pretty(&json).expect("serializes"))?;
    cfg.write_to(output_dir)?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

pub fn ablate(output_dir: &Path, data_dir: Option<PathBuf>, args: &ConfigArgs) -> Result<ExitCode> {
    let cfg = load_config(args, data_dir)?;
    let train_set = load_samples(&cfg, Split::Train)?;
    let test_set = load_samples(&cfg, Split::Test)?;
    cfg.write_to(output_dir)?;
    let report = run_ablation_with(&cfg.train_config(), &train_set, &test_set, |row| {
        eprintln!("{}: {} steps, PSNR {:.3} dB", row.label(), row.steps, row.report.mean_psnr());
    })?;
    write_text(&output_dir.join("ablation.txt"), &report.to_text())?;
    write_text(&output_dir.join("ablation.json"), &report.to_json())?;
    print!("{}", report.to_text());
    Ok(ExitCode::SUCCESS)
}

pub fn rf_report(kernel: i64, max_layer: i64) -> Result<ExitCode> {
    if kernel <= 0 {
        return Err(Error::Usage(format!("--kernel must be positive, got {kernel}")));
    }
    if max_layer <= 0 {
        return Err(Error::Usage(format!("--max-layer must be positive, got {max_layer}")));
    }
    let rows = rf_table(max_layer as usize, kernel as usize)?;
    print!("{}", render_rf_table(&rows, kernel as usize));
    Ok(ExitCode::SUCCESS)
}

fn parse_ops(spec: &str) -> Result<Vec<GradOp>> {
    if spec.trim() == "all" {
        return Ok(GradOp::ALL.to_vec());
    }
    spec.split(',')
        .map(|name| {
            GradOp::from_name(name.trim()).ok_or_else(|| {
                let known: Vec<_> = GradOp::ALL.iter().map(|o| o.name()).collect();
                Error::Usage(format!("unknown op {name:?}; known ops: all, {}", known.join(", ")))
            })
        })
        .collect()
}

pub fn gradcheck(
    ops: &str,
    tolerance: Option<f64>,
    precision: PrecisionArg,
    cases: usize,
    seed: u64,
) -> Result<ExitCode> {
    let ops = parse_ops(ops)?;
    if let Some(t) = tolerance {
        if !(t > 0.0) {
            return Err(Error::Usage(format!("--tolerance must be positive, got {t}")));
        }
    }
    if cases == 0 {
        return Err(Error::Usage("--cases must be positive".into()));
    }
    let precisions = match precision {
        PrecisionArg::Single => vec![Precision::Single],
        PrecisionArg::Double => vec![Precision::Double],
        PrecisionArg::Both => vec![Precision::Single, Precision::Double],
    };
    let mut all_passed = true;
    for p in precisions {
        let report = gradient_check_all(&ops, p, tolerance.unwrap_or(p.default_tolerance()), cases, seed);
        print!("{}", report.render());
        all_passed &= report.passed();
    }
    println!("{}", if all_passed { "all checks passed" } else { "some checks FAILED" });
    Ok(if all_passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

pub fn dump_features(
    input: &Path,
    layers: &str,
    output_dir: &Path,
    ckpt: Option<&Path>,
    max_channels: Option<usize>,
    args: &ConfigArgs,
) -> Result<ExitCode> {
    let (cfg, net) = match ckpt {
        Some(path) => {
            let cfg = config_for_checkpoint(path, args, None)?;
            let net = load_checkpointed(path, &cfg)?;
            (cfg, net)
        }
        None => {
            let cfg = load_config(args, None)?;
            let net = Oucd::new(cfg.arch(), cfg.seed)?;
            (cfg, net)
        }
    };
    let y = load_image(input)?;
    let divisor = cfg.arch().required_divisor();
    let s = y.shape();
    if s.h % divisor != 0 || s.w % divisor != 0 {
        return Err(Error::Usage(format!(
            "feature dumps need image sides divisible by {divisor}, got {}x{}",
            s.h, s.w
        )));
    }
    let maps = dump_feature_maps(&net, &y, layers, output_dir, max_channels)?;
    let degenerate = maps.iter().filter(|m| m.degenerate).count();
    cfg.write_to(output_dir)?;
    println!("wrote {} maps to {} ({degenerate} constant maps written as zeros)", maps.len(), output_dir.display());
    Ok(ExitCode::SUCCESS)
}
