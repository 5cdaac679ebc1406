//! The `csdn` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime or data error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::csdn::{Arch, Csdn, CsdnConfig};
use crate::error::{config_err, Error, Result};
use crate::imageio::{read_dir_images, read_image, write_gray, write_image};
use crate::model::{load_csdn, load_model, load_pcn, save_model, Model, SavedModel};
use crate::optim::StepDecay;
use crate::pcn::{Pcn, PcnConfig};
use crate::pipeline::{evaluate, train_csdn, train_pcn, ClassifiedDenoiser, Classifier, Denoiser, TrainConfig};
use crate::raster::Image;
use crate::stats::{hash_classes, HashConfig};

#[derive(Debug, Parser)]
#[command(name = "csdn", version, about = "Class-specific convolution denoising")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the class map (and statistics) of an image.
    Classify(ClassifyArgs),
    /// Denoise one image.
    Denoise(DenoiseArgs),
    /// Train the pixel classification network.
    TrainPcn(TrainPcnArgs),
    /// Train a denoiser.
    TrainCsdn(TrainCsdnArgs),
    /// Score a denoiser on a directory of clean images.
    Eval(EvalArgs),
    /// Print the FLOPs-per-pixel report of a model.
    Flops(FlopsArgs),
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// PCN model file.
    #[arg(long, conflicts_with = "raisr", required_unless_present = "raisr")]
    pcn: Option<PathBuf>,
    /// Classify by eigen-analysis of the input itself.
    #[arg(long)]
    raisr: bool,
    #[arg(long)]
    out: PathBuf,
    /// Per-pixel statistics CSV; defaults to OUT with a .csv extension.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DenoiseArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, conflicts_with = "raisr", required_unless_present = "raisr")]
    pcn: Option<PathBuf>,
    #[arg(long)]
    raisr: bool,
    #[arg(long)]
    csdn: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 25.0)]
    sigma: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    steps_per_epoch: usize,
    #[arg(long, default_value_t = 96)]
    patch: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Epochs between learning-rate halvings.
    #[arg(long, default_value_t = 20)]
    decay_every: usize,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            sigma: self.sigma,
            batch_size: self.batch,
            patch_size: self.patch,
            epochs: self.epochs,
            steps_per_epoch: self.steps_per_epoch,
            schedule: StepDecay {
                initial: self.lr,
                factor: 0.5,
                every: self.decay_every,
            },
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
struct TrainPcnArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, default_value_t = PcnConfig::default().c_f)]
    c_f: usize,
    #[arg(long, default_value_t = PcnConfig::default().num_scales)]
    scales: usize,
    #[arg(long, default_value_t = PcnConfig::default().grb_count)]
    grb: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ClassifierArg {
    Pcn,
    RaisrNoisy,
    RaisrClean,
}

#[derive(Debug, Args)]
struct TrainCsdnArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, value_enum, default_value = "pcn")]
    classifier: ClassifierArg,
    /// PCN model file, required with `--classifier pcn`.
    #[arg(long)]
    pcn: Option<PathBuf>,
    #[arg(long, default_value = "edsr")]
    arch: String,
    #[arg(long, default_value_t = 16)]
    blocks: usize,
    #[arg(long, default_value_t = 16)]
    features: usize,
    /// Shared-weight convolutions instead of class-specific ones.
    #[arg(long)]
    plain: bool,
    #[arg(long)]
    image_skip: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 25.0)]
    sigma: f64,
    #[arg(long, conflicts_with = "raisr", required_unless_present = "raisr")]
    pcn: Option<PathBuf>,
    #[arg(long)]
    raisr: bool,
    #[arg(long)]
    csdn: PathBuf,
    /// CSV report path.
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct FlopsArgs {
    #[arg(long)]
    model: PathBuf,
    /// PCN model to add; the default PCN configuration otherwise.
    #[arg(long)]
    pcn: Option<PathBuf>,
}

/// Appends `--key value` for every entry of a flat `key=value` file whose
/// flag is not already on the command line.
fn merge_config(args: Vec<String>) -> Result<Vec<String>> {
    let Some(i) = args.iter().position(|a| a == "--config") else {
        return Ok(args);
    };
    let Some(path) = args.get(i + 1).cloned() else {
        return config_err("--config needs a file path");
    };
    let mut out: Vec<String> = args[..i].iter().chain(&args[i + 2..]).cloned().collect();
    let text = fs::read_to_string(&path)?;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return config_err(format!("{path}:{}: expected key=value", n + 1));
        };
        let flag = format!("--{}", k.trim().replace('_', "-"));
        if out.iter().any(|a| a == &flag || a.starts_with(&format!("{flag}="))) {
            continue;
        }
        match v.trim() {
            "true" => out.push(flag),
            "false" => {}
            v => {
                out.push(flag);
                out.push(v.to_string());
            }
        }
    }
    Ok(out)
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let args = match merge_config(args.into_iter().map(Into::into).collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Classify(a) => classify(a),
        Command::Denoise(a) => denoise(a),
        Command::TrainPcn(a) => train_pcn_cmd(a),
        Command::TrainCsdn(a) => train_csdn_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Flops(a) => flops(a),
    }
}

/// Class index `i` of `m` as a gray level.
pub fn class_to_byte(i: u32, m: usize) -> u8 {
    if m <= 1 {
        return 0;
    }
    (255.0 * (i - 1) as f64 / (m - 1) as f64).round() as u8
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let img = read_image(&a.input)?;
    let (stats, hash) = match &a.pcn {
        Some(p) => {
            let (pcn, hash) = load_pcn(p)?;
            (Classifier::Pcn(&pcn).stats(&img, None, &hash)?, hash)
        }
        None => {
            let hash = HashConfig::default();
            (Classifier::RaisrNoisy.stats(&img, None, &hash)?, hash)
        }
    };
    let classes = hash_classes(&stats, &hash);
    let m = hash.num_classes();
    let bytes: Vec<u8> = classes.indices().iter().map(|&i| class_to_byte(i, m)).collect();
    write_gray(&bytes, img.width(), img.height(), &a.out)?;

    let mut csv = String::from("y,x,phi,strength,coherence,class\n");
    for y in 0..img.height() {
        for x in 0..img.width() {
            csv.push_str(&format!(
                "{y},{x},{},{},{},{}\n",
                stats.phi.get(y, x),
                stats.strength.get(y, x),
                stats.coherence.get(y, x),
                classes.get(0, y, x)
            ));
        }
    }
    let stats_path = a.stats.unwrap_or_else(|| a.out.with_extension("csv"));
    fs::write(&stats_path, csv)?;
    println!(
        "wrote {} ({} classes) and {}",
        a.out.display(),
        m,
        stats_path.display()
    );
    Ok(())
}

fn denoise(a: DenoiseArgs) -> Result<()> {
    let (csdn, csdn_hash) = load_csdn(&a.csdn)?;
    let pcn = a.pcn.as_ref().map(load_pcn).transpose()?;
    let img = read_image(&a.input)?;
    let out = match &pcn {
        Some((p, hash)) => ClassifiedDenoiser::new(Classifier::Pcn(p), &csdn, hash)?.denoise(&img)?,
        None => ClassifiedDenoiser::new(Classifier::RaisrNoisy, &csdn, &csdn_hash)?.denoise(&img)?,
    };
    write_image(&out.clipped(), &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn training_images(dir: &Path) -> Result<Vec<Image>> {
    Ok(read_dir_images(dir)?.into_iter().map(|(_, im)| im).collect())
}

fn print_losses(losses: &[f64]) {
    for (e, l) in losses.iter().enumerate() {
        println!("epoch {e:>3}  loss {l:.6}");
    }
}

fn train_pcn_cmd(a: TrainPcnArgs) -> Result<()> {
    let images = training_images(&a.train.data)?;
    let cfg = PcnConfig {
        c_f: a.c_f,
        num_scales: a.scales,
        grb_count: a.grb,
    };
    let hash = HashConfig::default();
    let mut pcn = Pcn::new(cfg, a.train.seed)?;
    let report = train_pcn(&images, &a.train.config(), &mut pcn, &hash)?;
    print_losses(&report.epoch_losses);
    let saved = SavedModel {
        model: Model::Pcn(pcn),
        hash,
        seed: a.train.seed,
    };
    save_model(&saved, &a.train.out)?;
    println!("wrote {}", a.train.out.display());
    Ok(())
}

fn train_csdn_cmd(a: TrainCsdnArgs) -> Result<()> {
    let images = training_images(&a.train.data)?;
    let pcn = match (a.classifier, &a.pcn) {
        (ClassifierArg::Pcn, Some(p)) => Some(load_pcn(p)?),
        (ClassifierArg::Pcn, None) => return config_err("--classifier pcn needs --pcn MODEL"),
        _ => None,
    };
    let hash = pcn.as_ref().map(|(_, h)| h.clone()).unwrap_or_default();
    let cfg = CsdnConfig {
        arch: a.arch.parse::<Arch>()?,
        num_blocks: a.blocks,
        num_features: a.features,
        use_csconv: !a.plain,
        num_classes: hash.num_classes(),
        image_skip: a.image_skip,
        ..Default::default()
    };
    let classifier = match (a.classifier, &pcn) {
        (ClassifierArg::Pcn, Some((p, _))) => Classifier::Pcn(p),
        (ClassifierArg::RaisrClean, _) => Classifier::RaisrClean,
        _ => Classifier::RaisrNoisy,
    };
    let mut csdn = Csdn::new(cfg, a.train.seed)?;
    let report = train_csdn(&images, &a.train.config(), &mut csdn, classifier, &hash)?;
    print_losses(&report.epoch_losses);
    let saved = SavedModel {
        model: Model::Csdn(csdn),
        hash,
        seed: a.train.seed,
    };
    save_model(&saved, &a.train.out)?;
    println!("wrote {}", a.train.out.display());
    Ok(())
}

fn header(saved: &SavedModel) -> String {
    saved
        .metadata()
        .iter()
        .map(|(k, v)| format!("# {k}={v}\n"))
        .collect()
}

fn eval(a: EvalArgs) -> Result<()> {
    let images = read_dir_images(&a.data)?;
    let saved = load_model(&a.csdn)?;
    let Model::Csdn(csdn) = &saved.model else {
        return Err(Error::ArchitectureMismatch {
            expected: "csdn".into(),
            found: saved.model.kind().into(),
        });
    };
    let pcn = a.pcn.as_ref().map(load_pcn).transpose()?;
    let report = match &pcn {
        Some((p, hash)) => evaluate(&ClassifiedDenoiser::new(Classifier::Pcn(p), csdn, hash)?, &images, a.sigma, a.seed)?,
        None => evaluate(
            &ClassifiedDenoiser::new(Classifier::RaisrNoisy, csdn, &saved.hash)?,
            &images,
            a.sigma,
            a.seed,
        )?,
    };
    fs::write(&a.report, report.to_csv())?;
    print!("{}", header(&saved));
    println!("# sigma={} seed={}", a.sigma, a.seed);
    println!("{report}");
    Ok(())
}

fn flops(a: FlopsArgs) -> Result<()> {
    let saved = load_model(&a.model)?;
    print!("{}", header(&saved));
    println!("# convention: 2 FLOPs per multiply-accumulate, biases excluded, per input pixel");
    let report = saved.model.net().count_flops();
    println!("{report}");
    if let Model::Csdn(_) = saved.model {
        let (pcn_net, label) = match &a.pcn {
            Some(p) => (load_pcn(p)?.0.net, "pcn"),
            None => (Pcn::new(PcnConfig::default(), 0)?.net, "pcn (default config)"),
        };
        let pcn_k = pcn_net.count_flops().total_kflops();
        println!("{label} {pcn_k:.2} kFLOPs/pixel");
        println!("combined {:.2} kFLOPs/pixel", report.total_kflops() + pcn_k);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_bytes_span_range() {
        assert_eq!(class_to_byte(1, 72), 0);
        assert_eq!(class_to_byte(72, 72), 255);
        assert_eq!(class_to_byte(1, 1), 0);
    }

    #[test]
    fn config_fills_missing_flags_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# comment\nsigma=50\nepochs = 3\nimage_skip=true\nplain=false\n").unwrap();
        let args: Vec<String> = ["csdn", "train-csdn", "--config", path.to_str().unwrap(), "--sigma", "15"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let merged = merge_config(args).unwrap();
        assert_eq!(
            merged,
            ["csdn", "train-csdn", "--sigma", "15", "--epochs", "3", "--image-skip"]
        );
    }
}
