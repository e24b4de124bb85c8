//! `beamgrid` command-line front end.

use crate::channel::GainMatrix;
use crate::error::{Error, Result};
use crate::format::{sniff_magic, RawTensor, TENSOR_MAGIC};
use crate::metrics::{self, split_report, Split};
use crate::nn::checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
use crate::nn::Network;
use crate::pipeline::{
    self, build_dataset, flops_report, read_dataset_header, run_experiment_with, sample_scene, DatasetContainer,
    ExperimentConfig, NetworkChoice, SplitTag, DATASET_MAGIC,
};
use crate::scene::{read_scenes, write_scenes, Scene, SCENE_MAGIC};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "beamgrid", version, about = "Beam pair selection from vehicle distribution features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (TOML). Defaults to the desk preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use the full-size preset instead of the desk preset when no config is given.
    #[arg(long)]
    pub full: bool,
    /// Master seed for every stochastic stage.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset (.bgds) or a scene stream (.bgsc).
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the configured network; writes model.bgnn, history.csv and report.csv under --out.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset to train on. Generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        network: Option<NetworkChoice>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        b_max: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the test split of a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        b_max: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-B ATRR under Gaussian location error, LOS and NLOS rows per sigma.
    SweepSigma {
        #[command(flatten)]
        common: Common,
        /// Trained model. A model is trained from the config when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Scenes to perturb (.bgsc). Fresh scenes are drawn when absent.
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        sigma_list: Option<Vec<f64>>,
        #[arg(long)]
        b_max: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forward FLOPs per network.
    Flops {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        network: Option<NetworkChoice>,
    },
    /// Print the header of any beamgrid file and check its consistency.
    Inspect { path: PathBuf },
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match dispatch(cli.command, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("BEAMGRID_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None if common.full => ExperimentConfig::full(),
        None => ExperimentConfig::desk(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.hyper.seed = s;
    }
    cfg.output_dir = None;
    Ok(cfg)
}

fn progress(msg: &str) {
    eprintln!("[beamgrid] {msg}");
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::GenData { common, samples, out: path } => {
            let cfg = load_config(&common)?;
            let n = samples.unwrap_or(cfg.samples);
            if path.extension().is_some_and(|e| e == "bgsc") {
                let scenes = generate_scenes(&cfg, n)?;
                let mut w = BufWriter::new(File::create(&path)?);
                write_scenes(&mut w, &scenes)?;
                w.flush()?;
            } else {
                progress(&format!("generating {n} samples ({} features)", cfg.feature.name()));
                let built = build_dataset(&cfg, n, cfg.seed)?;
                progress(&format!("LOS share {:.3}", built.container.los_fraction()));
                built.container.save(&path)?;
            }
            writeln!(out, "{}", path.display())?;
        }
        Command::Train { common, data, samples, network, epochs, b_max, out: dir } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = network {
                cfg.network = n;
                if n == NetworkChoice::Saba {
                    cfg.feature = pipeline::FeatureKind::SaVector;
                }
            }
            if let Some(e) = epochs {
                cfg.hyper.epochs = e;
            }
            if let Some(b) = b_max {
                cfg.b_max = b;
            }
            cfg.output_dir = Some(dir.clone());
            let dataset = obtain_dataset(&cfg, data.as_deref(), samples)?;
            let outcome = run_experiment_with(&cfg, &dataset, |e, atrr| match atrr {
                Some(a) => progress(&format!("epoch {} val top-1 ATRR {a:.4}", e + 1)),
                None => progress(&format!("epoch {}", e + 1)),
            })?;
            progress(&format!("test top-1 accuracy {:.4}, digest {}", outcome.report.top1_accuracy, outcome.digest));
            let rows = outcome.report.csv_rows(cfg.hyper.epochs as f64, &[Split::All, Split::Los, Split::Nlos]);
            metrics::write_csv(out, &rows)?;
            writeln!(out, "# {}", dir.join("model.bgnn").display())?;
        }
        Command::Eval { common, data, checkpoint, b_max, out: csv_path } => {
            let cfg = load_config(&common)?;
            let dataset = DatasetContainer::load(&data)?;
            let net = load_network(&checkpoint)?;
            let test = dataset.samples(SplitTag::Test, cfg.target)?;
            let gains: Vec<GainMatrix> = dataset.split(SplitTag::Test).map(|(_, r)| r.gains.clone()).collect();
            let logits: Vec<Vec<f64>> = test.par_iter().map(|s| net.forward(&s.input, &s.aux)).collect::<Result<_>>()?;
            let b = b_max.unwrap_or(cfg.b_max).min(dataset.n_tx * dataset.n_rx);
            let report = split_report(&logits, &gains, b)?;
            progress(&format!("{} test samples, top-1 accuracy {:.4}", report.n_total, report.top1_accuracy));
            let rows = report.csv_rows(0.0, &[Split::All, Split::Los, Split::Nlos]);
            emit_csv(out, csv_path.as_deref(), &rows)?;
        }
        Command::SweepSigma { common, checkpoint, scenes, samples, sigma_list, b_max, epochs, out: csv_path } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = sigma_list {
                cfg.sigma_list = s;
            }
            if let Some(b) = b_max {
                cfg.b_max = b;
            }
            if let Some(e) = epochs {
                cfg.hyper.epochs = e;
            }
            cfg.validate()?;
            let net = match checkpoint {
                Some(p) => load_network(&p)?,
                None => {
                    let n = samples.unwrap_or(cfg.samples);
                    progress(&format!("no checkpoint given; training on {n} fresh samples"));
                    let built = build_dataset(&cfg, n, cfg.seed)?;
                    run_experiment_with(&cfg, &built.container, |_, _| {})?.network
                }
            };
            let (scenes, gains) = match scenes {
                Some(p) => {
                    let scenes = read_scenes(&mut BufReader::new(File::open(&p)?))?;
                    let link = crate::channel::Link::new(cfg.link);
                    let gains = scenes.iter().map(|s| Ok(link.evaluate(s)?.quantized())).collect::<Result<Vec<_>>>()?;
                    (scenes, gains)
                }
                None => pipeline::sweep_scenes(&cfg, samples.unwrap_or(cfg.samples).max(1), cfg.seed)?,
            };
            progress(&format!("sweeping {} sigmas over {} scenes", cfg.sigma_list.len(), scenes.len()));
            let points = pipeline::run_sigma_sweep(&cfg, &net, &scenes, &gains, cfg.b_max)?;
            emit_csv(out, csv_path.as_deref(), &metrics::sweep_rows(&points))?;
        }
        Command::Flops { common, network } => {
            let cfg = load_config(&common)?;
            writeln!(out, "network,input_shape,flops")?;
            for row in flops_report(&cfg)? {
                let family = if row.network.starts_with("saba") { NetworkChoice::Saba } else { NetworkChoice::Vdban };
                if network.is_none_or(|n| n == family) {
                    writeln!(out, "{},{},{}", row.network, row.input_shape, row.flops)?;
                }
            }
        }
        Command::Inspect { path } => inspect(&path, out)?,
    }
    Ok(())
}

fn emit_csv(out: &mut dyn Write, path: Option<&Path>, rows: &[metrics::CsvRow]) -> Result<()> {
    metrics::write_csv(out, rows)?;
    if let Some(p) = path {
        let mut w = BufWriter::new(File::create(p)?);
        metrics::write_csv(&mut w, rows)?;
        w.flush()?;
    }
    Ok(())
}

fn generate_scenes(cfg: &ExperimentConfig, n: usize) -> Result<Vec<Scene>> {
    let link = crate::channel::Link::new(cfg.link);
    (0..n).into_par_iter().map(|i| Ok(sample_scene(&cfg.scene, &link, cfg.seed, i)?.0)).collect()
}

fn obtain_dataset(cfg: &ExperimentConfig, data: Option<&Path>, samples: Option<usize>) -> Result<DatasetContainer> {
    match data {
        Some(p) => DatasetContainer::load(p),
        None => {
            let n = samples.unwrap_or(cfg.samples);
            progress(&format!("generating {n} samples"));
            Ok(build_dataset(cfg, n, cfg.seed)?.container)
        }
    }
}

fn load_network(path: &Path) -> Result<Network> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

fn inspect(path: &Path, out: &mut dyn Write) -> Result<()> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let magic = sniff_magic(&bytes).ok_or_else(|| Error::Format { what: "file", detail: "shorter than a magic".into() })?;
    let mut r = bytes.as_slice();
    if &magic == DATASET_MAGIC {
        let h = read_dataset_header(&mut &bytes[..])?;
        let c = DatasetContainer::read_from(&mut r)?;
        writeln!(out, "format=BGDS version={} samples={} feature={} pairs={}x{} coherence={}", h.version, h.count, h.kind.name(), h.n_tx, h.n_rx, h.coherent)?;
        writeln!(
            out,
            "train={} val={} test={} los_share={:.4} consistent=true",
            c.split_count(SplitTag::Train),
            c.split_count(SplitTag::Val),
            c.split_count(SplitTag::Test),
            c.los_fraction()
        )?;
    } else if &magic == SCENE_MAGIC {
        let scenes = read_scenes(&mut r)?;
        let vehicles: usize = scenes.iter().map(|s| s.vehicles.len()).sum();
        writeln!(out, "format=BGSC scenes={} vehicles={vehicles}", scenes.len())?;
        for s in &scenes {
            s.ms_index().ok_or(Error::NoMs)?;
        }
    } else if &magic == CHECKPOINT_MAGIC {
        let net = read_checkpoint(&mut r)?;
        // A checkpoint must survive a write/read cycle unchanged.
        let mut again = Vec::new();
        write_checkpoint(&mut again, &net)?;
        if again != bytes {
            return Err(Error::Inconsistent("checkpoint does not re-serialize identically".into()));
        }
        writeln!(
            out,
            "format=BGNN input={:?} aux={} layers={} parameterized={} params={} flops={}",
            net.input,
            net.aux_width,
            net.layers.len(),
            net.parameterized_layers().count(),
            net.param_count(),
            net.count_flops()
        )?;
    } else if &magic == TENSOR_MAGIC {
        let t = RawTensor::read_from(&mut r)?;
        writeln!(out, "format=BGT1 dims={:?} values={}", t.dims, t.data.len())?;
    } else {
        return Err(Error::Format { what: "file", detail: format!("unknown magic {:?}", String::from_utf8_lossy(&magic)) });
    }
    if !r.is_empty() {
        return Err(Error::Format { what: "file", detail: format!("{} trailing bytes", r.len()) });
    }
    Ok(())
}
