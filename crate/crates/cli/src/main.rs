//! `nmwpm`: reproducible, file-driven experiments.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nmwpm::config::{DecoderTag, RunConfig};
use nmwpm::decoder::{Decoder, MwpmDecoder};
use nmwpm::evaluator::{self, BenchResult};
use nmwpm::io::{parse_syndrome, write_string_atomic};
use nmwpm::lattice::CodeLattice;
use nmwpm::qwp::{NeuralDecoder, QwpModel};
use nmwpm::tensor::ParamStore;
use nmwpm::trainer::{self, TrainOutputs};
use nmwpm::QecError;

#[derive(Parser, Debug)]
#[command(
    name = "nmwpm",
    version,
    about = "Neural minimum-weight perfect matching experiments"
)]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `key=value` applied after the config file; repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Label shots with ground-truth matchings into `dataset.bin`.
    GenData,
    /// Train a model; writes `model.ckpt`, `metrics.csv`, per-epoch histograms.
    Train,
    /// Decode the syndrome file named by the `syndrome` key.
    Decode,
    /// Logical error rates over the configured grid into `results.csv`.
    Bench,
    /// Baseline threshold crossing from the configured grid.
    Threshold,
    /// Histogram of held-out edge probabilities into `histogram.csv`.
    Hist,
    /// Validity and discard rates of ground-truth labeling.
    GtAudit,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Decode => "decode",
            Command::Bench => "bench",
            Command::Threshold => "threshold",
            Command::Hist => "hist",
            Command::GtAudit => "gt-audit",
        }
    }
}

fn resolve(cli: &Cli) -> nmwpm::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_manifest(out: &Path, command: Command, cfg: &RunConfig) -> nmwpm::Result<()> {
    let text = format!(
        "# nmwpm {} {}\n# replay: nmwpm {} --config manifest.txt\n{}",
        env!("CARGO_PKG_VERSION"),
        command.name(),
        command.name(),
        cfg.render()
    );
    write_string_atomic(&out.join("manifest.txt"), &text)
}

fn lattice(cfg: &RunConfig, distance: usize) -> nmwpm::Result<CodeLattice> {
    CodeLattice::build(cfg.code, distance)
}

fn load_model(cfg: &RunConfig, lat: &CodeLattice) -> nmwpm::Result<QwpModel> {
    let path = cfg
        .checkpoint_for(lat.distance)
        .ok_or_else(|| QecError::Config("the nmwpm decoder needs a checkpoint key".into()))?;
    QwpModel::from_params(ParamStore::load(&path)?, lat)
}

fn decoder_for(tag: DecoderTag, cfg: &RunConfig, lat: &CodeLattice) -> nmwpm::Result<Box<dyn Decoder>> {
    Ok(match tag {
        DecoderTag::Mwpm => Box::new(MwpmDecoder),
        DecoderTag::Neural => Box::new(NeuralDecoder::new(load_model(cfg, lat)?, cfg.noise)),
    })
}

fn sweep(cfg: &RunConfig, decoders: &[DecoderTag]) -> nmwpm::Result<Vec<BenchResult>> {
    let mut rows = Vec::new();
    for &l in &cfg.distances {
        let lat = lattice(cfg, l)?;
        for &tag in decoders {
            let dec = decoder_for(tag, cfg, &lat)?;
            for &p in &cfg.p {
                let r = evaluator::run_ler(dec.as_ref(), &lat, cfg.noise, p, cfg.shots, cfg.seed)?;
                println!(
                    "{} {} L={} p={} ler={:.6} [{:.6}, {:.6}] ({}/{})",
                    r.decoder, r.code, r.distance, r.p, r.ler, r.ci_lo, r.ci_hi, r.failures, r.shots
                );
                rows.push(r);
            }
        }
    }
    Ok(rows)
}

fn run(command: Command, cfg: &RunConfig, out: &Path) -> nmwpm::Result<()> {
    std::fs::create_dir_all(out)?;
    write_manifest(out, command, cfg)?;
    match command {
        Command::GenData => {
            let lat = lattice(cfg, cfg.distance)?;
            let (ds, discarded) =
                trainer::generate_dataset(&lat, cfg.noise, cfg.train.p_range, cfg.records, cfg.seed, cfg.gt())?;
            ds.save(&out.join("dataset.bin"))?;
            println!("labeled {} shots, discarded {discarded}", ds.records.len());
        }
        Command::Train => {
            let lat = lattice(cfg, cfg.distance)?;
            let outputs = TrainOutputs { dir: out.to_path_buf() };
            trainer::train(&cfg.train, cfg.model, &lat, cfg.noise, Some(&outputs), |m| {
                println!(
                    "epoch {:>4} loss {:.5} bce {:.5} entropy {:.5} acc {:.4} polarized {:.3} timeouts {} lr {:.3e}",
                    m.epoch, m.loss, m.bce, m.entropy, m.edge_acc, m.polarized, m.gt_timeouts, m.lr
                );
            })?;
        }
        Command::Decode => {
            let lat = lattice(cfg, cfg.distance)?;
            let path = cfg
                .syndrome
                .as_ref()
                .ok_or_else(|| QecError::Config("decode needs a syndrome key".into()))?;
            let syndrome = parse_syndrome(&std::fs::read_to_string(path)?, lat.n_stabilizers())?;
            let tag = if cfg.checkpoint.is_some() {
                DecoderTag::Neural
            } else {
                DecoderTag::Mwpm
            };
            let matching = decoder_for(tag, cfg, &lat)?.decode(&syndrome, &lat)?;
            let corr = matching.correction(&lat);
            let mut text = format!("decoder {}\n", tag.name());
            for (a, b) in &matching.pairs {
                writeln!(text, "pair {a} {b}").unwrap();
            }
            for s in &matching.boundary {
                writeln!(text, "boundary {s}").unwrap();
            }
            for (label, bits) in [("X", &corr.x_bits), ("Z", &corr.z_bits)] {
                let qubits: Vec<String> = bits
                    .iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .map(|(q, _)| q.to_string())
                    .collect();
                writeln!(text, "correction {label} {}", qubits.join(" ")).unwrap();
            }
            print!("{text}");
            write_string_atomic(&out.join("decode.txt"), &text)?;
        }
        Command::Bench => {
            let rows = sweep(cfg, &cfg.decoders)?;
            evaluator::write_results_csv(&out.join("results.csv"), &rows)?;
        }
        Command::Threshold => {
            let rows = sweep(cfg, &cfg.decoders[..1])?;
            evaluator::write_results_csv(&out.join("results.csv"), &rows)?;
            let est = evaluator::estimate_threshold(&rows)?;
            let mut text = String::new();
            for c in &est.crossings {
                writeln!(text, "crossing L={} L={} p={:.5}", c.l_small, c.l_large, c.p).unwrap();
            }
            writeln!(text, "threshold {:.5} spread {:.5}", est.mean, est.spread).unwrap();
            print!("{text}");
            write_string_atomic(&out.join("threshold.txt"), &text)?;
        }
        Command::Hist => {
            let lat = lattice(cfg, cfg.distance)?;
            let model = load_model(cfg, &lat)?;
            let eval = evaluator::evaluate_edges(
                &model,
                &lat,
                cfg.noise,
                cfg.train.p_range,
                cfg.eval_shots,
                cfg.seed,
                cfg.gt(),
            )?;
            let rows = evaluator::export_histogram(&eval.probs, cfg.train.hist_bins)?;
            evaluator::write_histogram_csv(&out.join("histogram.csv"), &rows)?;
            println!(
                "edges {} accuracy {:.4} polarized {:.4} discarded {}",
                eval.edges,
                eval.accuracy(),
                trainer::polarized_fraction(&eval.probs),
                eval.gt_timeouts
            );
        }
        Command::GtAudit => {
            let lat = lattice(cfg, cfg.distance)?;
            let mut text = String::from("p,shots,labeled,timeouts,exhausted,residual_ok,logical_ok,discard_rate\n");
            for &p in &cfg.p {
                let a = evaluator::gt_audit(&lat, cfg.noise, p, cfg.shots, cfg.seed, cfg.gt())?;
                writeln!(
                    text,
                    "{p},{},{},{},{},{},{},{}",
                    a.shots,
                    a.labeled(),
                    a.timeouts,
                    a.exhausted,
                    a.residual_ok,
                    a.logical_ok,
                    a.discard_rate()
                )
                .unwrap();
            }
            print!("{text}");
            write_string_atomic(&out.join("gt_audit.csv"), &text)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match resolve(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = nmwpm::par::set_threads(n) {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command, &cfg, &cli.out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ QecError::Config(_)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
