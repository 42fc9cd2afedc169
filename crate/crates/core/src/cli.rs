//! Command-line front end: `learn`, `sample`, `eval` and `synth`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 resource
//! limit.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::dataset::{read_dataset_file, write_dataset};
use crate::error::{Error, Result};
use crate::measures::{DiscMode, MeasureKind};
use crate::network::{random_network, read_network_file, write_network_file, KlMode, SynthConfig};
use crate::scoring::{ScoreConfig, Scorer};
use crate::search::SearchConfig;
use crate::sparse_candidate::{
    run_greedy, run_sparse_candidate, write_report, Maximizer, RunConfig, Stopping,
};

#[derive(Debug, Parser)]
#[command(
    name = "sparse-candidate",
    version,
    about = "Bayesian network structure learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Greedy,
    Sc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaximizerArg {
    Greedy,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeasureArg {
    Disc,
    Shield,
    Score,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreArg {
    Bde,
    Mdl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StopArg {
    Score,
    Candidate,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a network from data.
    Learn {
        #[arg(long)]
        data: PathBuf,
        /// Where to write the learned network.
        #[arg(long)]
        out: PathBuf,
        /// Where to write the per-iteration report; stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Generating network; adds KL to the report.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "sc")]
        method: Method,
        #[arg(long, value_enum, default_value = "greedy")]
        maximizer: MaximizerArg,
        #[arg(long, value_enum, default_value = "score")]
        measure: MeasureArg,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        k: u64,
        #[arg(long, value_enum, default_value = "bde")]
        score: ScoreArg,
        #[arg(long, default_value_t = 10.0)]
        ess: f64,
        #[arg(long, default_value_t = 100)]
        tabu: usize,
        #[arg(long, default_value_t = 15, value_parser = clap::value_parser!(u64).range(1..))]
        patience: u64,
        #[arg(long, value_enum, default_value = "score")]
        stop: StopArg,
        #[arg(long = "max-iters", default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
        max_iters: u64,
        /// Samples for the discrepancy measure when the reference network is
        /// too large to enumerate.
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        mc: u64,
        #[arg(long = "kl-samples", default_value_t = 50_000, value_parser = clap::value_parser!(u64).range(1..))]
        kl_samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draw instances from a network.
    Sample {
        #[arg(long)]
        net: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print score per instance on data and/or KL to a reference network.
    Eval {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "bde")]
        score: ScoreArg,
        #[arg(long, default_value_t = 10.0)]
        ess: f64,
        #[arg(long = "kl-samples", default_value_t = 50_000, value_parser = clap::value_parser!(u64).range(1..))]
        kl_samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a random network and a dataset sampled from it.
    Synth {
        #[arg(long, default_value_t = 37, value_parser = clap::value_parser!(u64).range(1..))]
        vars: u64,
        #[arg(long = "max-parents", default_value_t = 4)]
        max_parents: usize,
        #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the network.
        #[arg(long)]
        out: PathBuf,
        /// Where to write the sampled dataset.
        #[arg(long)]
        data: PathBuf,
    },
}

fn score_config(kind: ScoreArg, ess: f64) -> ScoreConfig {
    match kind {
        ScoreArg::Bde => ScoreConfig::bde(ess),
        ScoreArg::Mdl => ScoreConfig::mdl(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run_command(cmd: Command) -> Result<()> {
    match cmd {
        Command::Learn {
            data,
            out,
            report,
            reference,
            method,
            maximizer,
            measure,
            k,
            score,
            ess,
            tabu,
            patience,
            stop,
            max_iters,
            mc,
            kl_samples,
            seed,
        } => {
            let data = read_dataset_file(&data)?;
            let reference = reference.map(read_network_file).transpose()?;
            let data = match &reference {
                Some(r) => data.align_to(r.variables())?,
                None => data,
            };
            let kl_mode = KlMode::Auto {
                samples: kl_samples as usize,
                seed,
            };
            let search = SearchConfig {
                tabu,
                patience: patience as usize,
                ..SearchConfig::default()
            };
            let score = score_config(score, ess);
            let outcome = match method {
                Method::Greedy => run_greedy(
                    &data,
                    score,
                    &search,
                    1.0,
                    reference.as_ref().map(|r| (r, kl_mode)),
                )?,
                Method::Sc => {
                    let mut cfg = RunConfig::new(
                        match measure {
                            MeasureArg::Disc => MeasureKind::Disc,
                            MeasureArg::Shield => MeasureKind::Shield,
                            MeasureArg::Score => MeasureKind::Score,
                        },
                        k as usize,
                    );
                    cfg.score = score;
                    cfg.search = search;
                    cfg.maximizer = match maximizer {
                        MaximizerArg::Greedy => Maximizer::Greedy,
                        MaximizerArg::Exact => Maximizer::Exact,
                    };
                    cfg.stopping = match stop {
                        StopArg::Score => Stopping::Score,
                        StopArg::Candidate => Stopping::Candidate,
                    };
                    cfg.max_iterations = max_iters as usize;
                    cfg.disc_mode = DiscMode::Auto {
                        samples: mc as usize,
                        seed,
                    };
                    cfg.kl_mode = kl_mode;
                    run_sparse_candidate(&data, &cfg, None, reference.as_ref())?
                }
            };
            write_network_file(&outcome.network, &out)?;
            match report {
                Some(path) => {
                    let mut w = create(&path)?;
                    write_report(&outcome.reports, &mut w)?;
                    w.flush()?;
                }
                None => write_report(&outcome.reports, std::io::stdout().lock())?,
            }
            Ok(())
        }
        Command::Sample { net, n, out, seed } => {
            let net = read_network_file(&net)?;
            let data = net.forward_sample(n as usize, seed)?;
            let mut w = create(&out)?;
            write_dataset(&data, &mut w)?;
            w.flush()?;
            Ok(())
        }
        Command::Eval {
            net,
            data,
            reference,
            score,
            ess,
            kl_samples,
            seed,
        } => {
            let net = read_network_file(&net)?;
            if data.is_none() && reference.is_none() {
                return Err(Error::invalid("eval needs --data or --ref"));
            }
            let mut stdout = std::io::stdout().lock();
            if let Some(path) = data {
                let data = read_dataset_file(&path)?.align_to(net.variables())?;
                let rows = data.n_rows() as f64;
                let mut scorer = Scorer::new(&data, score_config(score, ess))?;
                let s = scorer.network_score(net.dag())?;
                let ll = net.log_likelihood(&data)?;
                writeln!(stdout, "score_per_instance\t{:.6}", s / rows)?;
                writeln!(stdout, "log_likelihood_per_instance\t{:.6}", ll / rows)?;
            }
            if let Some(path) = reference {
                let reference = read_network_file(&path)?;
                let est = reference.kl_to_reference(
                    &net,
                    KlMode::Auto {
                        samples: kl_samples as usize,
                        seed,
                    },
                )?;
                writeln!(stdout, "kl\t{:.6}", est.value)?;
                if est.exact {
                    writeln!(stdout, "kl_mode\texact")?;
                } else {
                    writeln!(stdout, "kl_mode\tmonte_carlo")?;
                    writeln!(stdout, "kl_samples\t{}", est.samples)?;
                    writeln!(stdout, "kl_seed\t{}", est.seed)?;
                }
            }
            Ok(())
        }
        Command::Synth {
            vars,
            max_parents,
            n,
            seed,
            out,
            data,
        } => {
            let cfg = SynthConfig {
                n_vars: vars as usize,
                max_parents,
                seed,
                ..SynthConfig::default()
            };
            let net = random_network(&cfg)?;
            write_network_file(&net, &out)?;
            let sample = net.forward_sample(n as usize, seed)?;
            let mut w = create(&data)?;
            write_dataset(&sample, &mut w)?;
            w.flush()?;
            Ok(())
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => 1,
        Error::ResourceLimit(_) => 3,
        _ => 2,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run_command(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run(["sparse-candidate", "sample", "--bogus"]), 1);
        assert_eq!(run(["sparse-candidate"]), 1);
    }

    #[test]
    fn zero_samples_is_usage_error() {
        assert_eq!(
            run([
                "sparse-candidate",
                "sample",
                "--net",
                "x.net",
                "--n",
                "0",
                "--out",
                "y"
            ]),
            1
        );
    }

    #[test]
    fn missing_file_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o.tsv");
        let code = run([
            "sparse-candidate".into(),
            "sample".into(),
            "--net".into(),
            dir.path().join("missing.net").into_os_string(),
            "--n".into(),
            "5".into(),
            "--out".into(),
            out.into_os_string(),
        ]
        .into_iter()
        .collect::<Vec<OsString>>());
        assert_eq!(code, 2);
    }

    #[test]
    fn help_exits_cleanly() {
        assert_eq!(run(["sparse-candidate", "--help"]), 0);
    }
}
