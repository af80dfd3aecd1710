//! Flag parsing and dispatch. Exit status is 0 on success, 2 for invalid
//! flags or configuration, and 1 when training hits a numerical failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;
use tmvi_core::vi::Family;

use crate::config::ExperimentConfig;
use crate::experiments::{run, Arch, Experiment, RunOptions};
use crate::record::RunRecord;
use crate::RunError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERIC: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FamilyArg {
    Tm,
    Gaussian,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Tm => Family::Tm,
            FamilyArg::Gaussian => Family::Gaussian,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tmvi", version, about = "Variational inference with Bernstein transformation flows")]
pub struct Args {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    #[arg(long, value_enum, default_value = "tm")]
    pub family: FamilyArg,
    /// Bernstein degree; a comma-separated list runs one sub-directory per degree.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub degree: Vec<usize>,
    /// Monte-Carlo draws per step.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "TMVI_OUT", default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "small")]
    pub arch: Arch,
    /// Experiment constants; defaults to the bundled configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl Args {
    pub fn validate(&self) -> Result<(), String> {
        if self.degree.is_empty() || self.degree.contains(&0) {
            return Err("--degree must be at least 1".into());
        }
        if self.samples == Some(0) {
            return Err("--samples must be at least 1".into());
        }
        if self.steps == Some(0) {
            return Err("--steps must be at least 1".into());
        }
        if let Some(lr) = self.lr {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err("--lr must be finite and non-negative".into());
            }
        }
        Ok(())
    }

    pub fn options(&self, cfg: &ExperimentConfig, degree: usize, out_dir: PathBuf) -> RunOptions {
        let default_steps = match self.experiment {
            Experiment::Nn => cfg.train.nn_steps,
            _ => cfg.train.single_parameter_steps,
        };
        let mut train = cfg.train.train_config(self.steps.unwrap_or(default_steps));
        if let Some(t) = self.samples {
            train.samples = t;
        }
        if let Some(lr) = self.lr {
            train.learning_rate = lr;
        }
        if let Some(seed) = self.seed {
            train.seed = seed;
        }
        RunOptions {
            family: self.family.into(),
            degree,
            arch: self.arch,
            train,
            out_dir,
        }
    }
}

fn exit_code(err: &RunError) -> i32 {
    if err.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_USAGE
    }
}

fn sweep_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("degree,kl_to_oracle,final_elbo\n");
    for r in records {
        let kl = r.kl_to_oracle.map_or(String::new(), |v| v.to_string());
        let elbo = r.final_elbo.map_or(String::new(), |v| v.to_string());
        out.push_str(&format!("{},{kl},{elbo}\n", r.degree));
    }
    out
}

/// Parses `argv` (program name first), runs, and returns the exit status.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    if let Err(msg) = args.validate() {
        eprintln!("error: {msg}\n\nFor more information, try '--help'.");
        return EXIT_USAGE;
    }
    let cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::default()),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };

    let sweep = args.degree.len() > 1;
    let mut records = Vec::new();
    for &degree in &args.degree {
        let dir = if sweep {
            args.out.join(format!("M{degree}"))
        } else {
            args.out.clone()
        };
        let (record, outcome) = run(args.experiment, &cfg, &args.options(&cfg, degree, dir.clone()));
        if let Err(e) = outcome {
            eprintln!("error: {e} (record in {})", dir.display());
            return exit_code(&e);
        }
        records.push(record);
    }
    if sweep {
        if let Err(e) = std::fs::write(args.out.join("sweep.csv"), sweep_csv(&records)) {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    }
    EXIT_OK
}
