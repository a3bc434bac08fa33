use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use stablemaps::bdg::bdg_forward;
use stablemaps::harness::{
    ball_volume_exponent, parse_list, run_campaign, two_point_scaling, write_csv, write_jsonl, CampaignConfig,
    Experiment, ExperimentRecord, Lamination, Model,
};
use stablemaps::looptree::JumpExcursion;
use stablemaps::mobile::encode_paths;
use stablemaps::numerics::two_point_residual;
use stablemaps::planarmap::{faces, genus};
use stablemaps::{Error, Result};

#[derive(Parser)]
#[command(name = "stablemaps", version, about = "Boltzmann bipartite maps with large faces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample pointed maps and print their mobile and map summaries
    Sample(Common),
    /// Run the BDG and two-pointed identity checks on sampled maps
    Verify(Common),
    /// Run a Monte Carlo campaign and summarize it
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = ["balls", "distances", "coupling"], default_value = "balls")]
        experiment: String,
        /// fit window for the ball-volume slope, as lo,hi
        #[arg(long, default_value = "0.15,0.6")]
        window: String,
    },
    /// Evaluate the two-point residual integral
    Twopoint {
        #[arg(long, default_value_t = 1.5)]
        alpha: f64,
        /// defaults to α(α−1)/2
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw the lamination of a sampled map as SVG
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = PathKind::X)]
        path: PathKind,
        /// jumps smaller than this get no face polygon
        #[arg(long, default_value_t = 3.0)]
        min_jump: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PathKind {
    /// Lukasiewicz path of the mobile
    X,
    /// label contour in corner time
    Z,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

#[derive(Args)]
struct Common {
    /// flat key = value file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_parser = ["kazakov", "tuned"])]
    family: Option<String>,
    /// comma separated, e.g. 1000,4000
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Jsonl)]
    format: Format,
}

impl Common {
    fn config(&self, experiment: Experiment) -> Result<CampaignConfig> {
        let mut cfg = match &self.config {
            Some(p) => CampaignConfig::from_kv(&std::fs::read_to_string(p)?)?,
            None => CampaignConfig::default(),
        };
        cfg.experiment = experiment;
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(f) = &self.family {
            cfg.family = f.parse()?;
        }
        if let Some(n) = &self.n {
            cfg.ns = parse_list(n).ok_or_else(|| Error::Domain(format!("bad --n '{n}'")))?;
        }
        if let Some(s) = self.samples {
            cfg.samples = s;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(k) = self.kmax {
            cfg.k_max = k;
        }
        if let Some(g) = self.grid {
            cfg.grid = g;
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn emit(records: &[ExperimentRecord], cfg: &CampaignConfig, format: Format) -> Result<()> {
    let Some(path) = &cfg.out else { return Ok(()) };
    let f = BufWriter::new(File::create(path)?);
    match format {
        Format::Jsonl => write_jsonl(records, f),
        Format::Csv => write_csv(records, f),
    }
}

fn sample(common: &Common) -> Result<()> {
    let cfg = common.config(Experiment::Verify)?;
    let model = Model::new(&cfg)?;
    let mut records = Vec::new();
    for &n in &cfg.ns {
        for s in 0..cfg.samples as u64 {
            let lm = model.mobile(&cfg, n, s)?;
            let pm = bdg_forward(&lm, 1)?;
            let mut degrees: Vec<usize> = faces(&pm.map).iter().map(|f| f.degree).collect();
            degrees.sort_unstable();
            let stats = [
                ("mobile_code", json!(lm.mobile.code())),
                ("labels", json!(lm.label)),
                ("vertices", json!(pm.map.n_vertices)),
                ("edges", json!(pm.map.n_edges())),
                ("genus", json!(genus(&pm.map)?)),
                ("face_degrees", json!(degrees)),
                ("rotations", json!(pm.map.rotations())),
            ];
            records.push(ExperimentRecord {
                experiment: "sample".into(),
                n,
                sample: s,
                stats: stats.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            });
        }
    }
    match &cfg.out {
        Some(_) => emit(&records, &cfg, common.format),
        None => match common.format {
            Format::Jsonl => write_jsonl(&records, io::stdout().lock()),
            Format::Csv => write_csv(&records, io::stdout().lock()),
        },
    }
}

fn verify(common: &Common) -> Result<bool> {
    let cfg = common.config(Experiment::Verify)?;
    let records = run_campaign(&cfg)?;
    emit(&records, &cfg, common.format)?;
    let mut bad = 0;
    for r in &records {
        let violations: f64 = ["distance_violations", "schaeffer_violations", "cactus_violations", "geodesic_violations", "bdg2_delay_violations"]
            .iter()
            .filter_map(|k| r.get_f64(k))
            .sum();
        let flags = ["structure_ok", "bdg2_forward_matches", "bdg2_belt_buckle", "bdg2_parity"]
            .iter()
            .all(|k| r.stats.get(*k) == Some(&json!(true)));
        if r.failed() || violations > 0.0 || !flags {
            bad += 1;
            eprintln!("n={} sample={}: {:?}", r.n, r.sample, r.stats);
        }
    }
    println!("verify: {} samples, {} with violations", records.len(), bad);
    Ok(bad == 0)
}

fn estimate(common: &Common, experiment: &str, window: &str) -> Result<bool> {
    let cfg = common.config(experiment.parse()?)?;
    let records = run_campaign(&cfg)?;
    emit(&records, &cfg, common.format)?;
    let failed = records.iter().filter(|r| r.failed()).count();
    if failed > 0 {
        eprintln!("{failed} samples failed");
    }
    match cfg.experiment {
        Experiment::Balls => {
            let w: Vec<f64> = window.split(',').filter_map(|x| x.trim().parse().ok()).collect();
            if w.len() != 2 {
                return Err(Error::Domain(format!("bad --window '{window}'")));
            }
            for &n in &cfg.ns {
                let recs: Vec<ExperimentRecord> = records.iter().filter(|r| r.n == n).cloned().collect();
                let fit = ball_volume_exponent(&recs, (w[0], w[1]))?;
                println!("n={n} slope={:.4} stderr={:.4} samples={} target={}", fit.slope, fit.stderr, fit.samples, 2.0 * cfg.alpha);
            }
        }
        Experiment::Distances => {
            for s in two_point_scaling(&records) {
                println!(
                    "n={} count={} median={:.4} q10={:.4} q25={:.4} q75={:.4} q90={:.4} delays={:.3}±{:.3}",
                    s.n, s.count, s.median, s.quantiles[0], s.quantiles[1], s.quantiles[2], s.quantiles[3], s.delay_mean, s.delay_stderr
                );
            }
        }
        Experiment::Coupling => {
            let v: f64 = records
                .iter()
                .flat_map(|r| ["label_violations", "zeta_violations", "dstar_violations", "refinement_violations"].map(|k| r.get_f64(k).unwrap_or(0.0)))
                .sum();
            println!("coupling: {} samples, {} violations", records.len(), v);
            return Ok(v == 0.0 && failed == 0);
        }
        Experiment::Verify => unreachable!(),
    }
    Ok(failed == 0)
}

fn twopoint(alpha: f64, c: Option<f64>, out: &Option<PathBuf>) -> Result<()> {
    let c = c.unwrap_or(alpha * (alpha - 1.0) / 2.0);
    let r = two_point_residual(alpha, c)?;
    let mut w = output(out)?;
    writeln!(w, "alpha={alpha} c={c} residual={:.3e} abs_error={:.1e} evaluations={}", r.value, r.abs_error_estimate, r.evaluations)?;
    w.flush()?;
    Ok(())
}

fn render(common: &Common, path: PathKind, min_jump: f64) -> Result<()> {
    let mut cfg = common.config(Experiment::Verify)?;
    cfg.ns.truncate(1);
    let model = Model::new(&cfg)?;
    let n = cfg.ns[0];
    let lm = model.mobile(&cfg, n, 0)?;
    let lam = match path {
        PathKind::X => {
            let enc = encode_paths(&lm);
            let ex = JumpExcursion::from_lukasiewicz(&enc.s, 1.0)?;
            Lamination::of_excursion(&ex, min_jump)
        }
        PathKind::Z => {
            let pm = bdg_forward(&lm, 1)?;
            Lamination::of_labels(&pm.corners.label.iter().map(|&l| l as f64).collect::<Vec<_>>())
        }
    };
    let mut w = output(&cfg.out)?;
    w.write_all(lam.to_svg(800.0).as_bytes())?;
    w.flush()?;
    eprintln!("{} points, {} identification chords, {} face chords", lam.points, lam.identification_chords, lam.face_chords);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Sample(c) => sample(c).map(|_| true),
        Command::Verify(c) => verify(c),
        Command::Estimate { common, experiment, window } => estimate(common, experiment, window),
        Command::Twopoint { alpha, c, out } => twopoint(*alpha, *c, out).map(|_| true),
        Command::Render { common, path, min_jump } => render(common, *path, *min_jump).map(|_| true),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
