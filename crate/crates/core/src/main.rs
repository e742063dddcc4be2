use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use staged_stopping::diagnostics::decomposition_check;
use staged_stopping::harness::{
    emit_reports, emit_sensitivity, load_configs, render_summary, run_study, RunArtifacts,
    RunOptions, ScheduleFile, SensitivityTable, StudyConfig,
};
use staged_stopping::stopping::{
    bellman_solve, exhaustive_min_cost, retrospective_total_cost, sensitivity_sweep,
    stage_expected_losses,
};
use staged_stopping::synth::{
    exact_posteriors, exact_projections, martingale_check, outcomes, reverse_martingale_check,
    SyntheticWorld,
};
use staged_stopping::{CostSchedule, Error, LossSpec, Result};

#[derive(Parser)]
#[command(version, about = "Staged clinical prediction as optimal stopping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the repeated-split experiment for one or more studies.
    Run {
        /// Study config file, or a directory of them.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        study: Option<String>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "reports")]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Preferred stopping stage under alternative cost schedules.
    Sensitivity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        schedules: PathBuf,
        #[arg(long, default_value = "reports")]
        out: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check the exact identities on random synthetic worlds.
    SynthValidate {
        #[arg(long, default_value_t = 100)]
        worlds: usize,
        #[arg(long, default_value_t = 2026)]
        seed: u64,
    },
    /// Print a readable summary of a report directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Ingestion(_) | Error::Csv(_) | Error::Invariant { .. } => 1,
        _ => 2,
    }
}

fn selected_configs(
    path: &Path,
    study: Option<&str>,
    reps: Option<usize>,
    seed: Option<u64>,
) -> Result<Vec<StudyConfig>> {
    let mut configs = load_configs(path)?;
    if let Some(name) = study {
        configs.retain(|c| c.name == name);
        if configs.is_empty() {
            return Err(Error::Config(format!(
                "no study named {name} under {}",
                path.display()
            )));
        }
    }
    configs
        .into_iter()
        .map(|c| {
            let c = match seed {
                Some(s) => c.with_seed(s),
                None => c,
            };
            match reps {
                Some(r) => c.with_reps(r),
                None => Ok(c),
            }
        })
        .collect()
}

/// Runs each study; in directory mode a study whose source file is absent is
/// skipped with a note instead of failing the whole batch.
fn run_all(configs: &[StudyConfig], batch: bool, options: RunOptions) -> Result<Vec<RunArtifacts>> {
    let mut out = Vec::new();
    for c in configs {
        if batch && !c.source_path().exists() {
            eprintln!(
                "skipping {}: {} not found",
                c.name,
                c.source_path().display()
            );
            continue;
        }
        eprintln!("running {} ({} reps)", c.name, c.split.reps);
        let a = run_study(c, options)?;
        if !a.failures.is_empty() {
            eprintln!(
                "  {} failed reps, first: {:?}",
                a.failures.len(),
                a.failures[0]
            );
        }
        out.push(a);
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            study,
            reps,
            seed,
            out,
            threads,
        } => {
            let configs = selected_configs(&config, study.as_deref(), reps, seed)?;
            let artifacts = run_all(&configs, config.is_dir(), RunOptions { threads })?;
            for path in emit_reports(&artifacts, &out)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Sensitivity {
            config,
            schedules,
            out,
            reps,
            threads,
        } => {
            let file = ScheduleFile::from_path(&schedules)?;
            let mut grouped: BTreeMap<&str, Vec<_>> = BTreeMap::new();
            for entry in &file.schedule {
                grouped.entry(entry.study.as_str()).or_default().push(entry);
            }
            let configs = load_configs(&config)?;
            let mut tables = Vec::new();
            for (study, entries) in grouped {
                let known = configs.iter().find(|c| c.name == study);
                let mut fixed: Vec<(Vec<f64>, CostSchedule)> = Vec::new();
                let mut run_losses: Option<Vec<f64>> = None;
                for e in &entries {
                    let losses = match &e.losses {
                        Some(l) => l.clone(),
                        None => {
                            if run_losses.is_none() {
                                let c = known.ok_or_else(|| {
                                    Error::Config(format!("no config for study {study}"))
                                })?;
                                let c = match reps {
                                    Some(r) => c.clone().with_reps(r)?,
                                    None => c.clone(),
                                };
                                let a = run_study(&c, RunOptions { threads })?;
                                run_losses = Some(a.stopping.decision_loss.clone());
                            }
                            run_losses.clone().expect("just computed")
                        }
                    };
                    fixed.push((losses, e.cumulative.clone()));
                }
                let mut rows = Vec::new();
                for (losses, schedule) in fixed {
                    rows.extend(sensitivity_sweep(&losses, std::slice::from_ref(&schedule))?);
                }
                let stage_names = match known {
                    Some(c) => c.stage_names(),
                    None => (1..=rows[0].total_cost.len())
                        .map(|t| format!("F{t}"))
                        .collect(),
                };
                for r in &rows {
                    println!(
                        "{study:<12} schedule {:?} totals {:?} -> {}",
                        r.schedule, r.total_cost, stage_names[r.preferred_stage]
                    );
                }
                tables.push(SensitivityTable {
                    study: study.to_string(),
                    stage_names,
                    rows,
                });
            }
            println!("wrote {}", emit_sensitivity(&tables, &out)?.display());
        }
        Command::SynthValidate { worlds, seed } => {
            let report = synth_validate(worlds, seed)?;
            println!("{report}");
            if !report.passed() {
                return Err(Error::InvalidInput(
                    "synthetic validation exceeded tolerance".into(),
                ));
            }
        }
        Command::Report { input } => print!("{}", render_summary(&input)?),
    }
    Ok(())
}

#[derive(Debug, Default)]
struct SynthReport {
    worlds: usize,
    martingale: f64,
    reverse: f64,
    decomposition: f64,
    bellman_vs_enumeration: f64,
    retrospective_below_bellman: usize,
}

impl SynthReport {
    const TOLERANCE: f64 = 1e-12;

    fn passed(&self) -> bool {
        self.martingale <= Self::TOLERANCE
            && self.reverse <= Self::TOLERANCE
            && self.decomposition <= Self::TOLERANCE
            && self.bellman_vs_enumeration <= Self::TOLERANCE
            && self.retrospective_below_bellman == 0
    }
}

impl std::fmt::Display for SynthReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "worlds checked:                 {}", self.worlds)?;
        writeln!(f, "max martingale violation:       {:e}", self.martingale)?;
        writeln!(f, "max reverse-martingale gap:     {:e}", self.reverse)?;
        writeln!(
            f,
            "max decomposition gap:          {:e}",
            self.decomposition
        )?;
        writeln!(
            f,
            "max |Bellman - enumeration|:    {:e}",
            self.bellman_vs_enumeration
        )?;
        write!(
            f,
            "retrospective totals below V_0: {}\nresult: {}",
            self.retrospective_below_bellman,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

fn synth_validate(worlds: usize, seed: u64) -> Result<SynthReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SynthReport {
        worlds,
        ..Default::default()
    };
    for _ in 0..worlds {
        // at most 4 stages and at most 6 histories per stage
        let horizon = rng.random_range(1..=4);
        let mut shape = Vec::with_capacity(horizon);
        let mut histories = 1;
        for _ in 0..horizon {
            let a = rng.random_range(1..=(6 / histories).clamp(1, 3));
            histories *= a;
            shape.push(a);
        }
        let world = SyntheticWorld::random(&mut rng, &shape, true);
        report.martingale = report.martingale.max(martingale_check(&world));
        report.reverse = report.reverse.max(reverse_martingale_check(&world)?);

        let x = exact_posteriors(&world);
        let y = exact_projections(&world)?;
        let all = outcomes(&world);
        let d: Vec<bool> = all.iter().map(|o| o.positive).collect();
        let w: Vec<f64> = all.iter().map(|o| o.probability).collect();
        for t in 0..=horizon {
            let xt: Vec<f64> = all.iter().map(|o| x[t][&o.history[..t].to_vec()]).collect();
            let yt: Vec<f64> = all
                .iter()
                .map(|o| y[t][&world.cell(&o.history[..t]).expect("coarsened")])
                .collect();
            let check = decomposition_check(&d, &xt, &yt, &w)?;
            report.decomposition = report.decomposition.max(check.gap());
        }

        let loss = LossSpec::new(1.0, rng.random_range(1.0..10.0))?;
        let mut cumulative = vec![0.0];
        for _ in 0..horizon {
            let last = cumulative[cumulative.len() - 1];
            cumulative.push(last + rng.random_range(0.0..0.05));
        }
        let costs = CostSchedule::new(cumulative)?;
        let solution = bellman_solve(&world, &loss, &costs)?;
        let brute = exhaustive_min_cost(&world, &loss, &costs)?;
        report.bellman_vs_enumeration = report
            .bellman_vs_enumeration
            .max((solution.total_cost - brute).abs());
        let retro = retrospective_total_cost(&stage_expected_losses(&world, &loss), &costs)?;
        if retro
            .total_cost
            .iter()
            .any(|&t| t < solution.total_cost - SynthReport::TOLERANCE)
        {
            report.retrospective_below_bellman += 1;
        }
    }
    Ok(report)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
