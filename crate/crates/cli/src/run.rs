use crate::source;
use crate::ScenarioArgs;
use anyhow::{bail, Context, Result};
use pilotwave::ensemble::{build_evolver, run_ensemble, Report, RunOutput};
use pilotwave::io::{self, Manifest, OutputEntry, Timings};
use pilotwave::model::{validate_scenario, Scenario};
use pilotwave::scenarios::{scenario_names, scenario_source};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

/// Files a run owns in its directory, manifest last.
const OWNED: &[&str] =
    &[io::SCENARIO, io::TRAJECTORIES, io::POSITIONS, io::MARGINALS, io::CHECKPOINTS, io::REPORT, io::MANIFEST];

pub fn list() {
    for name in scenario_names() {
        let description = scenario_source(name)
            .and_then(|src| Scenario::from_toml_str(src).ok())
            .map(|s| s.description)
            .unwrap_or_default();
        println!("{name:<22} {description}");
    }
}

/// Everything `run` checks before integrating: parsing, validation and
/// construction of the model and initial state.
fn admit(args: &ScenarioArgs) -> Result<Scenario> {
    let scenario = source::load(args)?;
    let diagnostics = validate_scenario(&scenario);
    if !diagnostics.is_empty() {
        for d in &diagnostics {
            eprintln!("{}: {d}", scenario.name);
        }
        bail!("{}: {} validation diagnostic(s)", scenario.name, diagnostics.len());
    }
    build_evolver(&scenario).with_context(|| format!("{}: setting up the initial state", scenario.name))?;
    Ok(scenario)
}

pub fn validate(args: &ScenarioArgs) -> Result<u8> {
    let scenario = admit(args)?;
    println!("{}: 0 diagnostics, digest {}", scenario.name, scenario.digest());
    Ok(0)
}

/// Tracks what this invocation created so a failure can remove it.
struct Cleanup {
    dir: PathBuf,
    created_dir: bool,
    armed: bool,
}

impl Drop for Cleanup {
    fn drop(&mut self) {
        if !self.armed {
            return;
        }
        for name in OWNED {
            let _ = fs::remove_file(self.dir.join(name));
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

pub fn run(args: &ScenarioArgs, output: Option<PathBuf>) -> Result<u8> {
    let scenario = admit(args)?;
    let dir = output.unwrap_or_else(|| Path::new("runs").join(&scenario.name));
    if dir.exists() && !dir.is_dir() {
        bail!("usage: output {} exists and is not a directory", dir.display());
    }
    let created_dir = !dir.exists();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut cleanup = Cleanup { dir: dir.clone(), created_dir, armed: true };
    // a stale manifest must not vouch for files this run is about to replace
    match fs::remove_file(dir.join(io::MANIFEST)) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e).context("removing the previous manifest"),
        _ => {}
    }

    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    let clock = Instant::now();
    let out = run_ensemble(&scenario).with_context(|| format!("{}: run failed", scenario.name))?;
    let run_seconds = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let outputs = write_outputs(&dir, &scenario, &out)?;
    let write_seconds = clock.elapsed().as_secs_f64();
    let manifest = Manifest::new(&out.report, outputs, Timings { started_unix, run_seconds, write_seconds });
    io::write_atomic(&dir.join(io::MANIFEST), &io::json_bytes(&manifest)).context("writing the manifest")?;
    cleanup.armed = false;

    summarize(&out.report, &dir, run_seconds);
    Ok(out.report.exit_code() as u8)
}

fn write_outputs(dir: &Path, scenario: &Scenario, out: &RunOutput) -> Result<Vec<OutputEntry>> {
    let labels = &out.report.labels;
    let mut files: Vec<(&str, Vec<u8>)> = vec![(io::SCENARIO, scenario.to_toml_string().into_bytes())];
    let mut buf = Vec::new();
    io::write_trajectories(&mut buf, labels, &out.trajectories)?;
    files.push((io::TRAJECTORIES, std::mem::take(&mut buf)));
    io::write_positions(&mut buf, labels, &out.samples)?;
    files.push((io::POSITIONS, std::mem::take(&mut buf)));
    io::write_marginals(&mut buf, labels, &out.samples)?;
    files.push((io::MARGINALS, std::mem::take(&mut buf)));
    io::write_checkpoints(&mut buf, &out.report)?;
    files.push((io::CHECKPOINTS, std::mem::take(&mut buf)));
    files.push((io::REPORT, io::json_bytes(&out.report)));

    let mut entries = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        io::write_atomic(&dir.join(name), &bytes).with_context(|| format!("writing {name}"))?;
        entries.push(OutputEntry::new(name, &bytes));
    }
    Ok(entries)
}

fn flag(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "pass",
        Some(false) => "FAIL",
        None => "n/a",
    }
}

fn summarize(report: &Report, dir: &Path, seconds: f64) {
    let c = &report.certification;
    println!("{} -> {} ({seconds:.1} s)", report.scenario, dir.display());
    if let Some(worst) = report.checkpoints.iter().filter_map(|cp| cp.ratio).reduce(f64::max) {
        println!("  equivariance  {:<4} worst distance/floor {worst:.3}", flag(c.equivariance));
    }
    if let Some(b) = &report.branches {
        let z: Vec<String> = b.z_scores.iter().map(|z| format!("{z:+.2}")).collect();
        println!("  born rule     {:<4} z = [{}]", flag(c.born_rule), z.join(", "));
    }
    if let Some(col) = &report.collapse {
        println!(
            "  collapse      {:<4} stayed {:.4}, max velocity difference {:.2e}",
            flag(c.collapse),
            col.stayed_fraction,
            col.max_relative
        );
    }
    println!("  node events   {}", report.nodes.events);
    for d in &report.diagnostics {
        println!("  note: {d}");
    }
    println!("  {}", if report.exit_code() == 0 { "certified" } else { "completed with diagnostics" });
}
