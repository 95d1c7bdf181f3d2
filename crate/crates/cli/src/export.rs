use crate::{FieldArg, Format};
use anyhow::{anyhow, bail, Context, Result};
use pilotwave::beables::{reconstruct, BeableError, FieldKind, Lattice};
use pilotwave::io::{self, Manifest};
use pilotwave::model::Scenario;
use std::fs;
use std::path::PathBuf;

pub struct Request {
    pub run_dir: PathBuf,
    pub field: FieldArg,
    pub time: f64,
    pub trajectory: usize,
    pub points: usize,
    pub half: f64,
    pub format: Format,
    pub output: Option<PathBuf>,
}

/// Reads a run file after checking it against the manifest checksum.
fn checked(manifest: &Manifest, req: &Request, name: &str) -> Result<Vec<u8>> {
    let entry = manifest.outputs.iter().find(|o| o.path == name).ok_or_else(|| anyhow!("manifest does not list {name}"))?;
    let bytes = fs::read(req.run_dir.join(name)).with_context(|| format!("reading {name}"))?;
    if io::sha256_hex(&bytes) != entry.sha256 {
        bail!("{name} does not match the checksum in the manifest");
    }
    Ok(bytes)
}

pub fn export(req: &Request) -> Result<()> {
    let manifest_path = req.run_dir.join(io::MANIFEST);
    if !manifest_path.is_file() {
        bail!("usage: {} is not a run directory (no {})", req.run_dir.display(), io::MANIFEST);
    }
    let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?).context("parsing the manifest")?;
    if req.points == 0 || !(req.half > 0.0) {
        bail!("usage: the lattice needs at least one point per axis and a positive half-width");
    }

    let text = String::from_utf8(checked(&manifest, req, io::SCENARIO)?).context("scenario is not UTF-8")?;
    let scenario = Scenario::from_toml_str(&text).context(io::SCENARIO)?;
    let model = scenario.model.resolve()?;
    let field = model.field.as_ref().ok_or_else(|| anyhow!("usage: scenario `{}` has no field beables", scenario.name))?;

    let table = checked(&manifest, req, io::TRAJECTORIES)?;
    let (_, trajectories) = io::read_trajectories(table.as_slice()).context(io::TRAJECTORIES)?;
    let traj = trajectories.iter().find(|(i, _)| *i == req.trajectory).map(|(_, t)| t).ok_or_else(|| {
        let ids: Vec<String> = trajectories.iter().take(10).map(|(i, _)| i.to_string()).collect();
        anyhow!("usage: trajectory {} was not recorded (recorded: {}{})", req.trajectory, ids.join(", "), if trajectories.len() > 10 { ", ..." } else { "" })
    })?;

    let kind = match req.field {
        FieldArg::A => FieldKind::VectorPotential,
        FieldArg::B => FieldKind::Magnetic,
        FieldArg::E => FieldKind::Electric,
    };
    let lattice = Lattice::cube(req.half, req.points);
    let snapshot = reconstruct(field, kind, traj, req.time, &lattice).map_err(|e| match e {
        BeableError::Range { .. } => anyhow!("usage: time out of range: {e}"),
        other => anyhow!(other),
    })?;

    let mut bytes = Vec::new();
    match req.format {
        Format::Csv => snapshot.write_csv(&mut bytes)?,
        Format::Json => snapshot.write_json(&mut bytes)?,
    }
    match &req.output {
        Some(path) => io::write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))?,
        None => {
            use std::io::Write;
            match std::io::stdout().write_all(&bytes) {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                other => other?,
            }
        }
    }
    Ok(())
}
