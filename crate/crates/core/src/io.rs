//! Run artifacts: CSV tables, JSON documents, checksums and the run manifest.
//!
//! Every table starts with a header row. Numbers use the shortest exponent
//! form that round-trips, so equal runs produce equal bytes.

use crate::ensemble::{CertificationReport, CheckpointSample, Report};
use crate::guidance::Trajectory;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

pub const TRAJECTORIES: &str = "trajectories.csv";
pub const POSITIONS: &str = "positions.csv";
pub const MARGINALS: &str = "marginals.csv";
pub const CHECKPOINTS: &str = "checkpoints.csv";
pub const REPORT: &str = "report.json";
pub const SCENARIO: &str = "scenario.scn";
pub const MANIFEST: &str = "manifest.json";

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// `trajectory,t,<labels>,node_flag`, one row per recorded sample.
pub fn write_trajectories<W: Write>(mut w: W, labels: &[String], trajectories: &[(usize, Trajectory)]) -> io::Result<()> {
    writeln!(w, "trajectory,t,{},node_flag", labels.join(","))?;
    for (i, traj) in trajectories {
        for ((t, x), flag) in traj.times.iter().zip(&traj.points).zip(&traj.node_flags) {
            let coords: Vec<String> = x.iter().map(|v| num(*v)).collect();
            writeln!(w, "{i},{},{},{}", num(*t), coords.join(","), u8::from(*flag))?;
        }
    }
    w.flush()
}

/// Inverse of [`write_trajectories`]. Node events are not part of the table.
pub fn read_trajectories<R: BufRead>(r: R) -> io::Result<(Vec<String>, Vec<(usize, Trajectory)>)> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| invalid("empty trajectory table"))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "trajectory" || cols[1] != "t" || cols[cols.len() - 1] != "node_flag" {
        return Err(invalid(format!("unexpected trajectory header `{header}`")));
    }
    let labels: Vec<String> = cols[2..cols.len() - 1].iter().map(|s| s.to_string()).collect();
    let mut out: Vec<(usize, Trajectory)> = Vec::new();
    for (row, line) in lines.enumerate() {
        let line = line?;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols.len() {
            return Err(invalid(format!("row {} has {} cells, expected {}", row + 2, cells.len(), cols.len())));
        }
        let bad = |c: &str| invalid(format!("row {}: bad number `{c}`", row + 2));
        let index: usize = cells[0].parse().map_err(|_| bad(cells[0]))?;
        let t: f64 = cells[1].parse().map_err(|_| bad(cells[1]))?;
        let x = cells[2..cells.len() - 1].iter().map(|c| c.parse::<f64>().map_err(|_| bad(c))).collect::<io::Result<Vec<_>>>()?;
        let flag = match cells[cells.len() - 1] {
            "0" => false,
            "1" => true,
            other => return Err(bad(other)),
        };
        if out.last().is_none_or(|(j, _)| *j != index) {
            out.push((index, Trajectory::default()));
        }
        let traj = &mut out.last_mut().expect("just pushed").1;
        traj.times.push(t);
        traj.points.push(x);
        traj.node_flags.push(flag);
    }
    Ok((labels, out))
}

/// `checkpoint,t,trajectory,<labels>` for the active ensemble at each checkpoint.
pub fn write_positions<W: Write>(mut w: W, labels: &[String], samples: &[CheckpointSample]) -> io::Result<()> {
    writeln!(w, "checkpoint,t,trajectory,{}", labels.join(","))?;
    for (k, s) in samples.iter().enumerate() {
        for (i, x) in &s.positions {
            let coords: Vec<String> = x.iter().map(|v| num(*v)).collect();
            writeln!(w, "{k},{},{i},{}", num(s.time), coords.join(","))?;
        }
    }
    w.flush()
}

/// `checkpoint,t,coordinate,x,density` with the quantum marginal of each
/// coordinate at each checkpoint.
pub fn write_marginals<W: Write>(mut w: W, labels: &[String], samples: &[CheckpointSample]) -> io::Result<()> {
    writeln!(w, "checkpoint,t,coordinate,x,density")?;
    for (k, s) in samples.iter().enumerate() {
        for (label, m) in labels.iter().zip(&s.marginals) {
            for (x, rho) in m {
                writeln!(w, "{k},{},{label},{},{}", num(s.time), num(*x), num(*rho))?;
            }
        }
    }
    w.flush()
}

/// `t,step,active,distance,floor,floor_mean,ratio,norm,energy,edge_probability`;
/// statistics missing at a checkpoint are left empty.
pub fn write_checkpoints<W: Write>(mut w: W, report: &Report) -> io::Result<()> {
    writeln!(w, "t,step,active,distance,floor,floor_mean,ratio,norm,energy,edge_probability")?;
    for c in &report.checkpoints {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            num(c.time),
            c.step,
            c.active,
            opt(c.distance),
            opt(c.floor),
            opt(c.floor_mean),
            opt(c.ratio),
            num(c.norm),
            num(c.energy),
            num(c.edge_probability)
        )?;
    }
    w.flush()
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("artifact serializes");
    out.push(b'\n');
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary sibling and renames it into place, so readers
/// see either the old file or the complete new one.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path.file_name().ok_or_else(|| invalid(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl OutputEntry {
    pub fn new(path: &str, content: &[u8]) -> Self {
        Self { path: path.into(), bytes: content.len() as u64, sha256: sha256_hex(content) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeEventEntry {
    pub trajectory: usize,
    pub time: f64,
    pub density: f64,
}

/// Wall-clock measurements. Kept out of [`Manifest::content_digest`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub started_unix: f64,
    pub run_seconds: f64,
    pub write_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub scenario_digest: String,
    pub version: String,
    pub seed: u64,
    pub exit_code: i32,
    pub outputs: Vec<OutputEntry>,
    pub certification: CertificationReport,
    pub node_event_count: usize,
    pub node_events: Vec<NodeEventEntry>,
    pub diagnostics: Vec<String>,
    /// sha256 of the manifest with `timings` and this field emptied.
    pub content_digest: String,
    pub timings: Timings,
}

impl Manifest {
    pub fn new(report: &Report, outputs: Vec<OutputEntry>, timings: Timings) -> Self {
        let mut m = Self {
            scenario: report.scenario.clone(),
            scenario_digest: report.digest.clone(),
            version: report.version.clone(),
            seed: report.seed,
            exit_code: report.exit_code(),
            outputs,
            certification: report.certification.clone(),
            node_event_count: report.nodes.events,
            node_events: report
                .nodes
                .first_events
                .iter()
                .map(|&(trajectory, time, density)| NodeEventEntry { trajectory, time, density })
                .collect(),
            diagnostics: report.diagnostics.clone(),
            content_digest: String::new(),
            timings,
        };
        m.content_digest = m.compute_digest();
        m
    }

    pub fn compute_digest(&self) -> String {
        let mut bare = self.clone();
        bare.timings = Timings::default();
        bare.content_digest.clear();
        sha256_hex(&serde_json::to_vec(&bare).expect("manifest serializes"))
    }

    /// Compares every listed output in `dir` against its recorded checksum.
    pub fn verify(&self, dir: &Path) -> io::Result<Vec<String>> {
        let mut problems = Vec::new();
        for o in &self.outputs {
            match fs::read(dir.join(&o.path)) {
                Ok(bytes) if sha256_hex(&bytes) == o.sha256 => {}
                Ok(_) => problems.push(format!("{} does not match its checksum", o.path)),
                Err(e) if e.kind() == io::ErrorKind::NotFound => problems.push(format!("{} is missing", o.path)),
                Err(e) => return Err(e),
            }
        }
        if self.compute_digest() != self.content_digest {
            problems.push("manifest content digest mismatch".into());
        }
        Ok(problems)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(offset: f64, flagged: usize) -> Trajectory {
        let mut t = Trajectory::default();
        for i in 0..4 {
            t.times.push(i as f64 * 0.1);
            t.points.push(vec![offset + i as f64 / 3.0, -1e-20 * i as f64]);
            t.node_flags.push(i == flagged);
        }
        t
    }

    #[test]
    fn trajectory_table_round_trips_exactly() {
        let labels = vec!["a".to_string(), "b".to_string()];
        let data = vec![(0, traj(0.1, 9)), (7, traj(-2.5, 2))];
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &labels, &data).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), "trajectory,t,a,b,node_flag");
        assert_eq!(text.lines().count(), 9);
        let (back_labels, back) = read_trajectories(buf.as_slice()).unwrap();
        assert_eq!(back_labels, labels);
        assert_eq!(back, data);
    }

    #[test]
    fn malformed_tables_are_rejected() {
        assert!(read_trajectories("x,y\n".as_bytes()).is_err());
        assert!(read_trajectories("trajectory,t,x,node_flag\n0,0,1\n".as_bytes()).is_err());
        assert!(read_trajectories("trajectory,t,x,node_flag\n0,0,zz,0\n".as_bytes()).is_err());
        assert!(read_trajectories("trajectory,t,x,node_flag\n0,0,1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn checkpoint_tables_have_one_row_per_entry() {
        let samples = vec![
            CheckpointSample { time: 0.0, positions: vec![(0, vec![1.0]), (3, vec![2.0])], marginals: vec![vec![(0.0, 0.5), (1.0, 0.5)]] },
            CheckpointSample { time: 1.0, positions: vec![(0, vec![1.5])], marginals: vec![vec![(0.0, 1.0)]] },
        ];
        let labels = vec!["x".to_string()];
        let mut pos = Vec::new();
        write_positions(&mut pos, &labels, &samples).unwrap();
        let pos = String::from_utf8(pos).unwrap();
        assert_eq!(pos, "checkpoint,t,trajectory,x\n0,0e0,0,1e0\n0,0e0,3,2e0\n1,1e0,0,1.5e0\n");
        let mut marg = Vec::new();
        write_marginals(&mut marg, &labels, &samples).unwrap();
        let marg = String::from_utf8(marg).unwrap();
        assert_eq!(marg.lines().count(), 4);
        assert_eq!(marg.lines().nth(3).unwrap(), "1,1e0,x,0e0,1e0");
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn checksums_match_known_vectors() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        let e = OutputEntry::new("f", b"");
        assert_eq!(e.sha256, "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        assert_eq!(e.bytes, 0);
    }
}
