//! Tables and documents consumed by the plotting layer.

use pilotwave::ensemble::{run_ensemble, Report};
use pilotwave::io;
use pilotwave::scenarios::load_scenario;

fn rows(bytes: &[u8]) -> Vec<Vec<String>> {
    String::from_utf8(bytes.to_vec()).unwrap().lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn run_tables_are_consistent_with_the_report() {
    let out = run_ensemble(&load_scenario("harmonic_ground").unwrap()).unwrap();
    let labels = &out.report.labels;

    let mut buf = Vec::new();
    io::write_trajectories(&mut buf, labels, &out.trajectories).unwrap();
    let (back_labels, back) = io::read_trajectories(buf.as_slice()).unwrap();
    assert_eq!(&back_labels, labels);
    assert_eq!(back.len(), out.trajectories.len());
    for ((i, a), (j, b)) in back.iter().zip(&out.trajectories) {
        assert_eq!(i, j);
        assert_eq!((&a.times, &a.points, &a.node_flags), (&b.times, &b.points, &b.node_flags));
    }

    let mut buf = Vec::new();
    io::write_marginals(&mut buf, labels, &out.samples).unwrap();
    let table = rows(&buf);
    assert_eq!(table[0], ["checkpoint", "t", "coordinate", "x", "density"]);
    for (k, s) in out.samples.iter().enumerate() {
        let cells: Vec<(f64, f64)> = table[1..]
            .iter()
            .filter(|r| r[0] == k.to_string())
            .map(|r| (r[3].parse().unwrap(), r[4].parse().unwrap()))
            .collect();
        let h = cells[1].0 - cells[0].0;
        let mass: f64 = cells.iter().map(|(_, rho)| rho * h).sum();
        assert!((mass - 1.0).abs() < 1e-9, "checkpoint {k}: {mass}");
        assert_eq!(s.marginals[0].len(), cells.len());
    }

    let mut buf = Vec::new();
    io::write_positions(&mut buf, labels, &out.samples).unwrap();
    let table = rows(&buf);
    let active: usize = out.report.checkpoints.iter().map(|c| c.active).sum();
    assert_eq!(table.len() - 1, active);
    assert_eq!(out.samples.len(), out.report.checkpoints.len());

    let mut buf = Vec::new();
    io::write_checkpoints(&mut buf, &out.report).unwrap();
    let table = rows(&buf);
    assert_eq!(table.len(), out.report.checkpoints.len() + 1);
    let ratio_col = table[0].iter().position(|c| c == "ratio").unwrap();
    for (row, cp) in table[1..].iter().zip(&out.report.checkpoints) {
        assert_eq!(row[ratio_col].parse::<f64>().unwrap(), cp.ratio.unwrap());
    }

    let json = io::json_bytes(&out.report);
    let back: Report = serde_json::from_slice(&json).unwrap();
    assert_eq!(back, out.report);
}
