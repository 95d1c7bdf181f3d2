//! Grid wavefunction snapshots on disk.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! b"PWGRID1\0"
//! u32 dim
//! dim x (f64 min, f64 max, u64 n)
//! u32 internal_dim
//! f64 time
//! values: re, im as f64, last axis fastest, internal index fastest of all
//! ```

use super::{Axis, Grid, GridWavefunction};
use num_complex::Complex64;
use std::io::{self, BufRead, Read, Write};
use std::sync::Arc;

pub const MAGIC: &[u8; 8] = b"PWGRID1\0";

pub fn write_binary<W: Write>(psi: &GridWavefunction, mut w: W) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(psi.grid.dim() as u32).to_le_bytes())?;
    for a in &psi.grid.axes {
        w.write_all(&a.min.to_le_bytes())?;
        w.write_all(&a.max.to_le_bytes())?;
        w.write_all(&(a.n as u64).to_le_bytes())?;
    }
    w.write_all(&(psi.internal_dim as u32).to_le_bytes())?;
    w.write_all(&psi.time.to_le_bytes())?;
    for z in psi.interleaved() {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    w.flush()
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_binary<R: Read>(mut r: R) -> io::Result<GridWavefunction> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid("not a grid snapshot"));
    }
    let dim = read_u32(&mut r)? as usize;
    if dim == 0 || dim > 8 {
        return Err(invalid(format!("implausible dimension {dim}")));
    }
    let mut axes = Vec::with_capacity(dim);
    for _ in 0..dim {
        let min = read_f64(&mut r)?;
        let max = read_f64(&mut r)?;
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let n = u64::from_le_bytes(b) as usize;
        if n == 0 || !(max > min) {
            return Err(invalid("degenerate axis"));
        }
        axes.push(Axis::new(min, max, n));
    }
    let fd = read_u32(&mut r)? as usize;
    let time = read_f64(&mut r)?;
    let grid = Arc::new(Grid::new(axes));
    let count = grid.points() * fd;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let re = read_f64(&mut r)?;
        let im = read_f64(&mut r)?;
        values.push(Complex64::new(re, im));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(invalid("trailing bytes after snapshot"));
    }
    Ok(GridWavefunction::from_interleaved(grid, fd, &values, time))
}

/// CSV variant: a `# axes` comment line carrying `min:max:n` per axis and the
/// time, a header, then one row per node with coordinates followed by
/// `re_f, im_f` pairs.
pub fn write_csv<W: Write>(psi: &GridWavefunction, labels: &[String], mut w: W) -> io::Result<()> {
    let axes: Vec<String> = psi.grid.axes.iter().map(|a| format!("{}:{}:{}", a.min, a.max, a.n)).collect();
    writeln!(w, "# axes {} time {}", axes.join(" "), psi.time)?;
    let mut header: Vec<String> = labels.to_vec();
    for f in 0..psi.internal_dim {
        header.push(format!("re_{f}"));
        header.push(format!("im_{f}"));
    }
    writeln!(w, "{}", header.join(","))?;
    let n = psi.grid.points();
    for p in 0..n {
        let mut row: Vec<String> = psi.grid.position(p).iter().map(|x| format!("{x:e}")).collect();
        for f in 0..psi.internal_dim {
            let z = psi.data[f * n + p];
            row.push(format!("{:e}", z.re));
            row.push(format!("{:e}", z.im));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()
}

pub fn read_csv<R: BufRead>(r: R) -> io::Result<GridWavefunction> {
    let mut lines = r.lines();
    let first = lines.next().ok_or_else(|| invalid("empty file"))??;
    let words: Vec<&str> = first.split_whitespace().collect();
    if words.len() < 5 || words[0] != "#" || words[1] != "axes" || words[words.len() - 2] != "time" {
        return Err(invalid("missing axes comment"));
    }
    let time: f64 = words[words.len() - 1].parse().map_err(|_| invalid("bad time"))?;
    let axes = words[2..words.len() - 2]
        .iter()
        .map(|s| {
            let parts: Vec<&str> = s.split(':').collect();
            if parts.len() != 3 {
                return Err(invalid(format!("bad axis {s}")));
            }
            let p = |i: usize| parts[i].parse::<f64>().map_err(|_| invalid(format!("bad axis {s}")));
            Ok(Axis::new(p(0)?, p(1)?, parts[2].parse().map_err(|_| invalid(format!("bad axis {s}")))?))
        })
        .collect::<io::Result<Vec<_>>>()?;
    let header = lines.next().ok_or_else(|| invalid("missing header"))??;
    let columns = header.split(',').count();
    let dim = axes.len();
    if columns < dim + 2 || (columns - dim) % 2 != 0 {
        return Err(invalid("header does not match axes"));
    }
    let fd = (columns - dim) / 2;
    let grid = Arc::new(Grid::new(axes));
    let mut values = Vec::with_capacity(grid.points() * fd);
    for line in lines {
        let line = line?;
        let cells: Vec<f64> =
            line.split(',').map(|c| c.trim().parse::<f64>().map_err(|_| invalid(format!("bad number in {line}")))).collect::<io::Result<_>>()?;
        if cells.len() != columns {
            return Err(invalid("row length differs from header"));
        }
        for f in 0..fd {
            values.push(Complex64::new(cells[dim + 2 * f], cells[dim + 2 * f + 1]));
        }
    }
    if values.len() != grid.points() * fd {
        return Err(invalid("row count differs from grid size"));
    }
    Ok(GridWavefunction::from_interleaved(grid, fd, &values, time))
}
