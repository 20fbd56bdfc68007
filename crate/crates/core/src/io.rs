//! Frozen CSV layouts and JSON helpers for run artifacts.
//!
//! Columns only ever get appended. Readers check the header by name and
//! reject anything else, so a stale consumer fails loudly instead of reading
//! shifted columns.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::backward::BackwardSolution;
use crate::error::{FpkError, Result};
use crate::solver::{GridDensity, MomentReport, MomentRow, ParticleEnsemble};

pub const GRID_HEADER: [&str; 3] = ["t", "cell_index", "mass"];
pub const MOMENT_HEADER: [&str; 5] = ["t", "k", "moment", "running_integral", "stderr"];
pub const BACKWARD_HEADER: [&str; 4] = ["s", "grid_index", "f", "grad_norm"];

/// `t, particle_id, x1..xN`.
pub fn particle_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "particle_id".to_string()];
    h.extend((1..=n).map(|i| format!("x{i}")));
    h
}

fn csv_err(e: csv::Error) -> FpkError {
    FpkError::Invalid(format!("csv: {e}"))
}

// `{}` on f64 prints the shortest string that parses back to the same bits.
fn num(x: f64) -> String {
    format!("{x}")
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

fn check_header(found: &csv::StringRecord, expected: &[String]) -> Result<()> {
    let found: Vec<&str> = found.iter().map(str::trim).collect();
    if found.len() == expected.len() && found.iter().zip(expected).all(|(a, b)| *a == b) {
        return Ok(());
    }
    Err(FpkError::Invalid(format!(
        "unexpected CSV header: expected [{}], found [{}]",
        expected.join(", "),
        found.join(", ")
    )))
}

fn strings(h: &[&str]) -> Vec<String> {
    h.iter().map(|s| s.to_string()).collect()
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: u64) -> Result<T> {
    let raw = rec.get(i).unwrap_or("").trim();
    raw.parse()
        .map_err(|_| FpkError::Invalid(format!("line {line}: cannot parse column {} value {raw:?}", i + 1)))
}

fn records<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(r)
}

pub fn write_particles<W: Write>(w: W, snapshots: &[ParticleEnsemble]) -> Result<()> {
    let n = snapshots.first().map_or(1, ParticleEnsemble::dim);
    let mut out = writer(w);
    out.write_record(particle_header(n)).map_err(csv_err)?;
    for e in snapshots {
        if e.dim() != n {
            return Err(FpkError::DimensionMismatch {
                expected: n,
                actual: e.dim(),
            });
        }
        let t = num(e.t());
        for i in 0..e.len() {
            let mut rec = vec![t.clone(), i.to_string()];
            rec.extend(e.particle(i).iter().map(|&x| num(x)));
            out.write_record(rec).map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Groups rows by `t` in file order. Particle ids must run `0..P` in each
/// snapshot.
pub fn read_particles<R: Read>(r: R) -> Result<Vec<ParticleEnsemble>> {
    let mut rdr = records(r);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let n = header.len().saturating_sub(2);
    if n == 0 {
        return Err(FpkError::Invalid("particle CSV needs at least one coordinate column".into()));
    }
    check_header(&header, &particle_header(n))?;
    let mut out = Vec::new();
    let mut current: Option<(f64, Vec<f64>)> = None;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = row as u64 + 2;
        let t: f64 = field(&rec, 0, line)?;
        let id: usize = field(&rec, 1, line)?;
        if current.as_ref().map_or(true, |(s, _)| s.to_bits() != t.to_bits()) {
            if let Some((s, pos)) = current.take() {
                out.push(ParticleEnsemble::new(n, pos, s)?);
            }
            current = Some((t, Vec::new()));
        }
        let (_, pos) = current.as_mut().expect("set above");
        if id != pos.len() / n {
            return Err(FpkError::Invalid(format!("line {line}: particle_id {id} out of sequence")));
        }
        for i in 0..n {
            pos.push(field(&rec, i + 2, line)?);
        }
    }
    if let Some((s, pos)) = current {
        out.push(ParticleEnsemble::new(n, pos, s)?);
    }
    Ok(out)
}

pub fn write_grid<W: Write>(w: W, snapshots: &[GridDensity]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(GRID_HEADER).map_err(csv_err)?;
    for g in snapshots {
        let t = num(g.t());
        for (i, &m) in g.masses().iter().enumerate() {
            out.write_record([t.clone(), i.to_string(), num(m)]).map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridRow {
    pub t: f64,
    pub cell_index: usize,
    pub mass: f64,
}

pub fn read_grid<R: Read>(r: R) -> Result<Vec<GridRow>> {
    let mut rdr = records(r);
    check_header(&rdr.headers().map_err(csv_err)?.clone(), &strings(&GRID_HEADER))?;
    rdr.records()
        .enumerate()
        .map(|(row, rec)| {
            let rec = rec.map_err(csv_err)?;
            let line = row as u64 + 2;
            Ok(GridRow {
                t: field(&rec, 0, line)?,
                cell_index: field(&rec, 1, line)?,
                mass: field(&rec, 2, line)?,
            })
        })
        .collect()
}

fn moment_header(with_bound: bool) -> Vec<String> {
    let mut h = strings(&MOMENT_HEADER);
    if with_bound {
        h.push("bound".into());
    }
    h
}

/// Writes the moment table, with a trailing `bound` column when `bounds`
/// maps every `k` present to its bound.
pub fn write_moments<W: Write>(w: W, report: &MomentReport, bounds: Option<&BTreeMap<u32, f64>>) -> Result<()> {
    let mut out = writer(w);
    out.write_record(moment_header(bounds.is_some())).map_err(csv_err)?;
    for r in &report.rows {
        let mut rec = vec![num(r.t), r.k.to_string(), num(r.moment), num(r.running_integral), num(r.stderr)];
        if let Some(b) = bounds {
            let bound = b
                .get(&r.k)
                .ok_or_else(|| FpkError::Invalid(format!("no bound for k = {}", r.k)))?;
            rec.push(num(*bound));
        }
        out.write_record(rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Returns the report and, when the file has a `bound` column, one bound per
/// row.
pub fn read_moments<R: Read>(r: R) -> Result<(MomentReport, Option<Vec<f64>>)> {
    let mut rdr = records(r);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let with_bound = header.len() == MOMENT_HEADER.len() + 1;
    check_header(&header, &moment_header(with_bound))?;
    let mut report = MomentReport::default();
    let mut bounds = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = row as u64 + 2;
        report.rows.push(MomentRow {
            t: field(&rec, 0, line)?,
            k: field(&rec, 1, line)?,
            moment: field(&rec, 2, line)?,
            running_integral: field(&rec, 3, line)?,
            stderr: field(&rec, 4, line)?,
        });
        if with_bound {
            bounds.push(field(&rec, 5, line)?);
        }
    }
    Ok((report, with_bound.then_some(bounds)))
}

/// Writes `f` and `|∇f|` on every grid node for every `stride`-th stored
/// time level, always including `s = 0` and the terminal level.
pub fn write_backward<W: Write>(w: W, sol: &BackwardSolution, stride: usize) -> Result<()> {
    let stride = stride.max(1);
    let levels = sol.times().len();
    let mut out = writer(w);
    out.write_record(BACKWARD_HEADER).map_err(csv_err)?;
    let mut grad = vec![0.0; sol.dim()];
    for level in (0..levels).filter(|&l| l % stride == 0 || l + 1 == levels) {
        let s = num(sol.times()[level]);
        for (idx, &f) in sol.level(level).iter().enumerate() {
            sol.node_gradient(level, idx, &mut grad);
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            out.write_record([s.clone(), idx.to_string(), num(f), num(norm)])
                .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackwardRow {
    pub s: f64,
    pub grid_index: usize,
    pub f: f64,
    pub grad_norm: f64,
}

pub fn read_backward<R: Read>(r: R) -> Result<Vec<BackwardRow>> {
    let mut rdr = records(r);
    check_header(&rdr.headers().map_err(csv_err)?.clone(), &strings(&BACKWARD_HEADER))?;
    rdr.records()
        .enumerate()
        .map(|(row, rec)| {
            let rec = rec.map_err(csv_err)?;
            let line = row as u64 + 2;
            Ok(BackwardRow {
                s: field(&rec, 0, line)?,
                grid_index: field(&rec, 1, line)?,
                f: field(&rec, 2, line)?,
                grad_norm: field(&rec, 3, line)?,
            })
        })
        .collect()
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backward::{solve_backward, BackwardConfig, BackwardProblem, DualityReport, TerminalSpec};
    use crate::drift::PolyDrift;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn ensemble(t: f64, pos: Vec<f64>) -> ParticleEnsemble {
        ParticleEnsemble::new(2, pos, t).unwrap()
    }

    #[test]
    fn particle_layout() {
        let snaps = [ensemble(0.0, vec![1.0, -2.5, 0.1, 3.0]), ensemble(0.5, vec![1e-300, 2.0, -0.0, 7.25])];
        let mut buf = Vec::new();
        write_particles(&mut buf, &snaps).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,particle_id,x1,x2\n0,0,1,-2.5\n0,1,0.1,3\n"));
        let back = read_particles(&buf[..]).unwrap();
        assert_eq!(back, snaps);
    }

    #[test]
    fn grid_and_backward_round_trip() {
        let g = GridDensity::new(1, 2.0, 4, vec![0.1, 0.4, 0.4, 0.1], 0.25).unwrap();
        let mut buf = Vec::new();
        write_grid(&mut buf, &[g]).unwrap();
        let rows = read_grid(&buf[..]).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[1], GridRow { t: 0.25, cell_index: 1, mass: 0.4 });

        let problem = BackwardProblem {
            drift: PolyDrift::linear_decay(&[1.0]).with_saturation(None),
            diffusion: DMatrix::from_element(1, 1, 0.5),
            terminal: TerminalSpec::Gaussian {
                center: vec![0.0],
                width: 1.0,
            },
            normalize: false,
            horizon: 0.1,
            cutoff: None,
        };
        let sol = solve_backward(&problem, &BackwardConfig::new(4.0, 33)).unwrap();
        let mut buf = Vec::new();
        write_backward(&mut buf, &sol, 1_000_000).unwrap();
        let rows = read_backward(&buf[..]).unwrap();
        // First and terminal levels only.
        assert_eq!(rows.len(), 2 * 33);
        assert_eq!(rows[0].s, 0.0);
        assert_eq!(rows.last().unwrap().s, sol.horizon());
        // Terminal Gaussian exp(−x²/2) at x = 0 with zero gradient at the centre node.
        let centre = rows[33 + 16];
        assert!((centre.f - 1.0).abs() < 1e-12 && centre.grad_norm < 1e-12);
    }

    #[test]
    fn moments_with_and_without_bound() {
        let report = MomentReport {
            rows: vec![
                MomentRow {
                    t: 0.1,
                    k: 1,
                    moment: 1.25,
                    running_integral: 0.0625,
                    stderr: 0.001,
                },
                MomentRow {
                    t: 0.1,
                    k: 2,
                    moment: 2.0,
                    running_integral: 0.5,
                    stderr: 0.01,
                },
            ],
        };
        let mut buf = Vec::new();
        write_moments(&mut buf, &report, None).unwrap();
        assert_eq!(read_moments(&buf[..]).unwrap(), (report.clone(), None));

        let bounds = BTreeMap::from([(1, 4.0), (2, 9.5)]);
        let mut buf = Vec::new();
        write_moments(&mut buf, &report, Some(&bounds)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,k,moment,running_integral,stderr,bound\n"));
        assert_eq!(read_moments(&buf[..]).unwrap(), (report.clone(), Some(vec![4.0, 9.5])));

        let partial = BTreeMap::from([(1, 4.0)]);
        assert!(write_moments(Vec::new(), &report, Some(&partial)).is_err());
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let err = read_moments("t,k,moment,stderr\n0,1,1,0\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("expected [t, k, moment, running_integral, stderr]"));
        assert!(read_grid("t,mass,cell_index\n".as_bytes()).is_err());
        assert!(read_particles("t,particle_id\n".as_bytes()).is_err());
        assert!(read_particles("t,particle_id,x1\n0,1,0.5\n".as_bytes()).is_err());
        let err = read_backward("s,grid_index,f,grad_norm\n0,0,abc,1\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn duality_json_fields() {
        let r = DualityReport {
            gap: 1e-4,
            stderr: 2e-5,
            mismatch_gap: 0.01,
            mismatch_stderr: 1e-3,
            eps: 0.02,
            eps_stderr: 1e-4,
            bound: 0.4,
            energy: 1.1,
            energy_stderr: 0.01,
            outside: 0,
            particles: 100,
        };
        let dir = std::env::temp_dir().join(format!("fpk-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("duality.json");
        write_json(&path, &r).unwrap();
        let v: serde_json::Value = read_json(&path).unwrap();
        for key in ["gap", "eps", "bound", "stderr"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(read_json::<DualityReport>(&path).unwrap(), r);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    proptest! {
        #[test]
        fn particle_csv_round_trips_bitwise(
            raw in proptest::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 2..40),
            t in 0.0..10.0f64,
        ) {
            let len = raw.len() / 2 * 2;
            let snap = ensemble(t, raw[..len].to_vec());
            let mut buf = Vec::new();
            write_particles(&mut buf, std::slice::from_ref(&snap)).unwrap();
            let back = read_particles(&buf[..]).unwrap();
            prop_assert_eq!(back.len(), 1);
            for (a, b) in back[0].positions().iter().zip(snap.positions()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
