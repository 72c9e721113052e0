//! Trace CSV and metrics JSON.
//!
//! Trace columns, in order:
//! `step, t, z, u, pi_x, lagrangian, omega_final, hamiltonian, x_0.., p_0.., alpha_0..`.
//! `u` holds the input sample joined with `;` (empty when there is no input).
//! Floats use Rust's shortest round-trip formatting.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::riccati_flow::TraceRecord;

const FIXED_COLUMNS: [&str; 8] = [
    "step",
    "t",
    "z",
    "u",
    "pi_x",
    "lagrangian",
    "omega_final",
    "hamiltonian",
];

pub fn trace_header(state_dim: usize, control_dim: usize) -> Vec<String> {
    let mut h: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    h.extend((0..state_dim).map(|i| format!("x_{i}")));
    h.extend((0..state_dim).map(|i| format!("p_{i}")));
    h.extend((0..control_dim).map(|i| format!("alpha_{i}")));
    h
}

pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
    state_dim: usize,
    control_dim: usize,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W, state_dim: usize, control_dim: usize) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(trace_header(state_dim, control_dim))?;
        Ok(Self {
            inner,
            state_dim,
            control_dim,
        })
    }

    pub fn write(&mut self, r: &TraceRecord) -> Result<()> {
        if r.x.len() != self.state_dim || r.p.len() != self.state_dim || r.alpha.len() != self.control_dim {
            return Err(Error::Dimension {
                context: "trace record",
                expected: self.state_dim,
                got: r.x.len(),
            });
        }
        let u = r.u.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
        let mut row = vec![
            r.step.to_string(),
            r.t.to_string(),
            r.z.to_string(),
            u,
            r.pi_x.to_string(),
            r.lagrangian.to_string(),
            r.omega_final.to_string(),
            r.hamiltonian.to_string(),
        ];
        row.extend(r.x.iter().chain(&r.p).chain(&r.alpha).map(|v| v.to_string()));
        self.inner.write_record(&row)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Config(format!("bad float `{s}` in trace")))
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let n = headers.iter().filter(|h| h.starts_with("x_")).count();
    let c = headers.iter().filter(|h| h.starts_with("alpha_")).count();
    if headers.len() != FIXED_COLUMNS.len() + 2 * n + c {
        return Err(Error::Config("trace header has unexpected columns".into()));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let get = |i: usize| row.get(i).unwrap_or("");
        let floats = |from: usize, len: usize| -> Result<Vec<f64>> {
            (from..from + len).map(|i| parse_f64(get(i))).collect()
        };
        let u = if get(3).is_empty() {
            Vec::new()
        } else {
            get(3).split(';').map(parse_f64).collect::<Result<_>>()?
        };
        let base = FIXED_COLUMNS.len();
        out.push(TraceRecord {
            step: get(0)
                .parse()
                .map_err(|_| Error::Config(format!("bad step `{}`", get(0))))?,
            t: parse_f64(get(1))?,
            z: parse_f64(get(2))?,
            u,
            pi_x: parse_f64(get(4))?,
            lagrangian: parse_f64(get(5))?,
            omega_final: parse_f64(get(6))?,
            hamiltonian: parse_f64(get(7))?,
            x: floats(base, n)?,
            p: floats(base + n, n)?,
            alpha: floats(base + 2 * n, c)?,
        });
    }
    Ok(out)
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TraceRecord>> {
    read_trace(std::fs::File::open(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub final_avg_lagrangian: f64,
    pub avg_lagrangian_at_10pct: f64,
    pub rms_first: f64,
    pub rms_last: f64,
    pub diverged: bool,
    pub wall_time_s: f64,
    pub steps: usize,
}

impl Metrics {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: usize) -> TraceRecord {
        TraceRecord {
            step,
            t: step as f64 * 0.5,
            z: 0.1 + step as f64,
            u: vec![1.0 / 3.0],
            pi_x: -2.0e-17,
            lagrangian: 12345.678901234567,
            omega_final: 1e300,
            hamiltonian: -0.0,
            x: vec![0.1, 0.2],
            p: vec![std::f64::consts::PI, 1e-310],
            alpha: vec![-7.0],
        }
    }

    #[test]
    fn header_layout() {
        let h = trace_header(2, 1);
        assert_eq!(
            h,
            vec![
                "step", "t", "z", "u", "pi_x", "lagrangian", "omega_final", "hamiltonian", "x_0", "x_1",
                "p_0", "p_1", "alpha_0"
            ]
        );
    }

    #[test]
    fn round_trip_preserves_bits() {
        let mut buf = Vec::new();
        {
            let mut w = TraceWriter::new(&mut buf, 2, 1).unwrap();
            for s in 0..3 {
                w.write(&record(s)).unwrap();
            }
            w.flush().unwrap();
        }
        let back = read_trace(&buf[..]).unwrap();
        assert_eq!(back, (0..3).map(record).collect::<Vec<_>>());
    }

    #[test]
    fn empty_input_column() {
        let mut r = record(0);
        r.u.clear();
        let mut buf = Vec::new();
        {
            let mut w = TraceWriter::new(&mut buf, 2, 1).unwrap();
            w.write(&r).unwrap();
            w.flush().unwrap();
        }
        assert_eq!(read_trace(&buf[..]).unwrap()[0].u, Vec::<f64>::new());
    }

    #[test]
    fn wrong_width_rejected() {
        let mut w = TraceWriter::new(Vec::new(), 3, 1).unwrap();
        assert!(w.write(&record(0)).is_err());
    }
}
