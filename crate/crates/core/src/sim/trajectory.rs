//! Per-step records of a closed-loop run and their CSV export.

use std::io::Write;
use std::time::Duration;

use num_rational::BigRational;

use crate::fixedpoint::Fixed;
use crate::linalg::{format_decimal, rational_to_f64};
use crate::synthesis::{OperatingRegion, StabilityBounds};

/// Wall-clock time spent in each phase of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PhaseTimings {
    pub quantize: Duration,
    pub encrypt: Duration,
    pub control: Duration,
    pub decrypt: Duration,
}

impl PhaseTimings {
    pub fn total(&self) -> Duration {
        self.quantize + self.encrypt + self.control + self.decrypt
    }
}

/// Signals of the plaintext quantized reference loop at one step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShadowRecord {
    pub x: Vec<BigRational>,
    pub zeta: Vec<Fixed>,
    pub actuation: Vec<Fixed>,
    pub measured: Vec<Fixed>,
    pub echo: Vec<Fixed>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    /// Plant state `x(k)`.
    pub x: Vec<BigRational>,
    /// Controller state `ζ(k)` as decrypted by the entities.
    pub zeta: Vec<Fixed>,
    /// Actuation `u^a(k)` applied to the plant.
    pub actuation: Vec<Fixed>,
    /// Echo input `u^b(k)`.
    pub echo_input: Vec<Fixed>,
    /// Scaled measurement before quantization.
    pub measured_raw: Vec<BigRational>,
    /// Scaled echo before quantization.
    pub echo_raw: Vec<BigRational>,
    /// Quantized measurement `y^a(k)`.
    pub measured: Vec<Fixed>,
    /// Quantized echo `y^b(k)`.
    pub echo: Vec<Fixed>,
    pub shadow: Option<ShadowRecord>,
    /// Envelope bound on `‖x_c(k)‖`.
    pub bound: f64,
    /// `‖col(x(k), ζ(k))‖`.
    pub norm_xc: f64,
    pub timings: PhaseTimings,
}

impl StepRecord {
    /// Quantization errors `y^q - y`, measurements first.
    pub fn quantization_error(&self) -> Vec<BigRational> {
        self.measured
            .iter()
            .zip(&self.measured_raw)
            .chain(self.echo.iter().zip(&self.echo_raw))
            .map(|(q, y)| q.to_rational() - y)
            .collect()
    }

    /// Whether every decrypted signal equals its shadow value. `None`
    /// without a shadow loop.
    pub fn equivalent(&self) -> Option<bool> {
        self.shadow.as_ref().map(|s| {
            s.zeta == self.zeta
                && s.actuation == self.actuation
                && s.measured == self.measured
                && s.echo == self.echo
                && s.x == self.x
        })
    }

    pub fn state_inf_norm(&self) -> f64 {
        self.x.iter().map(|v| rational_to_f64(v).abs()).fold(0.0, f64::max)
    }

    pub fn state_norm(&self) -> f64 {
        self.x.iter().map(|v| rational_to_f64(v).powi(2)).sum::<f64>().sqrt()
    }
}

/// Sizes of the recorded signal vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SignalDims {
    pub state: usize,
    pub controller: usize,
    pub input: usize,
    pub output: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dims: SignalDims,
    pub records: Vec<StepRecord>,
    pub bounds: StabilityBounds,
    pub region: Option<OperatingRegion>,
    /// `‖x_c(0)‖`.
    pub initial_norm: f64,
    pub warnings: Vec<String>,
    /// One line per ciphertext message, in send order.
    pub trace: Vec<String>,
    pub record_timings: bool,
}

pub const TIMING_COLUMNS: [&str; 4] = ["t_quant_us", "t_enc_us", "t_ctrl_us", "t_dec_us"];

impl Trajectory {
    pub fn header(&self) -> Vec<String> {
        let d = self.dims;
        let mut h = vec!["k".to_string()];
        let mut push = |prefix: &str, n: usize| h.extend((1..=n).map(|i| format!("{prefix}_{i}")));
        push("x", d.state);
        push("zeta", d.controller);
        push("ua", d.input);
        push("ub", d.controller);
        push("ya", d.output);
        push("yb", d.controller);
        push("delta", d.output + d.controller);
        h.extend(["bound", "norm_xc", "equiv"].map(String::from));
        h.extend(TIMING_COLUMNS.map(String::from));
        h
    }

    fn row(&self, r: &StepRecord) -> Vec<String> {
        let mut row = vec![r.k.to_string()];
        row.extend(r.x.iter().map(format_decimal));
        let fixed = |v: &[Fixed]| v.iter().map(ToString::to_string).collect::<Vec<_>>();
        row.extend(fixed(&r.zeta));
        row.extend(fixed(&r.actuation));
        row.extend(fixed(&r.echo_input));
        row.extend(fixed(&r.measured));
        row.extend(fixed(&r.echo));
        row.extend(r.quantization_error().iter().map(format_decimal));
        row.push(format!("{:.9e}", r.bound));
        row.push(format!("{:.9e}", r.norm_xc));
        row.push(
            match r.equivalent() {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            }
            .to_string(),
        );
        let t = if self.record_timings { r.timings } else { PhaseTimings::default() };
        for d in [t.quantize, t.encrypt, t.control, t.decrypt] {
            row.push(d.as_micros().to_string());
        }
        row
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for r in &self.records {
            w.write_record(self.row(r))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn trace_text(&self) -> String {
        let mut s = String::new();
        for line in &self.trace {
            s.push_str(line);
            s.push('\n');
        }
        s
    }

    /// `max ‖x(k)‖∞` over the records with `k` in `range`.
    pub fn max_state_inf_norm(&self, range: std::ops::RangeInclusive<usize>) -> Option<f64> {
        self.records
            .iter()
            .filter(|r| range.contains(&r.k))
            .map(StepRecord::state_inf_norm)
            .reduce(f64::max)
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    /// Mean wall-clock time per step.
    pub fn mean_step_time(&self) -> Duration {
        if self.records.is_empty() {
            return Duration::ZERO;
        }
        let total: Duration = self.records.iter().map(|r| r.timings.total()).sum();
        total / self.records.len() as u32
    }
}
