//! Dataset ingestion (libsvm text format), synthetic problem generation,
//! batch partitioning, and run-trace serialization.
//!
//! The CSV trace format is comma-separated with `#`-prefixed `key=value`
//! config-echo header lines, UTF-8, LF line endings. All reals are written
//! with 17 significant digits so every `f64` round-trips losslessly.

use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::numkit::{sigmoid, SparseRow};
use crate::{Error, Real, Result};

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Immutable classification dataset with ±1 labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub rows: Vec<SparseRow>,
    pub labels: Vec<Real>,
    pub dim: usize,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.rows.len()
    }
}

/// Rule mapping raw file labels to the ±1 convention.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LabelMap {
    /// Labels are already signed: positive → +1, negative → −1.
    Signed,
    /// `raw >= cut` → +1, else −1 (e.g. `cut = 0.5` for 0/1 labels).
    Threshold { cut: Real },
    /// Nonnegative integer class ids: odd → +1, even → −1
    /// (binarizes digit-classification sets).
    ParityOdd,
}

impl LabelMap {
    fn apply(&self, raw: Real, line: usize) -> Result<Real> {
        let mapped = match self {
            LabelMap::Signed => {
                if raw > 0.0 {
                    1.0
                } else if raw < 0.0 {
                    -1.0
                } else {
                    return Err(Error::BadLabel(raw));
                }
            }
            LabelMap::Threshold { cut } => {
                if raw >= *cut {
                    1.0
                } else {
                    -1.0
                }
            }
            LabelMap::ParityOdd => {
                let rounded = raw.round();
                if raw < 0.0 || (raw - rounded).abs() > 1e-9 {
                    return Err(Error::Parse {
                        line,
                        message: format!("label {raw} is not a nonnegative integer class id"),
                    });
                }
                if (rounded as i64) % 2 == 1 {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        Ok(mapped)
    }
}

/// Parses libsvm text: lines of `label idx:val idx:val …` with 1-based,
/// strictly increasing indices. Produces 0-based sorted sparse rows; the
/// dimension is the maximum index unless `dim_override` widens it.
pub fn parse_libsvm<R: BufRead>(
    reader: R,
    label_map: LabelMap,
    dim_override: Option<usize>,
) -> Result<Dataset> {
    let mut raw_rows: Vec<(Vec<usize>, Vec<Real>)> = Vec::new();
    let mut labels: Vec<Real> = Vec::new();
    let mut max_dim = 0usize;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut tokens = line.split_whitespace();
        let label_tok = match tokens.next() {
            Some(t) => t,
            None => continue, // blank line
        };
        let raw_label: Real = label_tok.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad label token {label_tok:?}"),
        })?;
        labels.push(label_map.apply(raw_label, line_no)?);

        let mut indices = Vec::new();
        let mut values = Vec::new();
        for tok in tokens {
            let (i_str, v_str) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected idx:val, got {tok:?}"),
            })?;
            let one_based: usize = i_str.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad feature index {i_str:?}"),
            })?;
            if one_based == 0 {
                return Err(Error::Parse {
                    line: line_no,
                    message: "feature indices are 1-based; got 0".into(),
                });
            }
            let value: Real = v_str.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad feature value {v_str:?}"),
            })?;
            let zero_based = one_based - 1;
            if let Some(&prev) = indices.last() {
                if zero_based <= prev {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!(
                            "feature indices not strictly increasing: {} then {}",
                            prev + 1,
                            one_based
                        ),
                    });
                }
            }
            indices.push(zero_based);
            values.push(value);
            max_dim = max_dim.max(one_based);
        }
        raw_rows.push((indices, values));
    }

    if raw_rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = match dim_override {
        Some(d) if d < max_dim => {
            return Err(Error::DimensionMismatch {
                context: "libsvm dimension override below max feature index",
                expected: max_dim,
                found: d,
            })
        }
        Some(d) => d,
        None => max_dim,
    };
    let rows = raw_rows
        .into_iter()
        .map(|(indices, values)| SparseRow::new(indices, values, dim))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { rows, labels, dim })
}

/// Writes a dataset back to libsvm text (1-based indices, 17-significant-
/// digit values); `parse(serialize(d)) == d` for signed labels.
pub fn serialize_libsvm<W: Write>(data: &Dataset, mut out: W) -> std::io::Result<()> {
    for (row, &label) in data.rows.iter().zip(&data.labels) {
        let sign = if label > 0.0 { "+1" } else { "-1" };
        write!(out, "{sign}")?;
        for (&i, &v) in row.indices.iter().zip(&row.values) {
            write!(out, " {}:{}", i + 1, fmt_real(v))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Contiguous near-even split of `0..n_samples` into `n` batches; sizes
/// differ by at most one (the first `n_samples mod n` batches are longer).
pub fn partition_batches(n_samples: usize, n: usize) -> Result<Vec<Range<usize>>> {
    if n == 0 || n > n_samples {
        return Err(Error::BadPartition {
            total: n_samples,
            parts: n,
        });
    }
    let base = n_samples / n;
    let extra = n_samples % n;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let len = base + usize::from(i < extra);
        out.push(start..start + len);
        start += len;
    }
    debug_assert_eq!(start, n_samples);
    Ok(out)
}

/// Synthetic logistic dataset: standard-normal features, labels drawn from a
/// planted unit-norm hyperplane `w` through a logistic link with sharpness
/// `separability`: `P(label = +1) = sigmoid(separability * a.w)`.
/// `separability = ∞` makes labels exactly `sign(a.w)` (no flips).
/// Deterministic per seed; the label draw is consumed even in the
/// deterministic regime so the feature stream never shifts.
pub fn synth_logreg(n_samples: usize, d: usize, seed: u64, separability: Real) -> Dataset {
    assert!(n_samples > 0 && d > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<Real> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = crate::numkit::norm_sq(&w).sqrt();
    for v in &mut w {
        *v /= norm;
    }
    let mut rows = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let values: Vec<Real> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let z: Real = values.iter().zip(&w).map(|(a, b)| a * b).sum();
        let u: Real = rng.gen_range(0.0..1.0);
        let label = if separability.is_infinite() {
            if z >= 0.0 {
                1.0
            } else {
                -1.0
            }
        } else if u < sigmoid(separability * z) {
            1.0
        } else {
            -1.0
        };
        rows.push(SparseRow {
            indices: (0..d).collect(),
            values,
            dim: d,
        });
        labels.push(label);
    }
    Dataset {
        rows,
        labels,
        dim: d,
    }
}

// ---------------------------------------------------------------------------
// Run traces
// ---------------------------------------------------------------------------

/// One per-iteration record. Row `k` describes the state `x_k` (objective,
/// metric, distance) together with the action taken at `k` (delay, step-size,
/// squared step length). A final row at `k = k_max` carries the terminal
/// state with `tau = gamma = step_norm_sq = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub k: u64,
    /// Worker or block id owning the update (0 for single-component runs).
    pub id: u32,
    /// Delay `τ_k` fed to the policy (max over workers where relevant).
    pub tau: u64,
    pub gamma: Real,
    /// Composite objective `P(x_k)`.
    pub obj: Real,
    /// Stationarity metric at `x_k`: `‖∇f(x_k) + ξ_k‖` (aggregated-gradient
    /// runs) or `‖∇̃P(x_k)‖` (block-coordinate runs); NaN when not recorded.
    pub metric: Real,
    /// `‖x_{k+1} − x_k‖²` (0 on the terminal row).
    pub step_norm_sq: Real,
    /// `‖x_k − x*‖²` when a minimizer is known; NaN otherwise.
    pub dist_opt_sq: Real,
}

/// Full record of a run: ordered `key=value` config echo plus per-iteration
/// rows with strictly increasing `k` and `γ_k ≥ 0`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTrace {
    pub config: Vec<(String, String)>,
    pub rows: Vec<TraceRow>,
}

impl RunTrace {
    pub fn new() -> Self {
        RunTrace::default()
    }

    /// Appends or replaces a config entry.
    pub fn set_config(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        if let Some(slot) = self.config.iter_mut().find(|(k, _)| k == key) {
            slot.1 = value;
        } else {
            self.config.push((key.to_string(), value));
        }
    }

    pub fn set_config_real(&mut self, key: &str, value: Real) {
        self.set_config(key, fmt_real(value));
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn config_real(&self, key: &str) -> Option<Real> {
        self.config_value(key).and_then(|v| v.parse().ok())
    }

    pub fn push(&mut self, row: TraceRow) {
        if let Some(last) = self.rows.last() {
            debug_assert!(row.k > last.k, "trace rows must have increasing k");
        }
        debug_assert!(row.gamma >= 0.0, "negative step-size in trace");
        self.rows.push(row);
    }

    /// Rows describing executed steps (everything before the terminal row).
    pub fn steps(&self) -> &[TraceRow] {
        if self.rows.is_empty() {
            &[]
        } else {
            &self.rows[..self.rows.len() - 1]
        }
    }

    /// The terminal-state row, if any rows were recorded.
    pub fn final_row(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Objective sequence `P(x_0), …, P(x_K)` over all rows.
    pub fn objectives(&self) -> Vec<Real> {
        self.rows.iter().map(|r| r.obj).collect()
    }
}

const TRACE_COLUMNS: &str = "k,id,tau,gamma,obj,metric,step_norm_sq,dist_opt_sq";

/// Formats a real with 17 significant digits (lossless `f64` round-trip).
pub fn fmt_real(v: Real) -> String {
    format!("{v:.16e}")
}

/// Serializes a trace: `# key=value` header lines, a column-name line, then
/// one comma-separated row per record.
pub fn write_trace_csv(trace: &RunTrace, path: &Path) -> Result<()> {
    let mut buf = String::new();
    for (k, v) in &trace.config {
        buf.push_str(&format!("# {k}={v}\n"));
    }
    buf.push_str(TRACE_COLUMNS);
    buf.push('\n');
    for r in &trace.rows {
        buf.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.k,
            r.id,
            r.tau,
            fmt_real(r.gamma),
            fmt_real(r.obj),
            fmt_real(r.metric),
            fmt_real(r.step_norm_sq),
            fmt_real(r.dist_opt_sq),
        ));
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a trace written by [`write_trace_csv`], restoring the config echo
/// and validating the row invariants (strictly increasing `k`, `γ_k ≥ 0`).
pub fn read_trace_csv(path: &Path) -> Result<RunTrace> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut trace = RunTrace::new();
    let mut body = String::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim_start();
            if let Some((k, v)) = rest.split_once('=') {
                trace.config.push((k.to_string(), v.to_string()));
            }
        } else if !line.trim().is_empty() {
            body.push_str(line);
            body.push('\n');
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(body.as_bytes());
    let parse_f = |field: &str, line: u64| -> Result<Real> {
        field.parse().map_err(|_| Error::Parse {
            line: line as usize,
            message: format!("bad real {field:?}"),
        })
    };
    let parse_u = |field: &str, line: u64| -> Result<u64> {
        field.parse().map_err(|_| Error::Parse {
            line: line as usize,
            message: format!("bad integer {field:?}"),
        })
    };
    for record in reader.records() {
        let record = record.map_err(|e| Error::BadTrace(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 8 {
            return Err(Error::Parse {
                line: line as usize,
                message: format!("expected 8 columns, got {}", record.len()),
            });
        }
        let row = TraceRow {
            k: parse_u(&record[0], line)?,
            id: parse_u(&record[1], line)? as u32,
            tau: parse_u(&record[2], line)?,
            gamma: parse_f(&record[3], line)?,
            obj: parse_f(&record[4], line)?,
            metric: parse_f(&record[5], line)?,
            step_norm_sq: parse_f(&record[6], line)?,
            dist_opt_sq: parse_f(&record[7], line)?,
        };
        if let Some(last) = trace.rows.last() {
            if row.k <= last.k {
                return Err(Error::BadTrace(format!(
                    "iteration counter not strictly increasing at k={}",
                    row.k
                )));
            }
        }
        if !(row.gamma >= 0.0) {
            return Err(Error::BadTrace(format!(
                "negative or NaN step-size {} at k={}",
                row.gamma, row.k
            )));
        }
        trace.rows.push(row);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn parses_basic_libsvm_line() {
        let text = "+1 3:1.5 7:0.5\n-1 1:2.0\n";
        let data = parse_libsvm(Cursor::new(text), LabelMap::Signed, None).unwrap();
        assert_eq!(data.n_samples(), 2);
        assert_eq!(data.dim, 7);
        assert_eq!(data.rows[0].indices, vec![2, 6]);
        assert_eq!(data.rows[0].values, vec![1.5, 0.5]);
        assert_eq!(data.labels, vec![1.0, -1.0]);
        assert_eq!(data.rows[1].indices, vec![0]);
    }

    #[test]
    fn empty_stream_is_an_error() {
        let err = parse_libsvm(Cursor::new(""), LabelMap::Signed, None).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset));
    }

    #[test]
    fn malformed_token_reports_line_number() {
        let text = "+1 3:1.5\n-1 oops\n";
        let err = parse_libsvm(Cursor::new(text), LabelMap::Signed, None).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_increasing_indices_rejected() {
        let text = "+1 3:1.0 3:2.0\n";
        let err = parse_libsvm(Cursor::new(text), LabelMap::Signed, None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn label_maps_cover_conventions() {
        let zero_one = "0 1:1.0\n1 1:1.0\n";
        let d = parse_libsvm(
            Cursor::new(zero_one),
            LabelMap::Threshold { cut: 0.5 },
            None,
        )
        .unwrap();
        assert_eq!(d.labels, vec![-1.0, 1.0]);

        let digits = "3 1:1.0\n4 1:1.0\n0 1:1.0\n";
        let d = parse_libsvm(Cursor::new(digits), LabelMap::ParityOdd, None).unwrap();
        assert_eq!(d.labels, vec![1.0, -1.0, -1.0]);
    }

    #[test]
    fn libsvm_round_trip() {
        let data = synth_logreg(17, 5, 99, 2.0);
        let mut buf = Vec::new();
        serialize_libsvm(&data, &mut buf).unwrap();
        let reparsed = parse_libsvm(Cursor::new(buf), LabelMap::Signed, Some(5)).unwrap();
        assert_eq!(reparsed, data);
    }

    #[test]
    fn partition_sizes_and_coverage() {
        assert_eq!(partition_batches(10, 10).unwrap().len(), 10);
        let parts = partition_batches(7, 3).unwrap();
        let sizes: Vec<usize> = parts.iter().map(|r| r.len()).collect();
        assert_eq!(sizes, vec![3, 2, 2]);
        // union = {0..6}, pairwise disjoint (contiguity makes this a chain check)
        let mut covered = Vec::new();
        for p in &parts {
            covered.extend(p.clone());
        }
        assert_eq!(covered, (0..7).collect::<Vec<_>>());
        assert!(partition_batches(5, 6).is_err());
        assert!(partition_batches(5, 0).is_err());
    }

    #[test]
    fn synth_is_deterministic_per_seed() {
        let a = synth_logreg(20, 4, 42, 3.0);
        let b = synth_logreg(20, 4, 42, 3.0);
        let c = synth_logreg(20, 4, 43, 3.0);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn infinite_separability_plants_exact_signs() {
        let data = synth_logreg(50, 6, 11, Real::INFINITY);
        // Re-derive the planted hyperplane with the same stream layout.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut w: Vec<Real> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
        let norm = crate::numkit::norm_sq(&w).sqrt();
        for v in &mut w {
            *v /= norm;
        }
        for (row, &label) in data.rows.iter().zip(&data.labels) {
            let z = row.dot_dense(&{
                let mut dense = vec![0.0; 6];
                for (i, &v) in w.iter().enumerate() {
                    dense[i] = v;
                }
                dense
            });
            assert_eq!(label, if z >= 0.0 { 1.0 } else { -1.0 });
        }
    }

    #[test]
    fn trace_round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut trace = RunTrace::new();
        trace.set_config("policy", "adaptive1");
        trace.set_config_real("h", 0.99);
        trace.set_config_real("lambda1", 1e-5);
        trace.set_config_real("lambda2", 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 0..25u64 {
            trace.push(TraceRow {
                k,
                id: (k % 3) as u32,
                tau: k % 7,
                gamma: rng.gen_range(0.0..1.0),
                obj: rng.gen_range(-1.0..1.0),
                metric: if k % 5 == 0 {
                    Real::NAN
                } else {
                    rng.gen_range(0.0..2.0)
                },
                step_norm_sq: rng.gen_range(0.0..1.0),
                dist_opt_sq: Real::NAN,
            });
        }
        write_trace_csv(&trace, &path).unwrap();
        let back = read_trace_csv(&path).unwrap();
        assert_eq!(back.config, trace.config);
        assert_eq!(back.rows.len(), trace.rows.len());
        for (a, b) in back.rows.iter().zip(&trace.rows) {
            assert_eq!(a.k, b.k);
            assert_eq!(a.id, b.id);
            assert_eq!(a.tau, b.tau);
            // bitwise equality, NaN included
            assert_eq!(a.gamma.to_bits(), b.gamma.to_bits());
            assert_eq!(a.obj.to_bits(), b.obj.to_bits());
            assert!(a.metric == b.metric || (a.metric.is_nan() && b.metric.is_nan()));
            assert_eq!(a.step_norm_sq.to_bits(), b.step_norm_sq.to_bits());
            assert!(a.dist_opt_sq.is_nan() && b.dist_opt_sq.is_nan());
        }
        // config echo reparses to the exact constants
        assert_eq!(back.config_real("h"), Some(0.99));
        assert_eq!(back.config_real("lambda1"), Some(1e-5));
        assert_eq!(back.config_real("lambda2"), Some(1e-4));
    }

    #[test]
    fn empty_trace_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        let mut trace = RunTrace::new();
        trace.set_config("backend", "sim");
        write_trace_csv(&trace, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "# backend=sim\nk,id,tau,gamma,obj,metric,step_norm_sq,dist_opt_sq\n"
        );
        let back = read_trace_csv(&path).unwrap();
        assert!(back.rows.is_empty());
        assert_eq!(back.config_value("backend"), Some("sim"));
    }

    #[test]
    fn decreasing_k_rejected_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let text = format!(
            "{TRACE_COLUMNS}\n2,0,0,{z},{z},{z},{z},{z}\n1,0,0,{z},{z},{z},{z},{z}\n",
            z = fmt_real(0.0)
        );
        std::fs::write(&path, text).unwrap();
        assert!(matches!(read_trace_csv(&path), Err(Error::BadTrace(_))));
    }
}
