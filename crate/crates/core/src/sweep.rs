//! Empirical scaling of exact operation counts for dense and ring layers.
//!
//! Sweeps one structural parameter (bond size, input size, output size, or
//! core count), runs the instrumented forward or backward pass at each
//! point, and fits a log-log slope through the exact multiply-add and
//! peak-intermediate counts. Counts, not wall time: constants and cache
//! effects would swamp desk-scale asymptotics.

use crate::layer::{LayerError, TrLayer};
use crate::tensor::{DenseTensor, FlopReport};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("need at least 4 strictly increasing sweep values, got {0:?}")]
    DegenerateSweep(Vec<usize>),
    #[error("dense layers have no bond or core-count parameter to sweep")]
    DenseHasNoRank,
    #[error(transparent)]
    Layer(#[from] LayerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVariable {
    /// Uniform bond size.
    Rank,
    /// Input size, grown through the last input mode.
    Input,
    /// Output size, grown through the last output mode.
    Output,
    /// Number of input cores (ring only), each of the first input mode size.
    Cores,
}

impl SweepVariable {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r" | "rank" => Some(SweepVariable::Rank),
            "i" | "input" => Some(SweepVariable::Input),
            "o" | "output" => Some(SweepVariable::Output),
            "d" | "cores" => Some(SweepVariable::Cores),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepPass {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Ring,
}

/// Fixed shape parameters; the swept variable overrides one of them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepBase {
    pub input_dims: Vec<usize>,
    pub output_dims: Vec<usize>,
    pub rank: usize,
}

impl Default for SweepBase {
    fn default() -> Self {
        Self {
            input_dims: vec![4, 4, 4],
            output_dims: vec![4, 4, 4],
            rank: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub kind: LayerKind,
    pub variable: SweepVariable,
    pub pass: SweepPass,
    pub values: Vec<usize>,
    pub base: SweepBase,
}

#[derive(Debug, Clone, Copy)]
pub struct SweepPoint {
    pub value: usize,
    pub multiply_adds: u64,
    pub peak_scalars: u64,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// Fitted log-log slope of multiply-adds versus the swept value.
    pub time_slope: f64,
    /// Fitted log-log slope of the peak intermediate size.
    pub peak_slope: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

fn shapes_for(
    spec: &SweepSpec,
    value: usize,
) -> Result<(Vec<usize>, Vec<usize>, usize), SweepError> {
    let base = &spec.base;
    let mut input_dims = base.input_dims.clone();
    let mut output_dims = base.output_dims.clone();
    let mut rank = base.rank;
    match spec.variable {
        SweepVariable::Rank => {
            if spec.kind == LayerKind::Dense {
                return Err(SweepError::DenseHasNoRank);
            }
            rank = value;
        }
        SweepVariable::Input => {
            *input_dims.last_mut().expect("non-empty input dims") = value;
        }
        SweepVariable::Output => {
            *output_dims.last_mut().expect("non-empty output dims") = value;
        }
        SweepVariable::Cores => {
            if spec.kind == LayerKind::Dense {
                return Err(SweepError::DenseHasNoRank);
            }
            input_dims = vec![base.input_dims[0]; value];
        }
    }
    Ok((input_dims, output_dims, rank))
}

/// Exact counts for a dense `[I, O]` matrix layer. Forward is the plain
/// matrix-vector product; backward forms the weight gradient (outer
/// product) and the input gradient (transposed product).
fn dense_counts(i: usize, o: usize, pass: SweepPass) -> FlopReport {
    match pass {
        SweepPass::Forward => FlopReport {
            multiply_adds: (i * o) as u64,
            peak_intermediate_scalars: o as u64,
        },
        SweepPass::Backward => FlopReport {
            multiply_adds: (2 * i * o) as u64,
            peak_intermediate_scalars: (i * o) as u64,
        },
    }
}

/// Run the instrumented pass at every sweep point and fit slopes.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepReport, SweepError> {
    if spec.values.len() < 4 || spec.values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SweepError::DegenerateSweep(spec.values.clone()));
    }
    let mut points = Vec::with_capacity(spec.values.len());
    for &value in &spec.values {
        let (input_dims, output_dims, rank) = shapes_for(spec, value)?;
        let i: usize = input_dims.iter().product();
        let o: usize = output_dims.iter().product();
        let report = match spec.kind {
            LayerKind::Dense => dense_counts(i, o, spec.pass),
            LayerKind::Ring => {
                let d = input_dims.len() + output_dims.len();
                let layer = TrLayer::random(input_dims, output_dims, &vec![rank; d], 0)?;
                let x = DenseTensor::zeros(&[i]);
                match spec.pass {
                    SweepPass::Forward => layer.forward_instrumented(&x)?.1,
                    SweepPass::Backward => {
                        let gy = DenseTensor::zeros(&[o]);
                        layer.backward_instrumented(&x, &gy)?.1
                    }
                }
            }
        };
        points.push(SweepPoint {
            value,
            multiply_adds: report.multiply_adds,
            peak_scalars: report.peak_intermediate_scalars,
        });
    }
    let mult: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.value as f64, p.multiply_adds as f64))
        .collect();
    let peak: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.value as f64, p.peak_scalars as f64))
        .collect();
    Ok(SweepReport {
        points,
        time_slope: loglog_slope(&mult),
        peak_slope: loglog_slope(&peak),
    })
}

/// CSV rendering: one row per point, slope summary as the final row.
pub fn sweep_csv(spec: &SweepSpec, report: &SweepReport) -> String {
    let variable = match spec.variable {
        SweepVariable::Rank => "rank",
        SweepVariable::Input => "input",
        SweepVariable::Output => "output",
        SweepVariable::Cores => "cores",
    };
    let mut out = String::from("variable,value,multiply_adds,peak_scalars\n");
    for p in &report.points {
        out.push_str(&format!(
            "{variable},{},{},{}\n",
            p.value, p.multiply_adds, p.peak_scalars
        ));
    }
    out.push_str(&format!(
        "slope,,{:.4},{:.4}\n",
        report.time_slope, report.peak_slope
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring_spec(variable: SweepVariable, pass: SweepPass, values: Vec<usize>) -> SweepSpec {
        SweepSpec {
            kind: LayerKind::Ring,
            variable,
            pass,
            values,
            base: SweepBase::default(),
        }
    }

    #[test]
    fn dense_input_sweep_is_linear() {
        let spec = SweepSpec {
            kind: LayerKind::Dense,
            variable: SweepVariable::Input,
            pass: SweepPass::Forward,
            values: vec![8, 16, 32, 64],
            base: SweepBase::default(),
        };
        let report = run_sweep(&spec).unwrap();
        assert!(
            (report.time_slope - 1.0).abs() <= 0.05,
            "dense forward slope {}",
            report.time_slope
        );
    }

    #[test]
    fn ring_rank_sweep_forward_cubic() {
        let spec = ring_spec(SweepVariable::Rank, SweepPass::Forward, vec![2, 4, 8, 16]);
        let report = run_sweep(&spec).unwrap();
        assert!(
            (2.5..=3.5).contains(&report.time_slope),
            "forward rank slope {}",
            report.time_slope
        );
    }

    #[test]
    fn ring_rank_sweep_backward_quintic() {
        let spec = SweepSpec {
            kind: LayerKind::Ring,
            variable: SweepVariable::Rank,
            pass: SweepPass::Backward,
            values: vec![3, 4, 6, 8],
            base: SweepBase {
                input_dims: vec![3, 3, 3, 3],
                output_dims: vec![4, 4, 4, 2],
                rank: 3,
            },
        };
        let report = run_sweep(&spec).unwrap();
        assert!(
            (4.5..=5.5).contains(&report.time_slope),
            "backward rank slope {}",
            report.time_slope
        );
        assert!(
            (3.5..=4.5).contains(&report.peak_slope),
            "backward peak slope {}",
            report.peak_slope
        );
        // largest instance stays comfortably inside the runtime cap
        assert!(report.points.iter().all(|p| p.multiply_adds < 100_000_000));
    }

    #[test]
    fn ring_forward_peak_linear_in_input() {
        let spec = SweepSpec {
            kind: LayerKind::Ring,
            variable: SweepVariable::Input,
            pass: SweepPass::Forward,
            values: vec![8, 16, 32, 64],
            base: SweepBase {
                input_dims: vec![4, 8],
                output_dims: vec![4],
                rank: 3,
            },
        };
        let report = run_sweep(&spec).unwrap();
        assert!(
            (report.peak_slope - 1.0).abs() <= 0.1,
            "peak slope vs input {}",
            report.peak_slope
        );
    }

    #[test]
    fn middle_core_dominates_border_cores() {
        // A middle input core keeps four bond legs alive through its whole
        // post-skip chain, so its gradient costs more than the border cores'.
        let layer = TrLayer::random(vec![3, 3, 3, 3], vec![4, 4], &vec![4; 6], 0).unwrap();
        let x = DenseTensor::zeros(&[81]);
        let gy = DenseTensor::zeros(&[16]);
        let per_core = layer.backward_core_counts(&x, &gy).unwrap();
        assert_eq!(per_core.len(), 6);
        let middle_max = (1..3).map(|c| per_core[c].multiply_adds).max().unwrap();
        assert!(middle_max > per_core[0].multiply_adds);
        assert!(middle_max > per_core[3].multiply_adds);
        assert!(middle_max > per_core[4].multiply_adds);
        assert!(middle_max > per_core[5].multiply_adds);
    }

    #[test]
    fn degenerate_sweeps_rejected() {
        let spec = ring_spec(SweepVariable::Rank, SweepPass::Forward, vec![2, 4, 8]);
        assert!(matches!(
            run_sweep(&spec),
            Err(SweepError::DegenerateSweep(_))
        ));
        let spec = ring_spec(SweepVariable::Rank, SweepPass::Forward, vec![2, 4, 4, 8]);
        assert!(matches!(
            run_sweep(&spec),
            Err(SweepError::DegenerateSweep(_))
        ));
        let spec = SweepSpec {
            kind: LayerKind::Dense,
            variable: SweepVariable::Rank,
            pass: SweepPass::Forward,
            values: vec![2, 4, 8, 16],
            base: SweepBase::default(),
        };
        assert!(matches!(run_sweep(&spec), Err(SweepError::DenseHasNoRank)));
    }

    #[test]
    fn counts_are_data_independent() {
        let spec = ring_spec(SweepVariable::Rank, SweepPass::Forward, vec![2, 3, 4, 5]);
        let a = run_sweep(&spec).unwrap();
        let b = run_sweep(&spec).unwrap();
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_eq!(p.multiply_adds, q.multiply_adds);
            assert_eq!(p.peak_scalars, q.peak_scalars);
        }
        let csv = sweep_csv(&spec, &a);
        assert!(csv.lines().count() == 6);
        assert!(csv.starts_with("variable,value,"));
    }

    #[test]
    fn core_count_sweep_runs() {
        let spec = SweepSpec {
            kind: LayerKind::Ring,
            variable: SweepVariable::Cores,
            pass: SweepPass::Forward,
            values: vec![2, 3, 4, 5],
            base: SweepBase {
                input_dims: vec![3, 3],
                output_dims: vec![4],
                rank: 2,
            },
        };
        let report = run_sweep(&spec).unwrap();
        // count grows with the number of cores
        assert!(report.points.windows(2).all(|w| w[0].multiply_adds < w[1].multiply_adds));
    }
}
