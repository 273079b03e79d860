//! Hand-built networks for the function-learning benchmarks and the harness
//! comparing optimized against uniform piece allocation.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model_io::{read_model_file, write_model_file};
use crate::network::{Edge, InputBox, KanNetwork, Layer, Node};
use crate::unit::UnivariateUnit;
use crate::verify::{empirical_range, AllocationMode, RangeResult, Verifier, VerifyConfig, DEFAULT_SAMPLES, DEFAULT_SEED};

pub const RADII: [f64; 5] = [0.05, 0.1, 0.25, 0.5, 1.0];

/// Headroom added to every unit domain beyond the values it can receive.
const PAD: f64 = 1.05;

/// Cubic Hermite interpolant of `f` on `segments` equal pieces of `[-limit, limit]`,
/// with slopes from central differences.
pub fn spline_unit(limit: f64, segments: usize, f: impl Fn(f64) -> f64) -> Result<UnivariateUnit> {
    let h = 2.0 * limit / segments as f64;
    let eps = h * 1e-3;
    let slope = |t: f64| (f(t + eps) - f(t - eps)) / (2.0 * eps);
    let breakpoints: Vec<f64> = (0..=segments)
        .map(|i| if i == segments { limit } else { -limit + i as f64 * h })
        .collect();
    let coefficients = breakpoints
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let len = b - a;
            let (f0, f1) = (f(a), f(b));
            let (d0, d1) = (slope(a), slope(b));
            // p(t) = f0 + d0 t + c2 t² + c3 t³ on t ∈ [0, len]
            let c2 = (3.0 * (f1 - f0) / len - 2.0 * d0 - d1) / len;
            let c3 = (d0 + d1 - 2.0 * (f1 - f0) / len) / (len * len);
            vec![f0, d0, c2, c3]
        })
        .collect();
    UnivariateUnit::piecewise_polynomial(limit, breakpoints, coefficients)
}

fn identity(limit: f64) -> Result<UnivariateUnit> {
    UnivariateUnit::affine(limit, 1.0, 0.0)
}

fn zero(limit: f64) -> Result<UnivariateUnit> {
    UnivariateUnit::affine(limit, 0.0, 0.0)
}

/// Zeroth-order Bessel function of the first kind by the trapezoid rule on
/// its integral form.
pub fn bessel_j0(x: f64) -> f64 {
    let n = 400;
    let h = PI / n as f64;
    // both endpoints contribute cos(0) = 1 with half weight
    let mut s = 1.0;
    for k in 1..n {
        s += (x * (k as f64 * h).sin()).cos();
    }
    s * h / PI
}

fn single_output(inputs: Vec<Edge>) -> Layer {
    Layer {
        outputs: vec![Node::new(inputs)],
    }
}

/// `J0(20 x)` on `[-1, 1]`.
pub fn bessel() -> Result<KanNetwork> {
    let inner = spline_unit(PAD, 160, |x| bessel_j0(20.0 * x))?;
    KanNetwork::new(vec![
        single_output(vec![Edge::new(inner)]),
        single_output(vec![Edge::new(identity(PAD)?)]),
    ])
}

/// `x y = ((x + y)² - (x - y)²) / 4`.
pub fn product() -> Result<KanNetwork> {
    let l2 = 2.0 * PAD;
    let quarter_square = |sign: f64| spline_unit(l2, 4, move |s| sign * s * s / 4.0);
    KanNetwork::new(vec![
        Layer {
            outputs: vec![
                Node::new(vec![Edge::new(identity(PAD)?), Edge::new(identity(PAD)?)]),
                Node::new(vec![Edge::new(identity(PAD)?), Edge::weighted(-1.0, identity(PAD)?)]),
            ],
        },
        single_output(vec![Edge::new(quarter_square(1.0)?), Edge::new(quarter_square(-1.0)?)]),
    ])
}

/// `exp(sin(π x) + y²)`.
pub fn exp_sin() -> Result<KanNetwork> {
    KanNetwork::new(vec![
        single_output(vec![
            Edge::new(spline_unit(PAD, 32, |x| (PI * x).sin())?),
            Edge::new(spline_unit(PAD, 16, |y| y * y)?),
        ]),
        single_output(vec![Edge::new(spline_unit(2.0 * PAD, 32, f64::exp)?)]),
    ])
}

/// `exp((sin(π(x1² + x2²)) + sin(π(x3² + x4²))) / 2)`.
pub fn exp_sin4() -> Result<KanNetwork> {
    let sq = || spline_unit(PAD, 16, |x| x * x);
    let half_sin = || spline_unit(2.0 * PAD, 48, |s| 0.5 * (PI * s).sin());
    KanNetwork::new(vec![
        Layer {
            outputs: vec![
                Node::new(vec![
                    Edge::new(sq()?),
                    Edge::new(sq()?),
                    Edge::new(zero(PAD)?),
                    Edge::new(zero(PAD)?),
                ]),
                Node::new(vec![
                    Edge::new(zero(PAD)?),
                    Edge::new(zero(PAD)?),
                    Edge::new(sq()?),
                    Edge::new(sq()?),
                ]),
            ],
        },
        single_output(vec![Edge::new(half_sin()?), Edge::new(half_sin()?)]),
        single_output(vec![Edge::new(spline_unit(PAD, 24, f64::exp)?)]),
    ])
}

/// `exp(mean_i sin²(π x_i / 2))` over 8 inputs.
pub fn exp_mean_sin8() -> Result<KanNetwork> {
    let d = 8;
    let inner = (0..d)
        .map(|_| Ok(Edge::new(spline_unit(PAD, 16, |x| (PI * x / 2.0).sin().powi(2) / d as f64)?)))
        .collect::<Result<Vec<_>>>()?;
    KanNetwork::new(vec![
        single_output(inner),
        single_output(vec![Edge::new(spline_unit(PAD, 16, f64::exp)?)]),
    ])
}

pub struct Benchmark {
    pub name: &'static str,
    pub net: KanNetwork,
    pub target: fn(&[f64]) -> f64,
}

impl Benchmark {
    /// Box of the given radius around the origin.
    pub fn ball(&self, radius: f64) -> Result<InputBox> {
        InputBox::ball(&vec![0.0; self.net.input_dim()], radius)
    }
}

fn target_bessel(x: &[f64]) -> f64 {
    bessel_j0(20.0 * x[0])
}
fn target_product(x: &[f64]) -> f64 {
    x[0] * x[1]
}
fn target_exp_sin(x: &[f64]) -> f64 {
    ((PI * x[0]).sin() + x[1] * x[1]).exp()
}
fn target_exp_sin4(x: &[f64]) -> f64 {
    (0.5 * ((PI * (x[0] * x[0] + x[1] * x[1])).sin() + (PI * (x[2] * x[2] + x[3] * x[3])).sin())).exp()
}
fn target_exp_mean_sin8(x: &[f64]) -> f64 {
    (x.iter().map(|v| (PI * v / 2.0).sin().powi(2)).sum::<f64>() / x.len() as f64).exp()
}

pub const BENCHMARK_NAMES: [&str; 5] = ["bessel", "xy", "exp", "exp4", "exp8"];

fn target_for(name: &str) -> Option<fn(&[f64]) -> f64> {
    Some(match name {
        "bessel" => target_bessel,
        "xy" => target_product,
        "exp" => target_exp_sin,
        "exp4" => target_exp_sin4,
        "exp8" => target_exp_mean_sin8,
        _ => return None,
    })
}

/// The bundled benchmark networks, built in memory.
pub fn benchmarks() -> Result<Vec<Benchmark>> {
    let nets = [bessel()?, product()?, exp_sin()?, exp_sin4()?, exp_mean_sin8()?];
    Ok(BENCHMARK_NAMES
        .iter()
        .zip(nets)
        .map(|(&name, net)| Benchmark {
            name,
            net,
            target: target_for(name).expect("known benchmark"),
        })
        .collect())
}

/// Writes every benchmark as `<dir>/<name>.kan.json`.
pub fn write_benchmark_models(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for b in benchmarks()? {
        write_model_file(&b.net, &dir.join(format!("{}.kan.json", b.name)))?;
    }
    Ok(())
}

/// Reads `<dir>/<name>.kan.json` for every benchmark name.
pub fn load_benchmark_models(dir: &Path) -> Result<Vec<Benchmark>> {
    BENCHMARK_NAMES
        .iter()
        .map(|&name| {
            Ok(Benchmark {
                name,
                net: read_model_file(&dir.join(format!("{name}.kan.json")))?,
                target: target_for(name).expect("known benchmark"),
            })
        })
        .collect()
}

/// One benchmark at one radius: optimized and uniform allocations at the same budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub benchmark: String,
    pub inputs: usize,
    pub outputs: usize,
    pub params: usize,
    pub radius: f64,
    pub delta: f64,
    pub kano_lower: f64,
    pub kano_upper: f64,
    pub kano_width: f64,
    pub kano_pieces: usize,
    pub kano_binaries: usize,
    pub kano_seconds: f64,
    pub kano_status: String,
    pub kanv_pieces_per_unit: usize,
    pub kanv_lower: f64,
    pub kanv_upper: f64,
    pub kanv_width: f64,
    pub kanv_pieces: usize,
    pub kanv_binaries: usize,
    pub kanv_seconds: f64,
    pub kanv_status: String,
    pub empirical_lower: f64,
    pub empirical_upper: f64,
}

fn status(r: &RangeResult) -> String {
    format!("{}/{}", r.min_solve.status.as_str(), r.max_solve.status.as_str())
}

fn seconds(r: &RangeResult) -> f64 {
    r.timings.allocation_s + r.timings.encoding_s + r.timings.solving_s
}

/// Runs one benchmark over the given radii.
pub fn run_benchmark(bench: &Benchmark, radii: &[f64], config: &VerifyConfig) -> Result<Vec<BenchRow>> {
    let verifier = Verifier::new(&bench.net, config.clone())?;
    let delta = verifier.default_delta(0)?;
    let t = Instant::now();
    let optimized = verifier.allocate_with(0, delta, AllocationMode::Optimized)?;
    let opt_alloc_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let vanilla = verifier.allocate_with(0, delta, AllocationMode::MatchedUniform)?;
    let van_alloc_s = t.elapsed().as_secs_f64();
    let per_unit = vanilla.units.iter().map(|u| u.budget).max().unwrap_or(1);
    radii
        .iter()
        .map(|&r| {
            let bx = bench.ball(r)?;
            let kano = verifier.verify_with_allocation(&bx, 0, delta, &optimized, opt_alloc_s)?;
            let kanv = verifier.verify_with_allocation(&bx, 0, delta, &vanilla, van_alloc_s)?;
            let (emp_lo, emp_hi) = empirical_range(&bench.net, &bx, DEFAULT_SAMPLES, DEFAULT_SEED)?[0];
            Ok(BenchRow {
                benchmark: bench.name.to_owned(),
                inputs: bench.net.input_dim(),
                outputs: bench.net.output_dim(),
                params: bench.net.param_count(),
                radius: r,
                delta,
                kano_lower: kano.lower,
                kano_upper: kano.upper,
                kano_width: kano.width(),
                kano_pieces: kano.total_pieces,
                kano_binaries: kano.binaries,
                kano_seconds: seconds(&kano),
                kano_status: status(&kano),
                kanv_pieces_per_unit: per_unit,
                kanv_lower: kanv.lower,
                kanv_upper: kanv.upper,
                kanv_width: kanv.width(),
                kanv_pieces: kanv.total_pieces,
                kanv_binaries: kanv.binaries,
                kanv_seconds: seconds(&kanv),
                kanv_status: status(&kanv),
                empirical_lower: emp_lo,
                empirical_upper: emp_hi,
            })
        })
        .collect()
}

/// Every bundled benchmark over the given radii.
pub fn benchmark_suite(benchmarks: &[Benchmark], radii: &[f64], config: &VerifyConfig) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for b in benchmarks {
        rows.extend(run_benchmark(b, radii, config)?);
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[BenchRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Model(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Model(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
