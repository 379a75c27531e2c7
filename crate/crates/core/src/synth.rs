//! Two-regime node-wise filtering benchmark on grid graphs.
//!
//! Nodes whose raw signal is below [`REGIME_THRESHOLD`] form regime 0, the
//! rest regime 1. Each regime's signal (zero elsewhere) is filtered exactly
//! by its own spectral response, and node `i` takes its target from the
//! filtered signal of its own regime.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::basis::{BasisKind, ChannelRecurrence};
use crate::error::{Error, Result};
use crate::filter::{FilterShape, FilterSpec, PredefinedFilter};
use crate::graph::Graph;
use crate::kmeans::kmeans;
use crate::linalg::{laplacian_spectrum, EigenDecomposition};
use crate::matrix::DenseMatrix;
use crate::model::{AnyModel, AttnFilter, AttnFilterConfig, Trainable, UniFilter, UniFilterConfig};
use crate::polyattn::{filter_response, Activation, PolyAttnConfig};
use crate::tokens::{compute_tokens, TokenTensor};
use crate::train::{r2_score, sse, token_batch, train_loop, SplitMasks, Targets, TrainConfig, TrainOutcome};

pub const REGIME_THRESHOLD: f64 = 0.5;
pub const CURVE_POINTS: usize = 256;

/// The six reference two-filter tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskName {
    MixedLowPass,
    MixedHighPass,
    MixedBandPass,
    MixedRejectionPass,
    LowAndHighPass,
    BandAndRejectionPass,
}

impl TaskName {
    pub const ALL: [TaskName; 6] = [
        TaskName::MixedLowPass,
        TaskName::MixedHighPass,
        TaskName::MixedBandPass,
        TaskName::MixedRejectionPass,
        TaskName::LowAndHighPass,
        TaskName::BandAndRejectionPass,
    ];

    /// Filters for regime 0 (`x < 0.5`) and regime 1.
    pub fn filters(self) -> (PredefinedFilter, PredefinedFilter) {
        use FilterShape::*;
        let g = PredefinedFilter::gaussian;
        match self {
            TaskName::MixedLowPass => (g(LowPass, 5), g(LowPass, 20)),
            TaskName::MixedHighPass => (g(HighPass, 5), g(HighPass, 20)),
            TaskName::MixedBandPass => (g(BandPass, 5), g(BandPass, 20)),
            TaskName::MixedRejectionPass => (g(RejectionPass, 5), g(RejectionPass, 20)),
            TaskName::LowAndHighPass => (g(LowPass, 10), g(HighPass, 10)),
            TaskName::BandAndRejectionPass => (g(BandPass, 10), g(RejectionPass, 10)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::MixedLowPass => "mixed-low-pass",
            TaskName::MixedHighPass => "mixed-high-pass",
            TaskName::MixedBandPass => "mixed-band-pass",
            TaskName::MixedRejectionPass => "mixed-rejection-pass",
            TaskName::LowAndHighPass => "low-and-high-pass",
            TaskName::BandAndRejectionPass => "band-and-rejection-pass",
        }
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskName::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = TaskName::ALL.iter().map(|t| t.as_str()).collect();
                Error::invalid(format!("unknown task {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub name: String,
    pub graph: Graph,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// 0 where `x < 0.5`, else 1.
    pub regime: Vec<u8>,
    pub warnings: Vec<String>,
}

impl SyntheticTask {
    pub fn n_nodes(&self) -> usize {
        self.x.len()
    }
}

/// Seeded uniform `[0, 1)` noise.
pub fn uniform_signal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen::<f64>()).collect()
}

/// Image-like signal on a `width × height` grid (node id `r·width + c`): a
/// seeded sum of a few low-frequency plane waves, rescaled to `[0, 1]`.
pub fn smooth_signal(width: usize, height: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let freq = rng.gen_range(0.5..2.5);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp = rng.gen_range(0.5..1.0);
            (angle, freq, phase, amp)
        })
        .collect();
    let scale = width.max(height).max(1) as f64;
    let mut v: Vec<f64> = (0..width * height)
        .map(|id| {
            let (r, c) = ((id / width) as f64 / scale, (id % width) as f64 / scale);
            waves
                .iter()
                .map(|(a, f, p, amp)| amp * (std::f64::consts::TAU * f * (c * a.cos() + r * a.sin()) + p).sin())
                .sum()
        })
        .collect();
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    for x in &mut v {
        *x = (*x - lo) / span;
    }
    v
}

/// Builds a task from an already computed Laplacian spectrum.
pub fn make_task_with_spectrum(
    eig: &EigenDecomposition,
    graph: &Graph,
    x: &[f64],
    name: &str,
    h0: &FilterSpec,
    h1: &FilterSpec,
) -> Result<SyntheticTask> {
    let n = graph.n_nodes();
    if x.len() != n || eig.dim() != n {
        return Err(Error::shape(
            "make_synthetic_task",
            format!("{} signal values, {} nodes, spectrum of size {}", x.len(), n, eig.dim()),
        ));
    }
    if let Some(bad) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("signal value {bad} outside [0, 1]")));
    }
    let regime: Vec<u8> = x.iter().map(|&v| u8::from(v >= REGIME_THRESHOLD)).collect();
    let masked = |r: u8| {
        let data = x.iter().zip(&regime).map(|(v, g)| if *g == r { *v } else { 0.0 }).collect();
        DenseMatrix::from_vec(n, 1, data)
    };
    let z0 = eig.filter(h0, &masked(0)?)?;
    let z1 = eig.filter(h1, &masked(1)?)?;
    let z = regime
        .iter()
        .enumerate()
        .map(|(i, g)| if *g == 0 { z0.get(i, 0) } else { z1.get(i, 0) })
        .collect();
    let mut warnings = Vec::new();
    let ones = regime.iter().filter(|g| **g == 1).count();
    if ones == 0 || ones == n {
        warnings.push(format!("all {n} nodes fall in regime {}", u8::from(ones == n)));
    }
    Ok(SyntheticTask {
        name: name.to_string(),
        graph: graph.clone(),
        x: x.to_vec(),
        z,
        regime,
        warnings,
    })
}

/// Generates the targets of a named task with the dense spectral oracle.
pub fn make_synthetic_task(graph: &Graph, x: &[f64], task: TaskName) -> Result<SyntheticTask> {
    let eig = laplacian_spectrum(graph)?;
    let (h0, h1) = task.filters();
    make_task_with_spectrum(&eig, graph, x, task.as_str(), &h0.into(), &h1.into())
}

/// Writes `node_id,x,z,regime`.
pub fn write_task_csv<W: Write>(task: &SyntheticTask, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record(["node_id", "x", "z", "regime"]).map_err(err)?;
    for i in 0..task.n_nodes() {
        out.write_record([
            i.to_string(),
            format!("{:e}", task.x[i]),
            format!("{:e}", task.z[i]),
            task.regime[i].to_string(),
        ])
        .map_err(err)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitModel {
    PolyAttn,
    UniFilter,
    /// PolyAttn with row-softmax scores.
    SelfAttn,
}

impl FromStr for FitModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "polyattn" => Ok(FitModel::PolyAttn),
            "unifilter" => Ok(FitModel::UniFilter),
            "selfattn" => Ok(FitModel::SelfAttn),
            _ => Err(Error::invalid(format!(
                "unknown model {s:?}; expected polyattn, unifilter or selfattn"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub basis: BasisKind,
    #[serde(default)]
    pub cheb_shifted: bool,
    pub order: usize,
    /// Attention token width.
    pub hidden: usize,
    pub heads: usize,
    pub mlp_factor: f64,
    pub r: f64,
    /// Readout width; none fits the raw tokens directly as a node-wise filter.
    #[serde(default)]
    pub readout_dim: Option<usize>,
    pub train: TrainConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            basis: BasisKind::Chebyshev,
            cheb_shifted: true,
            order: 10,
            hidden: 4,
            heads: 1,
            mlp_factor: 2.0,
            r: 0.0,
            readout_dim: None,
            train: TrainConfig {
                lr: 0.001,
                weight_decay: 0.0,
                max_epochs: 5000,
                patience: 400,
                batch_size: Some(32),
                seed: 0,
            },
        }
    }
}

impl FitConfig {
    fn attn_config(&self, kind: FitModel) -> AttnFilterConfig {
        AttnFilterConfig {
            basis: self.basis,
            cheb_shifted: self.cheb_shifted,
            input_dim: 1,
            attn: PolyAttnConfig {
                dim: self.hidden,
                order: self.order,
                heads: self.heads,
                qk_dim: self.hidden,
                mlp_factor: self.mlp_factor,
                r: self.r,
                activation: if kind == FitModel::SelfAttn { Activation::Softmax } else { Activation::Tanh },
            },
            readout_dim: self.readout_dim,
            outputs: 1,
            seed: self.train.seed,
        }
    }

    /// Parameter count of the attention model this config builds.
    pub fn attention_params(&self) -> Result<usize> {
        Ok(AttnFilter::init(self.attn_config(FitModel::PolyAttn))?.n_params())
    }

    /// Node-unified filter whose parameter count is the closest achievable
    /// to the attention model's: a projection to `w` channels, one
    /// coefficient vector per channel and a linear head.
    pub fn unifilter_config(&self) -> Result<UniFilterConfig> {
        let target = self.attention_params()?;
        let t = self.order + 1;
        let mut cfg = UniFilterConfig::new(self.basis, self.order, 1);
        cfg.cheb_shifted = self.cheb_shifted;
        cfg.per_channel = true;
        cfg.head = true;
        cfg.outputs = 1;
        cfg.seed = self.train.seed;
        // count = w·(d_in + 1 + T + 1) + 1
        let per = (t + 3) as f64;
        cfg.width = Some((((target as f64 - 1.0) / per).round() as usize).max(1));
        Ok(cfg)
    }

    pub fn build(&self, kind: FitModel) -> Result<AnyModel> {
        Ok(match kind {
            FitModel::UniFilter => AnyModel::UniFilter(UniFilter::init(self.unifilter_config()?)?),
            _ => AnyModel::AttnFilter(AttnFilter::init(self.attn_config(kind))?),
        })
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub r2: f64,
    pub sse: f64,
    pub n_params: usize,
    pub predictions: Vec<f64>,
    /// `[N, K+1]` coefficients each node applies to its (projected) tokens.
    pub alpha: DenseMatrix,
    pub model: AnyModel,
    pub outcome: TrainOutcome,
}

/// Computes the single-channel tokens of a task signal.
pub fn task_tokens(task: &SyntheticTask, basis: BasisKind, order: usize, cheb_shifted: bool) -> Result<TokenTensor> {
    let x = DenseMatrix::from_vec(task.n_nodes(), 1, task.x.clone())?;
    compute_tokens(&task.graph, &x, basis, order, cheb_shifted)
}

/// Per-node coefficient rows of a fitted model. The node-unified filter
/// reports its effective coefficient on each raw token, identical for all
/// nodes.
pub fn learned_coefficients(model: &AnyModel, batch: &Tensor) -> Result<DenseMatrix> {
    let n = batch.shape()[0];
    match model {
        AnyModel::AttnFilter(m) => {
            let a = m.node_coefficients(batch)?;
            let t = m.config.attn.tokens();
            DenseMatrix::from_vec(n, t, a.heads[0].data().to_vec())
        }
        AnyModel::UniFilter(u) => {
            let t = u.config.order + 1;
            let c = u.config.channels();
            let mut eff = vec![0.0; t];
            for (k, e) in eff.iter_mut().enumerate() {
                for ch in 0..c {
                    let a = if u.config.per_channel { u.alpha.data()[k * c + ch] } else { u.alpha.data()[k] };
                    let w = u.proj.as_ref().map_or(if ch == 0 { 1.0 } else { 0.0 }, |(w, _)| w.data()[ch]);
                    let v = u.head.as_ref().map_or(1.0, |(h, _)| h.data()[ch * u.config.outputs]);
                    *e += a * w * v;
                }
            }
            let data = (0..n).flat_map(|_| eff.iter().copied()).collect();
            DenseMatrix::from_vec(n, t, data)
        }
        AnyModel::PolyFormer(_) => Err(Error::invalid("coefficient extraction needs a single-layer model")),
    }
}

/// Trains a model of the requested kind on the full signal and reports its
/// fit on every node.
pub fn fit_task(task: &SyntheticTask, kind: FitModel, cfg: &FitConfig) -> Result<FitResult> {
    let tokens = task_tokens(task, cfg.basis, cfg.order, cfg.cheb_shifted)?;
    fit_task_with_tokens(task, &tokens, kind, cfg)
}

pub fn fit_task_with_tokens(task: &SyntheticTask, tokens: &TokenTensor, kind: FitModel, cfg: &FitConfig) -> Result<FitResult> {
    let shift_differs = cfg.basis == BasisKind::Chebyshev && tokens.cheb_shifted() != cfg.cheb_shifted;
    if tokens.basis() != cfg.basis || tokens.order() != cfg.order || tokens.dim() != 1 || shift_differs {
        return Err(Error::ConfigMismatch(format!(
            "tokens are {} K={} d={} shifted={}, config wants {} K={} d=1 shifted={}",
            tokens.basis(),
            tokens.order(),
            tokens.dim(),
            tokens.cheb_shifted(),
            cfg.basis,
            cfg.order,
            cfg.cheb_shifted
        )));
    }
    let batch = token_batch(tokens);
    let n = task.n_nodes();
    let targets = Targets::Regression {
        values: task.z.clone(),
        width: 1,
    };
    let mut model = cfg.build(kind)?;
    let outcome = train_loop(&mut model, &batch, &targets, &SplitMasks::full(n), &cfg.train)?;
    let predictions = model.predict(&batch)?.into_data();
    Ok(FitResult {
        r2: r2_score(&predictions, &task.z)?,
        sse: sse(&predictions, &task.z)?,
        n_params: model.n_params(),
        alpha: learned_coefficients(&model, &batch)?,
        predictions,
        model,
        outcome,
    })
}

/// `n` evenly spaced points on `[0, 2]`.
pub fn lambda_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| 2.0 * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct FilterClusters {
    pub assignments: Vec<usize>,
    /// `[k, K+1]` centroid coefficient vectors.
    pub centroids: DenseMatrix,
    pub grid: Vec<f64>,
    /// One response curve per cluster, sampled on `grid`.
    pub curves: Vec<Vec<f64>>,
}

impl FilterClusters {
    /// Largest pointwise gap between any two centroid curves.
    pub fn max_pairwise_gap(&self) -> f64 {
        let mut gap: f64 = 0.0;
        for a in 0..self.curves.len() {
            for b in a + 1..self.curves.len() {
                for (x, y) in self.curves[a].iter().zip(&self.curves[b]) {
                    gap = gap.max((x - y).abs());
                }
            }
        }
        gap
    }
}

/// How a coefficient vector maps to a spectral response.
#[derive(Debug, Clone, Copy)]
pub struct ResponseBasis<'a> {
    pub basis: BasisKind,
    pub cheb_shifted: bool,
    /// First-channel recurrence of optimal-basis tokens.
    pub recurrence: Option<&'a ChannelRecurrence>,
}

impl<'a> ResponseBasis<'a> {
    pub fn of_tokens(tokens: &'a TokenTensor) -> Self {
        Self {
            basis: tokens.basis(),
            cheb_shifted: tokens.cheb_shifted(),
            recurrence: tokens.opt_coeffs().and_then(|o| o.channels.first()),
        }
    }

    pub fn response(&self, alpha: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
        filter_response(alpha, self.basis, grid, self.cheb_shifted, self.recurrence)
    }
}

/// k-means over per-node coefficient rows, with each centroid's spectral
/// response sampled on `grid`.
pub fn cluster_learned_filters(
    alpha: &DenseMatrix,
    k: usize,
    basis: ResponseBasis<'_>,
    grid: &[f64],
    seed: u64,
) -> Result<FilterClusters> {
    let res = kmeans(alpha, k, seed)?;
    let curves = (0..k)
        .map(|c| basis.response(res.centroids.row(c), grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterClusters {
        assignments: res.assignments,
        centroids: res.centroids,
        grid: grid.to_vec(),
        curves,
    })
}

/// Writes `lambda,cluster_0,..,cluster_{k-1}`.
pub fn write_curves_csv<W: Write>(clusters: &FilterClusters, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut header = vec!["lambda".to_string()];
    header.extend((0..clusters.curves.len()).map(|c| format!("cluster_{c}")));
    out.write_record(&header).map_err(err)?;
    for (i, l) in clusters.grid.iter().enumerate() {
        let mut row = vec![format!("{l:e}")];
        row.extend(clusters.curves.iter().map(|c| format!("{:e}", c[i])));
        out.write_record(&row).map_err(err)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `node_id,alpha_0,..,alpha_K`.
pub fn write_alpha_csv<W: Write>(alpha: &DenseMatrix, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut header = vec!["node_id".to_string()];
    header.extend((0..alpha.cols()).map(|k| format!("alpha_{k}")));
    out.write_record(&header).map_err(err)?;
    for i in 0..alpha.rows() {
        let mut row = vec![i.to_string()];
        row.extend(alpha.row(i).iter().map(|v| format!("{v:e}")));
        out.write_record(&row).map_err(err)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::grid_graph;
    use crate::linalg::exact_filter;

    #[test]
    fn task_names_round_trip() {
        for t in TaskName::ALL {
            assert_eq!(t.as_str().parse::<TaskName>().unwrap(), t);
        }
        assert!("mixed".parse::<TaskName>().is_err());
        let (h0, h1) = TaskName::LowAndHighPass.filters();
        assert_eq!(h0.eval(0.0), 1.0);
        assert_eq!(h1.eval(0.0), 0.0);
    }

    #[test]
    fn all_pass_pair_reproduces_signal() {
        let g = grid_graph(4, 3).unwrap();
        let eig = laplacian_spectrum(&g).unwrap();
        let x = uniform_signal(12, 3);
        let ap: FilterSpec = PredefinedFilter::AllPass.into();
        let t = make_task_with_spectrum(&eig, &g, &x, "all-pass", &ap, &ap).unwrap();
        for (a, b) in t.z.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_regime_uses_first_filter() {
        let g = grid_graph(4, 4).unwrap();
        let x: Vec<f64> = uniform_signal(16, 5).iter().map(|v| v * 0.49).collect();
        let t = make_synthetic_task(&g, &x, TaskName::MixedLowPass).unwrap();
        assert_eq!(t.warnings.len(), 1);
        let xm = DenseMatrix::from_vec(16, 1, x).unwrap();
        let want = exact_filter(&g, &PredefinedFilter::gaussian(FilterShape::LowPass, 5).into(), &xm).unwrap();
        for i in 0..16 {
            assert!((t.z[i] - want.get(i, 0)).abs() < 1e-12);
        }
    }

    #[test]
    fn signals_are_in_unit_interval() {
        for v in smooth_signal(7, 5, 1).into_iter().chain(uniform_signal(30, 2)) {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(make_synthetic_task(&grid_graph(2, 1).unwrap(), &[0.2, 1.5], TaskName::MixedLowPass).is_err());
    }

    #[test]
    fn identical_alpha_single_cluster() {
        let alpha = DenseMatrix::from_rows(&vec![vec![0.5, -0.25, 1.0]; 5]).unwrap();
        let grid = lambda_grid(CURVE_POINTS);
        let rb = ResponseBasis {
            basis: BasisKind::Chebyshev,
            cheb_shifted: false,
            recurrence: None,
        };
        let c = cluster_learned_filters(&alpha, 1, rb, &grid, 0).unwrap();
        let direct = filter_response(&[0.5, -0.25, 1.0], BasisKind::Chebyshev, &grid, false, None).unwrap();
        assert_eq!(c.curves[0], direct);
        assert_eq!(grid.len(), 256);
        assert_eq!(grid[255], 2.0);
    }

    #[test]
    fn unifilter_budget_matches_attention() {
        let cfg = FitConfig::default();
        let p = cfg.attention_params().unwrap();
        let u = cfg.build(FitModel::UniFilter).unwrap().n_params();
        assert!((u as f64 - p as f64).abs() <= 0.1 * p as f64, "{u} vs {p}");
    }
}
