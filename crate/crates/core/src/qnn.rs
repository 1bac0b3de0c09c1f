//! Quadratic interaction layers.
//!
//! One layer maps `X ∈ R^D` to
//!
//! ```text
//! Z      = Σ_m W[m] · X                     (M capacity slices, each D × D)
//! H      = X ⊙ Z                            H[i] = Σ_m Σ_j W[m,i,j] X[i] X[j]
//! branch = dropout(σ(H))                    σ = PReLU with a learned slope
//! X'     = X + branch
//! ```
//!
//! so every output coordinate is a quadratic form in the layer input and a
//! stack of `L` layers reaches degree `2^L`. The elementwise product with the
//! summed transform is the Khatri–Rao realization of the `D²` pairwise
//! monomials; [`brute_force_expansion`] recomputes the same value by building
//! all `D²` monomials explicitly and serves as the test oracle.
//!
//! `Placement::Mid` moves σ onto `Z` before the product (`H = X ⊙ σ(Z)`).
//! The MLP stack at the bottom of this file is the interaction-free baseline.

use crate::config::{HyperParams, Placement, QnnActivation};
use crate::error::{QinError, Result};
use crate::linalg::{dot, Matrix, SeededRng, Unary};
use crate::params::{DenseLayer, QnnLayerParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QnnSettings {
    pub activation: QnnActivation,
    pub placement: Placement,
    pub residual: bool,
    pub dropout_p: f64,
}

impl QnnSettings {
    pub fn from_hp(hp: &HyperParams) -> Self {
        QnnSettings {
            activation: hp.qnn_activation,
            placement: hp.placement,
            residual: hp.residual,
            dropout_p: hp.dropout,
        }
    }

    /// Identity activation, no residual, no dropout: the bare quadratic form.
    pub fn bare() -> Self {
        QnnSettings {
            activation: QnnActivation::Identity,
            placement: Placement::Post,
            residual: false,
            dropout_p: 0.0,
        }
    }

    fn sigma(&self, slope: f64) -> Unary {
        match self.activation {
            QnnActivation::Prelu => Unary::Prelu(slope),
            QnnActivation::Relu => Unary::Relu,
            QnnActivation::Identity => Unary::Identity,
        }
    }
}

/// `X_1 = concat(x_t, o)`.
pub fn assemble_x1(x_t: &[f64], o: &[f64], d: usize) -> Result<Vec<f64>> {
    if x_t.len() + o.len() != d {
        return Err(QinError::dims("assemble_x1", &[d], &[x_t.len(), o.len()]));
    }
    let mut x = Vec::with_capacity(d);
    x.extend_from_slice(x_t);
    x.extend_from_slice(o);
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct QnnLayerTrace {
    pub x: Vec<f64>,
    /// `Σ_m W[m]·X`.
    pub z: Vec<f64>,
    /// Quadratic product `X ⊙ Z` (post) or `X ⊙ σ(Z)` (mid).
    pub h: Vec<f64>,
    /// Branch before dropout.
    pub act: Vec<f64>,
    pub keep: Option<Vec<f64>>,
    pub out: Vec<f64>,
}

impl QnnLayerTrace {
    fn kink_input(&self, settings: &QnnSettings) -> &[f64] {
        match settings.placement {
            Placement::Post => &self.h,
            Placement::Mid => &self.z,
        }
    }
}

fn summed_transform(layer: &QnnLayerParams, x: &[f64]) -> Vec<f64> {
    let [m_cap, d, _] = layer.w.shape();
    let mut z = vec![0.0; d];
    for m in 0..m_cap {
        for (i, zi) in z.iter_mut().enumerate() {
            *zi += dot(layer.w.row(m, i), x);
        }
    }
    z
}

fn dropout_keep(p: f64, n: usize, rng: Option<&mut SeededRng>) -> Option<Vec<f64>> {
    match rng {
        Some(rng) if p > 0.0 => {
            let scale = 1.0 / (1.0 - p);
            Some((0..n).map(|_| if rng.uniform() < p { 0.0 } else { scale }).collect())
        }
        _ => None,
    }
}

pub fn qnn_layer_forward(
    layer: &QnnLayerParams,
    settings: &QnnSettings,
    x: &[f64],
    dropout: Option<&mut SeededRng>,
) -> Result<(Vec<f64>, QnnLayerTrace)> {
    let [_, d, d2] = layer.w.shape();
    if x.len() != d || d != d2 {
        return Err(QinError::dims("qnn_layer_forward", &layer.w.shape(), &[x.len()]));
    }
    let sigma = settings.sigma(layer.slope);
    let z = summed_transform(layer, x);
    let (h, act): (Vec<f64>, Vec<f64>) = match settings.placement {
        Placement::Post => {
            let h: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a * b).collect();
            let act = sigma.map(&h);
            (h, act)
        }
        Placement::Mid => {
            let h: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a * sigma.apply(*b)).collect();
            (h.clone(), h)
        }
    };
    let keep = dropout_keep(settings.dropout_p, d, dropout);
    let mut out: Vec<f64> = match &keep {
        Some(k) => act.iter().zip(k).map(|(a, k)| a * k).collect(),
        None => act.clone(),
    };
    if settings.residual {
        out.iter_mut().zip(x).for_each(|(o, xi)| *o += xi);
    }
    let trace = QnnLayerTrace {
        x: x.to_vec(),
        z,
        h,
        act,
        keep,
        out: out.clone(),
    };
    Ok((out, trace))
}

/// Accumulates into `grad` and returns `dL/dX`.
pub fn qnn_layer_backward(
    layer: &QnnLayerParams,
    settings: &QnnSettings,
    trace: &QnnLayerTrace,
    upstream: &[f64],
    grad: &mut QnnLayerParams,
) -> Result<Vec<f64>> {
    let [m_cap, d, _] = layer.w.shape();
    if trace.x.len() != d || upstream.len() != d {
        return Err(QinError::TraceMismatch(format!(
            "qnn layer of width {d} got trace width {} and upstream width {}",
            trace.x.len(),
            upstream.len()
        )));
    }
    let sigma = settings.sigma(layer.slope);
    let prelu = settings.activation == QnnActivation::Prelu;
    let mut dx = if settings.residual { upstream.to_vec() } else { vec![0.0; d] };
    let dbranch: Vec<f64> = match &trace.keep {
        Some(k) => upstream.iter().zip(k).map(|(g, k)| g * k).collect(),
        None => upstream.to_vec(),
    };

    let mut dz = vec![0.0; d];
    match settings.placement {
        Placement::Post => {
            for i in 0..d {
                let h = trace.h[i];
                let dh = dbranch[i] * sigma.derivative(h);
                if prelu && h < 0.0 {
                    grad.slope += dbranch[i] * h;
                }
                dx[i] += dh * trace.z[i];
                dz[i] = dh * trace.x[i];
            }
        }
        Placement::Mid => {
            for i in 0..d {
                let z = trace.z[i];
                dx[i] += dbranch[i] * sigma.apply(z);
                let ds = dbranch[i] * trace.x[i];
                if prelu && z < 0.0 {
                    grad.slope += ds * z;
                }
                dz[i] = ds * sigma.derivative(z);
            }
        }
    }

    for m in 0..m_cap {
        for i in 0..d {
            let g = dz[i];
            if g == 0.0 {
                continue;
            }
            let w_row = layer.w.row(m, i);
            for (dxj, w) in dx.iter_mut().zip(w_row) {
                *dxj += w * g;
            }
            let g_row = grad.w.row_mut(m, i);
            for (gw, xj) in g_row.iter_mut().zip(&trace.x) {
                *gw += g * xj;
            }
        }
    }
    Ok(dx)
}

/// `A^{(i)}` with `H[i] = Σ_{j,k} A^{(i)}[j,k] X[j] X[k]`, one `D × D`
/// coefficient matrix per output coordinate.
pub fn expansion_coefficients(layer: &QnnLayerParams) -> Vec<Matrix> {
    let [m_cap, d, _] = layer.w.shape();
    (0..d)
        .map(|i| {
            let mut a = Matrix::zeros(d, d);
            for k in 0..d {
                let mut c = 0.0;
                for m in 0..m_cap {
                    c += layer.w.get(m, i, k);
                }
                a.set(i, k, c);
            }
            a
        })
        .collect()
}

/// Oracle for [`qnn_layer_forward`] with post-activation and dropout off:
/// forms all `D²` monomials `X[j]·X[k]` and contracts them with the expansion
/// coefficients, then applies σ and the residual.
pub fn brute_force_expansion(layer: &QnnLayerParams, settings: &QnnSettings, x: &[f64]) -> Result<Vec<f64>> {
    if settings.placement != Placement::Post {
        return Err(QinError::Config("the D² expansion exists only for post-activation".into()));
    }
    let d = x.len();
    if layer.w.shape()[1] != d {
        return Err(QinError::dims("brute_force_expansion", &layer.w.shape(), &[d]));
    }
    let monomials: Vec<f64> = (0..d * d).map(|jk| x[jk / d] * x[jk % d]).collect();
    let sigma = settings.sigma(layer.slope);
    let coeffs = expansion_coefficients(layer);
    Ok(coeffs
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let h = dot(a.data(), &monomials);
            let branch = sigma.apply(h);
            if settings.residual {
                x[i] + branch
            } else {
                branch
            }
        })
        .collect())
}

#[derive(Debug, Clone, Default)]
pub struct QnnTrace {
    pub layers: Vec<QnnLayerTrace>,
}

impl QnnTrace {
    pub fn kink_margin(&self, settings: &QnnSettings) -> f64 {
        if settings.activation == QnnActivation::Identity {
            return f64::INFINITY;
        }
        self.layers
            .iter()
            .flat_map(|t| t.kink_input(settings).iter())
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn pattern<'a>(&'a self, settings: &'a QnnSettings) -> impl Iterator<Item = bool> + 'a {
        self.layers
            .iter()
            .flat_map(move |t| t.kink_input(settings).iter())
            .map(|&v| v >= 0.0)
    }
}

pub fn qnn_forward(
    layers: &[QnnLayerParams],
    settings: &QnnSettings,
    x1: &[f64],
    mut dropout: Option<&mut SeededRng>,
) -> Result<(Vec<f64>, QnnTrace)> {
    let mut x = x1.to_vec();
    let mut trace = QnnTrace::default();
    for layer in layers {
        let (out, t) = qnn_layer_forward(layer, settings, &x, dropout.as_deref_mut())?;
        trace.layers.push(t);
        x = out;
    }
    Ok((x, trace))
}

pub fn qnn_backward(
    layers: &[QnnLayerParams],
    settings: &QnnSettings,
    trace: &QnnTrace,
    upstream: &[f64],
    grads: &mut [QnnLayerParams],
) -> Result<Vec<f64>> {
    if trace.layers.len() != layers.len() || grads.len() != layers.len() {
        return Err(QinError::TraceMismatch(format!(
            "{} layers, {} traced, {} gradient slots",
            layers.len(),
            trace.layers.len(),
            grads.len()
        )));
    }
    let mut g = upstream.to_vec();
    for ((layer, t), grad) in layers.iter().zip(&trace.layers).zip(grads.iter_mut()).rev() {
        g = qnn_layer_backward(layer, settings, t, &g, grad)?;
    }
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct MlpLayerTrace {
    pub x: Vec<f64>,
    pub pre: Vec<f64>,
    pub keep: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct MlpTrace {
    pub layers: Vec<MlpLayerTrace>,
}

impl MlpTrace {
    pub fn kink_margin(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|t| t.pre.iter())
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn pattern(&self) -> impl Iterator<Item = bool> + '_ {
        self.layers.iter().flat_map(|t| t.pre.iter()).map(|&v| v > 0.0)
    }
}

/// Affine + ReLU (+ inverted dropout) per layer.
pub fn mlp_forward(
    layers: &[DenseLayer],
    dropout_p: f64,
    x: &[f64],
    mut dropout: Option<&mut SeededRng>,
) -> Result<(Vec<f64>, MlpTrace)> {
    let mut x = x.to_vec();
    let mut trace = MlpTrace::default();
    for layer in layers {
        let mut pre = layer.w.matvec(&x)?;
        pre.iter_mut().zip(&layer.b).for_each(|(p, b)| *p += b);
        let keep = dropout_keep(dropout_p, pre.len(), dropout.as_deref_mut());
        let out: Vec<f64> = pre
            .iter()
            .enumerate()
            .map(|(i, &p)| p.max(0.0) * keep.as_ref().map_or(1.0, |k| k[i]))
            .collect();
        trace.layers.push(MlpLayerTrace { x, pre, keep });
        x = out;
    }
    Ok((x, trace))
}

pub fn mlp_backward(layers: &[DenseLayer], trace: &MlpTrace, upstream: &[f64], grads: &mut [DenseLayer]) -> Result<Vec<f64>> {
    if trace.layers.len() != layers.len() || grads.len() != layers.len() {
        return Err(QinError::TraceMismatch("mlp depth differs from trace".into()));
    }
    let mut g = upstream.to_vec();
    for ((layer, t), grad) in layers.iter().zip(&trace.layers).zip(grads.iter_mut()).rev() {
        if g.len() != layer.w.rows() {
            return Err(QinError::dims("mlp_backward", &layer.w.shape(), &[g.len()]));
        }
        let dpre: Vec<f64> = (0..g.len())
            .map(|i| {
                let keep = t.keep.as_ref().map_or(1.0, |k| k[i]);
                if t.pre[i] > 0.0 {
                    g[i] * keep
                } else {
                    0.0
                }
            })
            .collect();
        grad.w.add_outer(1.0, &dpre, &t.x);
        grad.b.iter_mut().zip(&dpre).for_each(|(b, d)| *b += d);
        g = layer.w.matvec_t(&dpre)?;
    }
    Ok(g)
}
