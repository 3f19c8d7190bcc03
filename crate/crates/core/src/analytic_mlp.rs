//! Fully connected networks with analytic activations and their empirical
//! squared-error target, packaged as a landscape over parameter space.
//!
//! Parameter layout: for `l = 1..L`, the matrix `A_l` (`N_l x N_{l-1}`,
//! row-major) followed by the bias `b_l`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::landscape::{norm, LandscapeSpec, Objective, Smoothness};
use crate::schedule_noise::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Softplus,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Softplus => u.max(0.0) + (-u.abs()).exp().ln_1p(),
            Activation::Tanh => u.tanh(),
            Activation::Sigmoid => sigmoid(u),
        }
    }

    pub fn derivative(self, u: f64) -> f64 {
        match self {
            Activation::Softplus => sigmoid(u),
            Activation::Tanh => {
                let t = u.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(u);
                s * (1.0 - s)
            }
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Softplus => "softplus",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softplus" => Ok(Activation::Softplus),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::param(format!(
                "unknown activation `{other}`; valid: softplus, tanh, sigmoid"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    SquaredError,
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared_error" => Ok(Loss::SquaredError),
            other => Err(Error::param(format!("unknown loss `{other}`; valid: squared_error"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    /// `N_0 = d_in, ..., N_L = d_out`.
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub loss: Loss,
}

impl Architecture {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::param("architecture needs at least one layer"));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::param("all layer widths must be >= 1"));
        }
        Ok(Self {
            widths,
            activation,
            loss: Loss::SquaredError,
        })
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn d_in(&self) -> usize {
        self.widths[0]
    }

    pub fn d_out(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    /// `P = sum_l (N_l N_{l-1} + N_l)`.
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Offsets of `(A_l, b_l)` in the flat layout, `l = 1..L`.
    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let a = off;
                let b = a + w[1] * w[0];
                off = b + w[1];
                (a, b)
            })
            .collect()
    }

    fn check_params(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::Layout(format!(
                "parameter vector has length {}, architecture needs {}",
                theta.len(),
                self.param_count()
            )));
        }
        Ok(())
    }
}

/// One layer `(A_l, b_l)` with `A_l` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(arch: &Architecture) -> Self {
        Self(vec![0.0; arch.param_count()])
    }

    pub fn flatten(arch: &Architecture, layers: &[Layer]) -> Result<Self> {
        if layers.len() != arch.depth() {
            return Err(Error::Layout(format!(
                "{} layers given, architecture has depth {}",
                layers.len(),
                arch.depth()
            )));
        }
        let mut out = Vec::with_capacity(arch.param_count());
        for (layer, w) in layers.iter().zip(arch.widths.windows(2)) {
            if layer.rows != w[1]
                || layer.cols != w[0]
                || layer.a.len() != w[1] * w[0]
                || layer.b.len() != w[1]
            {
                return Err(Error::Layout(format!(
                    "layer shape {}x{} does not match widths {}x{}",
                    layer.rows, layer.cols, w[1], w[0]
                )));
            }
            out.extend_from_slice(&layer.a);
            out.extend_from_slice(&layer.b);
        }
        Ok(Self(out))
    }

    pub fn unflatten(&self, arch: &Architecture) -> Result<Vec<Layer>> {
        arch.check_params(&self.0)?;
        Ok(arch
            .offsets()
            .into_iter()
            .zip(arch.widths.windows(2))
            .map(|((a, b), w)| Layer {
                rows: w[1],
                cols: w[0],
                a: self.0[a..b].to_vec(),
                b: self.0[b..b + w[1]].to_vec(),
            })
            .collect())
    }
}

/// Samples `(x_i, y_i)` with every `|x_i|, |y_i| <= bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub d_in: usize,
    pub d_out: usize,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
    pub bound: f64,
}

impl Dataset {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<Vec<f64>>, bound: f64) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::Layout(format!(
                "need a positive, equal number of inputs and targets, got {} and {}",
                xs.len(),
                ys.len()
            )));
        }
        let (d_in, d_out) = (xs[0].len(), ys[0].len());
        if d_in == 0 || d_out == 0 {
            return Err(Error::Layout("samples need positive dimension".into()));
        }
        for (i, (x, y)) in xs.iter().zip(&ys).enumerate() {
            if x.len() != d_in || y.len() != d_out {
                return Err(Error::Layout(format!("sample {i} has inconsistent dimensions")));
            }
            if x.iter().chain(y).any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("sample {i} is not finite")));
            }
            if norm(x) > bound || norm(y) > bound {
                return Err(Error::param(format!(
                    "sample {i} exceeds the support bound {bound}"
                )));
            }
        }
        Ok(Self {
            d_in,
            d_out,
            xs,
            ys,
            bound,
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Header `d_in d_out m B`, then one sample per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {} {}\n", self.d_in, self.d_out, self.len(), self.bound);
        for (x, y) in self.xs.iter().zip(&self.ys) {
            let line: Vec<String> = x.iter().chain(y).map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let perr = |message: String| Error::Parse {
            context: context.to_string(),
            message,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| perr("missing header".into()))?
            .split_whitespace()
            .collect();
        if header.len() != 4 {
            return Err(perr(format!("header needs `d_in d_out m B`, got {} fields", header.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| perr(format!("header field `{s}`: {e}")));
        let (d_in, d_out, m) = (int(header[0])?, int(header[1])?, int(header[2])?);
        let bound: f64 = header[3]
            .parse()
            .map_err(|e| perr(format!("header field `{}`: {e}", header[3])))?;
        let mut xs = Vec::with_capacity(m);
        let mut ys = Vec::with_capacity(m);
        for (i, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|e| perr(format!("sample {i}: `{s}`: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != d_in + d_out {
                return Err(perr(format!(
                    "sample {i} has {} values, expected {}",
                    vals.len(),
                    d_in + d_out
                )));
            }
            xs.push(vals[..d_in].to_vec());
            ys.push(vals[d_in..].to_vec());
        }
        if xs.len() != m {
            return Err(perr(format!("header announces {m} samples, found {}", xs.len())));
        }
        Self::new(xs, ys, bound)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    fn check_arch(&self, arch: &Architecture) -> Result<()> {
        if arch.d_in() != self.d_in || arch.d_out() != self.d_out {
            return Err(Error::Layout(format!(
                "architecture maps {} -> {}, dataset has {} -> {}",
                arch.d_in(),
                arch.d_out(),
                self.d_in,
                self.d_out
            )));
        }
        Ok(())
    }
}

/// Pre-activations `z_l` and outputs `a_l` of every layer; `a_0 = x`.
struct Pass {
    z: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
}

fn forward(arch: &Architecture, theta: &[f64], x: &[f64]) -> Pass {
    let depth = arch.depth();
    let mut z = Vec::with_capacity(depth);
    let mut a = Vec::with_capacity(depth + 1);
    a.push(x.to_vec());
    for (l, ((oa, ob), w)) in arch.offsets().into_iter().zip(arch.widths.windows(2)).enumerate() {
        let (cols, rows) = (w[0], w[1]);
        let prev = &a[l];
        let zl: Vec<f64> = (0..rows)
            .map(|i| {
                let row = &theta[oa + i * cols..oa + (i + 1) * cols];
                theta[ob + i] + row.iter().zip(prev).map(|(p, q)| p * q).sum::<f64>()
            })
            .collect();
        let al = if l + 1 == depth {
            zl.clone()
        } else {
            zl.iter().map(|&u| arch.activation.apply(u)).collect()
        };
        z.push(zl);
        a.push(al);
    }
    Pass { z, a }
}

/// `Aff_L o rho o ... o rho o Aff_1` evaluated at `x`.
pub fn realize(arch: &Architecture, theta: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    arch.check_params(&theta.0)?;
    if x.len() != arch.d_in() {
        return Err(Error::Layout(format!(
            "input has {} coordinates, architecture expects {}",
            x.len(),
            arch.d_in()
        )));
    }
    Ok(forward(arch, &theta.0, x).a.pop().expect("depth >= 1"))
}

fn sample_loss(arch: &Architecture, theta: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let out = forward(arch, theta, x).a.pop().expect("depth >= 1");
    out.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum()
}

/// `(1/m) sum_i |realize(theta, x_i) - y_i|^2`.
pub fn empirical_target(arch: &Architecture, theta: &ParamVector, data: &Dataset) -> Result<f64> {
    arch.check_params(&theta.0)?;
    data.check_arch(arch)?;
    Ok(target_unchecked(arch, &theta.0, data))
}

fn target_unchecked(arch: &Architecture, theta: &[f64], data: &Dataset) -> f64 {
    let total: f64 = data
        .xs
        .iter()
        .zip(&data.ys)
        .map(|(x, y)| sample_loss(arch, theta, x, y))
        .sum();
    total / data.len() as f64
}

/// Adds the gradient of `|realize(theta, x) - y|^2` to `acc`.
fn backprop_into(arch: &Architecture, theta: &[f64], x: &[f64], y: &[f64], acc: &mut [f64]) {
    let pass = forward(arch, theta, x);
    let offsets = arch.offsets();
    let depth = arch.depth();
    let mut delta: Vec<f64> = pass.a[depth].iter().zip(y).map(|(p, t)| 2.0 * (p - t)).collect();
    for l in (0..depth).rev() {
        let (oa, ob) = offsets[l];
        let (cols, rows) = (arch.widths[l], arch.widths[l + 1]);
        let input = &pass.a[l];
        for i in 0..rows {
            acc[ob + i] += delta[i];
            let row = &mut acc[oa + i * cols..oa + (i + 1) * cols];
            for (g, v) in row.iter_mut().zip(input) {
                *g += delta[i] * v;
            }
        }
        if l > 0 {
            let zprev = &pass.z[l - 1];
            delta = (0..cols)
                .map(|j| {
                    let back: f64 = (0..rows).map(|i| theta[oa + i * cols + j] * delta[i]).sum();
                    back * arch.activation.derivative(zprev[j])
                })
                .collect();
        }
    }
}

fn gradient_unchecked(arch: &Architecture, theta: &[f64], data: &Dataset, batch: Option<&[usize]>, out: &mut [f64]) {
    out.fill(0.0);
    let count = match batch {
        Some(idx) => {
            for &i in idx {
                backprop_into(arch, theta, &data.xs[i], &data.ys[i], out);
            }
            idx.len()
        }
        None => {
            for (x, y) in data.xs.iter().zip(&data.ys) {
                backprop_into(arch, theta, x, y, out);
            }
            data.len()
        }
    };
    let scale = 1.0 / count as f64;
    for g in out.iter_mut() {
        *g *= scale;
    }
}

/// Exact gradient of the empirical target over `batch` (indices may repeat),
/// or over the full dataset.
pub fn gradient(
    arch: &Architecture,
    theta: &ParamVector,
    data: &Dataset,
    batch: Option<&[usize]>,
) -> Result<Vec<f64>> {
    arch.check_params(&theta.0)?;
    data.check_arch(arch)?;
    if let Some(idx) = batch {
        if idx.is_empty() {
            return Err(Error::param("batch must be non-empty"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= data.len()) {
            return Err(Error::param(format!(
                "batch index {bad} out of range for {} samples",
                data.len()
            )));
        }
    }
    let mut out = vec![0.0; arch.param_count()];
    gradient_unchecked(arch, &theta.0, data, batch, &mut out);
    Ok(out)
}

/// Empirical target as an [`Objective`] over `R^P`.
#[derive(Debug, Clone)]
pub struct MlpObjective {
    pub arch: Architecture,
    pub data: Dataset,
}

impl Objective for MlpObjective {
    fn value(&self, x: &[f64]) -> f64 {
        target_unchecked(&self.arch, x, &self.data)
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        gradient_unchecked(&self.arch, x, &self.data, None, out);
    }

    /// `grad_batch - grad_full` with indices drawn uniformly with replacement.
    fn minibatch_noise(&self, x: &[f64], batch_size: usize, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        let m = self.data.len();
        let idx: Vec<usize> = (0..batch_size.max(1)).map(|_| rng.gen_range(0..m)).collect();
        let p = self.arch.param_count();
        let mut batch = vec![0.0; p];
        let mut full = vec![0.0; p];
        gradient_unchecked(&self.arch, x, &self.data, Some(&idx), &mut batch);
        gradient_unchecked(&self.arch, x, &self.data, None, &mut full);
        Some(batch.iter().zip(&full).map(|(b, f)| b - f).collect())
    }
}

pub fn as_landscape(arch: &Architecture, data: &Dataset) -> Result<LandscapeSpec> {
    data.check_arch(arch)?;
    let objective = MlpObjective {
        arch: arch.clone(),
        data: data.clone(),
    };
    let mut spec = LandscapeSpec::new("mlp", arch.param_count(), Arc::new(objective));
    spec.smoothness = Smoothness::LipschitzGradient;
    Ok(spec)
}

/// Parameters with i.i.d. `N(0, scale^2 / N_{l-1})` weights and `N(0, scale^2)` biases.
pub fn random_params<R: Rng + ?Sized>(arch: &Architecture, scale: f64, rng: &mut R) -> ParamVector {
    let mut theta = Vec::with_capacity(arch.param_count());
    for w in arch.widths.windows(2) {
        let fan = (w[0] as f64).sqrt();
        for _ in 0..w[1] * w[0] {
            theta.push(scale * rng.sample::<f64, _>(StandardNormal) / fan);
        }
        for _ in 0..w[1] {
            theta.push(scale * rng.sample::<f64, _>(StandardNormal));
        }
    }
    ParamVector(theta)
}

/// Teacher network and a dataset it fits exactly: inputs uniform on
/// `[-input_bound, input_bound]^d_in`, targets `realize(teacher, x)`.
pub fn teacher_student(
    arch: &Architecture,
    m: usize,
    input_bound: f64,
    rng: &RngStream,
) -> Result<(ParamVector, Dataset)> {
    if m == 0 || !(input_bound > 0.0) {
        return Err(Error::param("need m >= 1 and a positive input bound"));
    }
    let mut gen = rng.generator();
    let teacher = random_params(arch, 1.0, &mut gen);
    let xs: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..arch.d_in()).map(|_| gen.gen_range(-input_bound..=input_bound)).collect())
        .collect();
    let ys: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| realize(arch, &teacher, x))
        .collect::<Result<_>>()?;
    let bound = xs.iter().chain(&ys).map(|v| norm(v)).fold(0.0, f64::max);
    Ok((teacher, Dataset::new(xs, ys, bound)?))
}

/// Permutes the neurons of hidden layer `layer` (1-based, `< L`): rows of
/// `A_layer`, entries of `b_layer` and columns of `A_{layer+1}`.
pub fn permute_hidden(
    arch: &Architecture,
    theta: &ParamVector,
    layer: usize,
    perm: &[usize],
) -> Result<ParamVector> {
    if layer == 0 || layer >= arch.depth() {
        return Err(Error::param(format!("layer {layer} is not a hidden layer")));
    }
    let width = arch.widths[layer];
    let mut seen = vec![false; width];
    if perm.len() != width || perm.iter().any(|&p| p >= width || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::param("not a permutation of the layer's neurons"));
    }
    let mut layers = theta.unflatten(arch)?;
    let cur = layers[layer - 1].clone();
    let cols = cur.cols;
    for (new_i, &old_i) in perm.iter().enumerate() {
        layers[layer - 1].a[new_i * cols..(new_i + 1) * cols]
            .copy_from_slice(&cur.a[old_i * cols..(old_i + 1) * cols]);
        layers[layer - 1].b[new_i] = cur.b[old_i];
    }
    let next = layers[layer].clone();
    for r in 0..next.rows {
        for (new_j, &old_j) in perm.iter().enumerate() {
            layers[layer].a[r * next.cols + new_j] = next.a[r * next.cols + old_j];
        }
    }
    ParamVector::flatten(arch, &layers)
}

/// Sampled estimates of `sup |f|` and of a Lipschitz constant of `f` on the
/// ball `|theta| <= radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientBounds {
    pub sup_grad: f64,
    pub lipschitz: f64,
    pub samples: usize,
}

pub fn gradient_bounds(
    arch: &Architecture,
    data: &Dataset,
    radius: f64,
    samples: usize,
    rng: &RngStream,
) -> Result<GradientBounds> {
    data.check_arch(arch)?;
    if !(radius > 0.0) || samples == 0 {
        return Err(Error::param("need a positive radius and at least one sample"));
    }
    let p = arch.param_count();
    let mut gen = rng.generator();
    let ball_point = |gen: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let dir: Vec<f64> = (0..p).map(|_| gen.sample(StandardNormal)).collect();
        let r = radius * gen.gen::<f64>().powf(1.0 / p as f64) / norm(&dir);
        dir.iter().map(|v| v * r).collect()
    };
    let mut g = vec![0.0; p];
    let mut gh = vec![0.0; p];
    let (mut sup, mut lip) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let theta = ball_point(&mut gen);
        gradient_unchecked(arch, &theta, data, None, &mut g);
        sup = sup.max(norm(&g));
        let h = 1e-3 * radius;
        let dir = ball_point(&mut gen);
        let dn = norm(&dir);
        let shifted: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + h * d / dn).collect();
        gradient_unchecked(arch, &shifted, data, None, &mut gh);
        let diff: Vec<f64> = g.iter().zip(&gh).map(|(a, b)| a - b).collect();
        lip = lip.max(norm(&diff) / h);
    }
    Ok(GradientBounds {
        sup_grad: sup,
        lipschitz: lip,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny(act: Activation) -> Architecture {
        Architecture::new(vec![1, 1, 1], act).unwrap()
    }

    #[test]
    fn realize_examples() {
        let arch = tiny(Activation::Softplus);
        assert_eq!(realize(&arch, &ParamVector::zeros(&arch), &[0.3]).unwrap(), vec![0.0]);
        let arch = tiny(Activation::Tanh);
        assert_eq!(realize(&arch, &ParamVector(vec![1.0, 0.0, 2.0, 1.0]), &[0.0]).unwrap(), vec![1.0]);
        let arch = tiny(Activation::Softplus);
        let out = realize(&arch, &ParamVector(vec![1.0, 0.0, 1.0, 0.0]), &[1.0]).unwrap();
        assert!((out[0] - 1.313262).abs() < 1e-6);
        assert!(matches!(realize(&arch, &ParamVector(vec![1.0]), &[1.0]), Err(Error::Layout(_))));
    }

    #[test]
    fn softplus_is_safe() {
        for u in [-1e4, -50.0, 0.0, 50.0, 1e4] {
            assert!(Activation::Softplus.apply(u).is_finite());
        }
        assert_relative_eq!(Activation::Softplus.apply(1e4), 1e4);
    }

    #[test]
    fn target_examples() {
        let arch = Architecture::new(vec![1, 1], Activation::Tanh).unwrap();
        // identity output layer: prediction = A x + b
        let theta = ParamVector(vec![0.0, 1.0]);
        let one = Dataset::new(vec![vec![0.0]], vec![vec![0.0]], 1.0).unwrap();
        assert_eq!(empirical_target(&arch, &theta, &one).unwrap(), 1.0);
        let theta = ParamVector(vec![1.0, 0.0]);
        let two = Dataset::new(vec![vec![1.0], vec![3.0]], vec![vec![0.0], vec![0.0]], 3.0).unwrap();
        assert_eq!(empirical_target(&arch, &theta, &two).unwrap(), 5.0);
    }

    #[test]
    fn teacher_is_a_zero() {
        let arch = Architecture::new(vec![2, 3, 1], Activation::Sigmoid).unwrap();
        let (teacher, data) = teacher_student(&arch, 20, 1.0, &RngStream::new(4, 0)).unwrap();
        assert!(empirical_target(&arch, &teacher, &data).unwrap() < 1e-28);
        let g = gradient(&arch, &teacher, &data, None).unwrap();
        assert!(norm(&g) < 1e-12);
    }

    #[test]
    fn full_gradient_is_mean_of_singletons() {
        let arch = Architecture::new(vec![2, 3, 1], Activation::Tanh).unwrap();
        let (_, data) = teacher_student(&arch, 7, 1.0, &RngStream::new(5, 0)).unwrap();
        let theta = random_params(&arch, 1.0, &mut RngStream::new(6, 0).generator());
        let full = gradient(&arch, &theta, &data, None).unwrap();
        let mut mean = vec![0.0; full.len()];
        for i in 0..data.len() {
            let g = gradient(&arch, &theta, &data, Some(&[i])).unwrap();
            for (m, v) in mean.iter_mut().zip(g) {
                *m += v / data.len() as f64;
            }
        }
        for (a, b) in full.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn flatten_round_trip() {
        let arch = Architecture::new(vec![3, 4, 2], Activation::Tanh).unwrap();
        assert_eq!(arch.param_count(), 3 * 4 + 4 + 4 * 2 + 2);
        let theta = ParamVector((0..arch.param_count()).map(|i| i as f64).collect());
        let layers = theta.unflatten(&arch).unwrap();
        assert_eq!(layers[0].a[..3], [0.0, 1.0, 2.0]);
        assert_eq!(layers[0].b, vec![12.0, 13.0, 14.0, 15.0]);
        assert_eq!(ParamVector::flatten(&arch, &layers).unwrap(), theta);
    }

    #[test]
    fn dataset_text_round_trip() {
        let data = Dataset::new(vec![vec![0.5, -0.25]], vec![vec![1.0]], 2.0).unwrap();
        assert_eq!(Dataset::parse(&data.to_text(), "mem").unwrap(), data);
        assert!(Dataset::parse("1 1 2 1\n0 0\n", "mem").is_err());
        assert!(Dataset::parse("1 1 1 0.5\n2 0\n", "mem").is_err());
    }

    #[test]
    fn bad_batch_index() {
        let arch = Architecture::new(vec![1, 1], Activation::Tanh).unwrap();
        let data = Dataset::new(vec![vec![0.0]], vec![vec![0.0]], 1.0).unwrap();
        assert!(gradient(&arch, &ParamVector::zeros(&arch), &data, Some(&[1])).is_err());
    }
}
