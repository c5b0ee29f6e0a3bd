//! Foreground–background decoupling.
//!
//! Entity features are projected into a latent space, refined by two
//! attraction–repulsion interaction layers and gated into soft foreground and
//! background components:
//!
//! ```text
//! z0_i      = W_e e_i + b_e
//! w_ij      = softmax_j(-d_ij^2)            d_ij = |z_i - z_j|
//! h_i       = sum_j w_ij z_j
//! r_i       = sum_j exp(-d_ij) (z_i - z_j)
//! z(l+1)_i  = P_l (z_i + alpha h_i - beta r_i)
//! p_i       = sigmoid(G_w . zL_i + G_b)
//! fg_i      = p_i zL_i,   bg_i = (1 - p_i) zL_i
//! ```
//!
//! Self-pairs take part in both sums; the self term of the repulsion is zero.

mod train;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entity::{EntitySet, Region};
use crate::error::{read_file, write_file, Error, Result};
use crate::vector::{dot, mat_vec, sigmoid, squared_distance};

pub use train::{
    fit, load_training_dir, loss, loss_and_gradient, FitHyper, FitResult, Gradient, TrainingExample,
};

/// Number of interaction layers.
pub const LAYERS: usize = 2;

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FbdWeights {
    pub in_dim: usize,
    pub latent_dim: usize,
    pub layers: usize,
    /// Projection matrix, `latent_dim x in_dim`, row-major.
    #[serde(rename = "W_e")]
    pub w_e: Vec<Vec<f64>>,
    #[serde(rename = "b_e")]
    pub b_e: Vec<f64>,
    /// One `latent_dim x latent_dim` map per interaction layer.
    #[serde(rename = "P")]
    pub p: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "G_w")]
    pub g_w: Vec<f64>,
    #[serde(rename = "G_b")]
    pub g_b: f64,
    pub alpha: f64,
    pub beta: f64,
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

impl FbdWeights {
    /// Untrained weights that keep entity geometry intact: the projection
    /// duplicates the input into a `2 * in_dim` latent space (scaled to
    /// preserve norms), both layer maps are the identity and the gate is flat
    /// (`p_i = 0.5`).
    pub fn identity(in_dim: usize) -> Self {
        let latent_dim = 2 * in_dim;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let w_e = (0..latent_dim)
            .map(|r| {
                (0..in_dim)
                    .map(|c| if r % in_dim == c { s } else { 0.0 })
                    .collect()
            })
            .collect();
        FbdWeights {
            in_dim,
            latent_dim,
            layers: LAYERS,
            w_e,
            b_e: vec![0.0; latent_dim],
            p: vec![identity(latent_dim); LAYERS],
            g_w: vec![0.0; latent_dim],
            g_b: 0.0,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
        }
    }

    /// Every learnable entry drawn uniformly from `[-0.1, 0.1]`.
    pub fn random(in_dim: usize, latent_dim: usize, seed: u64) -> Self {
        Self::random_scaled(in_dim, latent_dim, seed, 0.1)
    }

    pub fn random_scaled(in_dim: usize, latent_dim: usize, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-scale..=scale)).collect() };
        let w_e = (0..latent_dim).map(|_| draw(in_dim)).collect();
        let b_e = draw(latent_dim);
        let p = (0..LAYERS)
            .map(|_| (0..latent_dim).map(|_| draw(latent_dim)).collect())
            .collect();
        let g_w = draw(latent_dim);
        let g_b = draw(1)[0];
        FbdWeights {
            in_dim,
            latent_dim,
            layers: LAYERS,
            w_e,
            b_e,
            p,
            g_w,
            g_b,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
        }
    }

    pub fn with_strengths(mut self, alpha: Option<f64>, beta: Option<f64>) -> Self {
        if let Some(a) = alpha {
            self.alpha = a;
        }
        if let Some(b) = beta {
            self.beta = b;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.latent_dim == 0 {
            return Err(Error::invalid("in_dim/latent_dim", "must be positive"));
        }
        if self.layers != LAYERS {
            return Err(Error::invalid(
                "layers",
                format!("exactly {LAYERS} interaction layers are supported, got {}", self.layers),
            ));
        }
        check_matrix("W_e", &self.w_e, self.latent_dim, self.in_dim)?;
        check_vector("b_e", &self.b_e, self.latent_dim)?;
        if self.p.len() != self.layers {
            return Err(Error::dim("P (layer count)", self.layers, self.p.len()));
        }
        for (l, m) in self.p.iter().enumerate() {
            check_matrix(&format!("P[{l}]"), m, self.latent_dim, self.latent_dim)?;
        }
        check_vector("G_w", &self.g_w, self.latent_dim)?;
        if !self.g_b.is_finite() {
            return Err(Error::invalid("G_b", "non-finite"));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let w: FbdWeights = serde_json::from_slice(bytes).map_err(|e| Error::Malformed(e.to_string()))?;
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read_file(path)?).map_err(|e| e.in_file(path))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights serialize")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), self.to_json().as_bytes())
    }
}

fn check_vector(name: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::dim(name, len, v.len()));
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::invalid(name, "non-finite entry"));
    }
    Ok(())
}

fn check_matrix(name: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
    if m.len() != rows {
        return Err(Error::dim(format!("{name} rows"), rows, m.len()));
    }
    for (r, row) in m.iter().enumerate() {
        check_vector(&format!("{name}[{r}]"), row, cols)?;
    }
    Ok(())
}

/// `z_i = W_e e_i + b_e` for every feature.
pub fn project(features: &[&[f64]], w: &FbdWeights) -> Result<Vec<Vec<f64>>> {
    features
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if e.len() != w.in_dim {
                return Err(Error::dim(format!("projection input {i}"), w.in_dim, e.len()));
            }
            let mut z = mat_vec(&w.w_e, e);
            for (zk, bk) in z.iter_mut().zip(&w.b_e) {
                *zk += bk;
            }
            Ok(z)
        })
        .collect()
}

/// Attraction weights, attraction term and repulsion term for one layer.
pub(crate) struct LayerTerms {
    /// `w[i][j]`, each row sums to 1.
    pub weights: Vec<Vec<f64>>,
    /// `exp(-d_ij)`.
    pub kernel: Vec<Vec<f64>>,
    pub dist: Vec<Vec<f64>>,
    pub attraction: Vec<Vec<f64>>,
    pub repulsion: Vec<Vec<f64>>,
}

pub(crate) fn layer_terms(z: &[Vec<f64>]) -> LayerTerms {
    let n = z.len();
    let m = z[0].len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = squared_distance(&z[i], &z[j]).sqrt();
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }

    let mut weights = vec![vec![0.0; n]; n];
    let mut kernel = vec![vec![0.0; n]; n];
    let mut attraction = vec![vec![0.0; m]; n];
    let mut repulsion = vec![vec![0.0; m]; n];
    for i in 0..n {
        // softmax over -d^2; the self term (d = 0) is the maximum logit
        let logits: Vec<f64> = dist[i].iter().map(|d| -d * d).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|a| (a - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for j in 0..n {
            let wij = exps[j] / total;
            weights[i][j] = wij;
            let kij = (-dist[i][j]).exp();
            kernel[i][j] = kij;
            for k in 0..m {
                attraction[i][k] += wij * z[j][k];
                repulsion[i][k] += kij * (z[i][k] - z[j][k]);
            }
        }
    }
    LayerTerms {
        weights,
        kernel,
        dist,
        attraction,
        repulsion,
    }
}

/// Pre-projection update `z_i + alpha h_i - beta r_i`.
pub(crate) fn layer_update(z: &[Vec<f64>], terms: &LayerTerms, alpha: f64, beta: f64) -> Vec<Vec<f64>> {
    z.iter()
        .zip(terms.attraction.iter().zip(&terms.repulsion))
        .map(|(zi, (hi, ri))| {
            zi.iter()
                .zip(hi.iter().zip(ri))
                .map(|(z, (h, r))| z + alpha * h - beta * r)
                .collect()
        })
        .collect()
}

/// One attraction–repulsion interaction layer followed by `P[layer]`.
pub fn interact_layer(z: &[Vec<f64>], layer: usize, w: &FbdWeights) -> Result<Vec<Vec<f64>>> {
    if z.is_empty() {
        return Err(Error::Empty("interaction layer needs at least one entity".into()));
    }
    let proj = w
        .p
        .get(layer)
        .ok_or_else(|| Error::invalid("layer", format!("index {layer} out of range")))?;
    for (i, zi) in z.iter().enumerate() {
        if zi.len() != w.latent_dim {
            return Err(Error::dim(format!("latent vector {i}"), w.latent_dim, zi.len()));
        }
    }
    let terms = layer_terms(z);
    let u = layer_update(z, &terms, w.alpha, w.beta);
    Ok(u.iter().map(|ui| mat_vec(proj, ui)).collect())
}

/// Partition coefficients `p_i = sigmoid(G_w . z_i + G_b)`.
pub fn gate(z: &[Vec<f64>], w: &FbdWeights) -> Result<Vec<f64>> {
    z.iter()
        .enumerate()
        .map(|(i, zi)| {
            if zi.len() != w.latent_dim {
                return Err(Error::dim(format!("gate input {i}"), w.latent_dim, zi.len()));
            }
            Ok(sigmoid(dot(&w.g_w, zi) + w.g_b))
        })
        .collect()
}

/// Full latent trajectory: projection followed by every interaction layer.
pub fn encode(features: &[&[f64]], w: &FbdWeights) -> Result<Vec<Vec<f64>>> {
    let mut z = project(features, w)?;
    if z.is_empty() {
        return Ok(z);
    }
    for l in 0..w.layers {
        z = interact_layer(&z, l, w)?;
    }
    Ok(z)
}

/// Soft split of an entity set into foreground and background components.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub fg: Vec<Region>,
    pub bg: Vec<Region>,
    pub p: Vec<f64>,
    /// Final latent vectors `z^(L)`.
    pub latent: Vec<Vec<f64>>,
}

impl Decomposition {
    /// Copies the partition coefficients into the entities' `fg_prob`.
    pub fn write_fg_prob(&self, es: &mut EntitySet) {
        for (e, &p) in es.entities.iter_mut().zip(&self.p) {
            e.fg_prob = Some(p);
        }
    }
}

pub fn decouple(es: &EntitySet, w: &FbdWeights) -> Result<Decomposition> {
    if es.feature_dim != w.in_dim {
        return Err(Error::dim(
            format!("FBD weights vs entity set {:?}", es.image_id),
            w.in_dim,
            es.feature_dim,
        ));
    }
    let latent = encode(&es.features(), w)?;
    let p = gate(&latent, w)?;
    let mut fg = Vec::with_capacity(latent.len());
    let mut bg = Vec::with_capacity(latent.len());
    for ((z, &pi), e) in latent.iter().zip(&p).zip(&es.entities) {
        fg.push(Region {
            feature: z.iter().map(|x| pi * x).collect(),
            area: e.area,
        });
        bg.push(Region {
            feature: z.iter().map(|x| (1.0 - pi) * x).collect(),
            area: e.area,
        });
    }
    Ok(Decomposition { fg, bg, p, latent })
}
