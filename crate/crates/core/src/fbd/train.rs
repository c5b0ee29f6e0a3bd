//! Standalone training of the decoupling network with a binary
//! cross-entropy loss on per-entity foreground labels.
//!
//! Full-batch gradient descent with analytic gradients. A step that would
//! increase the loss is rejected and retried at half the step size, so the
//! recorded loss history never increases.

use std::collections::HashMap;
use std::path::Path;

use super::{layer_terms, layer_update, project, FbdWeights, LayerTerms};
use crate::entity::EntitySet;
use crate::error::{read_file, Error, Result};
use crate::vector::{dot, mat_vec, sigmoid};

/// Maximum number of step halvings tried per epoch.
const MAX_HALVINGS: usize = 40;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub set: EntitySet,
    /// One label per entity, 1 for foreground and 0 for background.
    pub labels: Vec<f64>,
}

impl TrainingExample {
    pub fn new(set: EntitySet, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != set.len() {
            return Err(Error::dim(format!("labels of {:?}", set.image_id), set.len(), labels.len()));
        }
        if let Some(bad) = labels.iter().position(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::invalid(
                format!("labels[{:?}][{bad}]", set.image_id),
                "label must be 0 or 1",
            ));
        }
        Ok(TrainingExample { set, labels })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Latent width; defaults to twice the input width.
    pub latent_dim: Option<usize>,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for FitHyper {
    fn default() -> Self {
        FitHyper {
            learning_rate: 1.0,
            epochs: 200,
            latent_dim: None,
            alpha: super::DEFAULT_ALPHA,
            beta: super::DEFAULT_BETA,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub weights: FbdWeights,
    /// Loss at initialization followed by the loss after each accepted step.
    pub loss_history: Vec<f64>,
    /// Steps rejected because they increased the loss.
    pub rejected_steps: usize,
}

/// Gradient with the same layout as the learnable part of [`FbdWeights`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub w_e: Vec<Vec<f64>>,
    pub b_e: Vec<f64>,
    pub p: Vec<Vec<Vec<f64>>>,
    pub g_w: Vec<f64>,
    pub g_b: f64,
}

impl Gradient {
    fn zeros(w: &FbdWeights) -> Self {
        Gradient {
            w_e: vec![vec![0.0; w.in_dim]; w.latent_dim],
            b_e: vec![0.0; w.latent_dim],
            p: vec![vec![vec![0.0; w.latent_dim]; w.latent_dim]; w.layers],
            g_w: vec![0.0; w.latent_dim],
            g_b: 0.0,
        }
    }

    /// Flattened in the order of [`FbdWeights::learnable`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.w_e.iter().flatten().copied().collect();
        out.extend(&self.b_e);
        out.extend(self.p.iter().flatten().flatten());
        out.extend(&self.g_w);
        out.push(self.g_b);
        out
    }
}

impl FbdWeights {
    /// Learnable parameters flattened: `W_e`, `b_e`, `P`, `G_w`, `G_b`.
    /// The interaction strengths are hyperparameters and are not included.
    pub fn learnable(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.w_e.iter().flatten().copied().collect();
        out.extend(&self.b_e);
        out.extend(self.p.iter().flatten().flatten());
        out.extend(&self.g_w);
        out.push(self.g_b);
        out
    }

    pub fn set_learnable(&mut self, values: &[f64]) {
        let mut it = values.iter().copied();
        let mut next = || it.next().expect("parameter vector has the right length");
        for row in &mut self.w_e {
            row.iter_mut().for_each(|x| *x = next());
        }
        self.b_e.iter_mut().for_each(|x| *x = next());
        for m in &mut self.p {
            for row in m {
                row.iter_mut().for_each(|x| *x = next());
            }
        }
        self.g_w.iter_mut().for_each(|x| *x = next());
        self.g_b = next();
    }
}

struct Trace {
    z: Vec<Vec<Vec<f64>>>,
    terms: Vec<LayerTerms>,
    u: Vec<Vec<Vec<f64>>>,
    logits: Vec<f64>,
}

fn forward(features: &[&[f64]], w: &FbdWeights) -> Result<Trace> {
    let mut z = vec![project(features, w)?];
    let mut terms = Vec::with_capacity(w.layers);
    let mut u = Vec::with_capacity(w.layers);
    for l in 0..w.layers {
        let t = layer_terms(&z[l]);
        let ul = layer_update(&z[l], &t, w.alpha, w.beta);
        z.push(ul.iter().map(|v| mat_vec(&w.p[l], v)).collect());
        terms.push(t);
        u.push(ul);
    }
    let logits = z[w.layers].iter().map(|zi| dot(&w.g_w, zi) + w.g_b).collect();
    Ok(Trace { z, terms, u, logits })
}

/// Numerically stable `-[y ln sigmoid(s) + (1-y) ln(1 - sigmoid(s))]`.
fn bce_with_logit(s: f64, y: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p() - y * s
}

fn check_data(data: &[TrainingExample], w: &FbdWeights) -> Result<usize> {
    if data.is_empty() {
        return Err(Error::Empty("no training examples".into()));
    }
    let mut total = 0;
    for ex in data {
        if ex.set.is_empty() {
            return Err(Error::Empty(format!("training set {:?} has no entities", ex.set.image_id)));
        }
        if ex.set.feature_dim != w.in_dim {
            return Err(Error::dim(format!("training set {:?}", ex.set.image_id), w.in_dim, ex.set.feature_dim));
        }
        total += ex.set.len();
    }
    Ok(total)
}

/// Mean binary cross-entropy of the gate output against the labels.
pub fn loss(w: &FbdWeights, data: &[TrainingExample]) -> Result<f64> {
    let total = check_data(data, w)? as f64;
    let mut sum = 0.0;
    for ex in data {
        let trace = forward(&ex.set.features(), w)?;
        sum += trace
            .logits
            .iter()
            .zip(&ex.labels)
            .map(|(&s, &y)| bce_with_logit(s, y))
            .sum::<f64>();
    }
    Ok(sum / total)
}

/// Mean loss and its analytic gradient with respect to every learnable parameter.
pub fn loss_and_gradient(w: &FbdWeights, data: &[TrainingExample]) -> Result<(f64, Gradient)> {
    let total = check_data(data, w)? as f64;
    let mut grad = Gradient::zeros(w);
    let mut sum = 0.0;
    for ex in data {
        let features = ex.set.features();
        let trace = forward(&features, w)?;
        let n = features.len();
        let m = w.latent_dim;

        // gate
        let top = &trace.z[w.layers];
        let mut g_z: Vec<Vec<f64>> = vec![vec![0.0; m]; n];
        for i in 0..n {
            let s = trace.logits[i];
            let y = ex.labels[i];
            sum += bce_with_logit(s, y);
            let g_s = (sigmoid(s) - y) / total;
            grad.g_b += g_s;
            for k in 0..m {
                grad.g_w[k] += g_s * top[i][k];
                g_z[i][k] = g_s * w.g_w[k];
            }
        }

        for l in (0..w.layers).rev() {
            let z = &trace.z[l];
            let u = &trace.u[l];
            let t = &trace.terms[l];
            let proj = &w.p[l];

            // z(l+1) = P u
            let mut g_u = vec![vec![0.0; m]; n];
            for i in 0..n {
                for r in 0..m {
                    let gr = g_z[i][r];
                    if gr == 0.0 {
                        continue;
                    }
                    for c in 0..m {
                        grad.p[l][r][c] += gr * u[i][c];
                        g_u[i][c] += proj[r][c] * gr;
                    }
                }
            }

            // u = z + alpha h - beta r
            let mut g_prev = g_u.clone();
            for i in 0..n {
                let g_h: Vec<f64> = g_u[i].iter().map(|g| w.alpha * g).collect();
                let g_rep: Vec<f64> = g_u[i].iter().map(|g| -w.beta * g).collect();

                // attraction: h_i = sum_j w_ij z_j, w_ij = softmax_j(-d_ij^2)
                let g_wij: Vec<f64> = (0..n).map(|j| dot(&g_h, &z[j])).collect();
                let mean: f64 = (0..n).map(|j| t.weights[i][j] * g_wij[j]).sum();
                for j in 0..n {
                    let wij = t.weights[i][j];
                    let g_logit = wij * (g_wij[j] - mean);
                    for k in 0..m {
                        g_prev[j][k] += wij * g_h[k];
                        let diff = z[i][k] - z[j][k];
                        g_prev[i][k] -= 2.0 * g_logit * diff;
                        g_prev[j][k] += 2.0 * g_logit * diff;
                    }
                }

                // repulsion: r_i = sum_j exp(-d_ij) (z_i - z_j)
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let kij = t.kernel[i][j];
                    let d = t.dist[i][j];
                    let diff: Vec<f64> = (0..m).map(|k| z[i][k] - z[j][k]).collect();
                    let g_dist = if d > 0.0 { -kij * dot(&g_rep, &diff) / d } else { 0.0 };
                    for k in 0..m {
                        let direct = kij * g_rep[k];
                        let via_dist = g_dist * diff[k];
                        g_prev[i][k] += direct + via_dist;
                        g_prev[j][k] -= direct + via_dist;
                    }
                }
            }
            g_z = g_prev;
        }

        // z0 = W_e e + b_e
        for i in 0..n {
            for r in 0..m {
                grad.b_e[r] += g_z[i][r];
                for c in 0..w.in_dim {
                    grad.w_e[r][c] += g_z[i][r] * features[i][c];
                }
            }
        }
    }
    Ok((sum / total, grad))
}

/// Trains decoupling weights from labeled entity sets, starting from
/// [`FbdWeights::random`] with `init_seed`.
pub fn fit(data: &[TrainingExample], hyper: &FitHyper, init_seed: u64) -> Result<FitResult> {
    let in_dim = data
        .first()
        .ok_or_else(|| Error::Empty("no training examples".into()))?
        .set
        .feature_dim;
    let latent_dim = hyper.latent_dim.unwrap_or(2 * in_dim);
    let mut w = FbdWeights::random(in_dim, latent_dim, init_seed);
    w.alpha = hyper.alpha;
    w.beta = hyper.beta;
    w.validate()?;

    let (mut current, mut grad) = loss_and_gradient(&w, data)?;
    if !current.is_finite() {
        return Err(Error::Diverged(format!("initial loss is {current}")));
    }
    let mut history = vec![current];
    let mut rejected = 0;
    let mut lr = hyper.learning_rate;

    'epochs: for _ in 0..hyper.epochs {
        let params = w.learnable();
        let g = grad.flatten();
        for _ in 0..MAX_HALVINGS {
            let stepped: Vec<f64> = params.iter().zip(&g).map(|(p, d)| p - lr * d).collect();
            let mut candidate = w.clone();
            candidate.set_learnable(&stepped);
            let cand_loss = loss(&candidate, data)?;
            if cand_loss.is_finite() && cand_loss <= current {
                w = candidate;
                let (l, gr) = loss_and_gradient(&w, data)?;
                current = l;
                grad = gr;
                history.push(current);
                continue 'epochs;
            }
            rejected += 1;
            lr *= 0.5;
        }
        log::debug!("no decreasing step found at lr {lr:e}; stopping early");
        break;
    }

    Ok(FitResult {
        weights: w,
        loss_history: history,
        rejected_steps: rejected,
    })
}

/// Reads every `*.json` entity set in `dir` (sorted by file name) and pairs
/// it with labels from a `{"image_id": {"entity_id": 0 | 1}}` document.
pub fn load_training_dir(dir: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Vec<TrainingExample>> {
    let dir = dir.as_ref();
    let labels_path = labels_path.as_ref();
    let labels: HashMap<String, HashMap<String, u8>> = serde_json::from_slice(&read_file(labels_path)?)
        .map_err(|e| Error::Malformed(e.to_string()).in_file(labels_path))?;

    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();

    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let set = EntitySet::load(&path)?;
        let per_image = labels.get(&set.image_id).ok_or_else(|| {
            Error::invalid(format!("labels[{:?}]", set.image_id), "no labels for image").in_file(labels_path)
        })?;
        let ys = set
            .entities
            .iter()
            .map(|e| match per_image.get(&e.id) {
                Some(&y) if y <= 1 => Ok(f64::from(y)),
                Some(&y) => Err(Error::invalid(
                    format!("labels[{:?}][{:?}]", set.image_id, e.id),
                    format!("label must be 0 or 1, got {y}"),
                )),
                None => Err(Error::invalid(
                    format!("labels[{:?}][{:?}]", set.image_id, e.id),
                    "missing label",
                )),
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_file(labels_path))?;
        out.push(TrainingExample::new(set, ys)?);
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("no entity-set files in {}", dir.display())));
    }
    Ok(out)
}
