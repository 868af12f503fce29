//! Learning tasks driven by the protocol, and a synthetic federated
//! classification task with a Dirichlet label split.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seeds::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// A federated task over a flat real parameter vector.
pub trait LearningTask: Sync {
    /// Parameter dimension `d >= 1`.
    fn dim(&self) -> usize;
    fn devices(&self) -> usize;
    /// Local training-set size of device `k` (federated-averaging weight).
    fn samples(&self, k: usize) -> usize;
    /// Gradient of device `k`'s empirical loss at `model`; always finite.
    fn local_gradient(&self, model: &[f64], k: usize) -> Vec<f64>;
    /// Held-out loss and accuracy.
    fn evaluate(&self, model: &[f64]) -> Evaluation;

    fn initial_model(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    /// `epochs` full-batch gradient steps from `model`; returns the model change.
    fn local_update(&self, model: &[f64], k: usize, epochs: usize, eta: f64) -> Vec<f64> {
        let mut w = model.to_vec();
        for _ in 0..epochs {
            let g = self.local_gradient(&w, k);
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= eta * gi;
            }
        }
        w.iter().zip(model).map(|(a, b)| a - b).collect()
    }

    fn sample_counts(&self) -> Vec<usize> {
        (0..self.devices()).map(|k| self.samples(k)).collect()
    }
}

/// Labelled feature vectors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Multinomial logistic regression on Gaussian blobs. Parameters are the
/// row-major `classes x (features + 1)` weight matrix, bias last.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub features: usize,
    pub classes: usize,
    pub local: Vec<Dataset>,
    pub test: Dataset,
    /// Number of Dirichlet draws needed before every device had data.
    pub split_attempts: usize,
}

/// Distance of each class mean from the origin. Pairwise mean distances of
/// about `4 sqrt(2)` keep the Bayes error below one percent.
const BLOB_RADIUS: f64 = 4.0;
const MAX_SPLIT_ATTEMPTS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSizes {
    pub train: usize,
    pub test: usize,
}

/// Draws class means, pooled train/test sets, and splits each class across
/// devices with `Dirichlet(alpha)` proportions. A split leaving any device
/// empty is redrawn.
pub fn make_synthetic_task(
    seed: u64,
    devices: usize,
    dirichlet_alpha: f64,
    features: usize,
    classes: usize,
    sizes: SyntheticSizes,
) -> Result<SyntheticTask> {
    if devices == 0 || features == 0 || classes < 2 {
        return Err(Error::param("need at least one device, one feature and two classes"));
    }
    if sizes.train < devices || sizes.test == 0 {
        return Err(Error::param(format!("{} training samples cannot cover {devices} devices", sizes.train)));
    }
    if !(dirichlet_alpha > 0.0 && dirichlet_alpha.is_finite()) {
        return Err(Error::param("Dirichlet concentration must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..features).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            v.iter().map(|a| a * BLOB_RADIUS / n).collect()
        })
        .collect();
    let draw = |rng: &mut crate::seeds::SimRng, n: usize| {
        let mut d = Dataset::default();
        for j in 0..n {
            let c = j % classes;
            d.x.push(means[c].iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)).collect());
            d.y.push(c);
        }
        d
    };
    let pooled = draw(&mut rng, sizes.train);
    let test = draw(&mut rng, sizes.test);
    let by_class: Vec<Vec<usize>> = (0..classes).map(|c| (0..pooled.len()).filter(|&j| pooled.y[j] == c).collect()).collect();
    let gamma = Gamma::new(dirichlet_alpha, 1.0).map_err(|e| Error::param(e.to_string()))?;
    for attempt in 1..=MAX_SPLIT_ATTEMPTS {
        let mut local = vec![Dataset::default(); devices];
        for members in &by_class {
            let props = dirichlet(&gamma, devices, &mut rng);
            let counts = apportion(&props, members.len());
            let mut it = members.iter();
            for (k, &n) in counts.iter().enumerate() {
                for &j in it.by_ref().take(n) {
                    local[k].x.push(pooled.x[j].clone());
                    local[k].y.push(pooled.y[j]);
                }
            }
        }
        if local.iter().all(|d| !d.is_empty()) {
            return Ok(SyntheticTask { features, classes, local, test, split_attempts: attempt });
        }
    }
    Err(Error::param(format!("no split left every device with data after {MAX_SPLIT_ATTEMPTS} draws")))
}

/// Normalized independent `Gamma(alpha, 1)` draws.
fn dirichlet<R: Rng + ?Sized>(gamma: &Gamma<f64>, n: usize, rng: &mut R) -> Vec<f64> {
    let g: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let s: f64 = g.iter().sum();
    if s > 0.0 {
        g.iter().map(|v| v / s).collect()
    } else {
        vec![1.0 / n as f64; n]
    }
}

/// Largest-remainder rounding of `total * props`; the result sums to `total`.
fn apportion(props: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let missing = total - counts.iter().sum::<usize>();
    for &k in order.iter().take(missing) {
        counts[k] += 1;
    }
    counts
}

impl SyntheticTask {
    fn logits(&self, model: &[f64], x: &[f64]) -> Vec<f64> {
        let stride = self.features + 1;
        (0..self.classes)
            .map(|c| {
                let row = &model[c * stride..(c + 1) * stride];
                row[self.features] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Softmax probabilities with the usual max shift.
    fn probabilities(&self, model: &[f64], x: &[f64]) -> Vec<f64> {
        let z = self.logits(model, x);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    fn dataset_gradient(&self, model: &[f64], data: &Dataset) -> Vec<f64> {
        let stride = self.features + 1;
        let mut g = vec![0.0; self.dim()];
        for (x, &y) in data.x.iter().zip(&data.y) {
            let p = self.probabilities(model, x);
            for c in 0..self.classes {
                let e = p[c] - if c == y { 1.0 } else { 0.0 };
                let row = &mut g[c * stride..(c + 1) * stride];
                for (gi, xi) in row.iter_mut().zip(x) {
                    *gi += e * xi;
                }
                row[self.features] += e;
            }
        }
        let n = data.len().max(1) as f64;
        g.iter_mut().for_each(|v| *v /= n);
        g
    }

    /// Loss and accuracy of `model` on an arbitrary dataset.
    pub fn evaluate_on(&self, model: &[f64], data: &Dataset) -> Evaluation {
        let (loss, hits) = data
            .x
            .par_iter()
            .zip(&data.y)
            .map(|(x, &y)| {
                let p = self.probabilities(model, x);
                let best = (0..self.classes).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0);
                (-(p[y].max(1e-300)).ln(), usize::from(best == y))
            })
            .reduce(|| (0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        let n = data.len().max(1) as f64;
        Evaluation { loss: loss / n, accuracy: hits as f64 / n }
    }

    /// Gradient on the union of every device's data.
    pub fn pooled_gradient(&self, model: &[f64]) -> Vec<f64> {
        let total: usize = self.local.iter().map(Dataset::len).sum();
        let mut g = vec![0.0; self.dim()];
        for (k, d) in self.local.iter().enumerate() {
            let w = d.len() as f64 / total as f64;
            for (gi, li) in g.iter_mut().zip(self.local_gradient(model, k)) {
                *gi += w * li;
            }
        }
        g
    }

    /// Per-device label distributions.
    pub fn class_histograms(&self) -> Vec<Vec<f64>> {
        self.local
            .iter()
            .map(|d| {
                let mut h = vec![0.0; self.classes];
                for &y in &d.y {
                    h[y] += 1.0;
                }
                let n = d.len().max(1) as f64;
                h.iter().map(|v| v / n).collect()
            })
            .collect()
    }

    /// Largest total-variation distance between two devices' label distributions.
    pub fn max_tv_distance(&self) -> f64 {
        let h = self.class_histograms();
        let mut worst: f64 = 0.0;
        for a in 0..h.len() {
            for b in a + 1..h.len() {
                let tv = 0.5 * h[a].iter().zip(&h[b]).map(|(p, q)| (p - q).abs()).sum::<f64>();
                worst = worst.max(tv);
            }
        }
        worst
    }
}

impl LearningTask for SyntheticTask {
    fn dim(&self) -> usize {
        self.classes * (self.features + 1)
    }

    fn devices(&self) -> usize {
        self.local.len()
    }

    fn samples(&self, k: usize) -> usize {
        self.local[k].len()
    }

    fn local_gradient(&self, model: &[f64], k: usize) -> Vec<f64> {
        self.dataset_gradient(model, &self.local[k])
    }

    fn evaluate(&self, model: &[f64]) -> Evaluation {
        self.evaluate_on(model, &self.test)
    }
}
