//! Synthetic in-distribution / OOD feature sets with known structure, and
//! one-class task splits.
//!
//! Features live in `R^d`. Each class centroid sits on a random
//! `intrinsic_dim`-dimensional subspace; samples add unit-variance noise inside
//! that subspace and `off_subspace_noise`-scaled noise in its orthogonal
//! complement. Logits come from a linear head whose rows point along the class
//! centroid directions.
//!
//! Two OOD sets are produced:
//!
//! * `shifted`: every centroid moves by a vector of norm `ood_shift`, pointing
//!   toward the origin inside the subspace and, when the complement is
//!   non-empty, equally along one fixed off-subspace direction.
//! * `off_subspace`: ID centroids and in-subspace noise, but the complement
//!   noise has scale `ood_off_subspace` instead of `off_subspace_noise`.
//!
//! The stream is ChaCha8 seeded from `seed`, with Gaussians drawn by Box–Muller,
//! so a spec fully determines every value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fitstats::LinearHead;
use crate::numerics::{dot, norm2, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub intrinsic_dim: usize,
    pub samples_per_class: usize,
    /// Rows in the ID test set and in each OOD set.
    pub eval_samples: usize,
    /// Distance of each class centroid from the origin.
    pub separation: f64,
    /// Standard deviation of the in-subspace noise.
    pub noise: f64,
    pub off_subspace_noise: f64,
    pub ood_shift: f64,
    pub ood_off_subspace: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Three well separated classes in 16 dims: centroids 10 noise-widths from
    /// the origin, the shifted set moved all the way to the origin plus an
    /// equal off-subspace offset, and off-subspace OOD noise 10× the ID level.
    pub fn large_margin(seed: u64) -> Self {
        Self {
            num_classes: 3,
            feature_dim: 16,
            intrinsic_dim: 4,
            samples_per_class: 1000,
            eval_samples: 1000,
            separation: 10.0,
            noise: 1.0,
            off_subspace_noise: 0.1,
            ood_shift: 10.0 * std::f64::consts::SQRT_2,
            ood_off_subspace: 1.0,
            seed,
        }
    }

    /// Same geometry as [`SynthSpec::large_margin`] but both OOD sets are drawn
    /// from the ID distribution.
    pub fn null(seed: u64) -> Self {
        Self {
            ood_shift: 0.0,
            ood_off_subspace: 0.1,
            ..Self::large_margin(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1".into());
        }
        if self.intrinsic_dim == 0 || self.intrinsic_dim > self.feature_dim {
            return bad(format!(
                "intrinsic_dim must lie in [1, {}], got {}",
                self.feature_dim, self.intrinsic_dim
            ));
        }
        if self.samples_per_class == 0 || self.eval_samples == 0 {
            return bad("sample counts must be positive".into());
        }
        for (name, v) in [
            ("separation", self.separation),
            ("noise", self.noise),
            ("off_subspace_noise", self.off_subspace_noise),
            ("ood_shift", self.ood_shift),
            ("ood_off_subspace", self.ood_off_subspace),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Features, logits and labels for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Matrix,
    pub logits: Matrix,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub train: LabeledSet,
    pub test: LabeledSet,
    /// Named OOD sets in a fixed order: `shifted`, then `off_subspace`.
    pub ood: Vec<(String, LabeledSet)>,
    pub head: LinearHead,
    /// Orthonormal basis of the class subspace, `d × intrinsic_dim`.
    pub principal_basis: Matrix,
}

struct Gaussian {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Gaussian {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite
        let u1 = 1.0 - self.rng.gen::<f64>();
        let u2 = self.rng.gen::<f64>();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    fn vector(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next()).collect()
    }
}

/// Orthonormal basis of `R^d` from a Gaussian matrix, by modified
/// Gram–Schmidt with one re-orthogonalization pass. Columns returned as rows.
fn random_basis(d: usize, g: &mut Gaussian) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v = g.vector(d);
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = norm2(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}

fn combine(basis: &[Vec<f64>], coeffs: &[f64], out: &mut [f64]) {
    for (b, &c) in basis.iter().zip(coeffs) {
        out.iter_mut().zip(b).for_each(|(o, x)| *o += c * x);
    }
}

pub fn synth_dataset(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let d = spec.feature_dim;
    let k = spec.intrinsic_dim;
    let c = spec.num_classes;
    let mut g = Gaussian::new(spec.seed);

    let basis = random_basis(d, &mut g);
    let (inner, outer) = basis.split_at(k);

    // Unit class directions in subspace coordinates: orthogonal axes when they
    // fit, random unit vectors otherwise.
    let directions: Vec<Vec<f64>> = (0..c)
        .map(|class| {
            let coords = if c <= k {
                let mut e = vec![0.0; k];
                e[class] = 1.0;
                e
            } else {
                let mut v = g.vector(k);
                let n = norm2(&v).max(1e-12);
                v.iter_mut().for_each(|x| *x /= n);
                v
            };
            let mut ambient = vec![0.0; d];
            combine(inner, &coords, &mut ambient);
            ambient
        })
        .collect();
    let centroids: Vec<Vec<f64>> = directions
        .iter()
        .map(|dir| dir.iter().map(|x| x * spec.separation).collect())
        .collect();

    let bias = g.vector(c).into_iter().map(|b| 0.1 * b).collect();
    let weights = Matrix::from_rows(&directions)?;
    let head = LinearHead::new(weights, bias)?;

    let off_direction: Option<Vec<f64>> = if outer.is_empty() {
        None
    } else {
        let coeffs = g.vector(outer.len());
        let n = norm2(&coeffs).max(1e-12);
        let coeffs: Vec<f64> = coeffs.iter().map(|x| x / n).collect();
        let mut v = vec![0.0; d];
        combine(outer, &coeffs, &mut v);
        Some(v)
    };
    let shifted_centroids: Vec<Vec<f64>> = directions
        .iter()
        .zip(&centroids)
        .map(|(dir, mu)| {
            let mut shift: Vec<f64> = dir.iter().map(|x| -x).collect();
            if let Some(o) = &off_direction {
                shift
                    .iter_mut()
                    .zip(o)
                    .for_each(|(s, v)| *s = (*s + v) / std::f64::consts::SQRT_2);
            }
            mu.iter()
                .zip(&shift)
                .map(|(m, s)| m + spec.ood_shift * s)
                .collect()
        })
        .collect();

    let mut sample =
        |centers: &[Vec<f64>], labels: Vec<usize>, off_scale: f64| -> Result<LabeledSet> {
            let mut data = Vec::with_capacity(labels.len() * d);
            for &label in &labels {
                let mut x = centers[label].clone();
                let inner_noise: Vec<f64> = g.vector(k).iter().map(|z| z * spec.noise).collect();
                combine(inner, &inner_noise, &mut x);
                let outer_noise: Vec<f64> = g
                    .vector(outer.len())
                    .iter()
                    .map(|z| z * off_scale)
                    .collect();
                combine(outer, &outer_noise, &mut x);
                data.extend(x);
            }
            let features = Matrix::new(labels.len(), d, data)?;
            let logits = head.logits_batch(&features)?;
            Ok(LabeledSet {
                features,
                logits,
                labels,
            })
        };

    let train_labels: Vec<usize> = (0..c)
        .flat_map(|class| std::iter::repeat_n(class, spec.samples_per_class))
        .collect();
    let eval_labels: Vec<usize> = (0..spec.eval_samples).map(|i| i % c).collect();

    let train = sample(&centroids, train_labels, spec.off_subspace_noise)?;
    let test = sample(&centroids, eval_labels.clone(), spec.off_subspace_noise)?;
    let shifted = sample(
        &shifted_centroids,
        eval_labels.clone(),
        spec.off_subspace_noise,
    )?;
    let off = sample(&centroids, eval_labels, spec.ood_off_subspace)?;

    let principal_basis = Matrix::from_rows(inner)?.transpose();
    Ok(SynthDataset {
        train,
        test,
        ood: vec![("shifted".into(), shifted), ("off_subspace".into(), off)],
        head,
        principal_basis,
    })
}

/// One class treated as in-distribution, every other row as OOD.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneClassTask {
    pub id_class: usize,
    pub id_rows: Vec<usize>,
    pub ood_rows: Vec<usize>,
}

impl OneClassTask {
    /// True when no row falls outside the ID class.
    pub fn is_degenerate(&self) -> bool {
        self.ood_rows.is_empty()
    }
}

pub fn one_class_split(labels: &[usize], id_class: usize) -> Result<OneClassTask> {
    let (id_rows, ood_rows): (Vec<usize>, Vec<usize>) =
        (0..labels.len()).partition(|&i| labels[i] == id_class);
    if id_rows.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "class {id_class} does not occur in the labels"
        )));
    }
    Ok(OneClassTask {
        id_class,
        id_rows,
        ood_rows,
    })
}
