//! Hypothesis distributions stored as multiplicity-compressed probability classes,
//! explicit alternatives aligned to them, and seeded samplers for both.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Total-mass tolerance for a hypothesis.
pub const MASS_TOL: f64 = 1e-9;
/// Probabilities this close (relative) are treated as one class.
pub const MERGE_RTOL: f64 = 1e-12;

/// `count` domain elements that each carry probability `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityClass {
    pub y: f64,
    pub count: usize,
}

/// A hypothesis distribution `P` in canonical form: distinct probabilities,
/// sorted descending, each with its multiplicity.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisModel {
    classes: Vec<ProbabilityClass>,
}

impl HypothesisModel {
    /// Build from one probability per domain element.
    pub fn from_probabilities(probs: &[f64]) -> Result<Self> {
        for (index, &value) in probs.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositiveProbability { index, value });
            }
        }
        Self::from_classes(probs.iter().map(|&y| (y, 1)))
    }

    /// Build from `(probability, count)` pairs; duplicates are merged.
    pub fn from_classes(pairs: impl IntoIterator<Item = (f64, usize)>) -> Result<Self> {
        let mut raw: Vec<(f64, usize)> = pairs.into_iter().filter(|&(_, c)| c > 0).collect();
        for (index, &(value, _)) in raw.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositiveProbability { index, value });
            }
        }
        if raw.is_empty() {
            return Err(Error::MassNotOne { mass: 0.0 });
        }
        raw.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut classes: Vec<ProbabilityClass> = Vec::with_capacity(raw.len());
        for (y, count) in raw {
            match classes.last_mut() {
                Some(last) if (last.y - y).abs() <= MERGE_RTOL * last.y => last.count += count,
                _ => classes.push(ProbabilityClass { y, count }),
            }
        }
        let mass: f64 = classes.iter().map(|c| c.y * c.count as f64).sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::MassNotOne { mass });
        }
        Ok(Self { classes })
    }

    /// Uniform distribution on `n` elements.
    pub fn uniform(n: usize) -> Self {
        Self {
            classes: vec![ProbabilityClass {
                y: 1.0 / n as f64,
                count: n,
            }],
        }
    }

    /// One element of weight 1/2 plus `n` elements of weight `1/(2n)`.
    pub fn heavy_element(n: usize) -> Self {
        Self::from_classes([(0.5, 1), (0.5 / n as f64, n)]).expect("valid by construction")
    }

    pub fn classes(&self) -> &[ProbabilityClass] {
        &self.classes
    }

    /// Support size `n = Σ h_j`.
    pub fn n(&self) -> usize {
        self.classes.iter().map(|c| c.count).sum()
    }

    /// One probability per element, class by class.
    pub fn expand(&self) -> Vec<f64> {
        self.classes
            .iter()
            .flat_map(|c| std::iter::repeat_n(c.y, c.count))
            .collect()
    }

    /// Split every element into `s` equal parts.
    pub fn subdivide(&self, s: usize) -> Self {
        assert!(s >= 1, "subdivision factor must be at least 1");
        Self {
            classes: self
                .classes
                .iter()
                .map(|c| ProbabilityClass {
                    y: c.y / s as f64,
                    count: c.count * s,
                })
                .collect(),
        }
    }
}

/// Per-element counts grouped by hypothesis class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleHistogram {
    pub counts: Vec<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<u64>,
}

impl SampleHistogram {
    pub fn zeros(model: &HypothesisModel) -> Self {
        Self {
            counts: model.classes.iter().map(|c| vec![0; c.count]).collect(),
            draws: None,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Fingerprint `F_{i,j}`: for each class, how many elements were seen `i` times.
    pub fn fingerprint(&self) -> Vec<BTreeMap<u64, usize>> {
        self.counts
            .iter()
            .map(|class| {
                let mut f = BTreeMap::new();
                for &c in class {
                    *f.entry(c).or_insert(0) += 1;
                }
                f
            })
            .collect()
    }

    pub fn check_aligned(&self, model: &HypothesisModel) -> Result<()> {
        let ok = self.counts.len() == model.classes.len()
            && self
                .counts
                .iter()
                .zip(&model.classes)
                .all(|(c, m)| c.len() == m.count);
        if ok {
            Ok(())
        } else {
            Err(Error::Misaligned(
                "histogram shape differs from hypothesis classes".into(),
            ))
        }
    }
}

/// One class of an explicit alternative `Q`: the hypothesis probability `y`
/// and the probability each of its elements has under `Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternativeClass {
    pub y: f64,
    pub probs: Vec<f64>,
}

/// An explicit alternative aligned to a hypothesis. Its mass may differ from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternativeModel {
    pub classes: Vec<AlternativeClass>,
}

impl AlternativeModel {
    /// `Q = P`.
    pub fn from_hypothesis(p: &HypothesisModel) -> Self {
        Self {
            classes: p
                .classes
                .iter()
                .map(|c| AlternativeClass {
                    y: c.y,
                    probs: vec![c.y; c.count],
                })
                .collect(),
        }
    }

    /// Move `delta` of probability onto class `class` (off it when negative),
    /// taking it proportionally from every other class. The ℓ1 distance from
    /// `p` is `2|delta|`.
    pub fn mass_shift(p: &HypothesisModel, class: usize, delta: f64) -> Result<Self> {
        let c = p.classes.get(class).ok_or_else(|| {
            Error::ConstraintViolation(format!("no class {class} in a {}-class hypothesis", p.classes.len()))
        })?;
        let own = c.y * c.count as f64;
        let rest = 1.0 - own;
        let inside = c.y + delta / c.count as f64;
        if rest <= 0.0 || inside < 0.0 || rest - delta < 0.0 {
            return Err(Error::ConstraintViolation(format!(
                "cannot shift {delta} onto class {class} with mass {own}"
            )));
        }
        let scale = (rest - delta) / rest;
        let mut q = Self::from_hypothesis(p);
        for (j, qc) in q.classes.iter_mut().enumerate() {
            let x = if j == class { inside } else { qc.y * scale };
            qc.probs.iter_mut().for_each(|v| *v = x);
        }
        Ok(q)
    }

    pub fn mass(&self) -> f64 {
        self.classes.iter().flat_map(|c| c.probs.iter()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.classes {
            for (index, &value) in c.probs.iter().enumerate() {
                if !(value >= 0.0) || !value.is_finite() {
                    return Err(Error::NonPositiveProbability { index, value });
                }
            }
        }
        Ok(())
    }

    pub fn check_aligned(&self, p: &HypothesisModel) -> Result<()> {
        if self.classes.len() != p.classes.len() {
            return Err(Error::Misaligned(format!(
                "alternative has {} classes, hypothesis has {}",
                self.classes.len(),
                p.classes.len()
            )));
        }
        for (j, (a, h)) in self.classes.iter().zip(&p.classes).enumerate() {
            if a.probs.len() != h.count || (a.y - h.y).abs() > MERGE_RTOL.max(1e-9) * h.y {
                return Err(Error::Misaligned(format!(
                    "class {j}: alternative (y={}, {} elements) vs hypothesis (y={}, {} elements)",
                    a.y,
                    a.probs.len(),
                    h.y,
                    h.count
                )));
            }
        }
        Ok(())
    }
}

/// `Σ_e |x_e - y_class(e)|`.
pub fn l1_distance(p: &HypothesisModel, q: &AlternativeModel) -> Result<f64> {
    q.check_aligned(p)?;
    Ok(q.classes
        .iter()
        .map(|c| c.probs.iter().map(|x| (x - c.y).abs()).sum::<f64>())
        .sum())
}

/// Anything that assigns a probability to every element of an aligned domain.
pub trait ElementSource {
    fn element_probabilities(&self) -> Vec<Vec<f64>>;
}

impl ElementSource for HypothesisModel {
    fn element_probabilities(&self) -> Vec<Vec<f64>> {
        self.classes.iter().map(|c| vec![c.y; c.count]).collect()
    }
}

impl ElementSource for AlternativeModel {
    fn element_probabilities(&self) -> Vec<Vec<f64>> {
        self.classes.iter().map(|c| c.probs.clone()).collect()
    }
}

/// Reusable Poissonized sampler: each element count is `Poisson(k · prob)`.
#[derive(Debug, Clone)]
pub struct PoissonSampler {
    // per class, per element: index into `dists` (None for rate 0)
    layout: Vec<Vec<Option<usize>>>,
    dists: Vec<Poisson<f64>>,
}

impl PoissonSampler {
    pub fn new(source: &impl ElementSource, k: f64) -> Self {
        let mut rates: Vec<f64> = Vec::new();
        let mut dists = Vec::new();
        let layout = source
            .element_probabilities()
            .into_iter()
            .map(|class| {
                class
                    .into_iter()
                    .map(|p| {
                        let rate = k * p;
                        if rate <= 0.0 {
                            return None;
                        }
                        let idx = match rates.iter().position(|&r| r == rate) {
                            Some(i) => i,
                            None => {
                                rates.push(rate);
                                dists.push(Poisson::new(rate).expect("positive finite rate"));
                                rates.len() - 1
                            }
                        };
                        Some(idx)
                    })
                    .collect()
            })
            .collect();
        Self { layout, dists }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SampleHistogram {
        let counts = self
            .layout
            .iter()
            .map(|class| {
                class
                    .iter()
                    .map(|d| match d {
                        Some(i) => self.dists[*i].sample(rng) as u64,
                        None => 0,
                    })
                    .collect()
            })
            .collect();
        SampleHistogram {
            counts,
            draws: None,
        }
    }
}

/// Reusable multinomial sampler drawing exactly `k` samples.
#[derive(Debug, Clone)]
pub struct FixedKSampler {
    shape: Vec<usize>,
    probs: Vec<f64>,
    k: u64,
    /// Original mass when the source was renormalized to 1.
    pub renormalized_from: Option<f64>,
}

impl FixedKSampler {
    pub fn new(source: &impl ElementSource, k: u64) -> Self {
        let per_class = source.element_probabilities();
        let shape = per_class.iter().map(Vec::len).collect();
        let mut probs: Vec<f64> = per_class.into_iter().flatten().collect();
        let mass: f64 = probs.iter().sum();
        let renormalized_from = if (mass - 1.0).abs() > MASS_TOL {
            probs.iter_mut().for_each(|p| *p /= mass);
            Some(mass)
        } else {
            None
        };
        Self {
            shape,
            probs,
            k,
            renormalized_from,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SampleHistogram {
        let mut flat = vec![0u64; self.probs.len()];
        let mut remaining = self.k;
        let mut rest_mass = 1.0f64;
        for (slot, &p) in flat.iter_mut().zip(&self.probs) {
            if remaining == 0 {
                break;
            }
            let frac = if rest_mass > 0.0 {
                (p / rest_mass).clamp(0.0, 1.0)
            } else {
                1.0
            };
            let draw = if frac >= 1.0 {
                remaining
            } else {
                Binomial::new(remaining, frac)
                    .expect("probability in [0,1]")
                    .sample(rng)
            };
            *slot = draw;
            remaining -= draw;
            rest_mass -= p;
        }
        // rounding can leave a few draws unassigned; give them to the last element with mass
        if remaining > 0 {
            if let Some(i) = self.probs.iter().rposition(|&p| p > 0.0) {
                flat[i] += remaining;
            }
        }
        let mut it = flat.into_iter();
        let counts = self
            .shape
            .iter()
            .map(|&len| it.by_ref().take(len).collect())
            .collect();
        SampleHistogram {
            counts,
            draws: Some(self.k),
        }
    }
}

/// Poissonized histogram from a seed.
pub fn sample_poissonized(source: &impl ElementSource, k: f64, seed: u64) -> SampleHistogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PoissonSampler::new(source, k).sample(&mut rng)
}

/// Exactly-`k`-sample histogram from a seed. Sources with mass ≠ 1 are renormalized.
pub fn sample_fixed_k(source: &impl ElementSource, k: u64, seed: u64) -> SampleHistogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FixedKSampler::new(source, k).sample(&mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_merges_duplicates() {
        let m = HypothesisModel::from_probabilities(&[0.5, 0.5]).unwrap();
        assert_eq!(m.classes(), &[ProbabilityClass { y: 0.5, count: 2 }]);
        assert_eq!(m.n(), 2);
    }

    #[test]
    fn build_heavy_element() {
        let mut probs = vec![0.5];
        probs.extend(std::iter::repeat_n(1.0 / 160.0, 80));
        let m = HypothesisModel::from_probabilities(&probs).unwrap();
        assert_eq!(m.classes().len(), 2);
        assert_eq!(m.classes()[0], ProbabilityClass { y: 0.5, count: 1 });
        assert_eq!(m.classes()[1].count, 80);
        assert!((m.classes()[1].y - 0.00625).abs() < 1e-15);
        assert_eq!(m.n(), 81);
        assert_eq!(m, HypothesisModel::heavy_element(80));
    }

    #[test]
    fn build_rejects_bad_input() {
        assert!(matches!(
            HypothesisModel::from_probabilities(&[0.3, 0.8]),
            Err(Error::MassNotOne { .. })
        ));
        assert!(matches!(
            HypothesisModel::from_probabilities(&[1.0, 0.0]),
            Err(Error::NonPositiveProbability { index: 1, .. })
        ));
    }

    #[test]
    fn subdivide_examples() {
        let u2 = HypothesisModel::uniform(2);
        assert_eq!(u2.subdivide(2), HypothesisModel::uniform(4));
        assert_eq!(u2.subdivide(1), u2);
        let h = HypothesisModel::heavy_element(80).subdivide(3);
        assert_eq!(h.classes()[0].count, 3);
        assert!((h.classes()[0].y - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(h.classes()[1].count, 240);
        assert!((h.classes()[1].y - 1.0 / 480.0).abs() < 1e-17);
    }

    #[test]
    fn l1_examples() {
        let p = HypothesisModel::uniform(2);
        let q = |a: f64, b: f64| AlternativeModel {
            classes: vec![AlternativeClass {
                y: 0.5,
                probs: vec![a, b],
            }],
        };
        assert!((l1_distance(&p, &q(1.0, 0.0)).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(l1_distance(&p, &AlternativeModel::from_hypothesis(&p)).unwrap(), 0.0);
        assert!((l1_distance(&p, &q(0.9, 0.1)).unwrap() - 0.8).abs() < 1e-15);
        assert!(l1_distance(&HypothesisModel::uniform(3), &q(0.5, 0.5)).is_err());
    }

    #[test]
    fn poisson_zero_rate_and_determinism() {
        let q = AlternativeModel {
            classes: vec![AlternativeClass {
                y: 0.5,
                probs: vec![0.0, 1.0],
            }],
        };
        for seed in 0..50 {
            assert_eq!(sample_poissonized(&q, 30.0, seed).counts[0][0], 0);
        }
        let p = HypothesisModel::heavy_element(80);
        assert_eq!(
            sample_poissonized(&p, 40.0, 7),
            sample_poissonized(&p, 40.0, 7)
        );
    }

    #[test]
    fn poisson_mean_law_of_large_numbers() {
        let p = HypothesisModel::uniform(2);
        let sampler = PoissonSampler::new(&p, 40.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 100_000;
        let total: u64 = (0..trials).map(|_| sampler.sample(&mut rng).counts[0][0]).sum();
        let mean = total as f64 / trials as f64;
        // sd of the mean is sqrt(20/1e5) ≈ 0.014
        assert!((mean - 20.0).abs() < 0.15, "mean {mean}");
    }

    #[test]
    fn fixed_k_contract() {
        let p = HypothesisModel::heavy_element(10);
        let h = sample_fixed_k(&p, 0, 3);
        assert_eq!(h.total(), 0);
        for seed in 0..200 {
            assert_eq!(sample_fixed_k(&p, 37, seed).total(), 37);
        }
    }

    #[test]
    fn fixed_k_exact_binomial() {
        let p = HypothesisModel::uniform(2);
        let sampler = FixedKSampler::new(&p, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 100_000;
        let hits = (0..trials)
            .filter(|_| sampler.sample(&mut rng).counts[0] == vec![2, 0])
            .count();
        let f = hits as f64 / trials as f64;
        assert!((f - 0.25).abs() < 0.01, "{f}");
    }

    #[test]
    fn fixed_k_renormalizes() {
        let q = AlternativeModel {
            classes: vec![AlternativeClass {
                y: 0.5,
                probs: vec![0.2, 0.6],
            }],
        };
        let s = FixedKSampler::new(&q, 10);
        assert!((s.renormalized_from.unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn fingerprint_counts() {
        let h = SampleHistogram {
            counts: vec![vec![0, 2, 2, 1], vec![0, 0]],
            draws: None,
        };
        let f = h.fingerprint();
        assert_eq!(f[0][&2], 2);
        assert_eq!(f[0][&0], 1);
        assert_eq!(f[1][&0], 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn model_strategy() -> impl Strategy<Value = HypothesisModel> {
            proptest::collection::vec((1u32..50, 1usize..6), 1..5).prop_filter_map(
                "distinct weights",
                |raw| {
                    let total: f64 = raw.iter().map(|&(w, c)| w as f64 * c as f64).sum();
                    HypothesisModel::from_classes(
                        raw.iter().map(|&(w, c)| (w as f64 / total, c)),
                    )
                    .ok()
                },
            )
        }

        proptest! {
            #[test]
            fn expand_roundtrip(m in model_strategy()) {
                let back = HypothesisModel::from_probabilities(&m.expand()).unwrap();
                prop_assert_eq!(back.classes().len(), m.classes().len());
                for (a, b) in back.classes().iter().zip(m.classes()) {
                    prop_assert_eq!(a.count, b.count);
                    prop_assert!((a.y - b.y).abs() <= 1e-15);
                }
            }

            #[test]
            fn subdivide_composes(m in model_strategy(), a in 1usize..5, b in 1usize..5) {
                let lhs = m.subdivide(a * b);
                let rhs = m.subdivide(a).subdivide(b);
                for (x, y) in lhs.classes().iter().zip(rhs.classes()) {
                    prop_assert_eq!(x.count, y.count);
                    prop_assert!((x.y - y.y).abs() <= 1e-15 * x.y);
                }
                let mass: f64 = lhs.classes().iter().map(|c| c.y * c.count as f64).sum();
                prop_assert!((mass - 1.0).abs() < 1e-12);
            }

            #[test]
            fn l1_triangle(xs in proptest::collection::vec(0.0f64..0.5, 4), zs in proptest::collection::vec(0.0f64..0.5, 4)) {
                let p = HypothesisModel::uniform(4);
                let q = AlternativeModel { classes: vec![AlternativeClass { y: 0.25, probs: xs.clone() }] };
                let r = AlternativeModel { classes: vec![AlternativeClass { y: 0.25, probs: zs.clone() }] };
                let pq = l1_distance(&p, &q).unwrap();
                let pr = l1_distance(&p, &r).unwrap();
                let qr: f64 = xs.iter().zip(&zs).map(|(a, b)| (a - b).abs()).sum();
                prop_assert!(pq <= pr + qr + 1e-12);
                prop_assert!(pr <= pq + qr + 1e-12);
            }
        }
    }

    #[test]
    fn mass_shift_distance() {
        let p = HypothesisModel::heavy_element(80);
        for d in [-0.45, 0.45, 0.1] {
            let q = AlternativeModel::mass_shift(&p, 0, d).unwrap();
            assert!((q.mass() - 1.0).abs() < 1e-12);
            assert!((l1_distance(&p, &q).unwrap() - 2.0 * d.abs()).abs() < 1e-12);
        }
        assert!(AlternativeModel::mass_shift(&p, 0, -0.6).is_err());
        assert!(AlternativeModel::mass_shift(&p, 2, 0.1).is_err());
        assert!(AlternativeModel::mass_shift(&HypothesisModel::uniform(3), 0, 0.1).is_err());
    }
}
