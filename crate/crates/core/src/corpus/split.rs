use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self, CorpusError> {
        let r = Self {
            train,
            validation,
            test,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let a = self.as_array();
        if a.iter().any(|&x| !(x >= 0.0)) || (a.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidRatios(a));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.validation, self.test]
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    /// Equal-width histogram edges before merging.
    pub bin_edges: Vec<f64>,
    /// Strata actually used, as half-open ranges of histogram bins.
    pub strata: Vec<(usize, usize)>,
    /// Document count per stratum.
    pub stratum_counts: Vec<usize>,
    /// Histogram bins that were folded into a right-hand neighbour.
    pub merged_bins: Vec<usize>,
    /// Documents dropped for exceeding the maximum length.
    pub excluded: Vec<usize>,
}

/// Doane's bin count for a sample: ⌈1 + log₂ n + log₂(1 + |g₁|/σ_{g₁})⌉.
pub fn doane_bin_count(values: &[f64]) -> usize {
    let n = values.len();
    if n < 3 {
        return 1;
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    if m2 == 0.0 {
        return 1;
    }
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / nf;
    let g1 = m3 / m2.powf(1.5);
    let sigma_g1 = (6.0 * (nf - 2.0) / ((nf + 1.0) * (nf + 3.0))).sqrt();
    let k = 1.0 + nf.log2() + (1.0 + g1.abs() / sigma_g1).log2();
    k.ceil() as usize
}

/// Largest-remainder apportionment of `n` items by `ratios`; ties go to the
/// earlier class.
fn apportion(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if left == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

/// Stratifies documents by length (Doane histogram on raw counts), then
/// splits every stratum by `ratios` after a seeded shuffle.
///
/// Bins holding fewer documents than there are non-empty split classes are
/// merged into the bin on their right; a sparse tail merges into the last
/// stratum.
pub fn stratified_split(
    lengths: &[usize],
    ratios: SplitRatios,
    max_length: Option<usize>,
    seed: u64,
) -> Result<CorpusSplit, CorpusError> {
    ratios.validate()?;
    let (kept, excluded): (Vec<usize>, Vec<usize>) =
        (0..lengths.len()).partition(|&i| max_length.is_none_or(|m| lengths[i] <= m));
    if kept.is_empty() {
        return Err(CorpusError::TooFewDocuments { needed: 1, got: 0 });
    }
    let values: Vec<f64> = kept.iter().map(|&i| lengths[i] as f64).collect();
    let bins = doane_bin_count(&values);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for (&doc, &v) in kept.iter().zip(&values) {
        let b = if width > 0.0 { (((v - lo) / width) as usize).min(bins - 1) } else { 0 };
        members[b].push(doc);
    }

    let classes = ratios.as_array().iter().filter(|&&r| r > 0.0).count();
    let mut strata: Vec<(usize, usize)> = Vec::new();
    let mut merged_bins = Vec::new();
    let mut start = 0;
    let mut acc = 0;
    for (b, m) in members.iter().enumerate() {
        acc += m.len();
        if acc >= classes {
            strata.push((start, b + 1));
            start = b + 1;
            acc = 0;
        } else {
            merged_bins.push(b);
        }
    }
    if start < bins {
        match strata.last_mut() {
            Some(last) => last.1 = bins,
            None => strata.push((0, bins)),
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ra = ratios.as_array();
    let mut out: [Vec<usize>; 3] = Default::default();
    let mut stratum_counts = Vec::with_capacity(strata.len());
    for &(s, e) in &strata {
        let mut docs: Vec<usize> = members[s..e].iter().flatten().copied().collect();
        docs.sort_unstable();
        docs.shuffle(&mut rng);
        stratum_counts.push(docs.len());
        let counts = apportion(docs.len(), &ra);
        let mut offset = 0;
        for (class, &c) in counts.iter().enumerate() {
            out[class].extend_from_slice(&docs[offset..offset + c]);
            offset += c;
        }
    }
    for v in &mut out {
        v.sort_unstable();
    }
    let [train, validation, test] = out;
    Ok(CorpusSplit {
        train,
        validation,
        test,
        bin_edges,
        strata,
        stratum_counts,
        merged_bins,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_stratum() {
        let split = stratified_split(&[40; 100], SplitRatios::default(), None, 1).unwrap();
        assert_eq!((split.train.len(), split.validation.len(), split.test.len()), (80, 10, 10));
        assert_eq!(split.strata.len(), 1);
    }

    #[test]
    fn bimodal_lengths_split_per_mode() {
        let mut lengths = vec![100; 10];
        lengths.extend(vec![400; 10]);
        let ratios = SplitRatios::new(0.5, 0.25, 0.25).unwrap();
        let split = stratified_split(&lengths, ratios, None, 9).unwrap();
        assert_eq!(split.strata.len(), 2);
        for (mode, range) in [(0, 0..10), (1, 10..20)] {
            let count = |v: &[usize]| v.iter().filter(|&&i| range.contains(&i)).count();
            let (tr, va, te) = (count(&split.train), count(&split.validation), count(&split.test));
            assert_eq!(tr, 5, "mode {mode}");
            assert!((2..=3).contains(&va) && (2..=3).contains(&te) && va + te == 5);
        }
    }

    #[test]
    fn long_documents_are_excluded() {
        let split = stratified_split(&[10, 20, 500, 30, 40], SplitRatios::default(), Some(450), 0).unwrap();
        assert_eq!(split.excluded, vec![2]);
        assert!(!split.train.contains(&2));
    }

    #[test]
    fn doane_counts() {
        // symmetric sample: skew term vanishes
        let v: Vec<f64> = (0..16).map(f64::from).collect();
        assert_eq!(doane_bin_count(&v), 5);
        assert_eq!(doane_bin_count(&[3.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(SplitRatios::new(0.5, 0.5, 0.5).is_err());
        assert!(SplitRatios::new(1.2, -0.1, -0.1).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(lengths in prop::collection::vec(1usize..300, 3..200), seed in 0u64..1000) {
            let split = stratified_split(&lengths, SplitRatios::default(), None, seed).unwrap();
            let mut all: Vec<usize> = split.train.iter().chain(&split.validation).chain(&split.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..lengths.len()).collect::<Vec<_>>());
        }

        #[test]
        fn per_stratum_counts_within_one(lengths in prop::collection::vec(1usize..300, 3..200), seed in 0u64..1000) {
            let ratios = SplitRatios::default();
            let split = stratified_split(&lengths, ratios, None, seed).unwrap();
            let values: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
            let bins = split.bin_edges.len() - 1;
            let lo = split.bin_edges[0];
            let width = (split.bin_edges[bins] - lo) / bins as f64;
            let bin_of = |i: usize| if width > 0.0 { (((values[i] - lo) / width) as usize).min(bins - 1) } else { 0 };
            for (s, &(a, b)) in split.strata.iter().enumerate() {
                let inside = |v: &Vec<usize>| v.iter().filter(|&&i| (a..b).contains(&bin_of(i))).count() as f64;
                let n = split.stratum_counts[s] as f64;
                for (v, r) in [(&split.train, ratios.train), (&split.validation, ratios.validation), (&split.test, ratios.test)] {
                    prop_assert!((inside(v) - r * n).abs() < 1.0 + 1e-9);
                }
            }
        }
    }
}
