use std::collections::{BTreeMap, BTreeSet};

use super::metrics::ProbeId;
use super::EvalError;

/// Verification pairs `(i, j, genuine)` over sample indices.
#[derive(Clone, Debug, PartialEq)]
pub struct VerificationProtocol {
    pub pairs: Vec<(usize, usize, bool)>,
}

impl VerificationProtocol {
    /// Every unordered pair of distinct samples.
    pub fn all_pairs(labels: &[u32]) -> Result<Self, EvalError> {
        let n = labels.len();
        let pairs = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, labels[i] == labels[j]))
            .collect();
        Self::new(labels, pairs)
    }

    /// Checks indices and genuine/impostor tags against the labels.
    pub fn new(labels: &[u32], pairs: Vec<(usize, usize, bool)>) -> Result<Self, EvalError> {
        for &(i, j, genuine) in &pairs {
            if i >= labels.len() || j >= labels.len() {
                return Err(EvalError::Protocol(format!("pair ({i}, {j}) out of range")));
            }
            if (labels[i] == labels[j]) != genuine {
                return Err(EvalError::Protocol(format!(
                    "pair ({i}, {j}) tagged {} but labels are {} and {}",
                    if genuine { "genuine" } else { "impostor" },
                    labels[i],
                    labels[j]
                )));
            }
        }
        let p = Self { pairs };
        if p.genuine_count() == 0 || p.genuine_count() == p.pairs.len() {
            return Err(EvalError::Protocol("verification needs genuine and impostor pairs".into()));
        }
        Ok(p)
    }

    pub fn genuine_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.2).count()
    }

    pub fn impostor_count(&self) -> usize {
        self.pairs.len() - self.genuine_count()
    }
}

/// Gallery and probe sample indices with their identities.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentificationSplit {
    pub gallery: Vec<usize>,
    pub gallery_ids: Vec<u32>,
    pub probes: Vec<usize>,
    pub probe_ids: Vec<ProbeId>,
}

fn by_class(labels: &[u32]) -> BTreeMap<u32, Vec<usize>> {
    let mut classes: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        classes.entry(l).or_default().push(i);
    }
    classes
}

impl IdentificationSplit {
    /// The first sample of each class enrolls; every other sample probes.
    pub fn closed_set(labels: &[u32]) -> Result<Self, EvalError> {
        let mut split = Self::empty();
        for (class, members) in by_class(labels) {
            split.gallery.push(members[0]);
            split.gallery_ids.push(class);
            for &i in &members[1..] {
                split.probes.push(i);
                split.probe_ids.push(ProbeId::Known(class));
            }
        }
        split.validate()?;
        Ok(split)
    }

    /// The lower half of the classes (rounded up) is known: first sample
    /// enrolled, the rest probe. Every sample of the remaining classes is
    /// an unknown probe.
    pub fn open_set(labels: &[u32]) -> Result<Self, EvalError> {
        let classes = by_class(labels);
        let known = classes.len().div_ceil(2);
        let mut split = Self::empty();
        for (rank, (class, members)) in classes.into_iter().enumerate() {
            if rank < known {
                split.gallery.push(members[0]);
                split.gallery_ids.push(class);
                for &i in &members[1..] {
                    split.probes.push(i);
                    split.probe_ids.push(ProbeId::Known(class));
                }
            } else {
                for i in members {
                    split.probes.push(i);
                    split.probe_ids.push(ProbeId::Unknown);
                }
            }
        }
        split.validate()?;
        Ok(split)
    }

    fn empty() -> Self {
        Self { gallery: Vec::new(), gallery_ids: Vec::new(), probes: Vec::new(), probe_ids: Vec::new() }
    }

    /// Non-empty gallery and probes; every known probe identity enrolled.
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.gallery.is_empty() {
            return Err(EvalError::Protocol("empty gallery".into()));
        }
        if self.probes.is_empty() {
            return Err(EvalError::Protocol("no probes".into()));
        }
        let enrolled: BTreeSet<u32> = self.gallery_ids.iter().copied().collect();
        for (k, id) in self.probe_ids.iter().enumerate() {
            if let ProbeId::Known(y) = id {
                if !enrolled.contains(y) {
                    return Err(EvalError::Protocol(format!("probe {k} identity {y} is not in the gallery")));
                }
            }
        }
        Ok(())
    }

    /// Also checks that unknown probes' true identities are absent from
    /// the gallery.
    pub fn validate_against(&self, labels: &[u32]) -> Result<(), EvalError> {
        self.validate()?;
        let enrolled: BTreeSet<u32> = self.gallery_ids.iter().copied().collect();
        for (&i, id) in self.probes.iter().zip(&self.probe_ids) {
            let y = *labels.get(i).ok_or_else(|| EvalError::Protocol(format!("probe index {i} out of range")))?;
            match id {
                ProbeId::Unknown if enrolled.contains(&y) => {
                    return Err(EvalError::Protocol(format!("unknown probe {i} has enrolled identity {y}")))
                }
                ProbeId::Known(k) if *k != y => {
                    return Err(EvalError::Protocol(format!("probe {i} tagged {k} but labeled {y}")))
                }
                _ => {}
            }
        }
        for (&i, &y) in self.gallery.iter().zip(&self.gallery_ids) {
            if labels.get(i) != Some(&y) {
                return Err(EvalError::Protocol(format!("gallery entry {i} tagged {y}")));
            }
        }
        Ok(())
    }

    pub fn known_ids(&self) -> Option<Vec<u32>> {
        self.probe_ids
            .iter()
            .map(|p| match p {
                ProbeId::Known(y) => Some(*y),
                ProbeId::Unknown => None,
            })
            .collect()
    }

    pub fn has_unknown(&self) -> bool {
        self.probe_ids.contains(&ProbeId::Unknown)
    }
}
