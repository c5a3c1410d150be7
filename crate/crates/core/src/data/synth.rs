use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{mirror, DataError, Domain, DomainDataset};

/// Parameters of the synthetic two-domain benchmark.
///
/// Each identity is a smooth template built from Gaussian blobs: a
/// left/right mirrored set (the symmetric "face" structure) plus a few
/// unpaired blobs that make every template horizontally asymmetric.
/// Samples add a random horizontal illumination ramp and pixel noise.
/// Target samples then go through the domain shift: stronger illumination,
/// contrast scaling about mid-gray, a brightness offset and a box blur.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub side: usize,
    pub source_classes: usize,
    pub target_classes: usize,
    pub samples_per_class: usize,
    /// Mirrored blob pairs per template.
    pub symmetric_blobs: usize,
    /// Unpaired blobs per template.
    pub asymmetric_blobs: usize,
    /// Amplitude of the unpaired blobs relative to the mirrored ones.
    pub asymmetric_strength: f64,
    pub noise_std: f64,
    /// Standard deviation of the per-sample illumination ramp amplitude.
    pub source_illumination: f64,
    pub target_illumination: f64,
    pub target_brightness: f64,
    pub target_contrast: f64,
    pub target_blur: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            side: 16,
            source_classes: 20,
            target_classes: 10,
            samples_per_class: 30,
            symmetric_blobs: 4,
            asymmetric_blobs: 2,
            asymmetric_strength: 0.2,
            noise_std: 0.1,
            source_illumination: 0.05,
            target_illumination: 0.25,
            target_brightness: 0.15,
            target_contrast: 0.7,
            target_blur: 3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |field, message: &str| Err(DataError::Spec { field, message: message.into() });
        if self.side < 2 {
            return bad("side", "must be at least 2");
        }
        if self.source_classes == 0 {
            return bad("source_classes", "must be at least 1");
        }
        if self.target_classes == 0 {
            return bad("target_classes", "must be at least 1");
        }
        if self.samples_per_class == 0 {
            return bad("samples_per_class", "must be at least 1");
        }
        if self.asymmetric_blobs == 0 {
            return bad("asymmetric_blobs", "must be at least 1 so templates are asymmetric");
        }
        if !(self.asymmetric_strength > 0.0 && self.asymmetric_strength.is_finite()) {
            return bad("asymmetric_strength", "must be positive so templates are asymmetric");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std", "must be a finite non-negative number");
        }
        for (field, v) in [
            ("source_illumination", self.source_illumination),
            ("target_illumination", self.target_illumination),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(field, "must be a finite non-negative number");
            }
        }
        if !(self.target_contrast > 0.0 && self.target_contrast.is_finite()) {
            return bad("target_contrast", "must be positive");
        }
        if !self.target_brightness.is_finite() {
            return bad("target_brightness", "must be finite");
        }
        if self.target_blur == 0 {
            return bad("target_blur", "must be at least 1 (1 = no blur)");
        }
        Ok(())
    }

    pub fn source_range(&self) -> (u32, u32) {
        (0, self.source_classes as u32)
    }

    pub fn target_range(&self) -> (u32, u32) {
        let lo = self.source_classes as u32;
        (lo, lo + self.target_classes as u32)
    }
}

/// Output of [`generate`]. `target` is unlabeled; `target_labels` holds
/// the identity of each target sample for evaluation only.
#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub source: DomainDataset,
    pub target: DomainDataset,
    pub target_labels: Vec<u32>,
}

impl Benchmark {
    /// Labeled copy of the target set for evaluation protocols.
    pub fn target_eval(&self) -> DomainDataset {
        self.target.clone().with_labels(self.target_labels.clone()).expect("label count")
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<Benchmark, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.source_classes + spec.target_classes;
    let templates: Vec<Vec<f64>> = (0..total).map(|_| template(spec, &mut rng)).collect();

    let (source_templates, target_templates) = templates.split_at(spec.source_classes);
    let (src_samples, src_labels) =
        draw_samples(spec, source_templates, 0, spec.source_illumination, &mut rng);
    let (mut tgt_samples, tgt_labels) = draw_samples(
        spec,
        target_templates,
        spec.source_classes as u32,
        spec.target_illumination,
        &mut rng,
    );
    let dim = spec.side * spec.side;
    for img in tgt_samples.chunks_exact_mut(dim) {
        shift_domain(spec, img);
    }

    let source = DomainDataset {
        side: spec.side,
        samples: src_samples,
        labels: Some(src_labels),
        class_range: spec.source_range(),
        domain: Domain::Source,
    };
    let target = DomainDataset {
        side: spec.side,
        samples: tgt_samples,
        labels: None,
        class_range: spec.target_range(),
        domain: Domain::Target,
    };
    Ok(Benchmark { source, target, target_labels: tgt_labels })
}

fn blob(img: &mut [f64], side: usize, row: f64, col: f64, width: f64, amp: f64) {
    for r in 0..side {
        for c in 0..side {
            let d2 = (r as f64 - row).powi(2) + (c as f64 - col).powi(2);
            img[r * side + c] += amp * (-d2 / (2.0 * width * width)).exp();
        }
    }
}

/// Random asymmetric identity template with values spread over `[0.2, 0.8]`.
fn template(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let side = spec.side;
    let s = side as f64;
    loop {
        let mut img = vec![0.0; side * side];
        for _ in 0..spec.symmetric_blobs {
            let row = rng.random_range(0.0..s);
            let col = rng.random_range(0.0..s / 2.0);
            let width = rng.random_range(0.08 * s..0.2 * s);
            let amp = rng.random_range(-1.0..1.0);
            blob(&mut img, side, row, col, width, amp);
            blob(&mut img, side, row, s - 1.0 - col, width, amp);
        }
        for _ in 0..spec.asymmetric_blobs {
            let row = rng.random_range(0.0..s);
            let col = rng.random_range(0.0..s);
            let width = rng.random_range(0.08 * s..0.2 * s);
            let amp = spec.asymmetric_strength * rng.random_range(-1.0..1.0);
            blob(&mut img, side, row, col, width, amp);
        }
        let (lo, hi) = img.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        if hi - lo < 1e-6 {
            continue;
        }
        for v in &mut img {
            *v = 0.2 + 0.6 * (*v - lo) / (hi - lo);
        }
        let flipped = mirror(&img, side);
        let asym = img.iter().zip(&flipped).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if asym > 0.05 {
            return img;
        }
    }
}

fn draw_samples(
    spec: &SyntheticSpec,
    templates: &[Vec<f64>],
    first_label: u32,
    illumination: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<u32>) {
    let side = spec.side;
    let noise = Normal::new(0.0, spec.noise_std).expect("validated");
    let illum = Normal::new(0.0, illumination).expect("validated");
    let half = (side as f64 - 1.0) / 2.0;
    let mut samples = Vec::with_capacity(templates.len() * spec.samples_per_class * side * side);
    let mut labels = Vec::with_capacity(templates.len() * spec.samples_per_class);
    for (k, t) in templates.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let ramp = illum.sample(rng);
            for r in 0..side {
                for c in 0..side {
                    let light = ramp * (c as f64 - half) / half;
                    let v = t[r * side + c] + light + noise.sample(rng);
                    samples.push(v.clamp(0.0, 1.0));
                }
            }
            labels.push(first_label + k as u32);
        }
    }
    (samples, labels)
}

fn shift_domain(spec: &SyntheticSpec, img: &mut [f64]) {
    for v in img.iter_mut() {
        *v = spec.target_contrast * (*v - 0.5) + 0.5 + spec.target_brightness;
    }
    if spec.target_blur > 1 {
        box_blur(img, spec.side, spec.target_blur);
    }
    for v in img.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Separable box blur of the given width with edge replication.
fn box_blur(img: &mut [f64], side: usize, width: usize) {
    let before = width / 2;
    let offsets: Vec<isize> = (0..width).map(|k| k as isize - before as isize).collect();
    let clampi = |i: isize| i.clamp(0, side as isize - 1) as usize;
    let mut tmp = vec![0.0; img.len()];
    for r in 0..side {
        for c in 0..side {
            let s: f64 = offsets.iter().map(|&o| img[r * side + clampi(c as isize + o)]).sum();
            tmp[r * side + c] = s / width as f64;
        }
    }
    for r in 0..side {
        for c in 0..side {
            let s: f64 = offsets.iter().map(|&o| tmp[clampi(r as isize + o) * side + c]).sum();
            img[r * side + c] = s / width as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            side: 8,
            source_classes: 10,
            target_classes: 5,
            samples_per_class: 4,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let bits = |d: &DomainDataset| d.samples.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.source), bits(&b.source));
        let c = generate(&SyntheticSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.source.samples, c.source.samples);
    }

    #[test]
    fn label_sets_are_disjoint() {
        let b = generate(&small()).unwrap();
        let src: HashSet<u32> = b.source.labels.clone().unwrap().into_iter().collect();
        let tgt: HashSet<u32> = b.target_labels.iter().copied().collect();
        assert_eq!(src, (0..10).collect());
        assert_eq!(tgt, (10..15).collect());
        assert!(src.is_disjoint(&tgt));
        assert!(b.target.labels.is_none());
        assert_eq!(b.source.len(), 40);
        assert_eq!(b.target.len(), 20);
    }

    #[test]
    fn zero_noise_samples_of_a_class_match() {
        let spec = SyntheticSpec {
            noise_std: 0.0,
            source_illumination: 0.0,
            target_illumination: 0.0,
            ..small()
        };
        let b = generate(&spec).unwrap();
        assert_eq!(b.source.sample(0), b.source.sample(1));
        assert_eq!(b.target.sample(0), b.target.sample(3));
        assert_ne!(b.source.sample(0), b.source.sample(4));
    }

    #[test]
    fn templates_are_asymmetric_and_in_range() {
        let spec = small();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let t = template(&spec, &mut rng);
            assert_ne!(mirror(&t, spec.side), t);
            assert!(t.iter().all(|v| (0.2 - 1e-12..=0.8 + 1e-12).contains(v)));
        }
        let b = generate(&spec).unwrap();
        assert!(b.source.samples.iter().chain(&b.target.samples).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn invalid_specs_name_the_field() {
        for (spec, field) in [
            (SyntheticSpec { target_classes: 0, ..small() }, "target_classes"),
            (SyntheticSpec { source_classes: 0, ..small() }, "source_classes"),
            (SyntheticSpec { samples_per_class: 0, ..small() }, "samples_per_class"),
            (SyntheticSpec { target_blur: 0, ..small() }, "target_blur"),
        ] {
            match generate(&spec) {
                Err(DataError::Spec { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected spec error for {field}: {other:?}"),
            }
        }
    }

    #[test]
    fn box_blur_preserves_constant_images() {
        let mut img = vec![0.4; 25];
        box_blur(&mut img, 5, 3);
        assert!(img.iter().all(|v| (v - 0.4).abs() < 1e-15));
    }
}
