use super::*;
use crate::data::{generate, SyntheticSpec};
use crate::model::ModelConfig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exhaustive threshold sweep: smallest candidate with admission rate
/// at most `alpha`.
fn oracle_rate(pos: &[f64], neg: &[f64], alpha: f64) -> f64 {
    let mut candidates: Vec<f64> = pos.iter().chain(neg).copied().collect();
    candidates.push(f64::NEG_INFINITY);
    candidates.push(f64::INFINITY);
    candidates.sort_by(f64::total_cmp);
    let rate = |xs: &[f64], t: f64| xs.iter().filter(|&&s| s >= t).count() as f64 / xs.len() as f64;
    let t = candidates.into_iter().find(|&t| rate(neg, t) <= alpha).unwrap();
    rate(pos, t)
}

fn sorted_gallery(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order
}

fn oracle_tpir(scores: &Tensor, gallery_ids: &[u32], probes: &[ProbeId], alpha: f64) -> f64 {
    let g = gallery_ids.len();
    let mut known = Vec::new();
    let mut unknown = Vec::new();
    for (i, p) in probes.iter().enumerate() {
        let row = &scores.data()[i * g..(i + 1) * g];
        let top = sorted_gallery(row)[0];
        match p {
            ProbeId::Known(y) => known.push(if gallery_ids[top] == *y { row[top] } else { f64::NAN }),
            ProbeId::Unknown => unknown.push(row[top]),
        }
    }
    // wrong-identity probes never count: drop them from the positives but
    // keep them in the denominator
    let n_known = known.len() as f64;
    let correct: Vec<f64> = known.into_iter().filter(|s| !s.is_nan()).collect();
    if correct.is_empty() {
        return 0.0;
    }
    oracle_rate(&correct, &unknown, alpha) * correct.len() as f64 / n_known
}

fn oracle_rank(scores: &Tensor, gallery_ids: &[u32], probes: &[u32], k: usize) -> f64 {
    let g = gallery_ids.len();
    let hits = probes
        .iter()
        .enumerate()
        .filter(|&(i, y)| {
            let order = sorted_gallery(&scores.data()[i * g..(i + 1) * g]);
            order.iter().take(k).any(|&j| gallery_ids[j] == *y)
        })
        .count();
    hits as f64 / probes.len() as f64
}

fn discrete_scores(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-8..=8) as f64 / 8.0).collect()
}

#[test]
fn score_examples() {
    assert_eq!(score(&[2.0, 3.0], &[2.0, 3.0]).unwrap(), 1.0);
    assert_eq!(score(&[2.0, 3.0], &[-2.0, -3.0]).unwrap(), -1.0);
    assert!((score(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    assert!(matches!(score(&[0.0, 0.0], &[1.0, 1.0]), Err(EvalError::Degenerate(_))));
}

#[test]
fn tpr_examples() {
    assert_eq!(tpr_at_fpr(&[0.9, 0.8], &[0.1, 0.2], &[0.01]).unwrap(), vec![1.0]);
    let g = [0.9, 0.7, 0.4];
    let i = [0.8, 0.3, 0.2, 0.1];
    // smallest admissible threshold is 0.4: one impostor (0.8) at or above it
    let got = tpr_at_fpr(&g, &i, &[0.25]).unwrap()[0];
    assert_eq!(got, 1.0);
    assert_eq!(got, oracle_rate(&g, &i, 0.25));
    // below one admitted impostor the threshold must sit above 0.8
    assert_eq!(tpr_at_fpr(&g, &i, &[0.2]).unwrap()[0], 1.0 / 3.0);
    assert_eq!(tpr_at_fpr(&[-1.0, 0.0], &[1.0, 1.0], &[1.0]).unwrap(), vec![1.0]);
    assert!(matches!(tpr_at_fpr(&[], &i, &[0.1]), Err(EvalError::Protocol(_))));
    assert!(matches!(tpr_at_fpr(&g, &[], &[0.1]), Err(EvalError::Protocol(_))));
}

#[test]
fn tpr_with_ties_at_threshold() {
    let g = [0.5, 0.5, 0.6];
    let i = [0.5, 0.5, 0.1, 0.1];
    for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
        assert_eq!(tpr_at_fpr(&g, &i, &[alpha]).unwrap()[0], oracle_rate(&g, &i, alpha), "{alpha}");
    }
}

#[test]
fn roc_is_monotone_and_spans_corners() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = discrete_scores(&mut rng, 30);
    let i = discrete_scores(&mut rng, 40);
    let roc = roc_curve(&g, &i).unwrap();
    assert_eq!(roc.last().unwrap(), &(1.0, 1.0));
    for w in roc.windows(2) {
        assert!(w[0].0 < w[1].0 && w[0].1 <= w[1].1);
    }
    for &(fpr, tpr) in &roc {
        assert_eq!(tpr, oracle_rate(&g, &i, fpr));
    }
}

#[test]
fn open_set_examples() {
    // gallery ids 0, 1, 2; two known probes, two unknown
    let scores = Tensor::from_rows(&[
        vec![0.9, 0.1, 0.0],
        vec![0.2, 0.8, 0.1],
        vec![0.3, 0.2, 0.1],
        vec![0.0, 0.1, 0.2],
    ]);
    let gallery = [0, 1, 2];
    let probes = [ProbeId::Known(0), ProbeId::Known(1), ProbeId::Unknown, ProbeId::Unknown];
    assert_eq!(open_set_identify(&scores, &gallery, &probes, &[0.0, 0.5, 1.0]).unwrap(), vec![1.0, 1.0, 1.0]);

    let wrong = [ProbeId::Known(0), ProbeId::Known(2), ProbeId::Unknown, ProbeId::Unknown];
    assert_eq!(open_set_identify(&scores, &gallery, &wrong, &[1.0]).unwrap(), vec![0.5]);

    // 3-gallery / 4-probe case with overlapping unknown scores
    let scores = Tensor::from_rows(&[
        vec![0.6, 0.4, 0.1],
        vec![0.1, 0.3, 0.5],
        vec![0.7, 0.0, 0.2],
        vec![0.2, 0.4, 0.1],
    ]);
    let probes = [ProbeId::Known(0), ProbeId::Known(2), ProbeId::Unknown, ProbeId::Unknown];
    for alpha in [0.0, 0.5, 1.0] {
        let got = open_set_identify(&scores, &gallery, &probes, &[alpha]).unwrap()[0];
        assert_eq!(got, oracle_tpir(&scores, &gallery, &probes, alpha));
    }
    assert_eq!(open_set_identify(&scores, &gallery, &probes, &[0.0]).unwrap(), vec![0.0]);
    assert_eq!(open_set_identify(&scores, &gallery, &probes, &[0.5]).unwrap(), vec![1.0]);

    let no_unknown = [ProbeId::Known(0); 4];
    assert!(matches!(open_set_identify(&scores, &gallery, &no_unknown, &[0.1]), Err(EvalError::Protocol(_))));
}

#[test]
fn rank_examples() {
    let scores = Tensor::from_rows(&[vec![0.1, 0.9, 0.3], vec![0.5, 0.5, 0.5]]);
    let gallery = [4, 5, 6];
    assert_eq!(rank_k(&scores, &gallery, &[4, 6], &[1, 2, 3]).unwrap(), vec![0.0, 0.0, 1.0]);
    // ties go to the lower gallery index
    assert_eq!(probe_ranks(&scores, &gallery, &[5, 4]).unwrap(), vec![0, 0]);
    assert!(matches!(rank_k(&scores, &gallery, &[4, 9], &[1]), Err(EvalError::Protocol(_))));
    assert!(rank_k(&scores, &gallery, &[4, 5], &[0]).is_err());
}

#[test]
fn rank_on_embeddings_with_identical_mate() {
    let gallery = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
    let probes = Tensor::from_rows(&[vec![0.0, 1.0]]);
    let s = score_matrix(&probes, &gallery).unwrap();
    assert_eq!(rank_k(&s, &[0, 1, 2], &[1], &[1]).unwrap(), vec![1.0]);
    assert_eq!(rank_k(&s, &[0, 1, 2], &[0], &[3]).unwrap(), vec![1.0]);
}

fn stats_oracle(z: &Tensor, zm: &Tensor, labels: &[u32]) -> (f64, f64, f64, f64) {
    let n = labels.len();
    let mirror = (0..n).map(|i| score(z.row(i), zm.row(i)).unwrap()).sum::<f64>() / n as f64;
    let (mut intra, mut ni, mut inter, mut no) = (0.0, 0, 0.0, 0);
    for i in 0..n {
        for j in 0..n {
            if i < j {
                let s = score(z.row(i), z.row(j)).unwrap();
                if labels[i] == labels[j] {
                    intra += s;
                    ni += 1;
                } else {
                    inter += s;
                    no += 1;
                }
            }
        }
    }
    let len = (0..n).map(|i| z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>() / n as f64;
    (mirror, intra / ni as f64, inter / no as f64, len)
}

fn random_embeddings(seed: u64, n: usize, d: usize) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![n, d], (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn stats_match_pair_enumeration() {
    let labels: Vec<u32> = (0..12).map(|i| i / 4).collect();
    let z = random_embeddings(1, 12, 5);
    let zm = random_embeddings(2, 12, 5);
    let s = embedding_stats(&z, &zm, &labels).unwrap();
    let (m, a, e, l) = stats_oracle(&z, &zm, &labels);
    assert!((s.mirror_similarity - m).abs() < 1e-12);
    assert!((s.intra_class_similarity - a).abs() < 1e-12);
    assert!((s.inter_class_similarity - e).abs() < 1e-12);
    assert!((s.embedding_length - l).abs() < 1e-12);
    assert_eq!((s.intra_pairs, s.inter_pairs), (18, 48));
}

#[test]
fn stats_of_constant_embedding() {
    let z = Tensor::from_rows(&vec![vec![3.0, 4.0]; 6]);
    let s = embedding_stats(&z, &z, &[0, 0, 1, 1, 2, 2]).unwrap();
    assert_eq!(s.mirror_similarity, 1.0);
    assert_eq!(s.intra_class_similarity, 1.0);
    assert_eq!(s.inter_class_similarity, 1.0);
    assert_eq!(s.embedding_length, 5.0);
}

#[test]
fn stats_record_singleton_classes() {
    let z = random_embeddings(4, 5, 3);
    let s = embedding_stats(&z, &z, &[0, 0, 1, 2, 2]).unwrap();
    assert_eq!(s.skipped_classes, vec![1]);
    assert_eq!(s.intra_pairs, 2);
}

#[test]
fn stats_scale_behaviour() {
    let labels: Vec<u32> = (0..12).map(|i| i / 4).collect();
    let z = random_embeddings(5, 12, 4);
    let zm = random_embeddings(6, 12, 4);
    let base = embedding_stats(&z, &zm, &labels).unwrap();
    for factor in [2.0, 0.5] {
        let scaled = |t: &Tensor| t.map(|v| v * factor);
        let s = embedding_stats(&scaled(&z), &scaled(&zm), &labels).unwrap();
        assert_eq!(s.mirror_similarity, base.mirror_similarity);
        assert_eq!(s.intra_class_similarity, base.intra_class_similarity);
        assert_eq!(s.inter_class_similarity, base.inter_class_similarity);
        assert_eq!(s.embedding_length, base.embedding_length * factor);
        assert_ne!(s.embedding_length, base.embedding_length);
    }
}

#[test]
fn protocol_builders() {
    let labels = [3, 3, 4, 4, 4, 5, 6, 6];
    let v = VerificationProtocol::all_pairs(&labels).unwrap();
    assert_eq!(v.pairs.len(), 28);
    assert_eq!(v.genuine_count(), 1 + 3 + 1);
    assert!(VerificationProtocol::new(&labels, vec![(0, 2, true)]).is_err());
    assert!(VerificationProtocol::all_pairs(&[]).is_err());

    let open = IdentificationSplit::open_set(&labels).unwrap();
    assert_eq!(open.gallery_ids, vec![3, 4]);
    open.validate_against(&labels).unwrap();
    assert_eq!(open.probe_ids.iter().filter(|p| **p == ProbeId::Unknown).count(), 3);

    let closed = IdentificationSplit::closed_set(&labels).unwrap();
    assert_eq!(closed.gallery, vec![0, 2, 5, 6]);
    assert_eq!(closed.probes, vec![1, 3, 4, 7]);

    let mut bad = open.clone();
    bad.probe_ids[0] = ProbeId::Unknown;
    assert!(bad.validate_against(&labels).is_err());
}

fn tiny_model(input: usize) -> Model {
    let cfg = ModelConfig { input_dim: input, hidden: vec![8], embed_dim: 4, num_classes: 3, ..ModelConfig::default() };
    Model::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0))
}

#[test]
fn evaluate_produces_consistent_report() {
    let b = generate(&SyntheticSpec { side: 4, source_classes: 3, target_classes: 4, samples_per_class: 5, ..SyntheticSpec::default() }).unwrap();
    let mut m = tiny_model(16);
    let cfg = EvalConfig { fpr_targets: vec![1e-3, 1e-2, 1e-1], ..EvalConfig::default() };
    let r = evaluate(&mut m, &b.target_eval(), &cfg).unwrap();
    let tprs: Vec<f64> = r.verification.points.iter().map(|p| p.1).collect();
    assert!(tprs.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(r.verification.genuine_pairs, 4 * 10);
    assert_eq!(r.verification.lowest_measurable().unwrap().0, 1e-2);
    assert!(r.closed_set.points[0].1 <= r.closed_set.points[1].1);
    let text = r.to_text();
    assert!(text.contains("[verification]") && text.contains("rank_5:") && text.contains("tpir@fpir=0.01:"));
    assert!(r.roc_csv().starts_with("fpr,tpr\n0,"));
    assert_eq!(evaluate(&mut m, &b.target_eval(), &cfg).unwrap(), r);

    assert!(matches!(evaluate(&mut m, &b.target, &cfg), Err(EvalError::Protocol(_))));
    let mut wide = tiny_model(25);
    let err = evaluate(&mut wide, &b.target_eval(), &cfg).unwrap_err().to_string();
    assert!(err.contains("25") && err.contains("16"), "{err}");
}

#[test]
fn embeddings_csv_round_trips_values() {
    let z = random_embeddings(9, 3, 2);
    let csv = embeddings_csv(&z, Some(&[7, 8, 9]));
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[1][0], "8");
    assert_eq!(rows[2][2].parse::<f64>().unwrap(), z.row(2)[1]);
}

proptest! {
    #[test]
    fn tpr_matches_oracle(seed in any::<u64>(), ng in 1usize..60, ni in 1usize..60) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let g = discrete_scores(&mut r, ng);
        let i = discrete_scores(&mut r, ni);
        let targets: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).chain([1.0 / ni as f64]).collect();
        let got = tpr_at_fpr(&g, &i, &targets).unwrap();
        for (a, t) in targets.iter().zip(&got) {
            prop_assert_eq!(*t, oracle_rate(&g, &i, *a));
        }
        let mut sorted = targets.clone();
        sorted.sort_by(f64::total_cmp);
        let mono = tpr_at_fpr(&g, &i, &sorted).unwrap();
        prop_assert!(mono.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn identification_matches_oracle(seed in any::<u64>(), gallery in 1usize..8, probes in 2usize..20) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let scores = Tensor::new(vec![probes, gallery], discrete_scores(&mut r, probes * gallery)).unwrap();
        let ids: Vec<u32> = (0..gallery).map(|_| r.random_range(0..4)).collect();
        let closed: Vec<u32> = (0..probes).map(|_| ids[r.random_range(0..gallery)]).collect();
        for k in 1..=gallery {
            prop_assert_eq!(rank_k(&scores, &ids, &closed, &[k]).unwrap()[0], oracle_rank(&scores, &ids, &closed, k));
        }
        let mut open: Vec<ProbeId> = closed.iter().map(|&y| ProbeId::Known(y)).collect();
        open[0] = ProbeId::Unknown;
        open[probes - 1] = ProbeId::Known(closed[probes - 1]);
        if probes > 2 { open[1] = ProbeId::Unknown; }
        for alpha in [0.0, 0.1, 0.5, 1.0] {
            prop_assert_eq!(
                open_set_identify(&scores, &ids, &open, &[alpha]).unwrap()[0],
                oracle_tpir(&scores, &ids, &open, alpha)
            );
        }
    }

    #[test]
    fn score_is_symmetric(seed in any::<u64>()) {
        let z = random_embeddings(seed, 2, 6);
        let (a, b) = (score(z.row(0), z.row(1)).unwrap(), score(z.row(1), z.row(0)).unwrap());
        prop_assert!((a - b).abs() <= 1e-15);
        prop_assert!((-1.0..=1.0).contains(&a));
    }
}
