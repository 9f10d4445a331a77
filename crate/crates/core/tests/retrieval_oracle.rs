//! Retrieval against a brute-force double loop.

mod common;

use prompteer::retrieval::{
    plan_frames, retrieve, Aggregation, EmbeddingVector, ObjectIndex,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn random_vector(rng: &mut StdRng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return v;
        }
    }
}

/// Plain double loop over every frame and entry, with its own normalization
/// and ranking code. Components round to f32 like the stored vectors do.
fn brute_force_top_k(
    frames: &[Vec<f32>],
    entries: &[(String, Vec<f32>)],
    top_k: usize,
) -> Vec<(String, f64)> {
    let normalize = |v: &[f32]| -> Vec<f32> {
        let norm = v.iter().map(|x| *x as f64 * *x as f64).sum::<f64>().sqrt();
        v.iter().map(|x| (*x as f64 / norm) as f32).collect()
    };
    let frames: Vec<Vec<f32>> = frames.iter().map(|f| normalize(f)).collect();
    let mut scored: Vec<(usize, f64)> = entries
        .iter()
        .enumerate()
        .map(|(i, (_, e))| {
            let e = normalize(e);
            let mut best = f64::NEG_INFINITY;
            for f in &frames {
                let dot: f64 = f
                    .iter()
                    .zip(&e)
                    .map(|(a, b)| *a as f64 * *b as f64)
                    .sum::<f64>()
                    .clamp(-1.0, 1.0);
                if dot > best {
                    best = dot;
                }
            }
            (i, best)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored
        .into_iter()
        .take(top_k.min(entries.len()))
        .map(|(i, s)| (entries[i].0.clone(), s))
        .collect()
}

#[test]
fn retrieve_matches_brute_force_on_random_instances() {
    let mut rng = StdRng::seed_from_u64(23);
    for trial in 0..200 {
        let dim = rng.random_range(2..=16usize);
        let n_entries = rng.random_range(1..=200usize);
        let n_frames = rng.random_range(1..=5usize);
        let top_k = rng.random_range(1..=n_entries + 3);

        let entries: Vec<(String, Vec<f32>)> = (0..n_entries)
            .map(|i| (format!("label{i}"), random_vector(&mut rng, dim)))
            .collect();
        let frames: Vec<Vec<f32>> = (0..n_frames)
            .map(|_| random_vector(&mut rng, dim))
            .collect();

        let index = ObjectIndex::new(
            entries
                .iter()
                .map(|(l, v)| (l.clone(), EmbeddingVector::new(v.clone()).unwrap()))
                .collect(),
        )
        .unwrap();
        let frame_vecs: Vec<EmbeddingVector> = frames
            .iter()
            .map(|v| EmbeddingVector::new(v.clone()).unwrap())
            .collect();

        let got = retrieve(&frame_vecs, &index, top_k).unwrap();
        let want = brute_force_top_k(&frames, &entries, top_k);
        assert_eq!(got.ranked().len(), want.len(), "trial {trial}");
        for ((gl, gs), (wl, ws)) in got.ranked().iter().zip(&want) {
            assert_eq!(gl, wl, "trial {trial}");
            assert!((f64::from(*gs) - ws).abs() < 1e-4, "trial {trial}: {gs} vs {ws}");
            assert!((-1.0..=1.0).contains(&f64::from(*gs)));
        }
        // scores non-increasing
        for pair in got.ranked().windows(2) {
            assert!(pair[0].1 >= pair[1].1);
        }
    }
}

#[test]
fn retrieval_invariant_to_input_rescaling() {
    let mut rng = StdRng::seed_from_u64(29);
    let dim = 8;
    let entries: Vec<(String, Vec<f32>)> = (0..50)
        .map(|i| (format!("l{i}"), random_vector(&mut rng, dim)))
        .collect();
    let index = ObjectIndex::new(
        entries
            .iter()
            .map(|(l, v)| (l.clone(), EmbeddingVector::new(v.clone()).unwrap()))
            .collect(),
    )
    .unwrap();
    let frame = random_vector(&mut rng, dim);
    let scaled: Vec<f32> = frame.iter().map(|x| x * 37.5).collect();
    let a = retrieve(&[EmbeddingVector::new(frame).unwrap()], &index, 10).unwrap();
    let b = retrieve(&[EmbeddingVector::new(scaled).unwrap()], &index, 10).unwrap();
    assert_eq!(a.labels(), b.labels());
}

#[test]
fn mean_aggregation_differs_when_frames_disagree() {
    let index = ObjectIndex::new(vec![
        ("x".into(), EmbeddingVector::new(vec![1.0, 0.0]).unwrap()),
        ("y".into(), EmbeddingVector::new(vec![0.0, 1.0]).unwrap()),
    ])
    .unwrap();
    // first frame matches x exactly and is orthogonal to y; second frame
    // opposes x while half-matching y
    let frames = vec![
        EmbeddingVector::new(vec![1.0, 0.0]).unwrap(),
        EmbeddingVector::new(vec![-0.8, 0.6]).unwrap(),
    ];
    let max = prompteer::retrieval::retrieve_with(&frames, &index, 2, Aggregation::Max).unwrap();
    let mean = prompteer::retrieval::retrieve_with(&frames, &index, 2, Aggregation::Mean).unwrap();
    // max: x scores 1.0 > y 0.6; mean: x scores 0.1 < y 0.3
    assert_eq!(max.labels(), vec!["x".to_string(), "y".to_string()]);
    assert_eq!(mean.labels(), vec!["y".to_string(), "x".to_string()]);
}

#[test]
fn frame_plans() {
    assert_eq!(plan_frames(100, 3).indices(), &[0, 50, 99]);
    assert_eq!(plan_frames(1, 3).indices(), &[0]);
    assert_eq!(plan_frames(3, 3).indices(), &[0, 1, 2]);
    assert_eq!(plan_frames(2, 5).indices(), &[0, 1]); // dedup after rounding
    assert_eq!(plan_frames(7, 1).indices(), &[3]);
}
