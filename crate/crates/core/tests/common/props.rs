//! Property checks driven by a deterministic proptest runner, so the same
//! properties can back individual `#[test]`s and the acceptance summary.

use std::collections::HashMap;

use mvsel_core::{
    batch_loss, combiner_backward, combiner_forward, instance_attention, minmax_normalize,
    patch_attention, rank, recall_at_k, select_instance_feature, select_patch_feature,
    whc_backward, whc_forward, FeatureVector, GalleryEntry, InstanceSet, PatchSet, RankedResult,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::checks::{fv, random_combiner, random_whc};
use super::{random_vec, rng, Vector};

pub const CASES: u32 = 256;
const TOL: f64 = 1e-12;

type Check = Result<(), TestCaseError>;

fn run<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Check) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner =
        TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn vecs(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vector> {
    (0..n).map(|_| random_vec(r, d)).collect()
}

fn fvs(vs: &[Vector]) -> Vec<FeatureVector> {
    vs.iter().map(|v| fv(v)).collect()
}

fn scaled(v: &[f64], s: f64) -> FeatureVector {
    fv(&v.iter().map(|x| x * s).collect::<Vec<_>>())
}

/// `(seed, D, count)` with count in `lo..=hi`.
fn shape(lo: usize, hi: usize) -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 2usize..=12, lo..=hi)
}

pub fn selection_permutation_invariance() -> Result<(), String> {
    run(shape(1, 8), |(seed, d, n)| {
        let mut r = rng(seed);
        let cls = random_vec(&mut r, d);
        let items = vecs(&mut r, n, d);
        let (rt, dt) = (fv(&random_vec(&mut r, d)), fv(&random_vec(&mut r, d)));
        let mut shuffled = items.clone();
        shuffled.shuffle(&mut r);

        let a = select_patch_feature(&PatchSet::new(fv(&cls), fvs(&items)).unwrap(), &rt, &dt).unwrap();
        let b = select_patch_feature(&PatchSet::new(fv(&cls), fvs(&shuffled)).unwrap(), &rt, &dt).unwrap();
        prop_assert!(close(a.as_slice(), b.as_slice(), TOL));

        let a = select_instance_feature(&InstanceSet::new(d, fvs(&items)).unwrap(), &rt, &dt).unwrap();
        let b = select_instance_feature(&InstanceSet::new(d, fvs(&shuffled)).unwrap(), &rt, &dt).unwrap();
        prop_assert!(close(a.as_slice(), b.as_slice(), TOL));
        Ok(())
    })
}

pub fn guidance_swap_antisymmetry() -> Result<(), String> {
    run(shape(1, 8), |(seed, d, n)| {
        let mut r = rng(seed);
        let cls = random_vec(&mut r, d);
        let set = PatchSet::new(fv(&cls), fvs(&vecs(&mut r, n, d))).unwrap();
        let (a, b) = (fv(&random_vec(&mut r, d)), fv(&random_vec(&mut r, d)));
        let ab = select_patch_feature(&set, &a, &b).unwrap();
        let ba = select_patch_feature(&set, &b, &a).unwrap();
        let sum: Vec<f64> = ab.as_slice().iter().zip(ba.as_slice()).map(|(x, y)| x + y).collect();
        prop_assert!(close(&sum, &cls, TOL), "{sum:?} vs {cls:?}");
        Ok(())
    })
}

pub fn weight_scale_invariance() -> Result<(), String> {
    run((shape(2, 8), 0.01f64..100.0), |((seed, d, n), s)| {
        let mut r = rng(seed);
        let items = vecs(&mut r, n, d);
        let (rt, dt) = (random_vec(&mut r, d), random_vec(&mut r, d));
        let which = r.random_range(0..n);
        let mut one_scaled = fvs(&items);
        one_scaled[which] = scaled(&items[which], s);

        let cls = fv(&random_vec(&mut r, d));
        let base = patch_attention(&PatchSet::new(cls.clone(), fvs(&items)).unwrap(), &fv(&rt), &fv(&dt)).unwrap();
        for (set, rt_, dt_) in [
            (fvs(&items), scaled(&rt, s), fv(&dt)),
            (fvs(&items), fv(&rt), scaled(&dt, s)),
            (one_scaled.clone(), fv(&rt), fv(&dt)),
        ] {
            let p = patch_attention(&PatchSet::new(cls.clone(), set.clone()).unwrap(), &rt_, &dt_).unwrap();
            prop_assert!(close(&p.alpha_plus, &base.alpha_plus, TOL));
            prop_assert!(close(&p.alpha_minus, &base.alpha_minus, TOL));

            // min-max division can amplify last-bit differences in the cosines
            let base_i = instance_attention(&InstanceSet::new(d, fvs(&items)).unwrap(), &fv(&rt), &fv(&dt)).unwrap();
            let i = instance_attention(&InstanceSet::new(d, set).unwrap(), &rt_, &dt_).unwrap();
            prop_assert!(close(&i.net, &base_i.net, 1e-9));
        }
        Ok(())
    })
}

pub fn weight_ranges() -> Result<(), String> {
    run(shape(1, 8), |(seed, d, n)| {
        let mut r = rng(seed);
        let items = vecs(&mut r, n, d);
        let (rt, dt) = (fv(&random_vec(&mut r, d)), fv(&random_vec(&mut r, d)));
        let cls = fv(&random_vec(&mut r, d));
        let p = patch_attention(&PatchSet::new(cls, fvs(&items)).unwrap(), &rt, &dt).unwrap();
        prop_assert!(p.net().all(|w| (-2.0..=2.0).contains(&w)));
        let i = instance_attention(&InstanceSet::new(d, fvs(&items)).unwrap(), &rt, &dt).unwrap();
        prop_assert!(i.net.iter().all(|w| (-1.0..=1.0).contains(w)));
        prop_assert!(i.alpha_plus_norm.iter().chain(&i.alpha_minus_norm).all(|w| (0.0..=1.0).contains(w)));
        Ok(())
    })
}

pub fn degenerate_minmax() -> Result<(), String> {
    run((any::<u64>(), -1.0f64..1.0, 1usize..10), |(seed, c, n)| {
        prop_assert_eq!(minmax_normalize(&vec![c; n], 1e-12).unwrap(), vec![0.5; n]);
        // identical instances have identical cosines on both sides: net 0
        let mut r = rng(seed);
        let v = random_vec(&mut r, 4);
        let set = InstanceSet::new(4, vec![fv(&v); n]).unwrap();
        let (rt, dt) = (fv(&random_vec(&mut r, 4)), fv(&random_vec(&mut r, 4)));
        let a = instance_attention(&set, &rt, &dt).unwrap();
        prop_assert!(a.alpha_plus_norm.iter().all(|&w| w == 0.5));
        prop_assert!(a.net.iter().all(|&w| w == 0.0));
        Ok(())
    })
}

fn random_inputs(r: &mut ChaCha8Rng, k: usize, d: usize) -> Vec<FeatureVector> {
    fvs(&vecs(r, k, d))
}

pub fn beta_simplex() -> Result<(), String> {
    run((any::<u64>(), 2usize..=4, 1usize..=8, 1usize..=16, 0.1f64..20.0), |(seed, k, d, h, gain)| {
        let mut r = rng(seed);
        let mut p = random_combiner(&mut r, k, d, h);
        // large gains push the softmax towards saturation
        p.attn_head_weights.mapv_inplace(|w| w * gain);
        let xs = random_inputs(&mut r, k, d);
        let refs: Vec<&FeatureVector> = xs.iter().collect();
        let out = combiner_forward(&p, &refs).unwrap();
        prop_assert!(out.betas.iter().all(|&b| b >= 0.0));
        prop_assert!((out.betas.iter().sum::<f64>() - 1.0).abs() <= TOL);
        Ok(())
    })
}

pub fn zero_mlp_is_mean() -> Result<(), String> {
    run((any::<u64>(), 2usize..=4, 1usize..=8), |(seed, k, d)| {
        let mut r = rng(seed);
        let p = random_combiner(&mut r, k, d, 4 * d).with_zero_mlp();
        let xs = random_inputs(&mut r, k, d);
        let refs: Vec<&FeatureVector> = xs.iter().collect();
        let out = combiner_forward(&p, &refs).unwrap();
        let mean: Vec<f64> = (0..d)
            .map(|i| xs.iter().map(|x| x.as_slice()[i] / k as f64).sum())
            .collect();
        prop_assert!(close(out.output.as_slice(), &mean, TOL));
        Ok(())
    })
}

pub fn forward_determinism() -> Result<(), String> {
    run((any::<u64>(), 1usize..=8), |(seed, d)| {
        let mut r = rng(seed);
        let whc = random_whc(&mut r, 2, d, 4 * d);
        let x = random_inputs(&mut r, 4, d);
        let a = whc_forward(&whc, &x[0], &x[1], &x[2], &x[3]).unwrap();
        let b = whc_forward(&whc.clone(), &x[0], &x[1], &x[2], &x[3]).unwrap();
        let bits = |v: &FeatureVector| v.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.q), bits(&b.q));
        Ok(())
    })
}

pub fn parameter_disjointness() -> Result<(), String> {
    run((any::<u64>(), 1usize..=8), |(seed, d)| {
        let mut r = rng(seed);
        let mut whc = random_whc(&mut r, 2, d, 4 * d);
        // a mean-only final combiner routes exactly ½·∂L/∂q to each branch,
        // independent of the other branch's value
        whc.final_combiner = whc.final_combiner.with_zero_mlp();
        let x = random_inputs(&mut r, 4, d);
        let d_q = random_vec(&mut r, d);

        let mut other = whc.clone();
        other.tgt_combiner = random_combiner(&mut r, 3, d, 4 * d);

        let a = whc_forward(&whc, &x[0], &x[1], &x[2], &x[3]).unwrap();
        let b = whc_forward(&other, &x[0], &x[1], &x[2], &x[3]).unwrap();
        prop_assert_eq!(a.modification.output.as_slice(), b.modification.output.as_slice());
        let ga = whc_backward(&whc, &a, &d_q).unwrap();
        let gb = whc_backward(&other, &b, &d_q).unwrap();
        prop_assert!(ga.params.mod_combiner == gb.params.mod_combiner);

        // for any final combiner the modification block's local backward
        // depends only on its own parameters and upstream gradient
        let up = random_vec(&mut r, d);
        let la = combiner_backward(&whc.mod_combiner, &a.modification.cache, &up).unwrap();
        let lb = combiner_backward(&other.mod_combiner, &b.modification.cache, &up).unwrap();
        prop_assert!(la.params == lb.params);
        Ok(())
    })
}

pub fn loss_nonnegative() -> Result<(), String> {
    run((any::<u64>(), 1usize..=8, 2usize..=12, 0.001f64..10.0), |(seed, b, d, tau)| {
        let mut r = rng(seed);
        let qs = vecs(&mut r, b, d);
        let mut hs = vecs(&mut r, b, d);
        if r.random_bool(0.3) {
            hs = qs.clone();
        }
        let l = batch_loss(&qs, &hs, tau).unwrap();
        prop_assert!(l.loss >= 0.0 && l.per_sample.iter().all(|&x| x >= 0.0));
        Ok(())
    })
}

pub fn batch_permutation_equivariance() -> Result<(), String> {
    run((any::<u64>(), 1usize..=10, 2usize..=8, 0.01f64..2.0), |(seed, b, d, tau)| {
        let mut r = rng(seed);
        let qs = vecs(&mut r, b, d);
        let hs = vecs(&mut r, b, d);
        let mut perm: Vec<usize> = (0..b).collect();
        perm.shuffle(&mut r);
        let pq: Vec<Vector> = perm.iter().map(|&i| qs[i].clone()).collect();
        let ph: Vec<Vector> = perm.iter().map(|&i| hs[i].clone()).collect();
        let base = batch_loss(&qs, &hs, tau).unwrap();
        let moved = batch_loss(&pq, &ph, tau).unwrap();
        prop_assert!((base.loss - moved.loss).abs() <= TOL);
        for (slot, &i) in perm.iter().enumerate() {
            prop_assert!((moved.per_sample[slot] - base.per_sample[i]).abs() <= TOL);
            prop_assert!(close(&moved.d_queries[slot], &base.d_queries[i], TOL));
        }
        Ok(())
    })
}

fn gallery(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<GalleryEntry> {
    (0..n)
        .map(|i| GalleryEntry {
            id: format!("g{i:03}"),
            embedding: fv(&random_vec(r, d)),
        })
        .collect()
}

fn ranked_ids(q: &FeatureVector, g: &[GalleryEntry]) -> Vec<String> {
    rank("q", q, g).unwrap().ordered_gallery_ids
}

pub fn rank_scale_invariance() -> Result<(), String> {
    run((shape(1, 30), 0.01f64..100.0, 0.01f64..100.0), |((seed, d, n), sq, sg)| {
        let mut r = rng(seed);
        let q = random_vec(&mut r, d);
        let g = gallery(&mut r, n, d);
        let g_scaled: Vec<GalleryEntry> = g
            .iter()
            .map(|e| GalleryEntry {
                id: e.id.clone(),
                embedding: scaled(e.embedding.as_slice(), sg),
            })
            .collect();
        prop_assert_eq!(ranked_ids(&fv(&q), &g), ranked_ids(&scaled(&q, sq), &g_scaled));
        Ok(())
    })
}

/// Training logits are `cos/τ`; sorting them for any τ > 0 reproduces the
/// retrieval order, which never sees τ.
pub fn tau_rank_independence() -> Result<(), String> {
    run((shape(1, 30), 1e-3f64..100.0), |((seed, d, n), tau)| {
        let mut r = rng(seed);
        let q = fv(&random_vec(&mut r, d));
        let g = gallery(&mut r, n, d);
        let ranked = rank("q", &q, &g).unwrap();
        let mut by_logit: Vec<(f64, &str)> = g
            .iter()
            .map(|e| (mvsel_core::cosine(q.as_slice(), e.embedding.as_slice()).unwrap() / tau, e.id.as_str()))
            .collect();
        by_logit.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        let ids: Vec<&str> = by_logit.iter().map(|(_, id)| *id).collect();
        prop_assert_eq!(ranked.ordered_gallery_ids, ids);
        Ok(())
    })
}

fn random_results(r: &mut ChaCha8Rng, queries: usize, g: &[GalleryEntry], d: usize) -> (Vec<RankedResult>, HashMap<String, String>) {
    let mut truth = HashMap::new();
    let results = (0..queries)
        .map(|i| {
            let id = format!("q{i}");
            truth.insert(id.clone(), g[r.random_range(0..g.len())].id.clone());
            rank(&id, &fv(&random_vec(r, d)), g).unwrap()
        })
        .collect();
    (results, truth)
}

pub fn recall_monotone_in_k() -> Result<(), String> {
    run((shape(1, 40), 1usize..20), |((seed, d, n), queries)| {
        let mut r = rng(seed);
        let g = gallery(&mut r, n, d);
        let (results, truth) = random_results(&mut r, queries, &g, d);
        let ks: Vec<usize> = (1..=n + 2).collect();
        let rep = recall_at_k(&results, &truth, &ks).unwrap();
        prop_assert!(rep.recalls.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(rep.at(n), Some(1.0));
        Ok(())
    })
}

pub fn gallery_permutation_invariance() -> Result<(), String> {
    run((shape(1, 40), 1usize..20), |((seed, d, n), queries)| {
        let mut r = rng(seed);
        let g = gallery(&mut r, n, d);
        let qs = vecs(&mut r, queries, d);
        let mut shuffled = g.clone();
        shuffled.shuffle(&mut r);
        let truth: HashMap<String, String> = (0..queries)
            .map(|i| (format!("q{i}"), g[i % n].id.clone()))
            .collect();
        let report = |g: &[GalleryEntry]| {
            let results: Vec<RankedResult> = qs
                .iter()
                .enumerate()
                .map(|(i, q)| rank(&format!("q{i}"), &fv(q), g).unwrap())
                .collect();
            recall_at_k(&results, &truth, &[1, 5, 10, 50]).unwrap()
        };
        prop_assert_eq!(report(&g), report(&shuffled));
        Ok(())
    })
}

/// Every property with its name, in the order they are reported.
pub fn all() -> Vec<(&'static str, fn() -> Result<(), String>)> {
    vec![
        ("selection permutation invariance", selection_permutation_invariance),
        ("guidance-swap antisymmetry", guidance_swap_antisymmetry),
        ("selection weight scale invariance", weight_scale_invariance),
        ("selection weight ranges", weight_ranges),
        ("degenerate min-max rule", degenerate_minmax),
        ("beta simplex", beta_simplex),
        ("zero-MLP combiner is the mean", zero_mlp_is_mean),
        ("forward determinism", forward_determinism),
        ("combiner parameter disjointness", parameter_disjointness),
        ("loss nonnegativity", loss_nonnegative),
        ("batch permutation equivariance", batch_permutation_equivariance),
        ("ranking scale invariance", rank_scale_invariance),
        ("ranking independent of temperature", tau_rank_independence),
        ("recall monotone in K", recall_monotone_in_k),
        ("gallery permutation invariance", gallery_permutation_invariance),
    ]
}
