//! Independent reference implementations used by the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trustscore::metrics::ScoredPrediction;
use trustscore::nn::{cross_entropy_t, Mlp, MlpConfig};

pub const FD_STEP: f64 = 1e-5;

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// A random tuple for gradient checks: model with random biases, input, target, temperature.
pub struct GradCase {
    pub model: Mlp,
    pub x: Vec<f64>,
    pub target: usize,
    pub t: f64,
}

/// Hidden pre-activations closer than this to zero are treated as ReLU kinks,
/// where a central difference straddles two linear pieces.
pub const KINK_MARGIN: f64 = 1e-3;

pub fn random_case(seed: u64, t: f64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(2..9);
    let hidden: Vec<usize> = (0..rng.random_range(1..4)).map(|_| rng.random_range(3..12)).collect();
    let k = rng.random_range(2..6);
    let mut dims = vec![d];
    dims.extend(&hidden);
    dims.push(k);
    let mut model = Mlp::new(MlpConfig::new(dims, 0.0, rng.random())).unwrap();
    for (i, p) in model.param_slices_mut().into_iter().enumerate() {
        // odd slices are biases
        if i % 2 == 1 {
            p.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
    }
    loop {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let trace = model.forward(&x).unwrap();
        let hidden_pre = &trace.pre_activations[..trace.pre_activations.len() - 1];
        if hidden_pre.iter().flatten().all(|z| z.abs() > KINK_MARGIN) {
            let target = rng.random_range(0..k);
            return GradCase { model, x, target, t };
        }
    }
}

/// Central differences of the loss with respect to the input.
pub fn fd_input_grad(case: &GradCase) -> Vec<f64> {
    (0..case.x.len())
        .map(|i| {
            let mut xp = case.x.clone();
            let mut xm = case.x.clone();
            xp[i] += FD_STEP;
            xm[i] -= FD_STEP;
            (loss(&case.model, &xp, case) - loss(&case.model, &xm, case)) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Central differences with respect to every parameter, in `W0, b0, W1, b1, ...` order.
pub fn fd_param_grads(case: &GradCase) -> Vec<Vec<f64>> {
    let lens = case.model.param_lens();
    let mut out = Vec::new();
    for (s, len) in lens.iter().enumerate() {
        let mut g = Vec::with_capacity(*len);
        for i in 0..*len {
            let mut plus = case.model.clone();
            plus.param_slices_mut()[s][i] += FD_STEP;
            let mut minus = case.model.clone();
            minus.param_slices_mut()[s][i] -= FD_STEP;
            g.push((loss(&plus, &case.x, case) - loss(&minus, &case.x, case)) / (2.0 * FD_STEP));
        }
        out.push(g);
    }
    out
}

fn loss(model: &Mlp, x: &[f64], case: &GradCase) -> f64 {
    cross_entropy_t(&model.logits(x).unwrap(), case.target, case.t).unwrap()
}

/// Worst relative error of analytic against finite-difference gradients.
pub fn worst_gradient_error(case: &GradCase, floor: f64) -> f64 {
    let trace = case.model.forward(&case.x).unwrap();
    let (grads, input_grad) = case.model.backward(&trace, case.target, case.t).unwrap();
    let mut worst: f64 = 0.0;
    for (a, n) in input_grad.iter().zip(fd_input_grad(case)) {
        worst = worst.max(rel_err(*a, n, floor));
    }
    for (analytic, numeric) in grads.slices().iter().zip(fd_param_grads(case)) {
        for (a, n) in analytic.iter().zip(numeric) {
            worst = worst.max(rel_err(*a, n, floor));
        }
    }
    worst
}

/// Position of every sample in the confidence ranking, by counting how many
/// samples beat it (higher score, or equal score and smaller id).
pub fn brute_positions(preds: &[ScoredPrediction]) -> Vec<usize> {
    preds
        .iter()
        .map(|p| {
            preds
                .iter()
                .filter(|q| q.score > p.score || (q.score == p.score && q.sample_id < p.sample_id))
                .count()
        })
        .collect()
}

/// Accuracy over the top `num/den` of the ranking, `⌈num·n/den⌉` in integers.
pub fn brute_accuracy_at_top(preds: &[ScoredPrediction], num: usize, den: usize) -> f64 {
    let n = preds.len();
    let k = (num * n).div_ceil(den).max(1);
    let pos = brute_positions(preds);
    let hits = preds.iter().zip(&pos).filter(|(p, &r)| r < k && p.correct).count();
    hits as f64 / k as f64
}

pub fn brute_aurc(preds: &[ScoredPrediction]) -> f64 {
    let n = preds.len();
    let pos = brute_positions(preds);
    let mut total = 0.0;
    for m in 1..=n {
        let errors = preds.iter().zip(&pos).filter(|(p, &r)| r < m && !p.correct).count();
        total += errors as f64 / m as f64;
    }
    total / n as f64
}

/// Sparsification curves by explicit removal of samples.
pub fn brute_ause(preds: &[ScoredPrediction], steps: usize) -> f64 {
    let n = preds.len();
    let pos = brute_positions(preds);
    // oracle removal order: incorrect samples by id, then the rest by id
    let mut oracle_order: Vec<&ScoredPrediction> = preds.iter().collect();
    oracle_order.sort_by_key(|p| (p.correct, p.sample_id));
    let mut gaps = Vec::new();
    for i in 0..steps {
        let removed = i * n / steps;
        let kept = n - removed;
        let method_wrong = preds.iter().zip(&pos).filter(|(p, &r)| r < kept && !p.correct).count();
        let oracle_wrong = oracle_order[removed..].iter().filter(|p| !p.correct).count();
        gaps.push(method_wrong as f64 / kept as f64 - oracle_wrong as f64 / kept as f64);
    }
    let mut area = 0.0;
    for i in 0..steps - 1 {
        area += (gaps[i] + gaps[i + 1]) / 2.0;
    }
    area / (steps - 1) as f64
}

/// Average ranks by counting smaller and equal values.
pub fn brute_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|v| {
            let below = values.iter().filter(|u| *u < v).count();
            let equal = values.iter().filter(|u| *u == v).count();
            1.0 + below as f64 + (equal - 1) as f64 / 2.0
        })
        .collect()
}

/// Spearman correlation; `None` when either side is constant.
pub fn brute_spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ra, rb) = (brute_ranks(a), brute_ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// `n` distinct scores in random order.
pub fn distinct_scores(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut sorted = s.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).all(|w| w[0] < w[1]) {
            return s;
        }
    }
}

/// Outcome of comparing the metrics module against the brute-force versions.
#[derive(Default, Debug)]
pub struct OracleTally {
    pub cases: usize,
    pub mismatches: Vec<String>,
}

pub const AUSE_STEPS: [usize; 5] = [2, 3, 5, 8, 100];

/// Every correctness pattern of every size up to `max_n`, `draws` random
/// distinct score vectors each.
pub fn exhaustive_metric_comparison(max_n: usize, draws: usize, seed: u64) -> OracleTally {
    use trustscore::metrics::{accuracy_at_top, aurc, ause, spearman};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = OracleTally::default();
    for n in 1..=max_n {
        for mask in 0u32..(1 << n) {
            for _ in 0..draws {
                tally.cases += 1;
                let scores = distinct_scores(n, &mut rng);
                let preds: Vec<ScoredPrediction> = scores
                    .iter()
                    .enumerate()
                    .map(|(i, s)| ScoredPrediction::new(i, *s, mask >> i & 1 == 1))
                    .collect();
                let mut expect = |what: String, ok: bool| {
                    if !ok {
                        tally.mismatches.push(what);
                    }
                };
                for num in 1..=10 {
                    let got = accuracy_at_top(&preds, num as f64 / 10.0).unwrap();
                    let want = brute_accuracy_at_top(&preds, num, 10);
                    expect(format!("accuracy_at_top n={n} mask={mask:b} f={num}/10: {got} vs {want}"), got == want);
                }
                let (got, want) = (aurc(&preds).unwrap(), brute_aurc(&preds));
                expect(format!("aurc n={n} mask={mask:b}: {got} vs {want}"), got == want);
                for steps in AUSE_STEPS {
                    let (got, want) = (ause(&preds, steps).unwrap(), brute_ause(&preds, steps));
                    expect(format!("ause n={n} mask={mask:b} steps={steps}: {got} vs {want}"), got == want);
                }
                if n >= 2 {
                    let flags: Vec<f64> = preds.iter().map(|p| f64::from(u8::from(p.correct))).collect();
                    let got = spearman(&scores, &flags).ok();
                    let want = brute_spearman(&scores, &flags);
                    expect(format!("spearman n={n} mask={mask:b}: {got:?} vs {want:?}"), got == want);
                    let other = distinct_scores(n, &mut rng);
                    let got = spearman(&scores, &other).ok();
                    let want = brute_spearman(&scores, &other);
                    expect(format!("spearman n={n} scores: {got:?} vs {want:?}"), got == want);
                }
            }
        }
    }
    tally
}
