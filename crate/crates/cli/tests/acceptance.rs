//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use agfsync_core::backend::{Embedding, T2iBackend, VqaBackend};
use agfsync_core::candidates::perturb_condition;
use agfsync_core::dpo::{
    dpo_inner, dpo_loss_batch, dpo_loss_item, forward_diffuse, grad_check, random_batch, DpoBatchItem, DpoConfig,
    DpoPair, LinearPredictor, NoiseSchedule, SeededSampler, DEFAULT_STEP,
};
use agfsync_core::eval::{threshold_table, win_draw_rates, DEFAULT_THRESHOLDS};
use agfsync_core::model::{
    weighted_score, CandidateImage, Category, ElementType, ImageRef, PromptRecord, QAPair, ScoreVector, WeightConfig,
};
use agfsync_core::preference::{conversion_efficiency, dataset_stats, select_pair, threshold_report, SkipReason};
use agfsync_core::qa::PromptQa;
use agfsync_core::scoring::{clip_score, enumerate_weight_triples, grid_search_weights, vqa_score, ClipConfig, WeightGrid};
use agfsync_core::store::BlobStore;
use agfsync_testkit::mocks::{MockT2i, MockVqa};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

fn candidate(prompt_id: &str, i: usize, weighted: Option<f64>, scores: Option<ScoreVector>) -> CandidateImage {
    CandidateImage {
        candidate_id: format!("{prompt_id}-c{i}"),
        prompt_id: prompt_id.to_string(),
        seed: i as u64,
        noise_sigma: 0.1,
        image_ref: ImageRef::of_bytes(format!("{prompt_id}/{i}").as_bytes()),
        scores,
        weighted,
    }
}

fn weighted_exactness() -> Result<String, String> {
    let mut r = rng(1);
    let w = WeightConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (v, c, a) = (r.random_range(0.0..=100.0), r.random_range(0.0..=100.0), r.random_range(0.0..=100.0));
        let got = weighted_score(&ScoreVector::new(v, c, a), &w).map_err(|e| e.to_string())?;
        let direct = 0.35 * v + 0.55 * c + 0.1 * a;
        worst = worst.max((got - direct).abs());
    }
    ensure!(worst <= 1e-9, "max deviation {worst:e}");
    Ok(format!("1000 vectors, max deviation {worst:e}"))
}

fn vqa_oracle() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = BlobStore::open(dir.path()).map_err(|e| e.to_string())?;
    let (t2i, vqa) = (MockT2i::default(), MockVqa);
    let mut r = rng(2);
    let mut total_questions = 0;
    for i in 0..200u64 {
        let cond = Embedding::new((0..8).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let bytes = t2i.generate(&cond, i).map_err(|e| e.to_string())?;
        let image = store.put(&bytes).map_err(|e| e.to_string())?;
        let n = r.random_range(1..=32usize);
        let pairs: Vec<QAPair> = (0..n)
            .map(|q| QAPair {
                question_id: q as u32 + 1,
                question: format!("Is there a thing number {q} in image {i}?"),
                answer: "yes".into(),
                element_type: ElementType::Object,
                element: format!("thing {q}"),
                flag: 1,
            })
            .collect();
        let got = vqa_score(&vqa, &store, &image, &pairs).map_err(|e| e.to_string())?;
        let matches = pairs.iter().filter(|p| vqa.answer(&bytes, &p.question).unwrap() == "yes").count();
        let expected = 100.0 * matches as f64 / n as f64;
        ensure!(got == expected, "image {i}: {got} vs {expected}");
        total_questions += n;
    }
    Ok(format!("200 images, {total_questions} questions, exact"))
}

fn clip_properties() -> Result<String, String> {
    let mut r = rng(3);
    let cfg = ClipConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = r.random_range(2..=64);
        let u: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let k = r.random_range(0.01..100.0);
        let (eu, ev) = (Embedding::new(u.clone()).unwrap(), Embedding::new(v).unwrap());
        let base = clip_score(&eu, &ev, &cfg).map_err(|e| e.to_string())?;
        let scaled = clip_score(&Embedding::new(u.iter().map(|x| x * k).collect()).unwrap(), &ev, &cfg).unwrap();
        let swapped = clip_score(&ev, &eu, &cfg).unwrap();
        worst = worst.max((base - scaled).abs()).max((base - swapped).abs());
        let same = clip_score(&eu, &eu, &cfg).unwrap();
        ensure!(same == 100.0, "identical vectors scored {same}");
    }
    ensure!(worst <= 1e-9, "max deviation {worst:e}");
    Ok(format!("1000 pairs, max deviation {worst:e}, identical = 100"))
}

/// First index of the maximum and of the minimum, or None when all equal.
fn brute_force(values: &[f64]) -> Option<(usize, usize)> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == min {
        return None;
    }
    Some((values.iter().position(|&v| v == max)?, values.iter().position(|&v| v == min)?))
}

fn pair_selection() -> Result<String, String> {
    let mut r = rng(4);
    let (mut ties, mut degenerate) = (0, 0);
    for set in 0..10_000 {
        let n = r.random_range(2..=8);
        // Multiples of 1/1024 on a small range: ties are common and affine
        // maps with power-of-two scales stay exact.
        let values: Vec<f64> = if set % 2 == 0 {
            (0..n).map(|_| r.random_range(0..6) as f64).collect()
        } else {
            (0..n).map(|_| r.random_range(0..102_400) as f64 / 1024.0).collect()
        };
        let distinct: HashSet<u64> = values.iter().map(|v| v.to_bits()).collect();
        if distinct.len() < n {
            ties += 1;
        }
        let pid = format!("p{set}");
        let cands: Vec<CandidateImage> =
            values.iter().enumerate().map(|(i, &v)| candidate(&pid, i, Some(v), None)).collect();
        let got = select_pair(&pid, &cands);
        match (brute_force(&values), &got) {
            (Some((w, l)), Ok(sel)) => {
                ensure!((sel.winner_index, sel.loser_index) == (w, l), "set {set} {values:?}: got ({}, {})", sel.winner_index, sel.loser_index);
                ensure!(sel.pair.winner == cands[w].candidate_id && sel.pair.margin == values[w] - values[l], "set {set}: pair fields");
            }
            (None, Err(skip)) => {
                ensure!(skip.reason == SkipReason::Degenerate, "set {set}: reason {:?}", skip.reason);
                degenerate += 1;
            }
            (expected, _) => return Err(format!("set {set} {values:?}: expected {expected:?}, got {got:?}")),
        }
        let scale = [0.25, 2.0, 8.0][set % 3];
        let shift = r.random_range(-50..=50) as f64;
        let mapped: Vec<CandidateImage> =
            values.iter().enumerate().map(|(i, &v)| candidate(&pid, i, Some(scale * v + shift), None)).collect();
        let indices = |s: &Result<_, _>| match s {
            Ok(agfsync_core::preference::Selection { winner_index, loser_index, .. }) => Some((*winner_index, *loser_index)),
            Err(_) => None,
        };
        ensure!(indices(&got) == indices(&select_pair(&pid, &mapped)), "set {set}: affine map changed the selection");
    }
    Ok(format!("10000 sets ({ties} with ties, {degenerate} degenerate), affine-invariant"))
}

fn conversion() -> Result<String, String> {
    let mut r = rng(5);
    let mut pairs = 0;
    let prompts = 500;
    for p in 0..prompts {
        let pid = format!("p{p}");
        let n = r.random_range(2..=8);
        let mut values: Vec<f64> = (0..n).map(|_| r.random_range(0.0..100.0)).collect();
        values[1] = values[0] + 1.0;
        let cands: Vec<CandidateImage> = values.iter().enumerate().map(|(i, &v)| candidate(&pid, i, Some(v), None)).collect();
        if select_pair(&pid, &cands).is_ok() {
            pairs += 1;
        }
    }
    let eff = conversion_efficiency(prompts, pairs).map_err(|e| e.to_string())?;
    ensure!(eff == 1.0, "argmax/argmin efficiency {eff}");

    // 1000 prompts; 488 have one candidate strictly clearing both thresholds.
    // The rest sit on or below a boundary.
    let mut groups = BTreeMap::new();
    for p in 0..1000 {
        let pid = format!("q{p:04}");
        let pass = p % 1000 < 488;
        let best = if pass { ScoreVector::new(95.0, 50.0, 61.0) } else { [ScoreVector::new(90.0, 50.0, 99.0), ScoreVector::new(99.0, 50.0, 60.0)][p % 2] };
        let cands = vec![
            candidate(&pid, 0, Some(10.0), Some(ScoreVector::new(20.0, 30.0, 10.0))),
            candidate(&pid, 1, Some(80.0), Some(best)),
        ];
        groups.insert(pid, cands);
    }
    let report = threshold_report(&groups, 0.9, 0.6).map_err(|e| e.to_string())?;
    ensure!((report.efficiency - 0.488).abs() <= 1e-6, "filter efficiency {}", report.efficiency);
    Ok(format!("argmax/argmin 1.0 on {prompts} prompts; filter {}/{} = {}", report.retained, report.prompts_in, report.efficiency))
}

fn dpo_loss() -> Result<String, String> {
    let sched = NoiseSchedule::default();
    let cfg = DpoConfig::default();
    let e = |e: agfsync_core::dpo::DpoError| e.to_string();

    // (a) identical policies
    let theta = LinearPredictor::random(6, 11);
    let mut r = rng(6);
    let pairs: Vec<DpoPair> = (0..16)
        .map(|i| DpoPair {
            prompt_id: format!("p{i}"),
            winner: "w".into(),
            loser: "l".into(),
            cond: Embedding::new(vec![r.random_range(-1.0..1.0); 3]).unwrap(),
            x0_w: (0..6).map(|_| r.random_range(-1.0..1.0)).collect(),
            x0_l: (0..6).map(|_| r.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let ln2 = std::f64::consts::LN_2;
    let same = dpo_loss_batch(&pairs, &theta, &theta, &sched, &cfg, &SeededSampler::new(3)).map_err(e)?;
    ensure!((same - ln2).abs() <= 1e-12, "identical policies gave {same}");

    // (b) hand fixture against a step-by-step recomputation
    let tiny = NoiseSchedule::from_parts(vec![0.8, 0.6], vec![0.6, 0.8]).map_err(e)?;
    let a = [0.5, 0.1, 0.0, 0.2];
    let b = [0.4, 0.0, 0.1, 0.3];
    let item = DpoBatchItem {
        cond: Embedding::new(vec![1.0]).unwrap(),
        x0_w: vec![1.0, 2.0],
        x0_l: vec![-1.0, 0.5],
        t: 1,
        eps_w: vec![0.3, -0.2],
        eps_l: vec![1.0, 1.0],
    };
    let hand_cfg = DpoConfig { beta: 1.0 };
    let got = dpo_loss_item(
        &item,
        &LinearPredictor::new(2, a.to_vec()).map_err(e)?,
        &LinearPredictor::new(2, b.to_vec()).map_err(e)?,
        &tiny,
        &hand_cfg,
    )
    .map_err(e)?;
    let (al, sg) = (0.6, 0.8);
    let xw = [al * 1.0 + sg * 0.3, al * 2.0 + sg * -0.2];
    let xl = [al * -1.0 + sg * 1.0, al * 0.5 + sg * 1.0];
    let mat = |m: &[f64; 4], x: &[f64; 2]| [m[0] * x[0] + m[1] * x[1], m[2] * x[0] + m[3] * x[1]];
    let sq = |e: [f64; 2], p: [f64; 2]| (e[0] - p[0]).powi(2) + (e[1] - p[1]).powi(2);
    let inner = (sq([0.3, -0.2], mat(&a, &xw)) - sq([0.3, -0.2], mat(&b, &xw)))
        - (sq([1.0, 1.0], mat(&a, &xl)) - sq([1.0, 1.0], mat(&b, &xl)));
    let oracle = (1.0 + inner.exp()).ln();
    ensure!((got - oracle).abs() <= 1e-12, "hand fixture {got} vs oracle {oracle}");

    // (c) antisymmetry
    for _ in 0..1000 {
        let v = |r: &mut StdRng| -> Vec<f64> { (0..5).map(|_| r.random_range(-3.0..3.0)).collect() };
        let (ew, el, tw, tl, rw, rl) = (v(&mut r), v(&mut r), v(&mut r), v(&mut r), v(&mut r), v(&mut r));
        let fwd = dpo_inner(&ew, &el, &tw, &tl, &rw, &rl).map_err(e)?;
        let rev = dpo_inner(&el, &ew, &tl, &tw, &rl, &rw).map_err(e)?;
        ensure!(fwd == -rev, "antisymmetry broke: {fwd} vs {rev}");
    }

    // (d) gradient check on a linear predictor, d = 4, 8 items
    let items = random_batch(4, 3, 8, 21, &sched);
    let (theta, reference) = (LinearPredictor::random(4, 22), LinearPredictor::random(4, 23));
    let mut grad_errors = Vec::new();
    for beta in [1.0, cfg.beta] {
        let check = grad_check(&theta, &reference, &items, &sched, &DpoConfig { beta }, DEFAULT_STEP).map_err(e)?;
        ensure!(check.max_rel_error < 1e-4, "beta {beta}: grad check max relative error {:e}", check.max_rel_error);
        grad_errors.push(format!("{:e} at beta {beta}", check.max_rel_error));
    }
    Ok(format!(
        "ln2 dev {:e}, hand dev {:e}, grad max rel error {}",
        (same - ln2).abs(),
        (got - oracle).abs(),
        grad_errors.join(", ")
    ))
}

fn noise_schedule() -> Result<String, String> {
    let sched = NoiseSchedule::default();
    ensure!(sched.timesteps() == 1000, "T = {}", sched.timesteps());
    let worst = (0..1000).map(|t| (sched.alpha(t).powi(2) + sched.sigma(t).powi(2) - 1.0).abs()).fold(0.0, f64::max);
    ensure!(worst <= 1e-9, "VP identity off by {worst:e}");
    let x0 = [0.3, -1.7, 2.5];
    let eps = [1.1, 0.4, -0.9];
    for t in [0, 1, 500, 999] {
        let (a, s) = (sched.alpha(t), sched.sigma(t));
        let only_x = forward_diffuse(&x0, t, &[0.0; 3], &sched).map_err(|e| e.to_string())?;
        ensure!(only_x == x0.iter().map(|x| a * x).collect::<Vec<_>>(), "eps = 0 at t={t}");
        let only_e = forward_diffuse(&[0.0; 3], t, &eps, &sched).map_err(|e| e.to_string())?;
        ensure!(only_e == eps.iter().map(|e| s * e).collect::<Vec<_>>(), "x0 = 0 at t={t}");
    }
    ensure!(forward_diffuse(&x0, 1000, &eps, &sched).is_err(), "t = T accepted");
    ensure!(forward_diffuse(&x0, 0, &eps[..2], &sched).is_err(), "dimension mismatch accepted");
    let pair = NoiseSchedule::from_parts(vec![0.8], vec![0.6]).map_err(|e| e.to_string())?;
    let y = forward_diffuse(&[1.0, 2.0], 0, &[1.0, 0.0], &pair).map_err(|e| e.to_string())?;
    ensure!((y[0] - 1.4).abs() < 1e-15 && (y[1] - 1.6).abs() < 1e-15, "got {y:?}");
    Ok(format!("T=1000, max |alpha^2 + sigma^2 - 1| = {worst:e}"))
}

fn noise_diversity() -> Result<String, String> {
    let t2i = MockT2i::default();
    let mut r = rng(8);
    let conditions: Vec<Embedding> =
        (0..20).map(|_| Embedding::new((0..4).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()).collect();
    let mut counts = Vec::new();
    for sigma in [0.0, 0.1, 0.5, 1.0] {
        let mut distinct = 0;
        for (p, cond) in conditions.iter().enumerate() {
            let mut seen = HashSet::new();
            for k in 0..16u64 {
                let noisy = perturb_condition(cond, sigma, 1000 * p as u64 + k).map_err(|e| e.to_string())?;
                // fixed latent seed per condition: only the noise varies
                seen.insert(t2i.generate(&noisy, p as u64).map_err(|e| e.to_string())?);
            }
            distinct += seen.len();
        }
        counts.push(distinct);
    }
    ensure!(counts.windows(2).all(|w| w[0] <= w[1]), "distinct counts {counts:?}");
    ensure!(counts[0] == conditions.len(), "sigma = 0 gave {} images", counts[0]);
    Ok(format!("distinct images at sigma 0/0.1/0.5/1.0: {counts:?}"))
}

fn win_draw() -> Result<String, String> {
    let mut r = rng(9);
    for list in 0..1000 {
        let n = r.random_range(1..=200);
        let a: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        // some exact ties and some near gaps
        let b: Vec<f64> = a
            .iter()
            .map(|&x| match r.random_range(0..4) {
                0 => x,
                1 => x + r.random_range(-0.02..0.02),
                _ => r.random_range(0.0..1.0),
            })
            .collect();
        let mut last_draw = 0;
        let mut sorted = DEFAULT_THRESHOLDS.to_vec();
        sorted.sort_by(f64::total_cmp);
        for &thr in &sorted {
            let c = win_draw_rates(&a, &b, thr).map_err(|e| e.to_string())?;
            let (mut wa, mut d, mut wb) = (0, 0, 0);
            for i in 0..n {
                let gap = a[i] - b[i];
                if gap.abs() <= thr {
                    d += 1;
                } else if gap > 0.0 {
                    wa += 1;
                } else {
                    wb += 1;
                }
            }
            ensure!((c.win_a, c.draw, c.win_b) == (wa, d, wb), "list {list} thr {thr}");
            ensure!(c.draw >= last_draw, "list {list}: draws fell as threshold rose");
            last_draw = c.draw;
        }
        for row in threshold_table(&a, &b, &DEFAULT_THRESHOLDS).map_err(|e| e.to_string())? {
            ensure!(row.win + row.draw + row.lose == 1.0, "list {list}: fractions sum {}", row.win + row.draw + row.lose);
            ensure!(row.counts.win_a + row.counts.draw + row.counts.win_b == n, "list {list}: counts");
        }
    }
    Ok("1000 lists x 3 thresholds exact; draws monotone; sums exactly 1".into())
}

fn stats_arithmetic() -> Result<String, String> {
    let (n_prompts, n_questions) = (45_834usize, 414_172usize);
    let created = common::CREATED_AT.parse().unwrap();
    let prompts: Vec<PromptRecord> = (0..n_prompts)
        .map(|i| {
            let cat = Category::ALL[i % 12];
            PromptRecord::new(format!("p{i}"), cat, "a red kite over a green hill", "fixture", created).unwrap()
        })
        .collect();
    let q = QAPair {
        question_id: 1,
        question: "Is there a kite?".into(),
        answer: "yes".into(),
        element_type: ElementType::Object,
        element: "kite".into(),
        flag: 1,
    };
    let (base, extra) = (n_questions / n_prompts, n_questions % n_prompts);
    let qa: Vec<PromptQa> = (0..n_prompts)
        .map(|i| PromptQa { prompt_id: format!("p{i}"), pairs: vec![q.clone(); base + usize::from(i < extra)] })
        .collect();
    let stats = dataset_stats(&prompts, &qa, &[], None);
    ensure!(stats.total_prompts == n_prompts && stats.total_questions == n_questions, "totals");
    ensure!((stats.mean_questions_per_prompt - 9.03).abs() <= 0.01, "mean {}", stats.mean_questions_per_prompt);
    Ok(format!("{n_prompts} prompts, {n_questions} questions, mean {:.4}", stats.mean_questions_per_prompt))
}

fn agfsync(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_agfsync"));
    c.args(args).stdout(Stdio::null()).stderr(Stdio::null());
    c
}

fn run_to(cfg: &Path, out: &Path) -> Result<(), String> {
    let status = agfsync(&["run", "--mock", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status()
        .map_err(|e| e.to_string())?;
    ensure!(status.success(), "run into {} exited {status}", out.display());
    Ok(())
}

fn end_to_end() -> Result<String, String> {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = common::config_file(root.path(), "qa_rounds = 6\n[generation]\nn_candidates = 8\n");
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    run_to(&cfg, &a)?;
    run_to(&cfg, &b)?;
    let snap = common::snapshot(&a);
    for f in ["prompts.jsonl", "qa.jsonl", "candidates.jsonl", "scores.jsonl", "pairs.jsonl", "report.json"] {
        ensure!(snap.contains_key(f), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_slice(&snap["report.json"]).map_err(|e| e.to_string())?;
    ensure!(report["conversion"]["prompts_in"] == 24, "expected 24 prompts");
    ensure!(snap == common::snapshot(&b), "two runs differ");

    let mut kills = 0;
    for (i, delay) in [100u64, 250, 400].into_iter().enumerate() {
        let out = root.path().join(format!("killed{i}"));
        let mut child = agfsync(&["run", "--mock", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .spawn()
            .map_err(|e| e.to_string())?;
        std::thread::sleep(Duration::from_millis(delay));
        if child.try_wait().map_err(|e| e.to_string())?.is_none() {
            kills += 1;
        }
        let _ = child.kill();
        let _ = child.wait();
        run_to(&cfg, &out)?;
        ensure!(snap == common::snapshot(&out), "killed run {i} did not converge");
    }
    ensure!(kills > 0, "every run finished before it could be killed");
    Ok(format!("{} files byte-identical; {kills} killed runs converged", snap.len()))
}

fn grid_search() -> Result<String, String> {
    let grid = WeightGrid::default();
    let triples = enumerate_weight_triples(&grid).map_err(|e| e.to_string())?;
    // independent enumeration in hundredths
    let hundredths = |v: &[f64]| v.iter().map(|x| (x * 100.0).round() as i64).collect::<Vec<_>>();
    let mut expected = Vec::new();
    for c in hundredths(&grid.clip_candidates) {
        for v in hundredths(&grid.vqa_candidates) {
            for a in hundredths(&grid.aes_candidates) {
                if c + v + a == 100 {
                    expected.push((c, v, a));
                }
            }
        }
    }
    let got: Vec<(i64, i64, i64)> = triples
        .iter()
        .map(|w| ((w.w_clip * 100.0).round() as i64, (w.w_vqa * 100.0).round() as i64, (w.w_aes * 100.0).round() as i64))
        .collect();
    ensure!(got == expected, "enumeration {got:?} vs {expected:?}");
    ensure!(got.contains(&(55, 35, 10)), "(0.55, 0.35, 0.1) missing");

    let mut r = rng(12);
    for round in 0..200 {
        let coef: [f64; 3] = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let objective = |w: &WeightConfig| coef[0] * w.w_clip + coef[1] * w.w_vqa + coef[2] * w.w_aes;
        let best = grid_search_weights(&grid, objective).map_err(|e| e.to_string())?;
        let top = triples.iter().map(objective).fold(f64::NEG_INFINITY, f64::max);
        ensure!(objective(&best) == top, "round {round}: not the maximum");
    }
    // flat objective: every triple ties, largest (w_clip, w_vqa, w_aes) wins
    let flat = grid_search_weights(&grid, |_| 1.0).map_err(|e| e.to_string())?;
    let largest = triples
        .iter()
        .max_by(|x, y| (x.w_clip, x.w_vqa, x.w_aes).partial_cmp(&(y.w_clip, y.w_vqa, y.w_aes)).unwrap())
        .unwrap();
    ensure!(flat == *largest, "tie rule picked {flat:?}");
    Ok(format!("{} sum-to-one triples; argmax matches exhaustive search", triples.len()))
}

fn main() {
    let criteria: [(u32, &str, Check, Duration); 12] = [
        (1, "weighted-score exactness", weighted_exactness, Duration::from_secs(1)),
        (2, "VQA-score oracle equivalence", vqa_oracle, Duration::from_secs(10)),
        (3, "CLIP-score properties", clip_properties, Duration::from_secs(1)),
        (4, "pair-selection oracle", pair_selection, Duration::from_secs(5)),
        (5, "conversion efficiency", conversion, Duration::from_secs(5)),
        (6, "DPO loss", dpo_loss, Duration::from_secs(30)),
        (7, "noise schedule", noise_schedule, Duration::from_secs(1)),
        (8, "noise diversity", noise_diversity, Duration::from_secs(10)),
        (9, "win/draw harness", win_draw, Duration::from_secs(5)),
        (10, "dataset stats arithmetic", stats_arithmetic, Duration::from_secs(5)),
        (11, "end-to-end determinism", end_to_end, Duration::from_secs(120)),
        (12, "weight grid search", grid_search, Duration::from_secs(1)),
    ];
    let mut failed = 0;
    for (n, name, check, limit) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let elapsed = start.elapsed();
        let result = result.and_then(|msg| {
            if elapsed > limit {
                Err(format!("took {elapsed:.2?}, limit {limit:?}"))
            } else {
                Ok(msg)
            }
        });
        match result {
            Ok(msg) => println!("PASS {n:>2} {name} ({elapsed:.2?}): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {n:>2} {name} ({elapsed:.2?}): {msg}");
            }
        }
    }
    println!("acceptance: {} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
