//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines print in order on every
//! `cargo test`; exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use fad::formats::{write_stream, StreamFormat};
use fad::parallel;
use fad_core::augment::effective_probability;
use fad_core::caption::{CaptionRecord, TokenizationMode, TriggerSet};
use fad_core::policy::{build_policy, dropout_probability, PolicyParams, ScheduleConfig, ScheduleShape};
use fad_core::rng::SplitMix64;
use fad_core::stats::empirical_drop_rates;
use fad_core::surrogate::{loss_and_gradient, standard_schedule_variants, ExperimentConfig, Sample};
use fad_core::{analyze, parse_caption, Augmenter, Sampling, VariantMode};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:.2?}, limit {limit:?}"))?;
    Ok(took)
}

fn random_corpus(rng: &mut SplitMix64) -> Vec<CaptionRecord> {
    let n = 1 + rng.below(50) as usize;
    (0..n)
        .map(|index| {
            let len = rng.below(21) as usize;
            let tokens = (0..len).map(|_| format!("w{}", rng.below(10))).collect();
            CaptionRecord { index, tokens, raw: String::new() }
        })
        .collect()
}

fn cooccurrence_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix64::new(1);
    let phrases = vec![vec!["w0".to_string()], vec!["w1".to_string(), "w2".to_string()]];
    let trigger = TriggerSet::from_phrases(phrases.clone()).unwrap();
    let mut corpora = 0;
    while corpora < 1000 {
        let corpus = random_corpus(&mut rng);
        let hit = |tokens: &[String]| {
            phrases.iter().any(|p| tokens.windows(p.len()).any(|w| w == p.as_slice()))
        };
        let with_trigger: Vec<&CaptionRecord> = corpus.iter().filter(|c| hit(&c.tokens)).collect();
        let Ok(table) = analyze(&corpus, &trigger) else {
            ensure(with_trigger.is_empty(), || "spurious TriggerAbsent".into())?;
            continue;
        };
        let mut expected: BTreeMap<&str, u64> = BTreeMap::new();
        for tok in corpus.iter().flat_map(|c| &c.tokens) {
            let n = with_trigger.iter().filter(|c| c.tokens.contains(tok)).count() as u64;
            if n > 0 {
                expected.insert(tok, n);
            }
        }
        let got: BTreeMap<&str, u64> = table.counts().collect();
        ensure(table.n_t() == with_trigger.len() as u64 && got == expected, || format!("corpus {corpora} differs"))?;
        corpora += 1;
    }
    let took = within(Duration::from_secs(10), start)?;
    Ok(format!("{corpora} corpora exact in {took:.2?}"))
}

fn probability_bounds() -> Outcome {
    let mut rng = SplitMix64::new(2);
    let mut strict = 0;
    for i in 0..10_000 {
        let a = rng.next_f64();
        let b = rng.next_f64();
        let (p_min, p_max) = if a < b { (a, b) } else { (b, a) };
        let params = PolicyParams { p_min, p_max, center: rng.next_f64(), slope: 0.5 + 19.5 * rng.next_f64() };
        let r = rng.next_f64();
        let p = dropout_probability(r, &params);
        ensure(p_min <= p && p <= p_max, || format!("draw {i}: {p} outside [{p_min}, {p_max}]"))?;
        let r2 = (r + 1e-3 + rng.next_f64() * (1.0 - r)).min(1.0);
        let p2 = dropout_probability(r2, &params);
        if p_max - p_min >= 0.05 && r2 - r >= 1e-3 {
            ensure(p2 > p, || format!("draw {i}: p({r2}) = {p2} <= p({r}) = {p}"))?;
            strict += 1;
        } else {
            ensure(p2 >= p, || format!("draw {i}: decreasing"))?;
        }
        let mid = dropout_probability(params.center, &params);
        let want = p_min + 0.5 * (p_max - p_min);
        ensure((mid - want).abs() <= 1e-12, || format!("draw {i}: midpoint {mid} vs {want}"))?;
    }
    Ok(format!("10000 draws in bounds, {strict} strictly increasing pairs, midpoint exact"))
}

fn schedule_boundaries() -> Outcome {
    let mut rng = SplitMix64::new(3);
    let mut checked = 0;
    for _ in 0..200 {
        let total = 10 + rng.below(2000);
        let warmup = rng.below(total - 1);
        let full = warmup + 1 + rng.below(total - warmup);
        let beta = 0.5 + 9.5 * rng.next_f64();
        let literal = ScheduleConfig::literal(total, warmup, full, beta);
        let normalized = ScheduleConfig { unnormalized: false, ..literal };
        for cfg in [literal, normalized] {
            let mut prev = 0.0;
            for i in 0..=total {
                let f = cfg.factor(i).map_err(|e| e.to_string())?;
                if i < warmup {
                    ensure(f == 0.0, || format!("factor({i}) = {f} before warmup {warmup}"))?;
                }
                if i >= full {
                    ensure(f == 1.0, || format!("factor({i}) = {f} after full step {full}"))?;
                }
                ensure(f >= prev, || format!("factor decreases at {i}"))?;
                prev = f;
                checked += 1;
            }
        }
        if full > warmup + 1 {
            // Largest slope of the normalized curve, per step.
            let max_step = beta / (1.0 - (-beta).exp()) / (full - warmup) as f64;
            let jump = 1.0 - normalized.factor(full - 1).unwrap();
            ensure(jump <= max_step + 1e-12, || format!("normalized jump {jump} at {full}, bound {max_step}"))?;
        }
    }
    Ok(format!("{checked} factors over 200 literal/normalized schedules"))
}

fn policy_for(data: &[CaptionRecord], trigger: &TriggerSet, params: PolicyParams) -> fad_core::DropoutPolicy {
    build_policy(&analyze(data, trigger).unwrap(), &params, trigger).unwrap()
}

fn trigger_preservation() -> Outcome {
    let mut rng = SplitMix64::new(4);
    let trigger = TriggerSet::from_phrases(vec![vec!["w0".into()], vec!["w3".into()]]).unwrap();
    let modes = [VariantMode::Normal, VariantMode::Fad, VariantMode::Sfad, VariantMode::Uniform(1.0)];
    let (mut captions, mut occurrences) = (0u64, 0u64);
    while captions < 100_000 {
        let corpus = random_corpus(&mut rng);
        if analyze(&corpus, &trigger).is_err() {
            continue;
        }
        let policy = policy_for(&corpus, &trigger, PolicyParams { p_min: 0.9, ..Default::default() });
        let schedule = ScheduleConfig::literal(500, 50, 500, 5.0);
        for mode in modes {
            let aug = Augmenter::new(&policy, schedule, mode, rng.next_u64()).unwrap().per_type(rng.bernoulli(0.5));
            for cap in aug.stream(&corpus, 500, Sampling::ShufflePerEpoch).unwrap() {
                if let Some(t) = cap.dropped.iter().find(|t| trigger.is_trigger_token(t)) {
                    return Err(format!("dropped trigger {t} at step {} under {}", cap.step, mode.name()));
                }
                occurrences += cap.kept.iter().filter(|t| trigger.is_trigger_token(t)).count() as u64;
                captions += 1;
            }
        }
    }
    Ok(format!("{captions} captions, {occurrences} trigger occurrences, none dropped"))
}

fn rate_convergence() -> Outcome {
    let start = Instant::now();
    let mode = TokenizationMode::tag();
    let data = vec![parse_caption("t, x", mode, 0).unwrap()];
    let trigger = TriggerSet::new(["t"], mode).unwrap();
    let n = 100_000u64;
    let mut seen = Vec::new();
    for p in [0.1, 0.5, 0.9] {
        let policy = policy_for(&data, &trigger, PolicyParams { p_min: p, p_max: p, ..Default::default() });
        let cfg = ScheduleConfig::sd_paper();
        let aug = Augmenter::new(&policy, cfg, VariantMode::Fad, 11).unwrap();
        let stream: Vec<_> = aug.stream(&data, n, Sampling::Cycle).unwrap().collect();
        let effective = effective_probability(&policy, &cfg, "x", 1, VariantMode::Fad).unwrap();
        let rate = empirical_drop_rates(&stream)["x"];
        let tol = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
        ensure(effective == p && (rate - p).abs() <= tol, || format!("p={p}: observed {rate}, tolerance {tol}"))?;
        seen.push(format!("{p}->{rate:.4}"));
    }
    let took = within(Duration::from_secs(30), start)?;
    Ok(format!("{} in {took:.2?}", seen.join(", ")))
}

fn determinism() -> Outcome {
    let mode = TokenizationMode::tag();
    let data: Vec<CaptionRecord> = (0..97)
        .map(|i| {
            let raw = format!("sks, style{}, color{}, pose{}", i % 5, i % 7, i % 11);
            parse_caption(&raw, mode, i).unwrap()
        })
        .collect();
    let trigger = TriggerSet::new(["sks"], mode).unwrap();
    let policy = policy_for(&data, &trigger, PolicyParams::default());
    let render = |parallel_run: bool, sampling: Sampling| -> Vec<u8> {
        let aug = Augmenter::new(&policy, ScheduleConfig::sd_paper(), VariantMode::Sfad, 42).unwrap();
        let stream = if parallel_run {
            parallel::augment_stream(&aug, &data, 1500, sampling).unwrap()
        } else {
            aug.stream(&data, 1500, sampling).unwrap().collect()
        };
        let mut out = Vec::new();
        write_stream(&mut out, &stream, StreamFormat::Jsonl, mode).unwrap();
        out
    };
    for sampling in [Sampling::Cycle, Sampling::ShufflePerEpoch] {
        let first = render(false, sampling);
        ensure(first == render(false, sampling), || "two serial runs differ".into())?;
        ensure(first == render(true, sampling), || "serial and parallel runs differ".into())?;
    }

    // The same through the binary.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let captions = dir.path().join("d.txt");
    let text: Vec<&str> = data.iter().map(|c| c.raw.as_str()).collect();
    std::fs::write(&captions, text.join("\n")).map_err(|e| e.to_string())?;
    let run = |args: &[&str]| -> Result<Vec<u8>, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_fad")).args(args).env_remove("FAD_SEED").output();
        let out = out.map_err(|e| e.to_string())?;
        ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
        Ok(out.stdout)
    };
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    run(&["analyze", "--captions", &p("d.txt"), "--trigger", "sks", "--out", &p("t.json")])?;
    run(&["plan", "--table", &p("t.json"), "--preset", "sd-paper", "--out", &p("p.json")])?;
    let augment = ["augment", "--preset", "sd-paper", "--captions", &p("d.txt"), "--policy", &p("p.json"), "--seed", "42"];
    let a = run(&augment)?;
    let b = run(&augment)?;
    let serial = run(&[&augment[..], &["--serial"]].concat())?;
    ensure(a == b && a == serial, || "binary runs differ".into())?;
    ensure(a == render(false, Sampling::Cycle), || "binary output differs from the library".into())?;
    let lines = a.iter().filter(|&&c| c == b'\n').count();
    Ok(format!("1500-step runs byte-identical ({lines} lines, {} bytes), serial == parallel", a.len()))
}

fn reference_loss(w: &[f64], b: f64, samples: &[Sample]) -> f64 {
    samples
        .iter()
        .map(|(x, y)| {
            let z = b + x.iter().map(|&i| w[i]).sum::<f64>();
            let p = 1.0 / (1.0 + (-z).exp());
            if *y { -p.ln() } else { -(1.0 - p).ln() }
        })
        .sum::<f64>()
        / samples.len() as f64
}

fn gradient_check() -> Outcome {
    let mut rng = SplitMix64::new(6);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = 2 + rng.below(10) as usize;
        let w: Vec<f64> = (0..d).map(|_| rng.next_gaussian()).collect();
        let b = rng.next_gaussian();
        let samples: Vec<Sample> =
            (0..1 + rng.below(40)).map(|_| ((0..d).filter(|_| rng.bernoulli(0.3)).collect(), rng.bernoulli(0.5))).collect();
        let (_, grad, grad_b) = loss_and_gradient(&w, b, &samples);
        let mut diff = 0.0;
        let mut norm = 0.0;
        for i in 0..=d {
            let (mut up, mut down, mut bu, mut bd) = (w.clone(), w.clone(), b, b);
            if i < d {
                up[i] += h;
                down[i] -= h;
            } else {
                bu += h;
                bd -= h;
            }
            let numeric = (reference_loss(&up, bu, &samples) - reference_loss(&down, bd, &samples)) / (2.0 * h);
            let analytic = if i < d { grad[i] } else { grad_b };
            diff += (analytic - numeric).powi(2);
            norm += analytic.powi(2) + numeric.powi(2);
        }
        let rel = diff.sqrt() / norm.sqrt().max(1e-12);
        worst = worst.max(rel);
    }
    ensure(worst < 1e-5, || format!("worst relative error {worst:e}"))?;
    Ok(format!("100 instances, worst relative error {worst:.1e}"))
}

fn disentanglement() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let seeds: Vec<u64> = (0..20).collect();
    let report = parallel::run_experiment(&cfg, &seeds).map_err(|e| e.to_string())?;
    let took = within(Duration::from_secs(120), start)?;
    let summary = |m| report.summary_for(m).unwrap();
    let (normal, fad, sfad) = (summary(VariantMode::Normal), summary(VariantMode::Fad), summary(VariantMode::Sfad));
    let wins = report.share_win_rate(VariantMode::Fad, VariantMode::Normal);
    ensure(wins >= 0.8, || format!("share(fad) > share(normal) in only {:.0}% of seeds", wins * 100.0))?;
    ensure(fad.mean_omission_drop > normal.mean_omission_drop, || {
        format!("omission drop fad {} <= normal {}", fad.mean_omission_drop, normal.mean_omission_drop)
    })?;
    let share = |s: Option<f64>| s.map_or("undefined".into(), |v| format!("{v:.3}"));
    Ok(format!(
        "fad wins {:.0}% of 20 seeds; share normal {} fad {} sfad {}; omission drop normal {:.3} fad {:.3}; {took:.1?}",
        wins * 100.0,
        share(normal.mean_trigger_share),
        share(fad.mean_trigger_share),
        share(sfad.mean_trigger_share),
        normal.mean_omission_drop,
        fad.mean_omission_drop,
    ))
}

fn schedule_study() -> Outcome {
    let cfg = ExperimentConfig::default();
    let total = cfg.train.total_steps(cfg.corpus.num_captions);
    let variants = standard_schedule_variants(total);
    let seeds: Vec<u64> = (0..5).collect();
    let rows = parallel::schedule_study(&cfg, &variants, &seeds).map_err(|e| e.to_string())?;
    ensure(rows.len() == 4, || format!("{} rows", rows.len()))?;
    let shapes: Vec<(ScheduleShape, bool)> = rows.iter().map(|r| (r.schedule.shape, r.schedule.start < r.schedule.end)).collect();
    for shape in [ScheduleShape::Linear, ScheduleShape::Exponential] {
        for up in [true, false] {
            ensure(shapes.contains(&(shape, up)), || format!("missing {shape:?} ascending={up}"))?;
        }
    }
    println!("    {:<16}{:>12}{:>16}{:>12}", "schedule", "trig share", "omission drop", "final loss");
    for r in &rows {
        ensure(r.mean_final_loss.is_finite(), || format!("{}: non-finite loss", r.label))?;
        let share = r.mean_trigger_share.map_or("undefined".into(), |v| format!("{v:.4}"));
        println!("    {:<16}{:>12}{:>16.4}{:>12.4}", r.label, share, r.mean_omission_drop, r.mean_final_loss);
    }
    Ok("4 variants over 5 seeds".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 9] = [
        ("co-occurrence matches brute-force recount", cooccurrence_oracle),
        ("dropout probability bounds, monotonicity, midpoint", probability_bounds),
        ("schedule boundary contract", schedule_boundaries),
        ("trigger tokens never dropped", trigger_preservation),
        ("empirical drop rates converge", rate_convergence),
        ("augmentation is deterministic", determinism),
        ("surrogate gradient matches finite differences", gradient_check),
        ("trigger disentanglement under FAD", disentanglement),
        ("schedule-variant study table", schedule_study),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
