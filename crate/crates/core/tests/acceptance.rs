//! End-to-end acceptance gate: one PASS/FAIL line per criterion, non-zero
//! exit if any fails. Run with `cargo test --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{enumerate_strings, oracle_log_likelihood, pair_count_auc};
use domainsift::baselines::{build_profile, dsir_score};
use domainsift::corpus::{encode, write_corpus, CorpusRecord, EOS, VOCAB_SIZE};
use domainsift::evaluation::neyman_pearson::{np_check, NpSetup};
use domainsift::evaluation::{
    ablate_prefix_length, ablate_threshold, auc, build_datasets, evaluate, train_base, tune, Datasets,
    DownstreamScope, EvalReport, ExperimentConfig, PrefixLengthRow, ThresholdRow,
};
use domainsift::prefix::{init_prefix, per_token_log_likelihood, tune_prefix, DomainPrefix, TuneHyper};
use domainsift::scoring::{score_stream, Scorer, SelectionConfig};
use domainsift::tiny_lm::{grad_check, init_params, log_likelihood_masked, LmConfig, LmParams, Trainable, VocabMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Everything the experiment-scale criteria share, built once.
struct Fixture {
    cfg: ExperimentConfig,
    data: Datasets,
    params: LmParams,
    prefix: DomainPrefix,
    report: EvalReport,
}

impl Fixture {
    fn build() -> Self {
        let cfg = ExperimentConfig::default();
        let data = build_datasets(&cfg).expect("datasets");
        let (params, _) = train_base(&cfg, &data).expect("base model");
        let prefix = tune(&cfg, &params, &data.reference, cfg.prefix_len).expect("prefix");
        let report = evaluate(&cfg, &params, &prefix, &data, DownstreamScope::All).expect("evaluation");
        Fixture { cfg, data, params, prefix, report }
    }
}

fn micro() -> LmConfig {
    LmConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ff: 12,
        context_len: 4,
        ..LmConfig::tiny()
    }
}

fn jittered(cfg: &LmConfig, scale: f64, seed: u64) -> LmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = init_params(cfg).unwrap();
    p.for_each_mut(|t| t.data.iter_mut().for_each(|v| *v += scale * (rng.gen::<f64>() - 0.5)));
    p
}

fn loud_prefix(cfg: &LmConfig, m: usize, seed: u64) -> DomainPrefix {
    let mut pre = init_prefix(cfg, m, seed).unwrap();
    pre.tensors.iter_mut().for_each(|t| t.data.iter_mut().for_each(|v| *v *= 25.0));
    pre
}

fn c1_gradients() -> Outcome {
    let cfg = LmConfig { context_len: 16, ..micro() };
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let p = jittered(&cfg, 0.5, 100 + seed);
        let pre = loud_prefix(&cfg, 3, 200 + seed);
        let batch = [encode(b"ab+ba", 16), encode(b"12=3", 16)];
        for trainable in [Trainable::Params, Trainable::Prefix] {
            let r = grad_check(&p, Some(&pre), &batch, trainable, 200, seed).map_err(|e| e.to_string())?;
            worst = worst.max(r.max_rel_err);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && secs < 120.0,
        format!("max rel err {worst:.2e} over 5 seeds x 200 coords x {{weights, prefix}} in {secs:.1}s"),
    )
}

fn ab_eos() -> Vec<u32> {
    vec![b'a' as u32, b'b' as u32, EOS]
}

/// Sum of probabilities over the outcome space of the 2-symbol masked model
/// with context 4: complete strings shorter than the context plus every
/// context-length (truncated) string.
fn masked_mass(p: &LmParams, prefix: Option<&DomainPrefix>) -> f64 {
    let ctx = p.config.context_len;
    let mask = VocabMask::new(VOCAB_SIZE, &ab_eos());
    enumerate_strings(b"ab", ctx)
        .into_iter()
        .map(|mut s| {
            if s.len() == ctx {
                s.push(b'a');
            }
            log_likelihood_masked(p, prefix, &encode(&s, ctx), Some(&mask)).unwrap().exp()
        })
        .sum()
}

fn c2_normalization() -> Outcome {
    let p = jittered(&micro(), 1.0, 7);
    let pre = loud_prefix(&micro(), 2, 8);
    let plain = masked_mass(&p, None);
    let prefixed = masked_mass(&p, Some(&pre));
    check(
        (plain - 1.0).abs() < 1e-8 && (prefixed - 1.0).abs() < 1e-8,
        format!("mass {plain:.12} without prefix, {prefixed:.12} with"),
    )
}

fn c3_ratio_oracle() -> Outcome {
    let p = jittered(&micro(), 1.0, 9);
    let pre = loud_prefix(&micro(), 2, 10);
    let allowed = ab_eos();
    let scorer = Scorer::new(&p, &pre, SelectionConfig::default())
        .unwrap()
        .with_mask(VocabMask::new(VOCAB_SIZE, &allowed));
    let mut worst: f64 = 0.0;
    for s in enumerate_strings(b"ab", 3) {
        let text = String::from_utf8(s.clone()).unwrap();
        let got = scorer.score(&CorpusRecord::new("x", text)).unwrap().log_ratio;
        let seq = encode(&s, 4);
        let want = oracle_log_likelihood(&p, Some(&pre), &seq, Some(&allowed))
            - oracle_log_likelihood(&p, None, &seq, Some(&allowed));
        worst = worst.max((got - want).abs());
    }
    let empty = init_prefix(&micro(), 0, 0).unwrap();
    let zero = Scorer::new(&p, &empty, SelectionConfig::default()).unwrap();
    let zeros = enumerate_strings(b"ab", 4)
        .into_iter()
        .all(|s| zero.score(&CorpusRecord::new("x", String::from_utf8(s).unwrap())).unwrap().log_ratio == 0.0);
    check(
        worst < 1e-10 && zeros,
        format!("max |ratio - oracle| {worst:.2e}; m=0 ratios all exactly 0: {zeros}"),
    )
}

fn c4_ascent(f: &Fixture) -> Outcome {
    let init = init_prefix(&f.params.config, 30, f.cfg.prefix_seed()).unwrap();
    let hyper = TuneHyper::default();
    let (tuned, _) = tune_prefix(&f.params, &init, &f.data.reference, &hyper).map_err(|e| e.to_string())?;
    let before = per_token_log_likelihood(&f.params, Some(&init), &f.data.heldout).unwrap();
    let after = per_token_log_likelihood(&f.params, Some(&tuned), &f.data.heldout).unwrap();
    let gain = after - before;
    check(
        gain >= 0.02,
        format!(
            "held-out per-token log-likelihood {before:.4} -> {after:.4} (gain {gain:.4} nats/token; lr {}, {} epochs, batch {})",
            hyper.learning_rate, hyper.epochs, hyper.batch_size
        ),
    )
}

fn c5_neyman_pearson() -> Outcome {
    let start = Instant::now();
    let r = np_check(&NpSetup::default());
    let secs = start.elapsed().as_secs_f64();
    let worst = r.rows.iter().map(|x| x.max_excess_tpr).fold(f64::NEG_INFINITY, f64::max);
    check(
        r.lr_dominates(1e-12) && secs < 60.0,
        format!(
            "ratio AUC {:.4}; largest competitor TPR excess {worst:.2e} over {} statistics in {secs:.2}s",
            r.lr_auc,
            r.rows.len()
        ),
    )
}

fn c6_occ(f: &Fixture) -> Outcome {
    let l = f.report.auc;
    let ppl = f.report.method("ppl").and_then(|m| m.auc).unwrap_or(f64::NAN);
    let rnd = f.report.method("random").and_then(|m| m.auc).unwrap_or(f64::NAN);
    check(
        l >= 0.90 && l > ppl && ppl > 0.5,
        format!(
            "pool {} records, target {}: AUC lamdas {l:.4}, ppl {ppl:.4}, random {rnd:.4}",
            f.data.pool.len(),
            f.cfg.target
        ),
    )
}

fn c7_downstream(f: &Fixture) -> Outcome {
    let ppl = |name: &str| {
        f.report
            .method(name)
            .and_then(|m| m.downstream)
            .map(|d| d.ppl)
            .ok_or_else(|| format!("no downstream result for {name}"))
    };
    let (l, r, full) = (ppl("lamdas")?, ppl("random")?, ppl("full")?);
    let rel = (r - l) / r;
    check(
        rel >= 0.03 && l <= full * 1.01,
        format!(
            "held-out ppl at budget {}: lamdas {l:.4}, random {r:.4} ({:.1}% lower), full {full:.4}",
            f.cfg.budget(),
            100.0 * rel
        ),
    )
}

fn c8_threshold(f: &Fixture) -> Outcome {
    let taus = [0.8, 0.9, 1.0, 1.1, 1.2];
    let rows: Vec<ThresholdRow> = ablate_threshold(
        &f.data.pool,
        &f.params,
        &f.prefix,
        &taus,
        &f.cfg.selection,
        f.cfg.target.name(),
        None,
    )
    .map_err(|e| e.to_string())?;
    let decreasing = rows.windows(2).all(|w| w[1].retention < w[0].retention);
    let best = rows
        .iter()
        .fold(&rows[0], |b, r| if r.f1 > b.f1 { r } else { b });
    let f1_ok = (0.9..=1.1).contains(&best.tau);
    let cells: Vec<String> = rows
        .iter()
        .map(|r| format!("tau {}: retention {:.4} f1 {:.4}", r.tau, r.retention, r.f1))
        .collect();
    check(
        decreasing && f1_ok,
        format!(
            "retention strictly decreasing: {decreasing}; F1 maximized at tau {}; {}",
            best.tau,
            cells.join(", ")
        ),
    )
}

fn c9_prefix_length(f: &Fixture) -> Outcome {
    let rows: Vec<PrefixLengthRow> = ablate_prefix_length(
        &f.params,
        &f.data.reference,
        &f.data.heldout,
        &[1, 5, 10, 30, 60],
        &f.cfg.tune,
        f.cfg.prefix_seed(),
    )
    .map_err(|e| e.to_string())?;
    let max = rows.iter().map(|r| r.heldout_log_likelihood).fold(f64::NEG_INFINITY, f64::max);
    let at30 = rows.iter().find(|r| r.m == 30).unwrap().heldout_log_likelihood;
    let gap = (max - at30) / max.abs();
    let cells: Vec<String> = rows.iter().map(|r| format!("m={} {:.3}", r.m, r.heldout_log_likelihood)).collect();
    check(gap <= 0.01, format!("m=30 within {:.2}% of max; {}", 100.0 * gap, cells.join(", ")))
}

fn c10_determinism(f: &Fixture) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pool = dir.path().join("pool.jsonl");
    write_corpus(&pool, &f.data.pool).map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    let mut passes = Vec::new();
    for (i, workers) in [1usize, 4, 8, 4].into_iter().enumerate() {
        let out = dir.path().join(format!("scores{i}.jsonl"));
        let cfg = SelectionConfig { workers, ..f.cfg.selection.clone() };
        let s = score_stream(&f.params, &f.prefix, &pool, &out, &cfg).map_err(|e| e.to_string())?;
        passes.push(s.forward_passes);
        files.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    let identical = files.iter().all(|b| *b == files[0]);
    let n = f.data.pool.len() as u64;
    let counted = passes.iter().all(|&p| p == 2 * n);
    check(
        identical && counted,
        format!("workers 1/4/8 + rerun byte-identical: {identical}; forward passes {passes:?} for {n} records"),
    )
}

fn c11_oracles() -> Outcome {
    // Hand fixture: bigrams in 16 buckets (aa→7, ab→10, bb→5 under FNV-1a).
    let rp = build_profile(&[CorpusRecord::new("r", "aaab")], 2, 16, 1.0).unwrap();
    let cp = build_profile(&[CorpusRecord::new("c", "abbb")], 2, 16, 1.0).unwrap();
    let ln3 = 3f64.ln();
    let mut dsir_err: f64 = 0.0;
    for (text, want) in [("aaab", 2.0 * ln3), ("abbb", -2.0 * ln3), ("bbbb", -3.0 * ln3)] {
        let got = dsir_score(&rp, &cp, &CorpusRecord::new("x", text)).unwrap();
        dsir_err = dsir_err.max((got - want).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut auc_err: f64 = 0.0;
    for _ in 0..500 {
        let np = rng.gen_range(1..=100);
        let nn = rng.gen_range(1..=100);
        let levels = rng.gen_range(2..40);
        let mut draw = |k| (0..k).map(|_| f64::from(rng.gen_range(0..levels))).collect::<Vec<_>>();
        let (pos, neg) = (draw(np), draw(nn));
        auc_err = auc_err.max((auc(&pos, &neg) - pair_count_auc(&pos, &neg)).abs());
    }
    check(
        dsir_err < 1e-12 && auc_err < 1e-12,
        format!("dsir fixture max err {dsir_err:.1e}; AUC vs pair counting max err {auc_err:.1e} over 500 lists"),
    )
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let t = fmt_secs(start.elapsed());
    match outcome {
        Ok(d) => {
            println!("PASS {name} ({t}): {d}");
            true
        }
        Err(d) => {
            println!("FAIL {name} ({t}): {d}");
            false
        }
    }
}

fn fmt_secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= run("1 gradient correctness", c1_gradients);
    ok &= run("2 probability normalization", c2_normalization);
    ok &= run("3 log-ratio oracle equivalence", c3_ratio_oracle);

    let start = Instant::now();
    let fixture = catch_unwind(Fixture::build).ok();
    eprintln!("shared experiment fixture built in {}", fmt_secs(start.elapsed()));
    let with = |f: fn(&Fixture) -> Outcome| {
        let fx = fixture.as_ref();
        move || fx.map(f).unwrap_or_else(|| Err("experiment fixture failed to build".into()))
    };

    ok &= run("4 prefix tuning ascent", with(c4_ascent));
    ok &= run("5 neyman-pearson dominance", c5_neyman_pearson);
    ok &= run("6 one-class separation", with(c6_occ));
    ok &= run("7 downstream perplexity", with(c7_downstream));
    ok &= run("8 threshold ablation", with(c8_threshold));
    ok &= run("9 prefix-length ablation", with(c9_prefix_length));
    ok &= run("10 determinism and pass count", with(c10_determinism));
    ok &= run("11 dsir and auc oracles", c11_oracles);

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
