use domainsift::corpus::{encode, CorpusRecord};
use domainsift::prefix::{
    init_prefix, mean_log_likelihood, prefix_grad_check, prefix_grad_check_with, tune_prefix, TuneHyper,
};
use domainsift::tiny_lm::{init_params, load_prefix, save_prefix, LmConfig, LmParams};

fn cfg() -> LmConfig {
    LmConfig {
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 32,
        context_len: 32,
        ..LmConfig::tiny()
    }
}

fn reference() -> Vec<CorpusRecord> {
    (0..12)
        .map(|i| CorpusRecord::new(format!("r{i}"), format!("{{\"k{i}\":[{i},{}]}}", i * 7)))
        .collect()
}

fn base() -> LmParams {
    init_params(&cfg()).unwrap()
}

#[test]
fn tuning_raises_reference_likelihood() {
    let p = base();
    let refs = reference();
    let init = init_prefix(&p.config, 4, 7).unwrap();
    let before = mean_log_likelihood(&p, Some(&init), &refs).unwrap();
    let hyper = TuneHyper { learning_rate: 3e-2, epochs: 6, ..Default::default() };
    let (tuned, curve) = tune_prefix(&p, &init, &refs, &hyper).unwrap();
    assert_eq!(curve.len(), 6);
    assert!(curve[0] > before, "{before} -> {curve:?}");
    assert!(curve.windows(2).all(|w| w[1] > w[0]), "{curve:?}");
    assert_eq!(mean_log_likelihood(&p, Some(&tuned), &refs).unwrap(), curve[5]);
    // The model itself is untouched: no-prefix likelihood is unchanged.
    assert_eq!(
        mean_log_likelihood(&p, None, &refs).unwrap(),
        mean_log_likelihood(&base(), None, &refs).unwrap()
    );
}

#[test]
fn tuning_is_reproducible() {
    let p = base();
    let init = init_prefix(&p.config, 3, 1).unwrap();
    let hyper = TuneHyper { epochs: 2, ..Default::default() };
    let a = tune_prefix(&p, &init, &reference(), &hyper).unwrap();
    let b = tune_prefix(&p, &init, &reference(), &hyper).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_length_prefix_is_noop() {
    let p = base();
    let refs = reference();
    let init = init_prefix(&p.config, 0, 1).unwrap();
    let (tuned, curve) = tune_prefix(&p, &init, &refs, &TuneHyper { epochs: 3, ..Default::default() }).unwrap();
    let plain = mean_log_likelihood(&p, None, &refs).unwrap();
    assert_eq!(tuned.num_params(), 0);
    assert!(curve.iter().all(|&c| c == plain));
}

#[test]
fn prefix_gradients_match_finite_differences() {
    let p = base();
    let pre = init_prefix(&p.config, 3, 2).unwrap();
    let seq = encode(b"{\"a\":[1,2]}", 32);
    let err = prefix_grad_check(&p, &pre, &seq).unwrap();
    assert!(err < 1e-4, "{err}");
}

/// Weights and prefix scaled up until gradients are well above the unit
/// floor of the relative-error denominator.
fn loud() -> (LmParams, domainsift::prefix::DomainPrefix) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let mut p = base();
    p.for_each_mut(|t| t.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5)));
    let mut pre = init_prefix(&p.config, 3, 2).unwrap();
    pre.tensors.iter_mut().for_each(|t| t.data.iter_mut().for_each(|v| *v *= 50.0));
    (p, pre)
}

#[test]
fn loud_gradients_match_finite_differences() {
    let (p, pre) = loud();
    let err = prefix_grad_check(&p, &pre, &encode(b"{\"a\":[1,2]}", 32)).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn grad_check_catches_sign_flip() {
    let (p, pre) = loud();
    let seq = encode(b"{\"a\":[1,2]}", 32);
    let err = prefix_grad_check_with(&p, &pre, &seq, |g| {
        for t in g.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = -*v);
        }
    })
    .unwrap();
    assert!(err > 0.1, "{err}");
}

#[test]
fn checkpoint_round_trip_preserves_scores() {
    let p = base();
    let (pre, _) = tune_prefix(
        &p,
        &init_prefix(&p.config, 2, 3).unwrap(),
        &reference(),
        &TuneHyper { epochs: 1, ..Default::default() },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("prefix.lmds");
    save_prefix(&path, &pre, &p.config, None).unwrap();
    let (back, config) = load_prefix(&path).unwrap();
    assert_eq!(config, p.config);
    assert_eq!(back.tensors, pre.tensors);
    assert_eq!(
        mean_log_likelihood(&p, Some(&back), &reference()).unwrap(),
        mean_log_likelihood(&p, Some(&pre), &reference()).unwrap()
    );
}

#[test]
fn mismatched_model_is_rejected() {
    let p = base();
    let other = LmConfig { d_model: 8, n_heads: 2, ..cfg() };
    let pre = init_prefix(&other, 2, 0).unwrap();
    let err = tune_prefix(&p, &pre, &reference(), &TuneHyper::default()).unwrap_err();
    assert_eq!(err.category(), "shape");
}
