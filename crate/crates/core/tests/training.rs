use mdx_autodiff::{ComplexPair, Graph, Tensor};
use mdx_core::checkpoint::{Checkpoint, MAGIC};
use mdx_core::classical::NoiseMode;
use mdx_core::experiment::{run_train, ExperimentConfig};
use mdx_core::classical::restrict_to_data;
use mdx_core::constellation::Modulation;
use mdx_core::mdx::{build, prepare, register_params, MdxConfig, MdxParams, Mode, TtiNodes};
use mdx_core::scenario::{ChannelKind, Scenario, ScenarioConfig};
use mdx_core::sim::Tti;
use mdx_core::trainer::{bce_loss, mse_loss, total_loss, TrainConfig, Trainer};
use mdx_core::Complex64;
use mdx_core::Error;

fn small_train() -> TrainConfig {
    TrainConfig {
        iterations: 3,
        batch_size: 2,
        ..TrainConfig::default()
    }
}

fn slots(n: usize, snr: Option<f64>) -> Vec<Tti> {
    let s = Scenario::new(ScenarioConfig::default()).unwrap();
    (0..n).map(|i| s.sample(500 + i as u64, snr).unwrap()).collect()
}

#[test]
fn bce_matches_formula() {
    let logits = [2.5, -1.0, 0.0, 30.0, -7.0, 0.3];
    let targets = [1.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[3, 1, 2], logits.to_vec()).unwrap());
    let l = bce_loss(&mut g, x, &targets, 3, 1, 2).unwrap();
    let want: f64 = logits
        .iter()
        .zip(&targets)
        .map(|(&z, &t)| {
            // -log2 sigmoid(z) = ln(1 + e^-z) / ln 2
            let nl = |z: f64| (-z).exp().ln_1p() / std::f64::consts::LN_2;
            t * nl(z) + (1.0 - t) * nl(-z)
        })
        .sum::<f64>()
        / (3.0 * 1.0 * 2.0);
    assert!((g.value(l).item() - want).abs() < 1e-12, "{} vs {}", g.value(l).item(), want);
    // two layers: the normalization is |D| T B^T
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[1, 2, 2], vec![0.0; 4]).unwrap());
    let l = bce_loss(&mut g, x, &[0.0; 4], 1, 2, 2).unwrap();
    assert!((g.value(l).item() - 4.0 / 8.0).abs() < 1e-12);
}

#[test]
fn slot_weight_grows_with_snr() {
    let p = MdxParams::init(&MdxConfig::default(), 1).unwrap();
    let snrs = [-4.0, 0.0, 3.0, 8.0, 16.0];
    let ttis: Vec<Tti> = snrs.iter().flat_map(|&s| slots(1, Some(s))).collect();
    let refs: Vec<&Tti> = ttis.iter().collect();
    let prep: Vec<_> = refs.iter().map(|t| prepare(t, NoiseMode::Estimated).unwrap()).collect();
    let mut g = Graph::new();
    let vars = register_params(&mut g, &p, Mode::Train);
    let mut stats = p.bn_stats.clone();
    let nodes = build(&mut g, &vars, &p.config, &p.idx, &mut stats, true, &refs, &prep).unwrap();
    let (_, terms) = total_loss(&mut g, &nodes, &refs, 0.01, 0).unwrap();
    for (t, &s) in terms.iter().zip(&snrs) {
        assert!((t.weight - (1.0 + 10f64.powf(s / 10.0)).log2()).abs() < 1e-12);
    }
    assert!(terms.windows(2).all(|w| w[0].weight < w[1].weight));
}

fn grad_norm(g: &Graph, v: mdx_autodiff::Var) -> f64 {
    g.grad(v).map_or(0.0, |s| s.iter().map(|x| x * x).sum::<f64>().sqrt())
}

#[test]
fn intermediate_loss_bypasses_demapper_scales() {
    let p = MdxParams::init(&MdxConfig::default(), 2).unwrap();
    let ttis = slots(2, Some(5.0));
    let refs: Vec<&Tti> = ttis.iter().collect();
    let prep: Vec<_> = refs.iter().map(|t| prepare(t, NoiseMode::Estimated).unwrap()).collect();
    let run = |final_llr: bool| {
        let mut g = Graph::new();
        let vars = register_params(&mut g, &p, Mode::Train);
        let mut stats = p.bn_stats.clone();
        let nodes = build(&mut g, &vars, &p.config, &p.idx, &mut stats, true, &refs, &prep).unwrap();
        let n = &nodes[0];
        let targets = mdx_core::trainer::bit_targets(refs[0]);
        let llr = if final_llr { n.llr } else { n.llr_dals };
        let l = bce_loss(&mut g, llr, &targets, n.n_data, n.n_tx, n.bits_per_symbol).unwrap();
        g.backward(l).unwrap();
        (
            grad_norm(&g, vars[p.idx.phi]),
            grad_norm(&g, vars[p.idx.gamma]),
            grad_norm(&g, vars[p.idx.psi_dals]),
        )
    };
    let (phi, gamma, psi) = run(false);
    assert_eq!(phi, 0.0);
    assert_eq!(gamma, 0.0);
    assert!(psi > 0.0);
    let (phi, gamma, _) = run(true);
    assert!(phi > 0.0 && gamma > 0.0);
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let p = MdxParams::init(&MdxConfig::default(), 4).unwrap();
        let mut t = Trainer::new(small_train(), p, 9).unwrap();
        let recs = t.run(None).unwrap();
        (recs, t.params.tensors.clone())
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    let batch = |seed| {
        let p = MdxParams::init(&MdxConfig::default(), 4).unwrap();
        Trainer::new(small_train(), p, seed).unwrap().batch(0).unwrap()
    };
    assert_ne!(batch(9)[0].y, batch(10)[0].y);
}

#[test]
fn repeated_steps_fit_a_fixed_batch() {
    let p = MdxParams::init(&MdxConfig::default(), 5).unwrap();
    let mut cfg = small_train();
    cfg.learning_rate = 3e-3;
    let mut t = Trainer::new(cfg, p, 1).unwrap();
    let batch = slots(4, Some(6.0));
    let first = t.step_on(&batch).unwrap().loss;
    let mut last = first;
    for _ in 0..40 {
        last = t.step_on(&batch).unwrap().loss;
    }
    assert!(last < 0.9 * first, "{} -> {}", first, last);
    assert_eq!(t.iteration, 41);
}

#[test]
fn non_finite_loss_names_the_slot() {
    let mut p = MdxParams::init(&MdxConfig::default(), 6).unwrap();
    let i = p.idx.blocks[0].gamma_res;
    let shape = p.tensors[i].shape().to_vec();
    let n = p.tensors[i].len();
    let mut tensors = p.tensors.clone();
    tensors[i] = Tensor::new(&shape, vec![f64::NAN; n]).unwrap();
    p.set_values(tensors).unwrap();
    let mut t = Trainer::new(small_train(), p, 1).unwrap();
    let batch = slots(2, None);
    match t.step_on(&batch) {
        Err(Error::NonFinite { iteration, tti_seed }) => {
            assert_eq!(iteration, 0);
            assert_eq!(tti_seed, batch[0].seed);
        }
        other => panic!("expected a non-finite error, got {:?}", other.map(|r| r.loss)),
    }
}

#[test]
fn invalid_training_configs() {
    let p = MdxParams::init(&MdxConfig::default(), 0).unwrap();
    let bad = [
        TrainConfig {
            batch_size: 0,
            ..small_train()
        },
        TrainConfig {
            learning_rate: 0.0,
            ..small_train()
        },
        TrainConfig {
            lambda: -1.0,
            ..small_train()
        },
    ];
    for c in bad {
        assert!(matches!(Trainer::new(c, p.clone(), 0), Err(Error::Config(_))));
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let p = MdxParams::init(&MdxConfig::default(), 7).unwrap();
    let mut t = Trainer::new(small_train(), p, 2).unwrap();
    t.run(None).unwrap();
    assert!(t.params.bn_stats.iter().all(|s| s.initialized));
    let ck = Checkpoint {
        params: t.params.clone(),
        iteration: t.iteration,
        seed: 2,
        config_hash: "abc".into(),
    };
    let bytes = ck.to_bytes().unwrap();
    assert_eq!(&bytes[..4], MAGIC);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.iteration, 3);
    assert_eq!(back.config_hash, "abc");
    for (a, b) in back.params.tensors.iter().zip(&t.params.tensors) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(back.params.bn_stats, t.params.bn_stats);
    assert_eq!(back.to_bytes().unwrap(), bytes);
    let ttis = slots(2, Some(10.0));
    let refs: Vec<&Tti> = ttis.iter().collect();
    let a = t.params.infer(&refs, NoiseMode::Estimated).unwrap();
    let b = back.params.infer(&refs, NoiseMode::Estimated).unwrap();
    assert_eq!(a[0].llr, b[0].llr);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let p = MdxParams::init(&MdxConfig::default(), 8).unwrap();
    let bytes = Checkpoint {
        params: p,
        iteration: 0,
        seed: 0,
        config_hash: String::new(),
    }
    .to_bytes()
    .unwrap();
    let fmt = |b: &[u8]| matches!(Checkpoint::from_bytes(b), Err(Error::Format(_)));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(fmt(&bad));
    let mut bad = bytes.clone();
    bad[4] = 99;
    assert!(fmt(&bad));
    assert!(fmt(&bytes[..bytes.len() - 8]));
    assert!(fmt(&bytes[..20]));
    assert!(fmt(&[]));
    // a manifest for a different architecture than the payload
    let other = Checkpoint {
        params: MdxParams::init(
            &MdxConfig {
                filters: 4,
                ..MdxConfig::default()
            },
            0,
        )
        .unwrap(),
        iteration: 0,
        seed: 0,
        config_hash: String::new(),
    }
    .to_bytes()
    .unwrap();
    let mut spliced = other[..16 + u64::from_le_bytes(other[8..16].try_into().unwrap()) as usize].to_vec();
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    spliced.extend_from_slice(&bytes[16 + len..]);
    assert!(fmt(&spliced));
    assert!(matches!(
        Checkpoint::load(std::path::Path::new("/nonexistent/ck.mdxc")),
        Err(Error::Format(_))
    ));
}

#[test]
fn zero_iterations_save_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.train.iterations = 0;
    let out = run_train(&cfg, 12, dir.path()).unwrap();
    assert!(out.records.is_empty());
    let ck = Checkpoint::load(&out.checkpoint).unwrap();
    let init = MdxParams::init(&cfg.model, 12).unwrap();
    assert_eq!(ck.params.tensors, init.tensors);
    assert_eq!(ck.config_hash, cfg.hash());
}

#[test]
fn config_hash_tracks_content() {
    let a = ExperimentConfig::default();
    let mut b = a.clone();
    assert_eq!(a.hash(), b.hash());
    b.train.lambda = 0.02;
    assert_ne!(a.hash(), b.hash());
    let parsed = ExperimentConfig::from_json("{}").unwrap();
    assert_eq!(parsed, a);
    assert!(matches!(ExperimentConfig::from_json("{\"train\": {\"batch_size\": 0}}"), Err(Error::Config(_))));
}

fn bce_of(logits: &[f64], targets: &[f64], bits: usize) -> f64 {
    let mut g = Graph::new();
    let n = logits.len() / bits;
    let x = g.constant(Tensor::new(&[n, 1, bits], logits.to_vec()).unwrap());
    let l = bce_loss(&mut g, x, targets, n, 1, bits).unwrap();
    g.value(l).item()
}

#[test]
fn single_layer_bce_examples() {
    assert!((bce_of(&[0.0; 8], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0], 2) - 1.0).abs() < 1e-15);
    let t = [1.0, 0.0, 0.0, 1.0];
    let saturated: Vec<f64> = t.iter().map(|&b| if b == 1.0 { 40.0 } else { -40.0 }).collect();
    assert!(bce_of(&saturated, &t, 2) < 1e-9);
    let l = bce_of(&[3f64.ln()], &[1.0], 1);
    assert!((l - 0.415).abs() < 1e-3);
}

/// Receiver nodes whose channel estimate is the truth plus `err`.
fn nodes_with_error(g: &mut Graph, tti: &Tti, err: Complex64) -> TtiNodes {
    let truth = restrict_to_data(&tti.channel.h, &tti.layout, tti.n_rx);
    let (d, r, t) = (tti.layout.data.len(), tti.n_rx, tti.n_tx());
    let re = g.constant(Tensor::new(&[d, r, t], truth.iter().map(|v| v.re + err.re).collect()).unwrap());
    let im = g.constant(Tensor::new(&[d, r, t], truth.iter().map(|v| v.im + err.im).collect()).unwrap());
    let llr = g.constant(Tensor::zeros(&[d, t, 2]));
    TtiNodes {
        llr,
        llr_dals: llr,
        h_nn: ComplexPair::new(re, im),
        n_data: d,
        n_rx: r,
        n_tx: t,
        bits_per_symbol: 2,
        floored: 0,
    }
}

#[test]
fn mse_examples() {
    let t = &slots(1, Some(5.0))[0];
    for (err, want) in [
        (Complex64::new(0.0, 0.0), 0.0),
        (Complex64::new(0.6, -0.8), 1.0),
        (Complex64::new(3.0, 4.0), 25.0),
    ] {
        let mut g = Graph::new();
        let n = nodes_with_error(&mut g, t, err);
        let m = mse_loss(&mut g, &n, t).unwrap();
        assert!((g.value(m).item() - want).abs() < 1e-12, "{} vs {}", g.value(m).item(), want);
    }
}

#[test]
fn loss_weights_and_mse_share() {
    let mut ttis = slots(2, Some(0.0));
    assert!((ttis[0].snr_linear() - 1.0).abs() < 1e-15);
    ttis[1].channel.snr_db = 10.0 * 3f64.log10();
    let refs: Vec<&Tti> = ttis.iter().collect();
    let p = MdxParams::init(&MdxConfig::default(), 9).unwrap();
    let prep: Vec<_> = refs.iter().map(|t| prepare(t, NoiseMode::Estimated).unwrap()).collect();
    let eval = |lambda: f64| {
        let mut g = Graph::new();
        let vars = register_params(&mut g, &p, Mode::Infer);
        let mut stats = p.bn_stats.clone();
        let nodes = build(&mut g, &vars, &p.config, &p.idx, &mut stats, true, &refs, &prep).unwrap();
        let (l, terms) = total_loss(&mut g, &nodes, &refs, lambda, 0).unwrap();
        (g.value(l).item(), terms)
    };
    let (l0, terms) = eval(0.0);
    let (l1, _) = eval(0.01);
    assert!((terms[0].weight - 1.0).abs() < 1e-12);
    assert!((terms[1].weight - 2.0).abs() < 1e-12);
    let bce: f64 = terms.iter().map(|t| t.weight * (t.bce_d + t.bce_dals)).sum::<f64>() / 2.0;
    let mse: f64 = terms.iter().map(|t| t.weight * t.mse).sum::<f64>() / 2.0;
    assert!((l0 - bce).abs() < 1e-12);
    assert!((l1 - l0 - 0.01 * mse).abs() < 1e-12);
}

#[test]
fn desk_scale_run_reduces_the_loss() {
    let mut scenario = ScenarioConfig {
        prbs: 1,
        channel: ChannelKind::BlockFading,
        modulations: vec![Modulation::Qpsk],
        ..ScenarioConfig::default()
    };
    scenario.drop.n_rx = 2;
    scenario.drop.max_layers = 1;
    let cfg = TrainConfig {
        iterations: 2000,
        batch_size: 8,
        scenario,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(cfg, MdxParams::init(&MdxConfig::default(), 10).unwrap(), 11).unwrap();
    let recs = t.run(None).unwrap();
    let mean = |r: &[mdx_core::trainer::IterationRecord]| r.iter().map(|x| x.loss).sum::<f64>() / r.len() as f64;
    let (first, last) = (mean(&recs[..100]), mean(&recs[recs.len() - 100..]));
    assert!(last < first, "{} -> {}", first, last);
}
