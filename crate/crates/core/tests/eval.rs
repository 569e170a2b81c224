use mdx_core::analysis::{
    lmmse_mult_count, model_complexity, report_csv, sepconv_mult_count, MetricAccumulator, REPORT_CSV_HEADER,
};
use mdx_autodiff::{take_conv_mults, Graph, SepConvWeights, Tensor};
use mdx_core::channel::DropConfig;
use mdx_core::classical::NoiseMode;
use mdx_core::constellation::Modulation;
use mdx_core::eval::{evaluate, paired_ber_sigma, EvalConfig, ReceiverKind};
use mdx_core::mdx::{MdxConfig, MdxParams};
use mdx_core::scenario::{Scenario, ScenarioConfig};
use proptest::prelude::*;

fn eval_cfg(receivers: Vec<ReceiverKind>) -> EvalConfig {
    EvalConfig {
        snr_db: vec![0.0, 10.0],
        slots: 12,
        batch_size: 5,
        receivers,
        ..EvalConfig::default()
    }
}

#[test]
fn fresh_model_scores_like_the_baseline() {
    let p = MdxParams::init(&MdxConfig::default(), 1).unwrap();
    let curves = evaluate(&eval_cfg(vec![ReceiverKind::Mdx, ReceiverKind::LsLmmse]), Some(&p), 4).unwrap();
    for (a, b) in curves[0].points.iter().zip(&curves[1].points) {
        assert_eq!(a.slot_bit_errors, b.slot_bit_errors);
        assert_eq!(a.metrics.bits, b.metrics.bits);
        assert!((a.metrics.ch_mse() - b.metrics.ch_mse()).abs() < 1e-12);
        assert_eq!(a.non_finite_llrs, 0);
        assert_eq!(a.metrics.slots, 12);
    }
}

#[test]
fn slots_are_shared_across_snr_points() {
    // common random numbers: the payload and layer count of slot i do not
    // depend on the SNR, so the bit counts agree point by point
    let cfg = EvalConfig {
        snr_db: vec![-2.0, 8.0, 30.0],
        ..eval_cfg(vec![ReceiverKind::PerfectCsi])
    };
    let c = evaluate(&cfg, None, 9).unwrap();
    let pts = &c[0].points;
    assert_eq!(pts[0].slot_bits, pts[1].slot_bits);
    assert_eq!(pts[1].slot_bits, pts[2].slot_bits);
    assert!(pts[0].metrics.ber() >= pts[1].metrics.ber());
    assert!(pts[1].metrics.ber() >= pts[2].metrics.ber());
    let s = Scenario::new(ScenarioConfig::default()).unwrap();
    let a = s.sample(77, Some(0.0)).unwrap();
    let b = s.sample(77, Some(20.0)).unwrap();
    assert_eq!(a.bits, b.bits);
    assert_eq!(a.channel.h, b.channel.h);
    assert_eq!(a.channel.snr_db, 0.0);
}

#[test]
fn evaluation_is_reproducible_and_batch_independent() {
    let cfg = eval_cfg(vec![ReceiverKind::LsLmmse, ReceiverKind::PerfectCsi]);
    let a = evaluate(&cfg, None, 3).unwrap();
    let b = evaluate(&cfg, None, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[0].csv(), b[0].csv());
    let c = evaluate(&EvalConfig { batch_size: 1, ..cfg.clone() }, None, 3).unwrap();
    assert_eq!(a, c);
    let d = evaluate(&cfg, None, 4).unwrap();
    assert_ne!(a, d);
}

#[test]
fn perfect_csi_beats_estimated_channels() {
    let cfg = EvalConfig {
        snr_db: vec![0.0, 6.0],
        slots: 150,
        batch_size: 50,
        receivers: vec![ReceiverKind::PerfectCsi, ReceiverKind::LsLmmse],
        ..EvalConfig::default()
    };
    let c = evaluate(&cfg, None, 12).unwrap();
    for (p, l) in c[0].points.iter().zip(&c[1].points) {
        assert!(p.metrics.ber() < l.metrics.ber(), "{} vs {}", p.metrics.ber(), l.metrics.ber());
        assert_eq!(p.metrics.ch_mse(), 0.0);
    }
}

#[test]
fn invalid_eval_configs() {
    let p = MdxParams::init(&MdxConfig::default(), 0).unwrap();
    assert!(evaluate(&eval_cfg(vec![ReceiverKind::Mdx]), None, 0).is_err());
    assert!(evaluate(&EvalConfig { snr_db: vec![], ..eval_cfg(vec![ReceiverKind::LsLmmse]) }, None, 0).is_err());
    assert!(evaluate(&EvalConfig { slots: 0, ..eval_cfg(vec![ReceiverKind::Mdx]) }, Some(&p), 0).is_err());
    assert!(evaluate(&EvalConfig { snr_db: vec![f64::NAN], ..eval_cfg(vec![ReceiverKind::LsLmmse]) }, None, 0).is_err());
}

#[test]
fn scenario_options() {
    let cfg = ScenarioConfig {
        prbs: 2,
        fixed_layers: true,
        modulations: vec![Modulation::Qam16, Modulation::Qam64],
        drop: DropConfig {
            max_layers: 3,
            n_rx: 6,
            ..DropConfig::default()
        },
        ..ScenarioConfig::default()
    };
    let s = Scenario::new(cfg.clone()).unwrap();
    let mut seen = [false; 2];
    for i in 0..40 {
        let t = s.sample(i, None).unwrap();
        assert_eq!(t.n_tx(), 3);
        assert_eq!(t.n_rx, 6);
        assert_eq!(t.layout.num_prbs, 2);
        assert!((-4.0..16.0).contains(&t.channel.snr_db));
        seen[(t.modulation == Modulation::Qam64) as usize] = true;
    }
    assert!(seen[0] && seen[1]);
    assert!(Scenario::new(ScenarioConfig { prbs: 0, ..cfg.clone() }).is_err());
    assert!(Scenario::new(ScenarioConfig { modulations: vec![], ..cfg.clone() }).is_err());
    let five = DropConfig {
        max_layers: 5,
        ..DropConfig::default()
    };
    assert!(Scenario::new(ScenarioConfig { drop: five, ..cfg }).is_err());
}

#[test]
fn paired_sigma_by_hand() {
    // per-slot differences 0.1, -0.1, 0.3 -> mean 0.1, sample var 0.04
    let s = paired_ber_sigma(&[2, 0, 5], &[1, 1, 2], &[10, 10, 10]);
    assert!((s - (0.04f64 / 3.0).sqrt()).abs() < 1e-12);
    assert_eq!(paired_ber_sigma(&[1], &[0], &[4]), 0.0);
}

fn acc(v: (u64, u64, u64, u64, u32, u64, u64)) -> MetricAccumulator {
    MetricAccumulator {
        bit_errors: v.0.min(v.1),
        bits: v.1,
        block_errors: v.2.min(v.3),
        blocks: v.3,
        ch_sq_error: v.4 as f64 * 0.25,
        ch_entries: v.5,
        slots: v.6,
    }
}

proptest! {
    #[test]
    fn merge_is_commutative_and_additive(
        a in (0u64..100, 1u64..100, 0u64..10, 1u64..10, 0u32..100, 1u64..50, 0u64..9),
        b in (0u64..100, 1u64..100, 0u64..10, 1u64..10, 0u32..100, 1u64..50, 0u64..9),
    ) {
        let (x, y) = (acc(a), acc(b));
        let mut xy = x;
        xy.merge(&y);
        let mut yx = y;
        yx.merge(&x);
        prop_assert_eq!(xy, yx);
        prop_assert_eq!(xy.bits, x.bits + y.bits);
        let want = (x.bit_errors + y.bit_errors) as f64 / (x.bits + y.bits) as f64;
        prop_assert!((xy.ber() - want).abs() < 1e-15);
    }

    #[test]
    fn block_counting(truth in proptest::collection::vec(0u8..2, 1..50), flips in proptest::collection::vec(any::<bool>(), 50)) {
        let decided: Vec<u8> = truth.iter().zip(&flips).map(|(&t, &f)| t ^ f as u8).collect();
        let mut m = MetricAccumulator::default();
        m.add_block(&decided, &truth);
        let e = truth.iter().zip(&decided).filter(|(a, b)| a != b).count() as u64;
        prop_assert_eq!(m.bit_errors, e);
        prop_assert_eq!(m.block_errors, (e > 0) as u64);
    }
}

#[test]
fn report_csv_layout() {
    let mut m = MetricAccumulator::default();
    m.add_block(&[0, 1, 1, 0], &[0, 1, 0, 0]);
    m.slots = 1;
    let csv = report_csv(&[(5.0, m), (7.5, MetricAccumulator::default())]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], REPORT_CSV_HEADER);
    let cols: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cols.len(), 7);
    assert_eq!(cols[0], "5");
    assert_eq!(cols[1].parse::<f64>().unwrap(), 0.25);
    assert_eq!(cols[4], "4");
    assert!(lines[2].starts_with("7.5,NaN"));
    assert!(MetricAccumulator::default().ber().is_nan());
}

#[test]
fn complexity_report_is_consistent() {
    let cfg = MdxConfig::default();
    for &(r, t) in &[(4, 2), (16, 4), (1, 1)] {
        let c = model_complexity(&cfg, 3, r, t, Modulation::Qam16).unwrap();
        let parts = c.pa_ls + c.interpolation + c.lmmse_dals + c.da_ls + c.res_blocks + c.lmmse_final + c.demap;
        assert_eq!(parts, c.total_mults);
        assert_eq!(c.total_mul_add, 2 * c.total_mults);
        assert_eq!(c.lmmse_dals, 3 * 144 * lmmse_mult_count(t, r));
        assert_eq!(c.lmmse_dals, c.lmmse_final);
        assert_eq!(c.demap, 2 * 3 * 144 * t as u64 * 16 * 4);
    }
    // every term is per RE, so the count is linear in the PRBs
    let one = model_complexity(&cfg, 1, 4, 2, Modulation::Qpsk).unwrap();
    let many = model_complexity(&cfg, 273, 4, 2, Modulation::Qpsk).unwrap();
    assert_eq!(many.total_mults, 273 * one.total_mults);
    assert_eq!(sepconv_mult_count(3, 8, 8, 12, 14), (9 * 8 + 64) * 168);
}

#[test]
fn param_count_is_antenna_independent() {
    let p = MdxParams::init(&MdxConfig::default(), 0).unwrap();
    let n = p.param_count();
    assert!((2300..=3100).contains(&n), "{}", n);
    let summed: usize = p.tensors.iter().map(|t| t.len()).sum();
    assert_eq!(n, summed);
    let grouped: usize = p.groups().iter().flat_map(|(_, ix)| ix.iter()).map(|&i| p.tensors[i].len()).sum();
    assert_eq!(grouped, n);
}

/// Kernel taps that land on the zero padding of a "same" convolution.
fn padded_taps(rows: usize, cols: usize, k: usize) -> u64 {
    let h = k as i64 / 2;
    let inside = |p: usize, n: usize| (-h..=h).filter(|d| (0..n as i64).contains(&(p as i64 + d))).count() as u64;
    let mut missing = 0;
    for f in 0..rows {
        for s in 0..cols {
            missing += (k * k) as u64 - inside(f, rows) * inside(s, cols);
        }
    }
    missing
}

#[test]
fn conv_kernel_counter_matches_closed_form() {
    for &(k, rows, cols, c_in, c_out) in &[(1, 5, 7, 3, 2), (3, 12, 14, 8, 8), (3, 4, 4, 2, 5), (5, 6, 9, 4, 1)] {
        let mut g = Graph::new();
        let batch = 2;
        let x = g.constant(Tensor::full(&[batch, rows, cols, c_in], 0.5));
        let w = SepConvWeights {
            depthwise: g.leaf(Tensor::full(&[k, k, c_in], 0.1), true),
            depthwise_bias: g.leaf(Tensor::zeros(&[c_in]), true),
            pointwise: g.leaf(Tensor::full(&[c_in, c_out], 0.2), true),
            pointwise_bias: g.leaf(Tensor::zeros(&[c_out]), true),
        };
        take_conv_mults();
        g.conv2d_separable(x, w).unwrap();
        let want = batch as u64 * (sepconv_mult_count(k, c_in, c_out, rows, cols) - c_in as u64 * padded_taps(rows, cols, k));
        assert_eq!(take_conv_mults(), want, "k {} {}x{}", k, rows, cols);
    }
}

#[test]
fn model_convolutions_match_the_complexity_report() {
    let cfg = MdxConfig::default();
    let p = MdxParams::init(&cfg, 0).unwrap();
    for &(prbs, r, t) in &[(1, 4, 2), (2, 2, 1)] {
        let s = Scenario::new(ScenarioConfig {
            prbs,
            fixed_layers: true,
            drop: DropConfig {
                n_rx: r,
                max_layers: t,
                ..DropConfig::default()
            },
            ..ScenarioConfig::default()
        })
        .unwrap();
        let tti = s.sample(3, Some(10.0)).unwrap();
        take_conv_mults();
        p.infer(&[&tti], NoiseMode::Estimated).unwrap();
        let counted = take_conv_mults();
        let (f, sym) = (tti.layout.n_sc, tti.layout.n_sym);
        let links = (r * t) as u64;
        let c = model_complexity(&cfg, prbs, r, t, Modulation::Qpsk).unwrap();
        // the report also counts the folded batch norm and residual scaling
        let non_conv = links * cfg.n_blocks as u64 * ((4 + 2) * f * sym) as u64;
        let pad = padded_taps(f, sym, cfg.kernel);
        let convs_in = (cfg.n_blocks * (8 + cfg.filters) + (cfg.n_blocks - 1) * cfg.filters) as u64;
        assert_eq!(counted, c.res_blocks - non_conv - links * convs_in * pad);
    }
}

#[test]
fn counting_examples() {
    assert_eq!(sepconv_mult_count(3, 8, 8, 12, 14), 22848);
    assert_eq!(sepconv_mult_count(3, 0, 8, 12, 14), 0);
    assert_eq!(sepconv_mult_count(3, 8, 8, 24, 14), 2 * 22848);
    let cfg = MdxConfig::default();
    let full = model_complexity(&cfg, 272, 4, 2, Modulation::Qpsk).unwrap();
    let half = model_complexity(&cfg, 136, 4, 2, Modulation::Qpsk).unwrap();
    assert_eq!(full.res_blocks, 2 * half.res_blocks);
    assert_eq!(full.lmmse_dals, 2 * half.lmmse_dals);
    assert_eq!(full.lmmse_final, 2 * half.lmmse_final);
}

#[test]
fn accumulator_examples() {
    let mut m = MetricAccumulator::default();
    m.add_decoded_block(0, 10_000, false);
    assert_eq!(m.ber(), 0.0);
    let mut m = MetricAccumulator::default();
    for i in 0..100 {
        m.add_decoded_block(0, 1, i < 5);
    }
    assert!((m.bler() - 0.05).abs() < 1e-15);
}
