use mdx_core::constellation::{Constellation, Modulation};
use mdx_core::dmrs::generate_dmrs;
use mdx_core::grid::{cdm_pair, map_to_grid, GridLayout, NOT_DATA};
use mdx_core::Complex64;
use proptest::prelude::*;

/// 3GPP modulation mapper written out per order.
fn reference_point(m: Modulation, b: &[u8]) -> Complex64 {
    let s = |i: usize| 1.0 - 2.0 * b[i] as f64;
    match m {
        Modulation::Qpsk => Complex64::new(s(0), s(1)) / 2f64.sqrt(),
        Modulation::Qam16 => Complex64::new(s(0) * (2.0 - s(2)), s(1) * (2.0 - s(3))) / 10f64.sqrt(),
        Modulation::Qam64 => {
            Complex64::new(s(0) * (4.0 - s(2) * (2.0 - s(4))), s(1) * (4.0 - s(3) * (2.0 - s(5)))) / 42f64.sqrt()
        }
    }
}

#[test]
fn constellations_match_reference_mapper() {
    for m in Modulation::ALL {
        let c = Constellation::new(m);
        let b = m.bits_per_symbol();
        assert_eq!(c.points.len(), 1 << b);
        for p in 0..1usize << b {
            let bits: Vec<u8> = (0..b).map(|i| c.label(p, i)).collect();
            let got = c.modulate(&bits).unwrap()[0];
            assert!((got - reference_point(m, &bits)).norm() < 1e-15, "{:?} {:?}", m, bits);
        }
    }
}

#[test]
fn unit_average_energy() {
    for m in Modulation::ALL {
        let c = Constellation::new(m);
        let e: f64 = c.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / c.points.len() as f64;
        assert!((e - 1.0).abs() < 1e-12);
    }
}

#[test]
fn nearest_neighbours_differ_in_one_bit() {
    for m in Modulation::ALL {
        let c = Constellation::new(m);
        let dmin = (0..c.points.len())
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| (c.points[i] - c.points[j]).norm())
            .fold(f64::INFINITY, f64::min);
        for i in 0..c.points.len() {
            for j in 0..i {
                if (c.points[i] - c.points[j]).norm() < dmin * (1.0 + 1e-9) {
                    assert_eq!((i ^ j).count_ones(), 1, "{:?} points {} {}", m, i, j);
                }
            }
        }
    }
}

#[test]
fn bit_sets_split_the_constellation_evenly() {
    for m in Modulation::ALL {
        let c = Constellation::new(m);
        let half = 1 << (c.bits_per_symbol - 1);
        for b in 0..c.bits_per_symbol {
            let (zero, one) = (c.bit_set(b, 0), c.bit_set(b, 1));
            assert_eq!((zero.len(), one.len()), (half, half));
            assert!(zero.iter().all(|&p| c.label(p, b) == 0));
            assert!(one.iter().all(|&p| c.label(p, b) == 1));
        }
    }
}

#[test]
fn bad_bit_count_rejected() {
    assert!(Constellation::new(Modulation::Qam16).modulate(&[0, 1, 1]).is_err());
}

proptest! {
    #[test]
    fn hard_demap_inverts_modulate(bits in proptest::collection::vec(0u8..2, 0..40), k in 0usize..3) {
        let m = Modulation::ALL[k];
        let c = Constellation::new(m);
        let n = bits.len() / m.bits_per_symbol() * m.bits_per_symbol();
        let syms = c.modulate(&bits[..n]).unwrap();
        prop_assert_eq!(c.hard_demap(&syms), bits[..n].to_vec());
    }

    #[test]
    fn layout_partitions_grid(prbs in 1usize..6, layers in 1usize..5) {
        let l = GridLayout::standard(prbs, layers).unwrap();
        prop_assert_eq!(l.n_re(), prbs * 12 * 14);
        prop_assert_eq!(l.data.len(), prbs * 12 * 12);
        for (i, &re) in l.data.iter().enumerate() {
            prop_assert_eq!(l.data_index[re], i);
            prop_assert!(!l.is_dmrs_symbol(re % 14));
        }
        for (layer, p) in l.pilots.iter().enumerate() {
            prop_assert_eq!(p.len(), prbs * 6 * 2);
            for &re in p {
                let (f, s) = l.coords(re);
                prop_assert_eq!(l.data_index[re], NOT_DATA);
                prop_assert!(s == 2 || s == 11);
                prop_assert_eq!(f % 2, layer / 2);
            }
        }
    }
}

#[test]
fn layout_rejects_bad_configs() {
    assert!(GridLayout::standard(0, 1).is_err());
    assert!(GridLayout::standard(1, 0).is_err());
    assert!(GridLayout::standard(1, 5).is_err());
    assert!(GridLayout::new(1, 1, &[2, 11], 4).is_err());
    assert!(GridLayout::new(1, 1, &[14], 2).is_err());
    assert!(GridLayout::new(1, 1, &[3, 3], 2).is_err());
}

#[test]
fn layers_of_a_group_share_pilot_positions() {
    let l = GridLayout::standard(2, 4).unwrap();
    assert_eq!(l.pilots[0], l.pilots[1]);
    assert_eq!(l.pilots[2], l.pilots[3]);
    assert!(l.pilots[0].iter().all(|re| !l.pilots[2].contains(re)));
    assert_eq!(l.layers_in_group(1), vec![2, 3]);
}

#[test]
fn dmrs_is_unit_modulus_and_seeded() {
    let l = GridLayout::standard(3, 4).unwrap();
    for layer in 0..4 {
        let p = generate_dmrs(layer, &l, 9);
        assert_eq!(p.len(), l.pilots[layer].len());
        assert!(p.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        assert_eq!(p, generate_dmrs(layer, &l, 9));
        assert_ne!(p, generate_dmrs(layer, &l, 10));
    }
}

#[test]
fn cdm_layers_are_orthogonal_over_each_pair() {
    let l = GridLayout::standard(2, 4).unwrap();
    for g in 0..2 {
        let (a, b) = (2 * g, 2 * g + 1);
        let pa = generate_dmrs(a, &l, 4);
        let pb = generate_dmrs(b, &l, 4);
        let at = |p: &[Complex64], re: usize| p[l.pilots[a].iter().position(|&r| r == re).unwrap()];
        for &re in &l.pilots[a] {
            let (f, s) = l.coords(re);
            let (partner, first) = cdm_pair(f);
            if !first {
                continue;
            }
            let re2 = l.re(partner, s);
            let inner = at(&pa, re) * at(&pb, re).conj() + at(&pa, re2) * at(&pb, re2).conj();
            assert!(inner.norm() < 1e-12, "group {} f {} s {}", g, f, s);
        }
    }
}

#[test]
fn mapping_places_symbols() {
    let l = GridLayout::standard(1, 2).unwrap();
    let data: Vec<Vec<Complex64>> = (0..2)
        .map(|t| (0..l.data.len()).map(|i| Complex64::new(i as f64 + 1.0, t as f64)).collect())
        .collect();
    let pilots: Vec<Vec<Complex64>> = (0..2).map(|t| generate_dmrs(t, &l, 1)).collect();
    let g = map_to_grid(&l, &data, &pilots).unwrap();
    for t in 0..2 {
        for (i, &re) in l.data.iter().enumerate() {
            assert_eq!(g.symbols[t][re], data[t][i]);
        }
        for (k, &re) in l.pilots[t].iter().enumerate() {
            assert_eq!(g.symbols[t][re], pilots[t][k]);
        }
        let used = l.data.len() + l.pilots[t].len();
        assert_eq!(g.symbols[t].iter().filter(|v| v.norm() > 0.0).count(), used);
        assert_eq!((l.data.len(), l.pilots[t].len(), l.n_re() - used), (144, 12, 12));
        // at a DMRS symbol the layer only occupies its comb
        for f in 0..12 {
            let on = g.symbols[t][l.re(f, 2)].norm() > 0.0;
            assert_eq!(on, f % 2 == l.cdm[t].group);
        }
    }
    assert!(map_to_grid(&l, &data[..1], &pilots).is_err());
}
