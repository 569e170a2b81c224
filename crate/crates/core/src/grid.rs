//! Slot resource grid: DMRS comb layout, data set, and per-layer mapping.
//!
//! Resource elements are addressed by `f * S + s`. DMRS type 1 with two CDM
//! groups: group 0 occupies even subcarriers, group 1 odd subcarriers, on
//! every DMRS symbol. Within a group, the comb subcarriers are paired
//! `(0,2), (4,6), (8,10)` / `(1,3), (5,7), (9,11)` per PRB and the two layers
//! of the group are separated by the cover codes `(+,+)` and `(+,-)`.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{config_err, shape_err, Result};

pub const SC_PER_PRB: usize = 12;
pub const SYMBOLS_PER_SLOT: usize = 14;
pub const CDM_GROUPS: usize = 2;
pub const MAX_LAYERS: usize = 4;
pub const DEFAULT_DMRS_SYMBOLS: [usize; 2] = [2, 11];

/// Sentinel in [`GridLayout::data_index`] for REs outside the data set.
pub const NOT_DATA: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CdmAssignment {
    pub group: usize,
    /// Cover code applied to the second subcarrier of each pair.
    pub occ_sign: i8,
}

#[derive(Clone, Debug)]
pub struct GridLayout {
    pub num_prbs: usize,
    pub n_sc: usize,
    pub n_sym: usize,
    pub n_layers: usize,
    pub dmrs_symbols: Vec<usize>,
    pub cdm: Vec<CdmAssignment>,
    /// Pilot REs of each layer, ascending.
    pub pilots: Vec<Vec<usize>>,
    /// Data REs, ascending. Identical for all layers.
    pub data: Vec<usize>,
    /// Position of each RE in `data`, or [`NOT_DATA`].
    pub data_index: Vec<usize>,
    is_dmrs_symbol: Vec<bool>,
}

#[derive(Serialize)]
struct LayoutDump<'a> {
    num_prbs: usize,
    n_sc: usize,
    n_sym: usize,
    dmrs_symbols: &'a [usize],
    cdm: &'a [CdmAssignment],
    pilots: Vec<Vec<(usize, usize)>>,
    data: Vec<(usize, usize)>,
}

/// CDM pair partner of comb subcarrier `f`, and whether `f` is the first
/// element of its pair.
pub fn cdm_pair(f: usize) -> (usize, bool) {
    let within = f % 4;
    if within < 2 {
        (f + 2, true)
    } else {
        (f - 2, false)
    }
}

pub fn cdm_assignment(layer: usize) -> CdmAssignment {
    CdmAssignment {
        group: layer / 2,
        occ_sign: if layer % 2 == 0 { 1 } else { -1 },
    }
}

impl GridLayout {
    pub fn new(num_prbs: usize, n_layers: usize, dmrs_symbols: &[usize], cdm_group_size: usize) -> Result<Self> {
        if num_prbs == 0 {
            return config_err("grid needs at least one PRB");
        }
        if n_layers == 0 || n_layers > MAX_LAYERS {
            return config_err(format!("{} layers unsupported (1..={})", n_layers, MAX_LAYERS));
        }
        if cdm_group_size != 2 {
            return config_err(format!("CDM group size {} unsupported (only 2)", cdm_group_size));
        }
        let mut syms = dmrs_symbols.to_vec();
        syms.sort_unstable();
        syms.dedup();
        if syms.is_empty() || syms.len() != dmrs_symbols.len() || syms.iter().any(|&s| s >= SYMBOLS_PER_SLOT) {
            return config_err(format!("invalid DMRS symbols {:?}", dmrs_symbols));
        }
        let n_sc = num_prbs * SC_PER_PRB;
        let n_sym = SYMBOLS_PER_SLOT;
        let mut is_dmrs_symbol = vec![false; n_sym];
        for &s in &syms {
            is_dmrs_symbol[s] = true;
        }
        let cdm: Vec<CdmAssignment> = (0..n_layers).map(cdm_assignment).collect();
        let pilots = cdm
            .iter()
            .map(|a| {
                let mut v: Vec<usize> = (0..n_sc)
                    .filter(|f| f % CDM_GROUPS == a.group)
                    .flat_map(|f| syms.iter().map(move |&s| f * n_sym + s))
                    .collect();
                v.sort_unstable();
                v
            })
            .collect();
        let mut data = Vec::new();
        let mut data_index = vec![NOT_DATA; n_sc * n_sym];
        for f in 0..n_sc {
            for s in 0..n_sym {
                if !is_dmrs_symbol[s] {
                    data_index[f * n_sym + s] = data.len();
                    data.push(f * n_sym + s);
                }
            }
        }
        Ok(Self {
            num_prbs,
            n_sc,
            n_sym,
            n_layers,
            dmrs_symbols: syms,
            cdm,
            pilots,
            data,
            data_index,
            is_dmrs_symbol,
        })
    }

    /// Paper defaults: DMRS on symbols 2 and 11, CDM group size 2.
    pub fn standard(num_prbs: usize, n_layers: usize) -> Result<Self> {
        Self::new(num_prbs, n_layers, &DEFAULT_DMRS_SYMBOLS, 2)
    }

    #[inline]
    pub fn n_re(&self) -> usize {
        self.n_sc * self.n_sym
    }

    #[inline]
    pub fn re(&self, f: usize, s: usize) -> usize {
        f * self.n_sym + s
    }

    #[inline]
    pub fn coords(&self, re: usize) -> (usize, usize) {
        (re / self.n_sym, re % self.n_sym)
    }

    pub fn is_dmrs_symbol(&self, s: usize) -> bool {
        self.is_dmrs_symbol[s]
    }

    /// Whether the CDM group carries at least one active layer.
    pub fn group_in_use(&self, group: usize) -> bool {
        self.cdm.iter().any(|a| a.group == group)
    }

    /// Layers sharing `group`.
    pub fn layers_in_group(&self, group: usize) -> Vec<usize> {
        (0..self.n_layers).filter(|&l| self.cdm[l].group == group).collect()
    }

    /// Row of the per-PRB learnable matrices used at subcarrier `f`.
    #[inline]
    pub fn prb_row(f: usize) -> usize {
        f % SC_PER_PRB
    }

    pub fn to_json(&self) -> String {
        let coords = |v: &[usize]| v.iter().map(|&re| self.coords(re)).collect::<Vec<_>>();
        let dump = LayoutDump {
            num_prbs: self.num_prbs,
            n_sc: self.n_sc,
            n_sym: self.n_sym,
            dmrs_symbols: &self.dmrs_symbols,
            cdm: &self.cdm,
            pilots: self.pilots.iter().map(|p| coords(p)).collect(),
            data: coords(&self.data),
        };
        serde_json::to_string_pretty(&dump).expect("layout serializes")
    }
}

/// Transmitted grid of every layer, `symbols[layer][re]`.
#[derive(Clone, Debug)]
pub struct ResourceGrid {
    pub symbols: Vec<Vec<Complex64>>,
}

/// Places data symbols (in data-set order) and pilots (per layer, aligned
/// with `layout.pilots[layer]`) on the grid. Other REs stay zero.
pub fn map_to_grid(layout: &GridLayout, data: &[Vec<Complex64>], pilots: &[Vec<Complex64>]) -> Result<ResourceGrid> {
    if data.len() != layout.n_layers || pilots.len() != layout.n_layers {
        return shape_err(format!(
            "expected {} layers, got {} data / {} pilot streams",
            layout.n_layers,
            data.len(),
            pilots.len()
        ));
    }
    let mut symbols = Vec::with_capacity(layout.n_layers);
    for l in 0..layout.n_layers {
        if data[l].len() != layout.data.len() || pilots[l].len() != layout.pilots[l].len() {
            return shape_err(format!(
                "layer {}: {} data symbols for {} REs, {} pilots for {} REs",
                l,
                data[l].len(),
                layout.data.len(),
                pilots[l].len(),
                layout.pilots[l].len()
            ));
        }
        let mut g = vec![Complex64::new(0.0, 0.0); layout.n_re()];
        for (&re, &x) in layout.data.iter().zip(&data[l]) {
            g[re] = x;
        }
        for (&re, &p) in layout.pilots[l].iter().zip(&pilots[l]) {
            g[re] = p;
        }
        symbols.push(g);
    }
    Ok(ResourceGrid { symbols })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_are_symmetric() {
        for f in 0..24 {
            let (p, first) = cdm_pair(f);
            assert_eq!(cdm_pair(p), (f, !first));
            assert_eq!(f % 2, p % 2);
        }
    }

    #[test]
    fn data_index_inverts_data() {
        let l = GridLayout::standard(2, 1).unwrap();
        for (i, &re) in l.data.iter().enumerate() {
            assert_eq!(l.data_index[re], i);
        }
    }
}
