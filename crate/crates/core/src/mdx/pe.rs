use crate::grid::{GridLayout, CDM_GROUPS, SC_PER_PRB, SYMBOLS_PER_SLOT};

/// Per-PRB positional encoding of `layer`, `[12, 14, 4]` channel-last:
/// distance in frequency to the nearest pilot subcarrier of the layer
/// (divided by `freq_norm`), distance in time to the nearest DMRS symbol
/// (divided by `time_norm`), then `(f + 1) / 12` and `(s + 1) / 14`.
pub fn positional_encoding(layout: &GridLayout, layer: usize, freq_norm: f64, time_norm: f64) -> Vec<f64> {
    let group = layout.cdm[layer].group;
    let pilot_sc: Vec<usize> = (0..SC_PER_PRB).filter(|f| f % CDM_GROUPS == group).collect();
    let mut out = Vec::with_capacity(SC_PER_PRB * SYMBOLS_PER_SLOT * 4);
    for f in 0..SC_PER_PRB {
        let df = pilot_sc.iter().map(|&p| p.abs_diff(f)).min().unwrap_or(0);
        for s in 0..SYMBOLS_PER_SLOT {
            let ds = layout.dmrs_symbols.iter().map(|&d| d.abs_diff(s)).min().unwrap_or(0);
            out.push(df as f64 / freq_norm);
            out.push(ds as f64 / time_norm);
            out.push((f + 1) as f64 / SC_PER_PRB as f64);
            out.push((s + 1) as f64 / SYMBOLS_PER_SLOT as f64);
        }
    }
    out
}
