//! Regular (3,6) LDPC codes built by progressive edge growth, a systematic
//! GF(2) encoder, and a normalized min-sum decoder.

use std::collections::VecDeque;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

pub const VAR_DEGREE: usize = 3;
pub const CHECK_DEGREE: usize = 6;
pub const MIN_SUM_SCALE: f64 = 0.75;

/// Sparse parity-check matrix as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseH {
    pub n: usize,
    pub m: usize,
    /// Variable indices of every check, ascending.
    pub checks: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct LdpcCode {
    pub n: usize,
    pub m: usize,
    /// Information bits per codeword.
    pub k: usize,
    pub checks: Vec<Vec<usize>>,
    pub vars: Vec<Vec<usize>>,
    /// Codeword positions of the information bits (the first `k` free
    /// columns; further free columns are held at zero).
    info_cols: Vec<usize>,
    /// `(pivot column, row of the reduced H as a bitset)` per parity bit.
    parity_rows: Vec<(usize, Vec<u64>)>,
    /// Edge layout for decoding: `check_start[c]..check_start[c + 1]`.
    check_start: Vec<usize>,
    edge_var: Vec<usize>,
}

/// Progressive edge growth with variable degree 3 and check degree at most
/// 6. Ties between equally good checks are broken with `seed`.
pub fn peg_construct(n: usize, m: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if m == 0 || n * VAR_DEGREE > m * CHECK_DEGREE {
        return config_err(format!("cannot place {} edges on {} checks of degree {}", n * VAR_DEGREE, m, CHECK_DEGREE));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut var_checks: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut check_vars: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut depth = vec![usize::MAX; m];
    let mut seen_var = vec![false; n];
    for j in 0..n {
        for _ in 0..VAR_DEGREE {
            // breadth-first distances from j; unreached checks stay at MAX
            depth.iter_mut().for_each(|d| *d = usize::MAX);
            seen_var.iter_mut().for_each(|s| *s = false);
            seen_var[j] = true;
            let mut queue = VecDeque::new();
            for &c in &var_checks[j] {
                depth[c] = 0;
                queue.push_back(c);
            }
            while let Some(c) = queue.pop_front() {
                for &v in &check_vars[c] {
                    if seen_var[v] {
                        continue;
                    }
                    seen_var[v] = true;
                    for &c2 in &var_checks[v] {
                        if depth[c2] == usize::MAX {
                            depth[c2] = depth[c] + 1;
                            queue.push_back(c2);
                        }
                    }
                }
            }
            // farthest open checks, then the least loaded among them
            let open = |c: &usize| check_vars[*c].len() < CHECK_DEGREE && !var_checks[j].contains(c);
            let mut pool: Vec<usize> = (0..m).filter(open).collect();
            let Some(far) = pool.iter().map(|&c| depth[c]).max() else {
                return Err(Error::Numerical(format!("no open check for variable {}", j)));
            };
            pool.retain(|&c| depth[c] == far);
            let min_deg = pool.iter().map(|&c| check_vars[c].len()).min().unwrap();
            pool.retain(|&c| check_vars[c].len() == min_deg);
            let c = pool[rng.random_range(0..pool.len())];
            var_checks[j].push(c);
            check_vars[c].push(j);
        }
    }
    for c in &mut check_vars {
        c.sort_unstable();
    }
    Ok(check_vars)
}

fn words(n: usize) -> usize {
    n.div_ceil(64)
}

#[inline]
fn get(row: &[u64], i: usize) -> bool {
    row[i / 64] >> (i % 64) & 1 == 1
}

impl LdpcCode {
    /// Rate-1/2 regular (3,6) code of length `n`.
    pub fn regular(n: usize, seed: u64) -> Result<Self> {
        if n == 0 || n % 2 != 0 {
            return config_err(format!("code length {} must be positive and even", n));
        }
        let m = n / 2;
        let checks = peg_construct(n, m, seed)?;
        Self::from_sparse(&SparseH { n, m, checks }, n / 2)
    }

    /// Code with parity-check matrix `h` carrying `k` information bits.
    pub fn from_sparse(h: &SparseH, k: usize) -> Result<Self> {
        let (n, m) = (h.n, h.m);
        if h.checks.len() != m || h.checks.iter().flatten().any(|&v| v >= n) {
            return config_err("parity-check matrix is inconsistent with its size");
        }
        let mut vars = vec![Vec::new(); n];
        for (c, vs) in h.checks.iter().enumerate() {
            for &v in vs {
                vars[v].push(c);
            }
        }
        // reduced row echelon form over GF(2)
        let w = words(n);
        let mut rows: Vec<Vec<u64>> = h
            .checks
            .iter()
            .map(|vs| {
                let mut r = vec![0u64; w];
                for &v in vs {
                    r[v / 64] ^= 1 << (v % 64);
                }
                r
            })
            .collect();
        let mut pivots = Vec::new();
        let mut rank = 0;
        for col in 0..n {
            let Some(p) = (rank..m).find(|&r| get(&rows[r], col)) else {
                continue;
            };
            rows.swap(rank, p);
            let pivot = rows[rank].clone();
            for (r, row) in rows.iter_mut().enumerate() {
                if r != rank && get(row, col) {
                    row.iter_mut().zip(&pivot).for_each(|(a, b)| *a ^= b);
                }
            }
            pivots.push(col);
            rank += 1;
            if rank == m {
                break;
            }
        }
        let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
        if k > free.len() {
            return config_err(format!("rank {} leaves {} information bits, {} requested", rank, free.len(), k));
        }
        let parity_rows = pivots.iter().copied().zip(rows.into_iter().take(rank)).collect();
        let mut check_start = Vec::with_capacity(m + 1);
        let mut edge_var = Vec::new();
        for vs in &h.checks {
            check_start.push(edge_var.len());
            edge_var.extend_from_slice(vs);
        }
        check_start.push(edge_var.len());
        Ok(Self {
            n,
            m,
            k,
            checks: h.checks.clone(),
            vars,
            info_cols: free[..k].to_vec(),
            parity_rows,
            check_start,
            edge_var,
        })
    }

    pub fn to_sparse(&self) -> SparseH {
        SparseH {
            n: self.n,
            m: self.m,
            checks: self.checks.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_sparse())?)?;
        Ok(())
    }

    pub fn load(path: &Path, k: usize) -> Result<Self> {
        let h: SparseH = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_sparse(&h, k)
    }

    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>> {
        if info.len() != self.k {
            return config_err(format!("encoder takes {} bits, got {}", self.k, info.len()));
        }
        let mut c = vec![0u64; words(self.n)];
        for (&col, &b) in self.info_cols.iter().zip(info) {
            if b & 1 == 1 {
                c[col / 64] |= 1 << (col % 64);
            }
        }
        let mut out: Vec<u8> = (0..self.n).map(|i| get(&c, i) as u8).collect();
        for (col, row) in &self.parity_rows {
            let ones: u32 = row.iter().zip(&c).map(|(a, b)| (a & b).count_ones()).sum();
            out[*col] = (ones & 1) as u8;
        }
        Ok(out)
    }

    pub fn info_bits(&self, codeword: &[u8]) -> Vec<u8> {
        self.info_cols.iter().map(|&c| codeword[c]).collect()
    }

    pub fn syndrome_ok(&self, word: &[u8]) -> bool {
        self.checks
            .iter()
            .all(|vs| vs.iter().fold(0u8, |acc, &v| acc ^ (word[v] & 1)) == 0)
    }

    /// Normalized min-sum decoding of channel LLRs `log P(1) / P(0)`
    /// (positive favours one). Stops early once the syndrome is zero and no
    /// posterior is exactly zero.
    pub fn decode(&self, llr: &[f64], max_iterations: usize) -> Result<DecodeResult> {
        if llr.len() != self.n {
            return config_err(format!("decoder takes {} LLRs, got {}", self.n, llr.len()));
        }
        // internal convention: positive favours zero
        let ch: Vec<f64> = llr.iter().map(|v| -v).collect();
        let mut r = vec![0.0; self.edge_var.len()];
        let mut total = ch.clone();
        let mut hard: Vec<u8> = total.iter().map(|&t| (t < 0.0) as u8).collect();
        // a zero posterior is a tie, not a decision
        let settled = |hard: &[u8], total: &[f64]| total.iter().all(|&t| t != 0.0) && self.syndrome_ok(hard);
        if settled(&hard, &total) {
            return Ok(DecodeResult {
                codeword: hard,
                iterations: 0,
                converged: true,
            });
        }
        let mut q = Vec::with_capacity(CHECK_DEGREE);
        for it in 1..=max_iterations {
            for c in 0..self.m {
                let (s, e) = (self.check_start[c], self.check_start[c + 1]);
                q.clear();
                q.extend((s..e).map(|i| total[self.edge_var[i]] - r[i]));
                let mut sign = 1.0;
                let (mut m1, mut m2, mut at) = (f64::INFINITY, f64::INFINITY, 0);
                for (i, &v) in q.iter().enumerate() {
                    if v < 0.0 {
                        sign = -sign;
                    }
                    let a = v.abs();
                    if a < m1 {
                        m2 = m1;
                        m1 = a;
                        at = i;
                    } else if a < m2 {
                        m2 = a;
                    }
                }
                for (i, &v) in q.iter().enumerate() {
                    let mag = if i == at { m2 } else { m1 };
                    let sg = if v < 0.0 { -sign } else { sign };
                    r[s + i] = MIN_SUM_SCALE * sg * mag;
                }
            }
            total.copy_from_slice(&ch);
            for (i, &v) in self.edge_var.iter().enumerate() {
                total[v] += r[i];
            }
            for (h, &t) in hard.iter_mut().zip(&total) {
                *h = (t < 0.0) as u8;
            }
            if settled(&hard, &total) {
                return Ok(DecodeResult {
                    codeword: hard,
                    iterations: it,
                    converged: true,
                });
            }
        }
        Ok(DecodeResult {
            codeword: hard,
            iterations: max_iterations,
            converged: false,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    pub codeword: Vec<u8>,
    pub iterations: usize,
    pub converged: bool,
}
