//! Detector-count matrices and the 21 constraint statistics derived from
//! them: nine correlators, six preparation and six detection frequencies,
//! each with its binomial standard deviation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::device::SettingTable;
use crate::error::{domain, Error, Result};
use crate::postprocess::RawKey;
use crate::setting::{Basis, Setting, Sign, SETTING_LABELS};
use crate::simulator::DetectionEvent;

pub const N_CONSTRAINTS: usize = 21;

/// 6x6 detector counts indexed by (preparation, detection) in the order
/// X+, X-, Y+, Y-, Z+, Z-.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CountMatrix {
    counts: [[u64; 6]; 6],
}

#[derive(Serialize, Deserialize)]
struct CountMatrixJson {
    counts: Vec<Vec<u64>>,
    prep_order: Vec<String>,
    det_order: Vec<String>,
}

fn check_order(order: &[String], what: &str) -> Result<[usize; 6]> {
    if order.len() != 6 {
        return Err(Error::CountMatrix(format!("{what} must list 6 settings")));
    }
    let mut idx = [0usize; 6];
    let mut seen = [false; 6];
    for (k, label) in order.iter().enumerate() {
        let s = Setting::parse(label.trim())
            .ok_or_else(|| Error::CountMatrix(format!("unknown setting {label:?} in {what}")))?;
        if seen[s.index()] {
            return Err(Error::CountMatrix(format!("duplicate setting {label} in {what}")));
        }
        seen[s.index()] = true;
        idx[k] = s.index();
    }
    Ok(idx)
}

impl CountMatrix {
    pub fn new(counts: [[u64; 6]; 6]) -> Self {
        CountMatrix { counts }
    }

    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn get(&self, prep: Setting, det: Setting) -> u64 {
        self.counts[prep.index()][det.index()]
    }

    pub fn add(&mut self, prep: Setting, det: Setting, n: u64) {
        self.counts[prep.index()][det.index()] += n;
    }

    pub fn counts(&self) -> &[[u64; 6]; 6] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn as_f64(&self) -> SettingTable {
        self.counts.map(|row| row.map(|c| c as f64))
    }

    /// Every entry multiplied by `k`.
    pub fn scaled(&self, k: u64) -> Self {
        CountMatrix { counts: self.counts.map(|row| row.map(|c| c * k)) }
    }

    /// Swaps the receiver's Z+ and Z- columns; compensates a known key-basis
    /// inversion in the channel.
    pub fn relabel_receiver_z(&self) -> Self {
        let mut out = *self;
        for row in out.counts.iter_mut() {
            row.swap(4, 5);
        }
        out
    }

    /// Each row divided by its largest entry (for side-by-side display).
    pub fn normalized(&self) -> SettingTable {
        let max = self.counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
        self.counts.map(|row| row.map(|c| c as f64 / max))
    }

    /// JSON document with one matrix row per line.
    pub fn to_json(&self) -> Result<String> {
        let rows: Vec<String> = self.counts.iter().map(serde_json::to_string).collect::<std::result::Result<_, _>>()?;
        let order = serde_json::to_string(&SETTING_LABELS)?;
        Ok(format!(
            "{{\n  \"counts\": [\n    {}\n  ],\n  \"prep_order\": {order},\n  \"det_order\": {order}\n}}\n",
            rows.join(",\n    ")
        ))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CountMatrixJson = serde_json::from_str(text)?;
        let rows = check_order(&doc.prep_order, "prep_order")?;
        let cols = check_order(&doc.det_order, "det_order")?;
        if doc.counts.len() != 6 || doc.counts.iter().any(|r| r.len() != 6) {
            return Err(Error::CountMatrix("counts must be a 6x6 array".into()));
        }
        let mut m = CountMatrix::zeros();
        for (i, row) in doc.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                m.counts[rows[i]][cols[j]] = c;
            }
        }
        Ok(m)
    }

    /// CSV with a header row naming the detection order and six data rows in
    /// the canonical preparation order.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SETTING_LABELS)?;
        for row in &self.counts {
            w.write_record(row.iter().map(|c| c.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("ascii"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let cols = check_order(&header, "CSV header")?;
        let mut m = CountMatrix::zeros();
        let mut n_rows = 0;
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if i >= 6 || rec.len() != 6 {
                return Err(Error::CountMatrix("CSV must have 6 rows of 6 counts".into()));
            }
            for (j, field) in rec.iter().enumerate() {
                m.counts[i][cols[j]] = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::CountMatrix(format!("bad count {field:?}")))?;
            }
            n_rows += 1;
        }
        if n_rows != 6 {
            return Err(Error::CountMatrix(format!("CSV has {n_rows} rows, expected 6")));
        }
        Ok(m)
    }

    /// Reads JSON or CSV, chosen by extension (`.csv`) or content.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
            || !text.trim_start().starts_with('{');
        if is_csv {
            Self::from_csv(&text)
        } else {
            Self::from_json(&text)
        }
    }
}

/// The four counts of a basis block: `(++, +-, -+, --)`.
fn block(cells: &SettingTable, a: Basis, b: Basis) -> [f64; 4] {
    let at = |u: Sign, v: Sign| cells[Setting::new(a, u).index()][Setting::new(b, v).index()];
    [
        at(Sign::Plus, Sign::Plus),
        at(Sign::Plus, Sign::Minus),
        at(Sign::Minus, Sign::Plus),
        at(Sign::Minus, Sign::Minus),
    ]
}

/// `(m++ + m-- - m+- - m-+) / (m++ + m-- + m+- + m-+)`.
pub fn correlator(m: &CountMatrix, a: Basis, b: Basis) -> Result<f64> {
    correlator_cells(&m.as_f64(), a, b).ok_or_else(|| Error::ZeroDenominator(format!("C_{a}{b}")))
}

fn correlator_cells(cells: &SettingTable, a: Basis, b: Basis) -> Option<f64> {
    let [pp, pm, mp, mm] = block(cells, a, b);
    let total = pp + pm + mp + mm;
    (total > 0.0).then(|| (pp + mm - pm - mp) / total)
}

fn correlator_deviation(cells: &SettingTable, a: Basis, b: Basis) -> f64 {
    let [pp, pm, mp, mm] = block(cells, a, b);
    let total = pp + pm + mp + mm;
    (4.0 * (pp + mm) * (pm + mp) / total.powi(3)).sqrt()
}

/// Nine correlators with their deviations, and the prepared/detected
/// frequencies with theirs. Correlators of empty basis blocks are marked
/// inactive and do not constrain the analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub c: [[f64; 3]; 3],
    pub dc: [[f64; 3]; 3],
    pub c_active: [[bool; 3]; 3],
    pub p: [f64; 6],
    pub dp: [f64; 6],
    pub d: [f64; 6],
    pub dd: [f64; 6],
    pub total: f64,
}

impl ConstraintSet {
    pub fn correlator(&self, a: Basis, b: Basis) -> f64 {
        self.c[a.index()][b.index()]
    }

    pub fn correlator_deviation(&self, a: Basis, b: Basis) -> f64 {
        self.dc[a.index()][b.index()]
    }

    /// Values in the order C (row-major over prep, det basis), P, D.
    pub fn values(&self) -> [f64; N_CONSTRAINTS] {
        flatten(&self.c, &self.p, &self.d)
    }

    pub fn deviations(&self) -> [f64; N_CONSTRAINTS] {
        flatten(&self.dc, &self.dp, &self.dd)
    }

    pub fn active(&self) -> [bool; N_CONSTRAINTS] {
        let mut a = [true; N_CONSTRAINTS];
        for i in 0..9 {
            a[i] = self.c_active[i / 3][i % 3];
        }
        a
    }
}

fn flatten(c: &[[f64; 3]; 3], p: &[f64; 6], d: &[f64; 6]) -> [f64; N_CONSTRAINTS] {
    let mut out = [0.0; N_CONSTRAINTS];
    for i in 0..9 {
        out[i] = c[i / 3][i % 3];
    }
    out[9..15].copy_from_slice(p);
    out[15..].copy_from_slice(d);
    out
}

/// All 21 statistics of a (possibly fractional) count table.
pub fn constraints_from_cells(cells: &SettingTable) -> Result<ConstraintSet> {
    let total: f64 = cells.iter().flatten().sum();
    if !(total > 0.0) {
        return Err(domain("total count", total));
    }
    let mut c = [[0.0; 3]; 3];
    let mut dc = [[0.0; 3]; 3];
    let mut c_active = [[false; 3]; 3];
    for a in Basis::ALL {
        for b in Basis::ALL {
            if let Some(v) = correlator_cells(cells, a, b) {
                c[a.index()][b.index()] = v;
                dc[a.index()][b.index()] = correlator_deviation(cells, a, b);
                c_active[a.index()][b.index()] = true;
            }
        }
    }
    let binomial = |k: f64| ((total - k) * k / total.powi(3)).sqrt();
    let row_sums: [f64; 6] = std::array::from_fn(|i| cells[i].iter().sum());
    let col_sums: [f64; 6] = std::array::from_fn(|j| cells.iter().map(|r| r[j]).sum());
    Ok(ConstraintSet {
        c,
        dc,
        c_active,
        p: row_sums.map(|k| k / total),
        dp: row_sums.map(binomial),
        d: col_sums.map(|k| k / total),
        dd: col_sums.map(binomial),
        total,
    })
}

pub fn constraints(m: &CountMatrix) -> Result<ConstraintSet> {
    constraints_from_cells(&m.as_f64())
}

/// Constraint values only, for normalized model probabilities. Correlators
/// of blocks with zero weight evaluate to 0.
pub fn constraint_values(p: &SettingTable) -> [f64; N_CONSTRAINTS] {
    let mut out = [0.0; N_CONSTRAINTS];
    for a in Basis::ALL {
        for b in Basis::ALL {
            out[3 * a.index() + b.index()] = correlator_cells(p, a, b).unwrap_or(0.0);
        }
    }
    let total: f64 = p.iter().flatten().sum();
    for i in 0..6 {
        out[9 + i] = p[i].iter().sum::<f64>() / total;
        out[15 + i] = p.iter().map(|r| r[i]).sum::<f64>() / total;
    }
    out
}

/// Splits events into sifted key pairs and the parameter-estimation matrix.
/// Each event prepared and detected in Z goes to the key with probability
/// `fraction`; everything else is counted in the matrix.
pub fn split_counts(events: &[DetectionEvent], fraction: f64, seed: u64) -> Result<(RawKey, CountMatrix)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(domain("raw-key fraction", fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut key = RawKey::default();
    let mut m = CountMatrix::zeros();
    for ev in events {
        if ev.prep.basis == Basis::Z && ev.det.basis == Basis::Z && rng.random::<f64>() < fraction {
            key.push(ev.prep.sign.bit(), ev.det.sign.bit());
        } else {
            m.add(ev.prep, ev.det, 1);
        }
    }
    Ok((key, m))
}

/// Matrix-level analogue of [`split_counts`]: removes a binomial
/// `fraction` of each Z/Z cell, returning the removed counts separately.
pub fn split_matrix(m: &CountMatrix, fraction: f64, seed: u64) -> Result<(CountMatrix, CountMatrix)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(domain("raw-key fraction", fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut key = CountMatrix::zeros();
    let mut rest = *m;
    for i in 4..6 {
        for j in 4..6 {
            let n = m.counts[i][j];
            let taken = if n == 0 {
                0
            } else {
                use rand_distr::{Binomial, Distribution};
                Binomial::new(n, fraction).expect("valid binomial").sample(&mut rng)
            };
            key.counts[i][j] = taken;
            rest.counts[i][j] = n - taken;
        }
    }
    Ok((key, rest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::ChannelState;
    use crate::device::{click_distribution, ideal_params};

    fn block_matrix(a: Basis, b: Basis, pp: u64, pm: u64, mp: u64, mm: u64) -> CountMatrix {
        let mut m = CountMatrix::zeros();
        m.add(Setting::new(a, Sign::Plus), Setting::new(b, Sign::Plus), pp);
        m.add(Setting::new(a, Sign::Plus), Setting::new(b, Sign::Minus), pm);
        m.add(Setting::new(a, Sign::Minus), Setting::new(b, Sign::Plus), mp);
        m.add(Setting::new(a, Sign::Minus), Setting::new(b, Sign::Minus), mm);
        m
    }

    #[test]
    fn correlator_examples() {
        let m = block_matrix(Basis::X, Basis::Y, 100, 0, 0, 100);
        assert_eq!(correlator(&m, Basis::X, Basis::Y).unwrap(), 1.0);
        let m = block_matrix(Basis::X, Basis::Y, 25, 25, 25, 25);
        assert_eq!(correlator(&m, Basis::X, Basis::Y).unwrap(), 0.0);
        let m = block_matrix(Basis::Z, Basis::Z, 90, 10, 10, 90);
        assert!((correlator(&m, Basis::Z, Basis::Z).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(correlator(&m, Basis::X, Basis::X), Err(Error::ZeroDenominator(_))));
    }

    #[test]
    fn uniform_matrix() {
        let m = CountMatrix::new([[100; 6]; 6]);
        let cs = constraints(&m).unwrap();
        assert!(cs.c.iter().flatten().all(|&c| c == 0.0));
        assert!(cs.p.iter().chain(&cs.d).all(|&p| (p - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn balanced_block_deviation() {
        let n = 400u64;
        let m = block_matrix(Basis::Y, Basis::Z, n / 4, n / 4, n / 4, n / 4);
        let cs = constraints(&m).unwrap();
        assert!((cs.correlator_deviation(Basis::Y, Basis::Z) - 1.0 / (n as f64).sqrt()).abs() < 1e-15);
        // empty blocks are inactive rather than errors
        assert!(!cs.c_active[0][0]);
        assert!(cs.c_active[1][2]);
    }

    #[test]
    fn perfect_channel_counts() {
        let p = click_distribution(&ideal_params(), ChannelState::new(1.0, 1.0).unwrap()).unwrap();
        let m = CountMatrix::new(p.map(|r| r.map(|x| (x * 1e6).round() as u64)));
        let cs = constraints(&m).unwrap();
        assert_eq!(cs.correlator(Basis::Z, Basis::Z), 1.0);
        assert_eq!(cs.correlator_deviation(Basis::Z, Basis::Z), 0.0);
    }

    #[test]
    fn deviation_scales_with_inverse_root() {
        let m = CountMatrix::new([[13, 2, 7, 7, 8, 5], [1, 12, 6, 8, 6, 7], [7, 6, 14, 3, 9, 4], [5, 8, 2, 11, 6, 7], [6, 7, 5, 9, 15, 1], [8, 6, 7, 6, 2, 13]]);
        let base = constraints(&m).unwrap();
        for k in [4u64, 100, 10_000] {
            let cs = constraints(&m.scaled(k)).unwrap();
            let s = (k as f64).sqrt();
            for (a, b) in base.deviations().iter().zip(cs.deviations()) {
                assert!((a / s - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn model_values_match_count_statistics() {
        let p = click_distribution(&ideal_params(), ChannelState::new(0.7, 0.3).unwrap()).unwrap();
        let a = constraint_values(&p);
        let b = constraints_from_cells(&p.map(|r| r.map(|x| x * 1234.5))).unwrap().values();
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn json_and_csv_roundtrip() {
        let m = CountMatrix::new(std::array::from_fn(|i| std::array::from_fn(|j| (10 * i + j) as u64)));
        assert_eq!(CountMatrix::from_json(&m.to_json().unwrap()).unwrap(), m);
        assert_eq!(CountMatrix::from_csv(&m.to_csv().unwrap()).unwrap(), m);
    }

    #[test]
    fn json_respects_declared_order() {
        let text = r#"{"counts": [[1,0,0,0,0,0],[0,0,0,0,0,0],[0,0,0,0,0,0],[0,0,0,0,0,0],[0,0,0,0,0,0],[0,0,0,0,0,2]],
            "prep_order": ["Z-","X-","Y+","Y-","Z+","X+"], "det_order": ["X+","X-","Y+","Y-","Z+","Z-"]}"#;
        let m = CountMatrix::from_json(text).unwrap();
        assert_eq!(m.get(Setting::parse("Z-").unwrap(), Setting::parse("X+").unwrap()), 1);
        assert_eq!(m.get(Setting::parse("X+").unwrap(), Setting::parse("Z-").unwrap()), 2);
        let bad = text.replace("\"Z-\",\"X-\"", "\"Z-\",\"Z-\"");
        assert!(CountMatrix::from_json(&bad).is_err());
    }

    #[test]
    fn relabel_swaps_z_columns() {
        let m = block_matrix(Basis::Z, Basis::Z, 1, 99, 98, 2);
        let r = m.relabel_receiver_z();
        assert!((correlator(&r, Basis::Z, Basis::Z).unwrap() - 0.97).abs() < 1e-12);
    }
}
