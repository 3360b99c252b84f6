//! Closed-form cost model and the delete-tile size recommendation.

use crate::error::{Error, Result};

/// Workload composition, as fractions of all operations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Fractions {
    pub empty_point: f64,
    pub point: f64,
    pub short_range: f64,
    pub long_range: f64,
    pub secondary_delete: f64,
    pub insert: f64,
}

impl Fractions {
    fn all(&self) -> [f64; 6] {
        [self.empty_point, self.point, self.short_range, self.long_range, self.secondary_delete, self.insert]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModelParams {
    /// Entries in the tree (N).
    pub entries: f64,
    /// Entries after persisting deletes; defaults to `entries`.
    pub entries_delta: Option<f64>,
    /// Entries per page (B).
    pub entries_per_page: f64,
    /// Pages per file (P), the upper clamp for h.
    pub pages_per_file: u64,
    pub size_ratio: f64,
    /// Disk levels (L); derived from the buffer when absent.
    pub levels: Option<f64>,
    /// Levels holding `entries_delta`; defaults to L.
    pub levels_delta: Option<f64>,
    /// Total filter bits (m).
    pub filter_bits: f64,
    /// Overrides the filter false-positive rate derived from m/N.
    pub fpr: Option<f64>,
    /// Long-range query selectivity (s).
    pub long_range_selectivity: f64,
    pub entry_size: f64,
    pub buffer_bytes: f64,
    /// Tombstone size over average entry size.
    pub lambda: f64,
    pub ingest_rate: f64,
    pub d_th: f64,
    pub key_bytes: f64,
    pub fractions: Fractions,
}

impl Default for CostModelParams {
    fn default() -> Self {
        CostModelParams {
            entries: (1u64 << 20) as f64,
            entries_delta: None,
            entries_per_page: 4.0,
            pages_per_file: 256,
            size_ratio: 10.0,
            levels: None,
            levels_delta: None,
            filter_bits: 10.0 * (1u64 << 20) as f64,
            fpr: None,
            long_range_selectivity: 0.001,
            entry_size: 1024.0,
            buffer_bytes: (1u64 << 20) as f64,
            lambda: 0.1,
            ingest_rate: 1024.0,
            d_th: 60.0,
            key_bytes: 8.0,
            fractions: Fractions { point: 0.5, insert: 0.5, ..Default::default() },
        }
    }
}

impl CostModelParams {
    pub fn validate(&self) -> Result<()> {
        let f = self.fractions.all();
        if f.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidParams("fractions must be non-negative".into()));
        }
        if f.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(Error::InvalidParams("fractions sum above 1".into()));
        }
        if self.entries < 1.0 || self.entries_per_page < 1.0 || self.size_ratio < 1.0 || self.pages_per_file < 1 {
            return Err(Error::InvalidParams("N, B, T and P must be at least 1".into()));
        }
        if let Some(p) = self.fpr {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParams(format!("false-positive rate {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Applies `key = value` pairs, with or without a `tune.` prefix.
    pub fn apply(&mut self, pairs: &std::collections::BTreeMap<String, String>) -> Result<()> {
        for (k, v) in pairs {
            self.set(k.strip_prefix("tune.").unwrap_or(k), v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v: f64 = value.parse().map_err(|_| Error::InvalidParams(format!("{key}: cannot parse {value:?}")))?;
        let f = &mut self.fractions;
        match key {
            "entries" | "n" => self.entries = v,
            "entries_delta" => self.entries_delta = Some(v),
            "entries_per_page" | "b" => self.entries_per_page = v,
            "pages_per_file" | "p" => self.pages_per_file = v as u64,
            "size_ratio" | "t" => self.size_ratio = v,
            "levels" | "l" => self.levels = Some(v),
            "levels_delta" => self.levels_delta = Some(v),
            "filter_bits" | "m" => self.filter_bits = v,
            "fpr" => self.fpr = Some(v),
            "long_range_selectivity" | "s" => self.long_range_selectivity = v,
            "entry_size" => self.entry_size = v,
            "buffer_bytes" => self.buffer_bytes = v,
            "lambda" => self.lambda = v,
            "ingest_rate" => self.ingest_rate = v,
            "d_th" => self.d_th = v,
            "key_bytes" => self.key_bytes = v,
            "f_epq" => f.empty_point = v,
            "f_pq" => f.point = v,
            "f_srq" => f.short_range = v,
            "f_lrq" => f.long_range = v,
            "f_srd" => f.secondary_delete = v,
            "f_i" => f.insert = v,
            _ => return Err(Error::InvalidParams(format!("unknown tuner key {key}"))),
        }
        Ok(())
    }

    /// Data pages, N/B.
    pub fn pages(&self) -> f64 {
        self.entries / self.entries_per_page
    }

    pub fn fpr(&self) -> f64 {
        self.fpr.unwrap_or_else(|| (-(self.filter_bits / self.entries) * std::f64::consts::LN_2.powi(2)).exp())
    }

    pub fn levels(&self) -> f64 {
        self.levels.unwrap_or_else(|| {
            let ratio = self.entries * self.entry_size / self.buffer_bytes;
            ratio.log(self.size_ratio).ceil().max(1.0)
        })
    }

    fn entries_delta(&self) -> f64 {
        self.entries_delta.unwrap_or(self.entries)
    }

    fn levels_delta(&self) -> f64 {
        self.levels_delta.unwrap_or_else(|| self.levels())
    }
}

/// Per-operation-class contributions to the expected I/O per operation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub empty_point: f64,
    pub point: f64,
    pub short_range: f64,
    pub long_range: f64,
    pub secondary_delete: f64,
    pub insert: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.empty_point + self.point + self.short_range + self.long_range + self.secondary_delete + self.insert
    }
}

pub fn cost_breakdown(p: &CostModelParams, h: f64) -> Result<CostBreakdown> {
    p.validate()?;
    if h.is_nan() || h < 1.0 {
        return Err(Error::InvalidParams(format!("h must be at least 1, got {h}")));
    }
    let f = &p.fractions;
    let fpr = p.fpr();
    let l = p.levels();
    Ok(CostBreakdown {
        empty_point: f.empty_point * fpr * h,
        point: f.point * (1.0 + fpr * h),
        short_range: f.short_range * l * h,
        long_range: f.long_range * p.long_range_selectivity * p.pages(),
        secondary_delete: f.secondary_delete * p.pages() / h,
        insert: f.insert * (p.entries / p.entries_per_page).log(p.size_ratio),
    })
}

/// Expected I/Os per operation with delete tiles of `h` pages; `h = 1` is
/// the classic layout.
pub fn workload_cost(p: &CostModelParams, h: f64) -> Result<f64> {
    Ok(cost_breakdown(p, h)?.total())
}

/// Largest h for which the tiled layout costs no more than the classic one.
/// Infinite when only secondary range deletes depend on h; 1 without them.
pub fn h_bound(p: &CostModelParams) -> Result<f64> {
    p.validate()?;
    let f = &p.fractions;
    if f.secondary_delete == 0.0 {
        return Ok(1.0);
    }
    let denom =
        (f.empty_point + f.point) / f.secondary_delete * p.fpr() + f.short_range / f.secondary_delete * p.levels();
    if denom == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(p.pages() / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    /// Largest power of two not above the bound.
    #[default]
    PowerOfTwo,
    Exact,
}

/// Recommended h: the bound clamped to `[1, P]`, then rounded down.
pub fn optimal_h(p: &CostModelParams, rounding: Rounding) -> Result<u64> {
    let bound = h_bound(p)?;
    let clamped = bound.clamp(1.0, p.pages_per_file as f64).floor() as u64;
    Ok(match rounding {
        Rounding::Exact => clamped,
        Rounding::PowerOfTwo => 1 << (63 - clamped.leading_zeros()),
    })
}

/// Cost of every h in `1..=P`.
pub fn cost_grid(p: &CostModelParams) -> Result<Vec<(u64, f64)>> {
    (1..=p.pages_per_file).map(|h| Ok((h, workload_cost(p, h as f64)?))).collect()
}

/// One row of asymptotic metrics, constants set to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub metric: &'static str,
    pub classic_leveling: f64,
    pub classic_tiering: f64,
    pub lethe_leveling: f64,
    pub lethe_tiering: f64,
}

/// Asymptotic cost table for the classic engine and for delete-aware
/// compaction with tiles of `h` pages.
pub fn expected_metrics(p: &CostModelParams, h: f64) -> Result<Vec<MetricRow>> {
    p.validate()?;
    let (n, nd) = (p.entries, p.entries_delta());
    let (l, ld) = (p.levels(), p.levels_delta());
    let (t, b, e, lam) = (p.size_ratio, p.entries_per_page, p.entry_size, p.lambda);
    let big_p = p.pages_per_file as f64;
    let (m, k, c) = (p.filter_bits, p.key_bytes, 8.0);
    let zero = (-p.filter_bits / n).exp();
    let zero_d = (-p.filter_bits / nd).exp();
    let s = p.long_range_selectivity;
    let row = |metric, a, b, c, d| MetricRow {
        metric,
        classic_leveling: a,
        classic_tiering: b,
        lethe_leveling: c,
        lethe_tiering: d,
    };
    Ok(vec![
        row("entries", n, n, nd, nd),
        row("space_amp_no_deletes", 1.0 / t, t, 1.0 / t, t),
        row("space_amp_deletes", ((1.0 - lam) * n + 1.0) / (lam * t), n / (1.0 - lam), 1.0 / t, t),
        row("bytes_written", n * e * l * t, n * e * l, nd * e * ld * t, nd * e * ld),
        row("write_amp", l * t, l, l * t, l),
        row(
            "delete_persistence_latency",
            t.powf(l - 1.0) * big_p * b / p.ingest_rate,
            t.powf(l) * big_p * b / p.ingest_rate,
            p.d_th,
            p.d_th,
        ),
        row("zero_result_lookup", zero, zero * t, h * zero_d, h * zero_d * t),
        row("point_lookup", 1.0, 1.0 + zero * t, 1.0 + h * zero_d, 1.0 + h * zero_d * t),
        row("short_range_lookup", l, l * t, h * ld, h * ld * t),
        row("long_range_lookup", s * n / b, t * s * n / b, s * nd / b, t * s * nd / b),
        row("insert", l * t / b, l / b, ld * t / b, ld / b),
        row("secondary_range_delete", n / b, n / b, nd / (b * h), nd / (b * h)),
        row(
            "memory",
            m + n * k / b,
            m + n * k / b,
            m + nd * (k / (b * h) + c / (b * big_p)),
            m + nd * (k / (b * h) + c / (b * big_p)),
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// 400GB of 4KB pages, one entry per page, 5·10⁷ point lookups and 10⁴
    /// short scans per secondary range delete.
    fn worked_example() -> CostModelParams {
        let srd = 1.0 / (1.0 + 5e7 + 1e4);
        CostModelParams {
            entries: 1e8,
            entries_per_page: 1.0,
            pages_per_file: 256,
            levels: Some(8.0),
            fpr: Some(0.02),
            fractions: Fractions {
                point: 5e7 * srd,
                short_range: 1e4 * srd,
                secondary_delete: srd,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn grid_oracle(p: &CostModelParams) -> u64 {
        let base = workload_cost(p, 1.0).unwrap();
        (1..=p.pages_per_file).filter(|h| workload_cost(p, *h as f64).unwrap() <= base * (1.0 + 1e-12)).max().unwrap()
    }

    #[test]
    fn worked_example_bound() {
        let p = worked_example();
        let b = h_bound(&p).unwrap();
        assert!((b - 1e8 / (1e6 + 8e4)).abs() < 1e-6, "{b}");
        assert_eq!(optimal_h(&p, Rounding::Exact).unwrap(), 92);
        assert_eq!(optimal_h(&p, Rounding::PowerOfTwo).unwrap(), 64);
        assert_eq!(grid_oracle(&p), 92);
    }

    #[test]
    fn h_one_is_classic_cost() {
        let p = worked_example();
        let b = cost_breakdown(&p, 1.0).unwrap();
        let f = p.fractions;
        let classic = f.point * (1.0 + p.fpr()) + f.short_range * 8.0 + f.secondary_delete * 1e8;
        assert!((b.total() - classic).abs() < 1e-9 * classic);
    }

    #[test]
    fn secondary_delete_only() {
        let p = CostModelParams {
            fractions: Fractions { secondary_delete: 1.0, ..Default::default() },
            ..Default::default()
        };
        let c1 = workload_cost(&p, 4.0).unwrap();
        let c2 = workload_cost(&p, 8.0).unwrap();
        assert!((c1 / c2 - 2.0).abs() < 1e-12);
        assert!((c1 - p.pages() / 4.0).abs() < 1e-9);
        assert_eq!(h_bound(&p).unwrap(), f64::INFINITY);
        assert_eq!(optimal_h(&p, Rounding::Exact).unwrap(), p.pages_per_file);
    }

    #[test]
    fn no_secondary_deletes() {
        let p = CostModelParams::default();
        assert_eq!(optimal_h(&p, Rounding::Exact).unwrap(), 1);
        let g = cost_grid(&p).unwrap();
        assert!(g.windows(2).all(|w| w[1].1 > w[0].1));
    }

    #[test]
    fn invalid_params() {
        let mut p = CostModelParams::default();
        p.fractions.point = -0.1;
        assert!(matches!(workload_cost(&p, 1.0), Err(Error::InvalidParams(_))));
        let mut p = CostModelParams::default();
        p.fractions.insert = 0.9;
        assert!(workload_cost(&p, 1.0).is_err());
        assert!(workload_cost(&CostModelParams::default(), 0.5).is_err());
    }

    #[test]
    fn table_rows() {
        let p = CostModelParams { size_ratio: 10.0, levels: Some(3.0), lambda: 1.0, ..Default::default() };
        let rows = expected_metrics(&p, 4.0).unwrap();
        let get = |name| *rows.iter().find(|r| r.metric == name).unwrap();
        assert_eq!(get("write_amp").classic_leveling, 30.0);
        assert!((get("space_amp_deletes").classic_leveling - 0.1).abs() < 1e-12);
        let z = get("zero_result_lookup");
        assert!((z.classic_tiering - 10.0 * z.classic_leveling).abs() < 1e-15);
    }

    #[test]
    fn levels_from_buffer() {
        let p = CostModelParams {
            entries: 1e6,
            entry_size: 100.0,
            buffer_bytes: 1e5,
            size_ratio: 10.0,
            ..Default::default()
        };
        assert_eq!(p.levels(), 3.0);
    }

    fn params() -> impl Strategy<Value = CostModelParams> {
        (1e3f64..1e9, 1.0f64..64.0, 2.0f64..16.0, 2.0f64..16.0, 1e-6f64..0.1, prop::array::uniform5(0.0f64..1.0))
            .prop_map(|(n, b, t, bpe, srd, w)| {
                let total: f64 = w.iter().sum::<f64>() + srd;
                CostModelParams {
                    entries: n,
                    entries_per_page: b,
                    size_ratio: t,
                    filter_bits: bpe * n,
                    pages_per_file: 256,
                    fractions: Fractions {
                        empty_point: w[0] / total,
                        point: w[1] / total,
                        short_range: w[2] / total * 1e-3,
                        long_range: w[3] / total,
                        insert: w[4] / total,
                        secondary_delete: srd / total,
                    },
                    ..Default::default()
                }
            })
    }

    proptest! {
        #[test]
        fn closed_form_matches_grid(p in params()) {
            let exact = optimal_h(&p, Rounding::Exact).unwrap();
            prop_assert!(exact.abs_diff(grid_oracle(&p)) <= 1);
        }

        #[test]
        fn recommendation_never_worse(p in params()) {
            for r in [Rounding::Exact, Rounding::PowerOfTwo] {
                let h = optimal_h(&p, r).unwrap() as f64;
                prop_assert!(workload_cost(&p, h).unwrap() <= workload_cost(&p, 1.0).unwrap() * (1.0 + 1e-12));
            }
        }

        #[test]
        fn more_secondary_deletes_never_lower_h(p in params(), k in 1.0f64..10.0) {
            let mut q = p;
            q.fractions.secondary_delete *= k;
            prop_assume!(q.validate().is_ok());
            prop_assert!(optimal_h(&q, Rounding::Exact).unwrap() >= optimal_h(&p, Rounding::Exact).unwrap());
        }
    }
}
