//! Treated-unit sampling, enactment dates, and exposure coding.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::panel::Panel;

/// Named enactment-gap conditions, plus user-defined intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GapLabel {
    C1,
    C2,
    C3,
    C4,
    Custom,
}

/// Interval `[low, high)` of years separating the two enactment dates.
///
/// A custom condition may have `low == high`, which pins the gap exactly
/// (`low == high == 0` makes both policies start at the same instant).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapCondition {
    pub label: GapLabel,
    pub low: f64,
    pub high: f64,
}

impl GapCondition {
    pub const C1: GapCondition = GapCondition { label: GapLabel::C1, low: 0.0, high: 1.0 };
    pub const C2: GapCondition = GapCondition { label: GapLabel::C2, low: 3.0, high: 4.0 };
    pub const C3: GapCondition = GapCondition { label: GapLabel::C3, low: 6.0, high: 7.0 };
    pub const C4: GapCondition = GapCondition { label: GapLabel::C4, low: 9.0, high: 10.0 };

    pub const ALL: [GapCondition; 4] = [Self::C1, Self::C2, Self::C3, Self::C4];

    pub fn custom(low: f64, high: f64) -> Result<Self> {
        if !(low.is_finite() && high.is_finite() && 0.0 <= low && low <= high) {
            return Err(Error::InvalidConfig(format!("gap interval [{low}, {high}) is invalid")));
        }
        Ok(GapCondition { label: GapLabel::Custom, low, high })
    }

    /// Whether `gap` lies in this condition's interval.
    pub fn contains(&self, gap: f64) -> bool {
        if self.low == self.high {
            gap == self.low
        } else {
            self.low <= gap && gap < self.high
        }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.low + self.high)
    }
}

impl fmt::Display for GapCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.label {
            GapLabel::C1 => f.write_str("C1"),
            GapLabel::C2 => f.write_str("C2"),
            GapLabel::C3 => f.write_str("C3"),
            GapLabel::C4 => f.write_str("C4"),
            GapLabel::Custom => write!(f, "{}-{}", self.low, self.high),
        }
    }
}

impl FromStr for GapCondition {
    type Err = Error;

    /// Accepts `C1`..`C4` or a custom `low-high` interval such as `0-0` or `1.5-2`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "C1" => Ok(Self::C1),
            "C2" => Ok(Self::C2),
            "C3" => Ok(Self::C3),
            "C4" => Ok(Self::C4),
            _ => {
                let (lo, hi) = s
                    .split_once('-')
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown gap condition `{s}`")))?;
                let parse = |v: &str| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidConfig(format!("unknown gap condition `{s}`")))
                };
                Self::custom(parse(lo)?, parse(hi)?)
            }
        }
    }
}

impl Serialize for GapCondition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GapCondition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingMode {
    /// Primary policy first with probability 1/2.
    Random,
    PrimaryFirst,
}

impl fmt::Display for OrderingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrderingMode::Random => "random",
            OrderingMode::PrimaryFirst => "primary_first",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseIn {
    Instantaneous,
    /// Linear ramp from 0 to 1 over the three years after enactment.
    #[serde(rename = "linear_3yr")]
    Linear3yr,
}

impl fmt::Display for PhaseIn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhaseIn::Instantaneous => "instantaneous",
            PhaseIn::Linear3yr => "linear_3yr",
        })
    }
}

/// Enactment instants (continuous calendar time) of the two policies in one unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnactmentPair {
    pub t_primary: f64,
    pub t_secondary: f64,
    pub ordering: OrderingMode,
}

impl EnactmentPair {
    pub fn gap(&self) -> f64 {
        (self.t_secondary - self.t_primary).abs()
    }
}

/// Samples `k` distinct unit indices uniformly without replacement, sorted ascending.
pub fn assign_treated<R: Rng + ?Sized>(n_units: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k == 0 || k > n_units {
        return Err(Error::KTooLarge { k, n: n_units });
    }
    let mut picked = rand::seq::index::sample(rng, n_units, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Draws one unit's enactment pair.
///
/// The earlier date is uniform over `[first_year + 2, last_year - gap_high - 1)`,
/// leaving at least two untreated years before it and one full year after the
/// later date.
pub fn sample_enactments<R: Rng + ?Sized>(
    cond: &GapCondition,
    ordering: OrderingMode,
    window: (i32, i32),
    rng: &mut R,
) -> Result<EnactmentPair> {
    let lo = window.0 as f64 + 2.0;
    let hi = window.1 as f64 - cond.high - 1.0;
    if hi <= lo {
        return Err(Error::InfeasibleWindow(format!(
            "years {}-{} cannot fit gap condition {cond} with 2 pre-years and 1 post-year",
            window.0, window.1
        )));
    }
    let earlier = rng.random_range(lo..hi);
    let gap = if cond.low == cond.high {
        cond.low
    } else {
        rng.random_range(cond.low..cond.high)
    };
    let primary_first = match ordering {
        OrderingMode::PrimaryFirst => true,
        OrderingMode::Random => rng.random_bool(0.5),
    };
    let later = earlier + gap;
    let (t_primary, t_secondary) = if primary_first { (earlier, later) } else { (later, earlier) };
    Ok(EnactmentPair { t_primary, t_secondary, ordering })
}

// Antiderivative of the exposure ramp, measured from the enactment instant.
fn ramp_integral(x: f64, phase_in: PhaseIn) -> f64 {
    match phase_in {
        PhaseIn::Instantaneous => x.max(0.0),
        PhaseIn::Linear3yr => {
            if x <= 0.0 {
                0.0
            } else if x <= 3.0 {
                x * x / 6.0
            } else {
                1.5 + (x - 3.0)
            }
        }
    }
}

/// Time-averaged exposure within each calendar year for a policy enacted at `enact_time`.
pub fn code_exposure(enact_time: f64, phase_in: PhaseIn, years: &[i32]) -> Vec<f64> {
    years
        .iter()
        .map(|&y| {
            let start = y as f64 - enact_time;
            let v = ramp_integral(start + 1.0, phase_in) - ramp_integral(start, phase_in);
            v.clamp(0.0, 1.0)
        })
        .collect()
}

/// First differences with the value before the first year taken as 0.
pub fn change_code(series: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    series
        .iter()
        .map(|&a| {
            let d = a - prev;
            prev = a;
            d
        })
        .collect()
}

/// Exposure levels and change-coded deltas for both policies, laid out in panel row order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureMatrix {
    n_years: usize,
    pub treated: Vec<bool>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub da1: Vec<f64>,
    pub da2: Vec<f64>,
}

impl ExposureMatrix {
    /// All-zero exposures (every unit is a comparison unit).
    pub fn untreated(n_units: usize, n_years: usize) -> Self {
        let z = vec![0.0; n_units * n_years];
        ExposureMatrix {
            n_years,
            treated: vec![false; n_units],
            a1: z.clone(),
            a2: z.clone(),
            da1: z.clone(),
            da2: z,
        }
    }

    /// Sets a unit's exposure series directly; deltas are derived.
    pub fn set_unit(&mut self, unit: usize, a1: &[f64], a2: &[f64]) {
        let ny = self.n_years;
        assert_eq!(a1.len(), ny);
        assert_eq!(a2.len(), ny);
        let span = unit * ny..(unit + 1) * ny;
        self.a1[span.clone()].copy_from_slice(a1);
        self.a2[span.clone()].copy_from_slice(a2);
        self.da1[span.clone()].copy_from_slice(&change_code(a1));
        self.da2[span].copy_from_slice(&change_code(a2));
        self.treated[unit] = true;
    }

    pub fn n_units(&self) -> usize {
        self.treated.len()
    }

    pub fn n_years(&self) -> usize {
        self.n_years
    }
}

/// One replication's policy draw: who is treated, when, and the resulting exposures.
#[derive(Debug, Clone)]
pub struct PolicyDraw {
    pub treated: Vec<usize>,
    pub enactments: Vec<EnactmentPair>,
    pub exposures: ExposureMatrix,
}

/// Samples treated units and their enactment dates, then codes both exposures.
pub fn draw_policies<R: Rng + ?Sized>(
    panel: &Panel,
    k: usize,
    cond: &GapCondition,
    ordering: OrderingMode,
    phase_in: PhaseIn,
    rng: &mut R,
) -> Result<PolicyDraw> {
    let treated = assign_treated(panel.n_units(), k, rng)?;
    let years = panel.years();
    let window = (panel.first_year(), panel.last_year());
    let mut exposures = ExposureMatrix::untreated(panel.n_units(), years.len());
    let mut enactments = Vec::with_capacity(k);
    for &u in &treated {
        let pair = sample_enactments(cond, ordering, window, rng)?;
        let a1 = code_exposure(pair.t_primary, phase_in, &years);
        let a2 = code_exposure(pair.t_secondary, phase_in, &years);
        exposures.set_unit(u, &a1, &a2);
        enactments.push(pair);
    }
    Ok(PolicyDraw {
        treated,
        enactments,
        exposures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn treated_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = assign_treated(50, 30, &mut rng).unwrap();
        assert_eq!(s.len(), 30);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(assign_treated(50, 50, &mut rng).unwrap(), (0..50).collect::<Vec<_>>());
        assert!(matches!(assign_treated(50, 51, &mut rng), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn gap_conditions_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            let p = sample_enactments(&GapCondition::C1, OrderingMode::Random, (1999, 2016), &mut rng).unwrap();
            assert!(GapCondition::C1.contains(p.gap()));
            let p = sample_enactments(&GapCondition::C4, OrderingMode::PrimaryFirst, (1999, 2016), &mut rng).unwrap();
            assert!(p.t_primary < p.t_secondary);
            assert!((9.0..10.0).contains(&p.gap()));
            assert!(p.t_primary >= 2001.0 && p.t_secondary < 2016.0);
        }
    }

    #[test]
    fn exact_gap_gives_identical_dates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cond = GapCondition::custom(0.0, 0.0).unwrap();
        let p = sample_enactments(&cond, OrderingMode::Random, (1999, 2016), &mut rng).unwrap();
        assert_eq!(p.t_primary, p.t_secondary);
    }

    #[test]
    fn infeasible_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = sample_enactments(&GapCondition::C4, OrderingMode::Random, (2000, 2010), &mut rng);
        assert!(matches!(r, Err(Error::InfeasibleWindow(_))));
    }

    #[test]
    fn random_ordering_is_fair() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let first = (0..n)
            .filter(|_| {
                let p = sample_enactments(&GapCondition::C2, OrderingMode::Random, (1999, 2016), &mut rng).unwrap();
                p.t_primary < p.t_secondary
            })
            .count();
        let frac = first as f64 / n as f64;
        // 3 sigma of Binomial(10000, 1/2) is 0.015
        assert!((frac - 0.5).abs() <= 0.015, "{frac}");
    }

    #[test]
    fn instantaneous_exposure() {
        let years: Vec<i32> = (2003..=2008).collect();
        let e = code_exposure(2005.25, PhaseIn::Instantaneous, &years);
        assert_eq!(e, vec![0.0, 0.0, 0.75, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn phased_exposure() {
        let years: Vec<i32> = (2004..=2009).collect();
        let e = code_exposure(2005.0, PhaseIn::Linear3yr, &years);
        assert!(close(&e, &[0.0, 1.0 / 6.0, 0.5, 5.0 / 6.0, 1.0, 1.0]), "{e:?}");
    }

    #[test]
    fn enactment_after_window_is_zero() {
        let years: Vec<i32> = (1999..=2016).collect();
        for ph in [PhaseIn::Instantaneous, PhaseIn::Linear3yr] {
            assert!(code_exposure(2017.5, ph, &years).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn change_coding() {
        assert_eq!(change_code(&[0.0, 0.0, 0.75, 1.0, 1.0]), vec![0.0, 0.0, 0.75, 0.25, 0.0]);
        assert_eq!(change_code(&[0.0; 4]), vec![0.0; 4]);
        let d = change_code(&[0.0, 1.0 / 6.0, 0.5, 5.0 / 6.0, 1.0, 1.0]);
        assert!(close(&d, &[0.0, 1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, 0.0]));
    }

    #[test]
    fn draw_shapes() {
        let panel = crate::panel::synth_panel(&Default::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = draw_policies(&panel, 5, &GapCondition::C2, OrderingMode::Random, PhaseIn::Instantaneous, &mut rng).unwrap();
        assert_eq!(d.treated.len(), 5);
        let ex = &d.exposures;
        for u in 0..panel.n_units() {
            let span = u * 18..(u + 1) * 18;
            if !ex.treated[u] {
                assert!(ex.a1[span.clone()].iter().chain(&ex.a2[span]).all(|&v| v == 0.0));
            } else {
                assert_eq!(ex.a1[span.end - 1], 1.0);
                assert_eq!(ex.a2[span.end - 1], 1.0);
            }
        }
    }

    proptest! {
        #[test]
        fn exposures_monotone_and_reconstructible(
            enact in 1995.0f64..2020.0,
            phased in any::<bool>(),
        ) {
            let years: Vec<i32> = (1999..=2016).collect();
            let ph = if phased { PhaseIn::Linear3yr } else { PhaseIn::Instantaneous };
            let a = code_exposure(enact, ph, &years);
            for w in a.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
            for (&y, &v) in years.iter().zip(&a) {
                prop_assert!((0.0..=1.0).contains(&v));
                if (y as f64 + 1.0) <= enact {
                    prop_assert_eq!(v, 0.0);
                }
                let full = if phased { enact + 3.0 } else { enact };
                if y as f64 >= full {
                    prop_assert_eq!(v, 1.0);
                }
            }
            let mut acc = 0.0;
            for (d, v) in change_code(&a).iter().zip(&a) {
                acc += d;
                prop_assert!((acc - v).abs() < 1e-12);
            }
        }
    }
}
