//! Exact integer time representation and drifting-clock models.
//!
//! All time values are signed tick counts at 2^-16 ns per tick, the
//! granularity of PTP correction fields, so link-delay and residence-time
//! arithmetic never rounds. Clock mappings multiply by an exact rational
//! rate; the only rounding anywhere is the final floor to a clock's read
//! granularity.

use num::rational::Ratio;
use num::{One, Signed, Zero};
use std::fmt;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};

use thiserror::Error;

/// Ticks per nanosecond (2^16).
pub const TICKS_PER_NS: i64 = 1 << 16;
/// Ticks per microsecond.
pub const TICKS_PER_US: i64 = TICKS_PER_NS * 1_000;
/// Ticks per millisecond.
pub const TICKS_PER_MS: i64 = TICKS_PER_NS * 1_000_000;
/// Ticks per second.
pub const TICKS_PER_SEC: i64 = TICKS_PER_NS * 1_000_000_000;

/// Exact rational used wherever a quantity is a ratio of tick counts
/// (drift rates, neighbor rate ratios, overhead ratios).
pub type Rational = Ratio<i128>;

/// A point on the simulator's true timeline (or a local clock reading),
/// in ticks of 2^-16 ns. An `i64` covers about 1.4e5 seconds either side
/// of zero at this resolution.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp {
    ticks: i64,
}

/// A signed span of time in the same tick unit as [`Timestamp`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TickDuration {
    ticks: i64,
}

macro_rules! tick_ctors {
    ($ty:ident) => {
        impl $ty {
            pub const ZERO: Self = Self { ticks: 0 };

            pub const fn from_ticks(ticks: i64) -> Self {
                Self { ticks }
            }

            pub const fn from_nanos(ns: i64) -> Self {
                Self { ticks: ns * TICKS_PER_NS }
            }

            pub const fn from_micros(us: i64) -> Self {
                Self { ticks: us * TICKS_PER_US }
            }

            pub const fn from_millis(ms: i64) -> Self {
                Self { ticks: ms * TICKS_PER_MS }
            }

            pub const fn from_secs(s: i64) -> Self {
                Self { ticks: s * TICKS_PER_SEC }
            }

            pub const fn ticks(self) -> i64 {
                self.ticks
            }
        }
    };
}

tick_ctors!(Timestamp);
tick_ctors!(TickDuration);

impl TickDuration {
    pub fn abs(self) -> Self {
        Self { ticks: self.ticks.abs() }
    }

    pub fn is_negative(self) -> bool {
        self.ticks < 0
    }

    /// Scales this duration by an exact rational, flooring the result to
    /// whole ticks.
    pub fn scale_floor(self, r: Rational) -> Self {
        let scaled = Rational::from_integer(self.ticks as i128) * r;
        Self { ticks: ratio_floor_i64(scaled) }
    }
}

fn overflow() -> ! {
    panic!("tick arithmetic overflow: simulated horizon exceeds the representable range")
}

fn checked(v: Option<i64>) -> i64 {
    v.unwrap_or_else(|| overflow())
}

impl Add<TickDuration> for Timestamp {
    type Output = Timestamp;
    fn add(self, rhs: TickDuration) -> Timestamp {
        Timestamp { ticks: checked(self.ticks.checked_add(rhs.ticks)) }
    }
}

impl Sub<TickDuration> for Timestamp {
    type Output = Timestamp;
    fn sub(self, rhs: TickDuration) -> Timestamp {
        Timestamp { ticks: checked(self.ticks.checked_sub(rhs.ticks)) }
    }
}

impl Sub for Timestamp {
    type Output = TickDuration;
    fn sub(self, rhs: Timestamp) -> TickDuration {
        TickDuration { ticks: checked(self.ticks.checked_sub(rhs.ticks)) }
    }
}

impl Add for TickDuration {
    type Output = TickDuration;
    fn add(self, rhs: TickDuration) -> TickDuration {
        TickDuration { ticks: checked(self.ticks.checked_add(rhs.ticks)) }
    }
}

impl Sub for TickDuration {
    type Output = TickDuration;
    fn sub(self, rhs: TickDuration) -> TickDuration {
        TickDuration { ticks: checked(self.ticks.checked_sub(rhs.ticks)) }
    }
}

impl Neg for TickDuration {
    type Output = TickDuration;
    fn neg(self) -> TickDuration {
        TickDuration { ticks: checked(self.ticks.checked_neg()) }
    }
}

impl AddAssign for TickDuration {
    fn add_assign(&mut self, rhs: TickDuration) {
        *self = *self + rhs;
    }
}

impl SubAssign for TickDuration {
    fn sub_assign(&mut self, rhs: TickDuration) {
        *self = *self - rhs;
    }
}

impl fmt::Debug for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Timestamp({})", decimal_ns(self.ticks))
    }
}

impl fmt::Debug for TickDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TickDuration({})", decimal_ns(self.ticks))
    }
}

/// Renders a tick count as an exact decimal nanosecond string, e.g.
/// `"96ns"` or `"1.5ns"`. Used only for diagnostics.
fn decimal_ns(ticks: i64) -> String {
    let whole = ticks.div_euclid(TICKS_PER_NS);
    let frac = ticks.rem_euclid(TICKS_PER_NS);
    if frac == 0 {
        format!("{whole}ns")
    } else {
        format!("{ticks}ticks")
    }
}

/// Floors an exact rational to an `i64` tick count.
pub fn ratio_floor_i64(r: Rational) -> i64 {
    let f = r.floor().to_integer();
    i64::try_from(f).unwrap_or_else(|_| overflow())
}

/// Largest multiple of `g` not exceeding `t` (floor toward negative
/// infinity). `g` must be at least one tick.
pub fn quantize(t: Timestamp, g: TickDuration) -> Timestamp {
    assert!(g.ticks >= 1, "quantization granularity must be >= 1 tick");
    Timestamp { ticks: t.ticks.div_euclid(g.ticks) * g.ticks }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClockModelError {
    #[error("|drift_ppm| must be at most 1000 ppm, got {0}")]
    DriftOutOfRange(String),
    #[error("drift_ppm denominator too fine (more than 9 decimal digits)")]
    DriftTooFine,
    #[error("read granularity must be at least 1 tick")]
    GranularityTooSmall,
}

/// A free-running local oscillator: a strictly increasing affine map from
/// true time to local readings, quantized to the clock's read granularity.
///
/// The unquantized mapping is
/// `local(t) = epoch + offset_at_epoch + (1 + drift_ppm * 1e-6) * (t - epoch)`
/// evaluated in exact rational arithmetic; the result is floored to a
/// multiple of `read_granularity`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClockModel {
    offset_at_epoch: TickDuration,
    drift_ppm: Rational,
    read_granularity: TickDuration,
    epoch: Timestamp,
    // slope as numerator/denominator, cached at construction
    rate_num: i128,
    rate_den: i128,
}

impl ClockModel {
    pub fn new(
        offset_at_epoch: TickDuration,
        drift_ppm: Rational,
        read_granularity: TickDuration,
        epoch: Timestamp,
    ) -> Result<Self, ClockModelError> {
        if drift_ppm.abs() > Rational::from_integer(1000) {
            return Err(ClockModelError::DriftOutOfRange(format!(
                "{}/{}",
                drift_ppm.numer(),
                drift_ppm.denom()
            )));
        }
        if *drift_ppm.denom() > 1_000_000_000 {
            return Err(ClockModelError::DriftTooFine);
        }
        if read_granularity.ticks() < 1 {
            return Err(ClockModelError::GranularityTooSmall);
        }
        // slope = 1 + ppm/1e6 = (den*1e6 + num) / (den*1e6)
        let den = drift_ppm.denom() * 1_000_000;
        let num = den + drift_ppm.numer();
        Ok(Self {
            offset_at_epoch,
            drift_ppm,
            read_granularity,
            epoch,
            rate_num: num,
            rate_den: den,
        })
    }

    /// Ideal clock: zero offset, zero drift, single-tick granularity.
    pub fn ideal() -> Self {
        Self::new(TickDuration::ZERO, Rational::zero(), TickDuration::from_ticks(1), Timestamp::ZERO)
            .expect("ideal clock parameters are valid")
    }

    pub fn offset_at_epoch(&self) -> TickDuration {
        self.offset_at_epoch
    }

    pub fn drift_ppm(&self) -> Rational {
        self.drift_ppm
    }

    pub fn read_granularity(&self) -> TickDuration {
        self.read_granularity
    }

    pub fn epoch(&self) -> Timestamp {
        self.epoch
    }

    /// Reads the local clock at true time `true_time`.
    ///
    /// Exact rational arithmetic throughout; the single rounding step is
    /// the final floor to `read_granularity`.
    pub fn read_local(&self, true_time: Timestamp) -> Timestamp {
        let base = self.epoch.ticks() as i128 + self.offset_at_epoch.ticks() as i128;
        let elapsed = (true_time - self.epoch).ticks() as i128;
        // local = base + elapsed * num/den, floored to granularity g:
        //   floor((base*den + elapsed*num) / (den*g)) * g
        let numer = base
            .checked_mul(self.rate_den)
            .and_then(|v| v.checked_add(elapsed.checked_mul(self.rate_num)?))
            .unwrap_or_else(|| overflow());
        let g = self.read_granularity.ticks() as i128;
        let ticks = numer.div_euclid(self.rate_den * g) * g;
        Timestamp::from_ticks(i64::try_from(ticks).unwrap_or_else(|_| overflow()))
    }

    /// Inverse of the unquantized mapping: the earliest true tick at which
    /// the local clock has reached `local_time`. For any `local_time`
    /// reachable by the mapping, `read_local(to_true(L))` differs from `L`
    /// by less than the read granularity.
    pub fn to_true(&self, local_time: Timestamp) -> Timestamp {
        let base = self.epoch.ticks() as i128 + self.offset_at_epoch.ticks() as i128;
        let lhs = (local_time.ticks() as i128)
            .checked_mul(self.rate_den)
            .and_then(|v| v.checked_sub(base.checked_mul(self.rate_den)?))
            .unwrap_or_else(|| overflow());
        // smallest integer elapsed with elapsed*num >= lhs
        let elapsed = div_ceil_i128(lhs, self.rate_num);
        let ticks = self.epoch.ticks() as i128 + elapsed;
        Timestamp::from_ticks(i64::try_from(ticks).unwrap_or_else(|_| overflow()))
    }
}

fn div_ceil_i128(a: i128, b: i128) -> i128 {
    debug_assert!(b > 0);
    let q = a.div_euclid(b);
    if a.rem_euclid(b) == 0 {
        q
    } else {
        q + 1
    }
}

/// Parses an exact rational from a plain decimal string such as `-12.5`.
/// Scientific notation is not accepted; at most 9 fractional digits.
pub fn rational_from_decimal_str(s: &str) -> Result<Rational, String> {
    let s = s.trim();
    if s.is_empty() {
        return Err("empty decimal".into());
    }
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1i128, rest),
        None => (1i128, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(format!("malformed decimal '{s}'"));
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return Err(format!("malformed decimal '{s}'"));
    }
    if frac_part.len() > 9 {
        return Err(format!("'{s}' has more than 9 fractional digits"));
    }
    let scale = 10i128.pow(frac_part.len() as u32);
    let int_v: i128 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| format!("'{s}' out of range"))? };
    let frac_v: i128 = if frac_part.is_empty() { 0 } else { frac_part.parse().map_err(|_| format!("'{s}' out of range"))? };
    Ok(Rational::new(sign * (int_v * scale + frac_v), scale))
}

/// Exact decimal conversion of an `f64` via its shortest round-trip
/// representation; rejects non-finite values and values needing more than
/// 9 fractional digits.
pub fn rational_from_f64(v: f64) -> Result<Rational, String> {
    if !v.is_finite() {
        return Err("non-finite number".into());
    }
    rational_from_decimal_str(&format!("{v}"))
}

/// Renders a rational as a decimal string, exactly when the reduced
/// denominator is of the form 2^a * 5^b, as a fraction otherwise.
pub fn rational_to_decimal_string(r: Rational) -> String {
    let mut den = *r.denom();
    let mut twos = 0u32;
    let mut fives = 0u32;
    while den % 2 == 0 {
        den /= 2;
        twos += 1;
    }
    while den % 5 == 0 {
        den /= 5;
        fives += 1;
    }
    if den != 1 {
        return format!("{}/{}", r.numer(), r.denom());
    }
    // scale to 10^max(twos, fives)
    let digits = twos.max(fives);
    let scale = 10i128.pow(digits);
    let scaled = r.numer() * (scale / r.denom());
    let sign = if scaled < 0 { "-" } else { "" };
    let mag = scaled.unsigned_abs();
    let whole = mag / 10u128.pow(digits);
    let frac = mag % 10u128.pow(digits);
    if digits == 0 {
        format!("{sign}{whole}")
    } else {
        let frac_str = format!("{:0width$}", frac, width = digits as usize);
        let trimmed = frac_str.trim_end_matches('0');
        if trimmed.is_empty() {
            format!("{sign}{whole}")
        } else {
            format!("{sign}{whole}.{trimmed}")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clock(offset_ticks: i64, ppm_num: i128, ppm_den: i128, gran_ticks: i64) -> ClockModel {
        ClockModel::new(
            TickDuration::from_ticks(offset_ticks),
            Rational::new(ppm_num, ppm_den),
            TickDuration::from_ticks(gran_ticks),
            Timestamp::ZERO,
        )
        .unwrap()
    }

    #[test]
    fn tick_unit_constants() {
        assert_eq!(TICKS_PER_NS, 65_536);
        assert_eq!(TickDuration::from_nanos(32).ticks(), 2_097_152);
        // at least 1e5 s representable
        let _ = Timestamp::from_secs(100_000);
    }

    #[test]
    fn quantize_examples() {
        let g32 = TickDuration::from_nanos(32);
        assert_eq!(quantize(Timestamp::from_nanos(100), g32), Timestamp::from_nanos(96));
        let t = Timestamp::from_ticks(123_456_789);
        assert_eq!(quantize(t, TickDuration::from_ticks(1)), t);
        assert_eq!(
            quantize(Timestamp::from_ticks(-5), TickDuration::from_ticks(4)),
            Timestamp::from_ticks(-8)
        );
    }

    #[test]
    fn read_local_identity_for_ideal_clock() {
        let c = ClockModel::ideal();
        let t = Timestamp::from_ticks(987_654_321);
        assert_eq!(c.read_local(t), t);
    }

    #[test]
    fn read_local_ten_ppm_over_one_second() {
        let c = clock(0, 10, 1, 1);
        let t = Timestamp::from_secs(1);
        // 1 s + 10 us of local elapsed time
        let expected = Timestamp::from_ticks(65_536_000_000_000 + 655_360_000);
        assert_eq!(c.read_local(t), expected);
    }

    #[test]
    fn read_local_floors_to_granularity() {
        let c = clock(0, 0, 1, TickDuration::from_nanos(32).ticks());
        assert_eq!(c.read_local(Timestamp::from_nanos(100)), Timestamp::from_nanos(96));
    }

    #[test]
    fn read_local_applies_offset_exactly() {
        let c = clock(777, 0, 1, 1);
        let t = Timestamp::from_ticks(1_000);
        assert_eq!(c.read_local(t), Timestamp::from_ticks(1_777));
    }

    #[test]
    fn to_true_identity_and_ten_ppm_inverse() {
        let ideal = ClockModel::ideal();
        let l = Timestamp::from_ticks(42_000_000);
        assert_eq!(ideal.to_true(l), l);

        let c = clock(0, 10, 1, 1);
        let local = Timestamp::from_ticks(65_536_000_000_000 + 655_360_000);
        assert_eq!(c.to_true(local), Timestamp::from_secs(1));
    }

    #[test]
    fn two_clock_divergence_is_exact() {
        // d1 = +50 ppm, d2 = -25 ppm: divergence 75 us per second of true time.
        let c1 = clock(0, 50, 1, 1);
        let c2 = clock(0, -25, 1, 1);
        for secs in [1i64, 7, 100] {
            let t = Timestamp::from_secs(secs);
            let diff = c1.read_local(t) - c2.read_local(t);
            assert_eq!(diff, TickDuration::from_micros(75 * secs));
        }
    }

    #[test]
    fn drift_bounds_enforced() {
        let too_fast = ClockModel::new(
            TickDuration::ZERO,
            Rational::from_integer(1001),
            TickDuration::from_ticks(1),
            Timestamp::ZERO,
        );
        assert_eq!(too_fast.unwrap_err(), ClockModelError::DriftOutOfRange("1001/1".into()));
        let bad_gran = ClockModel::new(
            TickDuration::ZERO,
            Rational::zero(),
            TickDuration::ZERO,
            Timestamp::ZERO,
        );
        assert_eq!(bad_gran.unwrap_err(), ClockModelError::GranularityTooSmall);
    }

    #[test]
    #[should_panic(expected = "overflow")]
    fn read_local_overflow_is_fatal() {
        let c = clock(0, 1000, 1, 1);
        let _ = c.read_local(Timestamp::from_ticks(i64::MAX - 1));
    }

    #[test]
    fn decimal_parsing_is_exact() {
        assert_eq!(rational_from_decimal_str("0.5").unwrap(), Rational::new(1, 2));
        assert_eq!(rational_from_decimal_str("-12.25").unwrap(), Rational::new(-49, 4));
        assert_eq!(rational_from_f64(0.1).unwrap(), Rational::new(1, 10));
        assert!(rational_from_decimal_str("1e-3").is_err());
        assert!(rational_from_decimal_str("0.1234567891").is_err());
    }

    #[test]
    fn rational_rendering() {
        assert_eq!(rational_to_decimal_string(Rational::new(8, 1000)), "0.008");
        assert_eq!(rational_to_decimal_string(Rational::new(1, 1)), "1");
        assert_eq!(rational_to_decimal_string(Rational::new(-3, 4)), "-0.75");
        assert_eq!(rational_to_decimal_string(Rational::new(1, 3)), "1/3");
    }

    prop_compose! {
        fn arb_clock()(
            offset in -1_000_000_000i64..1_000_000_000,
            ppm_num in -1000i128..=1000,
            ppm_den in 1i128..=1000,
            gran in prop_oneof![Just(1i64), Just(512), Just(TickDuration::from_nanos(8).ticks()), Just(TickDuration::from_nanos(32).ticks())],
        ) -> ClockModel {
            clock(offset, ppm_num, ppm_den, gran)
        }
    }

    proptest! {
        #[test]
        fn read_local_is_monotone(c in arb_clock(), a in 0i64..10_000_000_000_000, b in 0i64..10_000_000_000_000) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let ra = c.read_local(Timestamp::from_ticks(lo));
            let rb = c.read_local(Timestamp::from_ticks(hi));
            prop_assert!(ra <= rb);
        }

        /// Round trip through a reachable local reading: pick a true time at
        /// which the unquantized mapping lands on whole ticks, read it back.
        #[test]
        fn to_true_round_trip_within_granularity(c in arb_clock(), k in 0i128..5_000_000) {
            // elapsed that is a multiple of the slope denominator makes the
            // unquantized local reading an exact integer (reachable).
            let den = 1_000_000i128 * c.drift_ppm().denom();
            let num = den + c.drift_ppm().numer();
            let elapsed = k * den;
            let true_t = Timestamp::from_ticks(i64::try_from(elapsed).unwrap());
            let local_exact = Timestamp::from_ticks(
                i64::try_from(c.offset_at_epoch().ticks() as i128 + k * num).unwrap(),
            );
            let recovered = c.to_true(local_exact);
            prop_assert_eq!(recovered, true_t);
            let readback = c.read_local(recovered);
            let err = (readback - local_exact).abs();
            prop_assert!(err < c.read_granularity());
        }

        #[test]
        fn quantize_is_floor_multiple(t in -1_000_000_000i64..1_000_000_000, g in 1i64..100_000) {
            let q = quantize(Timestamp::from_ticks(t), TickDuration::from_ticks(g));
            prop_assert!(q.ticks() % g == 0);
            prop_assert!(q.ticks() <= t);
            prop_assert!(t - q.ticks() < g);
        }
    }
}
