//! Exact decimal numbers for predicate literals.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Largest number of digits accepted on either side of the decimal point.
const MAX_DIGITS: usize = 18;

/// A base-10 fixed-point number `mantissa * 10^-scale`.
///
/// Values are kept normalized (no trailing fractional zeros), so derived
/// equality and hashing agree with numeric equality.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Decimal {
    mantissa: i128,
    scale: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecimalError {
    #[error("empty number")]
    Empty,
    #[error("invalid digit in number `{0}`")]
    InvalidDigit(String),
    #[error("number `{0}` has too many digits")]
    TooManyDigits(String),
}

impl Decimal {
    pub const ZERO: Decimal = Decimal {
        mantissa: 0,
        scale: 0,
    };
    pub const ONE: Decimal = Decimal {
        mantissa: 1,
        scale: 0,
    };

    fn new(mantissa: i128, scale: u32) -> Self {
        let mut d = Decimal { mantissa, scale };
        while d.scale > 0 && d.mantissa % 10 == 0 {
            d.mantissa /= 10;
            d.scale -= 1;
        }
        if d.mantissa == 0 {
            d.scale = 0;
        }
        d
    }

    pub fn from_i64(v: i64) -> Self {
        Decimal::new(v as i128, 0)
    }

    /// Shortest decimal that round-trips to `v`, if it fits.
    pub fn from_f64(v: f64) -> Option<Self> {
        if !v.is_finite() {
            return None;
        }
        format!("{v}").parse().ok()
    }

    pub fn to_f64(self) -> f64 {
        // Display output is a plain decimal string, which f64 parses exactly-rounded.
        self.to_string().parse().unwrap_or(f64::NAN)
    }

    pub fn is_negative(self) -> bool {
        self.mantissa < 0
    }

    fn pow10(exp: u32) -> Option<i128> {
        10i128.checked_pow(exp)
    }

    fn aligned(self, other: Decimal) -> Option<(i128, i128, u32)> {
        let scale = self.scale.max(other.scale);
        let a = self
            .mantissa
            .checked_mul(Self::pow10(scale - self.scale)?)?;
        let b = other
            .mantissa
            .checked_mul(Self::pow10(scale - other.scale)?)?;
        Some((a, b, scale))
    }

    pub fn checked_add(self, other: Decimal) -> Option<Decimal> {
        let (a, b, scale) = self.aligned(other)?;
        Some(Decimal::new(a.checked_add(b)?, scale))
    }

    pub fn checked_sub(self, other: Decimal) -> Option<Decimal> {
        let (a, b, scale) = self.aligned(other)?;
        Some(Decimal::new(a.checked_sub(b)?, scale))
    }

    /// `self / 2`, exact.
    pub fn checked_half(self) -> Option<Decimal> {
        if self.mantissa % 2 == 0 {
            return Some(Decimal::new(self.mantissa / 2, self.scale));
        }
        Some(Decimal::new(self.mantissa.checked_mul(5)?, self.scale + 1))
    }

    /// Exact midpoint of `self` and `other`.
    pub fn midpoint(self, other: Decimal) -> Option<Decimal> {
        self.checked_add(other)?.checked_half()
    }
}

impl Ord for Decimal {
    fn cmp(&self, other: &Self) -> Ordering {
        if let Some((a, b, _)) = self.aligned(*other) {
            return a.cmp(&b);
        }
        // Alignment overflowed: compare integer parts, then fractions.
        let pa = Self::pow10(self.scale).unwrap_or(i128::MAX);
        let pb = Self::pow10(other.scale).unwrap_or(i128::MAX);
        let (ia, fa) = (self.mantissa.div_euclid(pa), self.mantissa.rem_euclid(pa));
        let (ib, fb) = (other.mantissa.div_euclid(pb), other.mantissa.rem_euclid(pb));
        ia.cmp(&ib).then_with(|| {
            let (fa, fb) = (fa as f64 / pa as f64, fb as f64 / pb as f64);
            fa.partial_cmp(&fb).unwrap_or(Ordering::Equal)
        })
    }
}

impl PartialOrd for Decimal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl From<i64> for Decimal {
    fn from(v: i64) -> Self {
        Decimal::from_i64(v)
    }
}

impl FromStr for Decimal {
    type Err = DecimalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (negative, body) = match s.as_bytes().first() {
            Some(b'-') => (true, &s[1..]),
            Some(b'+') => (false, &s[1..]),
            Some(_) => (false, s),
            None => return Err(DecimalError::Empty),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(DecimalError::InvalidDigit(s.to_string()));
        }
        if !int_part
            .bytes()
            .chain(frac_part.bytes())
            .all(|b| b.is_ascii_digit())
        {
            return Err(DecimalError::InvalidDigit(s.to_string()));
        }
        let int_part = int_part.trim_start_matches('0');
        let frac_part = frac_part.trim_end_matches('0');
        if int_part.len() > MAX_DIGITS || frac_part.len() > MAX_DIGITS {
            return Err(DecimalError::TooManyDigits(s.to_string()));
        }
        let mut mantissa: i128 = 0;
        for b in int_part.bytes().chain(frac_part.bytes()) {
            mantissa = mantissa * 10 + (b - b'0') as i128;
        }
        if negative {
            mantissa = -mantissa;
        }
        Ok(Decimal::new(mantissa, frac_part.len() as u32))
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.mantissa < 0 { "-" } else { "" };
        let digits = self.mantissa.unsigned_abs().to_string();
        if self.scale == 0 {
            return write!(f, "{sign}{digits}");
        }
        let scale = self.scale as usize;
        if digits.len() > scale {
            let (i, frac) = digits.split_at(digits.len() - scale);
            write!(f, "{sign}{i}.{frac}")
        } else {
            write!(f, "{sign}0.{}{digits}", "0".repeat(scale - digits.len()))
        }
    }
}

impl fmt::Debug for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}
