use std::fmt;
use std::ops::{Add, Mul};
use std::sync::Mutex;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{CompletionResult, ProviderConfig};

/// US-dollar amount held as an exact rational, so cost arithmetic on decimal
/// prices has no rounding error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Usd(Ratio<i128>);

impl Usd {
    pub fn zero() -> Self {
        Usd(Ratio::from_integer(0))
    }

    /// Parses a plain decimal such as `0.03` or `420`.
    pub fn from_decimal(s: &str) -> Option<Self> {
        let s = s.trim();
        let (negative, digits) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        if !int_part
            .chars()
            .chain(frac_part.chars())
            .all(|c| c.is_ascii_digit())
            || frac_part.len() > 18
        {
            return None;
        }
        let scale = 10i128.pow(frac_part.len() as u32);
        let int: i128 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().ok()?
        };
        let frac: i128 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().ok()?
        };
        let value = Ratio::new(int.checked_mul(scale)?.checked_add(frac)?, scale);
        Some(Usd(if negative { -value } else { value }))
    }

    /// Converts through the shortest decimal rendering of the float, so
    /// `0.03_f64` becomes exactly 3/100.
    pub fn from_f64(value: f64) -> Option<Self> {
        if !value.is_finite() {
            return None;
        }
        Usd::from_decimal(&format!("{value}"))
    }

    pub fn ratio(&self) -> Ratio<i128> {
        self.0
    }

    pub fn is_negative(&self) -> bool {
        self.0 < Ratio::from_integer(0)
    }

    pub fn as_f64(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    /// Decimal rendering rounded half away from zero to `places` digits.
    pub fn to_decimal(&self, places: u32) -> String {
        let scale = 10i128.pow(places);
        let scaled = (self.0 * scale).round().to_integer();
        let sign = if scaled < 0 { "-" } else { "" };
        let abs = scaled.abs();
        if places == 0 {
            return format!("{sign}{abs}");
        }
        format!(
            "{sign}{}.{:0width$}",
            abs / scale,
            abs % scale,
            width = places as usize
        )
    }
}

impl Add for Usd {
    type Output = Usd;

    fn add(self, rhs: Usd) -> Usd {
        Usd(self.0 + rhs.0)
    }
}

impl Mul<u64> for Usd {
    type Output = Usd;

    fn mul(self, rhs: u64) -> Usd {
        Usd(self.0 * Ratio::from_integer(i128::from(rhs)))
    }
}

impl fmt::Display for Usd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${}", self.to_decimal(2))
    }
}

impl Serialize for Usd {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_decimal(6))
    }
}

impl<'de> Deserialize<'de> for Usd {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Number(f64),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Text(s) => Usd::from_decimal(&s)
                .ok_or_else(|| serde::de::Error::custom(format!("invalid amount {s:?}"))),
            Repr::Number(n) => Usd::from_f64(n)
                .ok_or_else(|| serde::de::Error::custom(format!("invalid amount {n}"))),
        }
    }
}

/// Accumulated request and token counts with their estimated price.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UsageRecord {
    pub total_requests: u64,
    pub total_input_tokens: u64,
    pub total_output_tokens: u64,
    pub estimated_cost: Usd,
}

impl UsageRecord {
    pub fn record(&mut self, result: &CompletionResult) {
        self.total_requests += 1;
        self.total_input_tokens += result.input_tokens;
        self.total_output_tokens += result.output_tokens;
    }

    /// Returns a copy with `estimated_cost` recomputed from `config` prices.
    pub fn priced(mut self, config: &ProviderConfig) -> Self {
        self.estimated_cost = estimate_cost(&self, config);
        self
    }
}

/// `input_tokens/1000 * input price + output_tokens/1000 * output price`.
pub fn estimate_cost(usage: &UsageRecord, config: &ProviderConfig) -> Usd {
    let per_thousand =
        |tokens: u64, price: Usd| Usd(price.0 * Ratio::new(i128::from(tokens), 1000));
    per_thousand(usage.total_input_tokens, config.price_per_1k_input_tokens)
        + per_thousand(usage.total_output_tokens, config.price_per_1k_output_tokens)
}

/// Token estimate for providers that do not report usage: ceil(chars / 4).
pub fn approx_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// Thread-safe usage accumulator shared by concurrent callers.
#[derive(Debug, Default)]
pub struct UsageMeter {
    inner: Mutex<UsageRecord>,
}

impl UsageMeter {
    pub fn record(&self, result: &CompletionResult) {
        self.inner
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .record(result);
    }

    pub fn snapshot(&self) -> UsageRecord {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}
