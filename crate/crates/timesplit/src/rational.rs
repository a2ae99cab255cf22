//! Exact rational arithmetic helpers shared by the parser, the DBM layer
//! and the exports.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Exact rational used for all symbolic timing bounds.
pub type Rat = BigRational;

/// Shorthand for an integer rational.
pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Shorthand for n/d.
pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

/// Parses a non-negative decimal literal (`12`, `9.8`, `0.001`) or an
/// explicit fraction (`49/5`) into an exact rational.
pub fn parse_rat(text: &str) -> Option<Rat> {
    let text = text.trim();
    if let Some((n, d)) = text.split_once('/') {
        let num: BigInt = n.trim().parse().ok()?;
        let den: BigInt = d.trim().parse().ok()?;
        if den.is_zero() {
            return None;
        }
        return Some(Rat::new(num, den));
    }
    let (sign, body) = match text.strip_prefix('-') {
        Some(rest) => (-1, rest),
        None => (1, text),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    let digits = format!("{}{}", int_part, frac_part);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let num: BigInt = digits.parse().ok()?;
    let den = BigInt::from(10u32).pow(frac_part.len() as u32);
    Some(Rat::new(BigInt::from(sign) * num, den))
}

/// Formats a rational whose reduced denominator is of the form 2^a·5^b as
/// an exact terminating decimal; other denominators fall back to `p/q`.
pub fn format_rat(r: &Rat) -> String {
    let r = r.clone();
    if r.denom().is_one() {
        return r.numer().to_string();
    }
    // strip factors of 2 and 5 from the denominator
    let mut den = r.denom().clone();
    let mut twos = 0u32;
    let mut fives = 0u32;
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    while (&den % &two).is_zero() {
        den /= &two;
        twos += 1;
    }
    while (&den % &five).is_zero() {
        den /= &five;
        fives += 1;
    }
    if !den.is_one() {
        return format!("{}/{}", r.numer(), r.denom());
    }
    let places = twos.max(fives);
    let scale = BigInt::from(10u32).pow(places);
    let scaled = r.numer() * &scale / r.denom();
    let negative = scaled.is_negative();
    let digits = scaled.abs().to_string();
    let digits = if digits.len() <= places as usize {
        format!("{}{}", "0".repeat(places as usize + 1 - digits.len()), digits)
    } else {
        digits
    };
    let split = digits.len() - places as usize;
    format!(
        "{}{}.{}",
        if negative { "-" } else { "" },
        &digits[..split],
        &digits[split..]
    )
}

/// Explicit fraction form `p/q` (plain `p` for integers), for exports.
pub fn format_frac(r: &Rat) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Lossy conversion for simulation-time arithmetic.
pub fn rat_to_f64(r: &Rat) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Smallest rational of the form n/10^6 that is >= x. Used to give
/// irrational support clips an exact, safely rounded-up representation.
pub fn rat_from_f64_ceil(x: f64) -> Rat {
    let scaled = (x * 1e6).ceil() as i64;
    rat(scaled, 1_000_000)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_decimals_exactly() {
        assert_eq!(parse_rat("9.8").unwrap(), rat(49, 5));
        assert_eq!(parse_rat("1198").unwrap(), rat_int(1198));
        assert_eq!(parse_rat("0.001").unwrap(), rat(1, 1000));
        assert_eq!(parse_rat("49/5").unwrap(), rat(49, 5));
        assert_eq!(parse_rat("-0.1").unwrap(), rat(-1, 10));
        assert!(parse_rat("").is_none());
        assert!(parse_rat("1.2.3").is_none());
        assert!(parse_rat("1/0").is_none());
    }

    #[test]
    fn formats_round_trip() {
        for r in [rat(49, 5), rat_int(20), rat(1, 1000), rat(-121, 10), rat(3, 4)] {
            assert_eq!(parse_rat(&format_rat(&r)).unwrap(), r);
        }
        assert_eq!(format_rat(&rat(49, 5)), "9.8");
        assert_eq!(format_rat(&rat(1, 3)), "1/3");
    }

    #[test]
    fn ceil_rounding_is_upper_bound() {
        let x = 11.512925464970229; // ln(1e5)
        let r = rat_from_f64_ceil(x);
        assert!(rat_to_f64(&r) >= x);
        assert!(rat_to_f64(&r) - x < 1e-5);
    }
}
