//! Proleptic Gregorian calendar arithmetic on integer microseconds.
//!
//! Conversions use the days-from-civil algorithm so that the hot parsing
//! path never touches a date library.

use chrono::DateTime;

pub const US_PER_SECOND: i64 = 1_000_000;
pub const US_PER_DAY: i64 = 86_400 * US_PER_SECOND;

/// Days since 1970-01-01 for a civil date. Month and day are not validated.
pub fn days_from_civil(year: i64, month: u32, day: u32) -> i64 {
    let y = if month <= 2 { year - 1 } else { year };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let m = month as i64;
    let doy = (153 * (if m > 2 { m - 3 } else { m + 9 }) + 2) / 5 + day as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

/// Inverse of [`days_from_civil`].
pub fn civil_from_days(days: i64) -> (i64, u32, u32) {
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let month = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let year = yoe + era * 400 + i64::from(month <= 2);
    (year, month, day)
}

pub fn is_leap_year(year: i64) -> bool {
    (year % 4 == 0 && year % 100 != 0) || year % 400 == 0
}

pub fn days_in_month(year: i64, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 if is_leap_year(year) => 29,
        2 => 28,
        _ => 0,
    }
}

pub fn is_valid_date(year: i64, month: u32, day: u32) -> bool {
    (1..=12).contains(&month) && day >= 1 && day <= days_in_month(year, month)
}

/// Formats a UTC instant as RFC-3339 with microsecond precision and a `Z` suffix.
pub fn format_rfc3339_us(t_us: i64) -> String {
    let days = t_us.div_euclid(US_PER_DAY);
    let tod = t_us.rem_euclid(US_PER_DAY);
    let (y, mo, d) = civil_from_days(days);
    let secs = tod / US_PER_SECOND;
    let frac = tod % US_PER_SECOND;
    format!(
        "{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:06}Z",
        y,
        mo,
        d,
        secs / 3600,
        (secs / 60) % 60,
        secs % 60,
        frac
    )
}

/// Parses an RFC-3339 instant (any offset) into microseconds since the epoch.
pub fn parse_rfc3339_us(text: &str) -> Result<i64, String> {
    DateTime::parse_from_rfc3339(text)
        .map(|dt| dt.timestamp_micros())
        .map_err(|e| format!("invalid RFC-3339 instant {text:?}: {e}"))
}

/// Parses a `±HH:MM` offset into seconds. A bare `Z` means zero.
pub fn parse_utc_offset(text: &str) -> Result<i32, String> {
    if text == "Z" || text == "z" {
        return Ok(0);
    }
    let bad = || format!("invalid UTC offset {text:?}, expected ±HH:MM");
    let (sign, rest) = match text.as_bytes().first() {
        Some(b'+') => (1, &text[1..]),
        Some(b'-') => (-1, &text[1..]),
        _ => return Err(bad()),
    };
    let (h, m) = rest.split_once(':').ok_or_else(bad)?;
    if h.len() != 2 || m.len() != 2 {
        return Err(bad());
    }
    let h: i32 = h.parse().map_err(|_| bad())?;
    let m: i32 = m.parse().map_err(|_| bad())?;
    if h > 23 || m > 59 {
        return Err(bad());
    }
    Ok(sign * (h * 3600 + m * 60))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    #[test]
    fn civil_round_trip_against_chrono() {
        let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
        for days in (-800_000i64..800_000).step_by(997) {
            let (y, m, d) = civil_from_days(days);
            let expected = epoch + chrono::Duration::days(days);
            assert_eq!(
                NaiveDate::from_ymd_opt(y as i32, m, d).unwrap(),
                expected,
                "days={days}"
            );
            assert_eq!(days_from_civil(y, m, d), days);
        }
    }

    #[test]
    fn month_lengths() {
        assert_eq!(days_in_month(2019, 2), 28);
        assert_eq!(days_in_month(2020, 2), 29);
        assert_eq!(days_in_month(1900, 2), 28);
        assert_eq!(days_in_month(2000, 2), 29);
        assert!(!is_valid_date(2019, 13, 1));
        assert!(!is_valid_date(2019, 4, 31));
    }

    #[test]
    fn offsets() {
        assert_eq!(parse_utc_offset("-08:00"), Ok(-28_800));
        assert_eq!(parse_utc_offset("+05:30"), Ok(19_800));
        assert_eq!(parse_utc_offset("Z"), Ok(0));
        assert!(parse_utc_offset("08:00").is_err());
        assert!(parse_utc_offset("+8:00").is_err());
        assert!(parse_utc_offset("+24:00").is_err());
    }

    #[test]
    fn rfc3339_format_parses_back() {
        for t in [0i64, 1_574_078_400_500_000, -1, 1_574_121_599_990_000] {
            let s = format_rfc3339_us(t);
            assert_eq!(parse_rfc3339_us(&s), Ok(t), "{s}");
        }
        assert_eq!(format_rfc3339_us(0), "1970-01-01T00:00:00.000000Z");
    }
}
