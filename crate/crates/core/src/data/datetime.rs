//! Datetime detection and calendar expansion.

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

/// Accepted datetime layouts, in detection order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateFormat {
    /// ISO-8601 date or datetime.
    Iso,
    /// `YYYY/MM/DD`
    YearSlash,
    /// `DD.MM.YYYY`
    DayDot,
    /// `MM/DD/YYYY`
    MonthSlash,
    /// Integer seconds since the Unix epoch in `[1e8, 1e11]`.
    EpochSeconds,
}

/// Formats tried when auto-detecting. Epoch seconds are integers and are
/// claimed by the integer parse first, so they are only used under a hint.
pub const DETECT_FORMATS: [DateFormat; 4] = [
    DateFormat::Iso,
    DateFormat::YearSlash,
    DateFormat::DayDot,
    DateFormat::MonthSlash,
];

pub const HINT_FORMATS: [DateFormat; 5] = [
    DateFormat::Iso,
    DateFormat::YearSlash,
    DateFormat::DayDot,
    DateFormat::MonthSlash,
    DateFormat::EpochSeconds,
];

/// Share of non-missing cells that must parse under one format.
pub const DATETIME_MIN_PARSE_RATE: f64 = 0.99;

const ISO_DATETIME: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

fn date_to_epoch(d: NaiveDate) -> i64 {
    d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp()
}

impl DateFormat {
    /// Parses a cell to epoch seconds (UTC).
    pub fn parse(self, cell: &str) -> Option<i64> {
        let s = cell.trim();
        match self {
            DateFormat::Iso => {
                if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
                    return Some(date_to_epoch(d));
                }
                for f in ISO_DATETIME {
                    if let Ok(dt) = NaiveDateTime::parse_from_str(s, f) {
                        return Some(dt.and_utc().timestamp());
                    }
                }
                DateTime::parse_from_rfc3339(s).ok().map(|dt| dt.timestamp())
            }
            DateFormat::YearSlash => NaiveDate::parse_from_str(s, "%Y/%m/%d")
                .ok()
                .map(date_to_epoch),
            DateFormat::DayDot => NaiveDate::parse_from_str(s, "%d.%m.%Y")
                .ok()
                .map(date_to_epoch),
            DateFormat::MonthSlash => NaiveDate::parse_from_str(s, "%m/%d/%Y")
                .ok()
                .map(date_to_epoch),
            DateFormat::EpochSeconds => {
                let v: i64 = s.parse().ok()?;
                (100_000_000..=100_000_000_000).contains(&v).then_some(v)
            }
        }
    }
}

/// Picks the first format under which at least `min_rate` of the non-missing
/// cells parse. Returns `None` for columns with no non-missing cells.
pub fn detect_format(
    cells: &[Option<String>],
    formats: &[DateFormat],
    min_rate: f64,
) -> Option<DateFormat> {
    let present: Vec<&str> = cells.iter().flatten().map(String::as_str).collect();
    if present.is_empty() {
        return None;
    }
    formats.iter().copied().find(|f| {
        let ok = present.iter().filter(|c| f.parse(c).is_some()).count();
        ok as f64 >= min_rate * present.len() as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatePart {
    Year,
    Month,
    Day,
    Weekday,
    Hour,
}

pub const DATE_PARTS: [DatePart; 5] = [
    DatePart::Year,
    DatePart::Month,
    DatePart::Day,
    DatePart::Weekday,
    DatePart::Hour,
];

impl DatePart {
    pub fn suffix(self) -> &'static str {
        match self {
            DatePart::Year => "year",
            DatePart::Month => "month",
            DatePart::Day => "day",
            DatePart::Weekday => "weekday",
            DatePart::Hour => "hour",
        }
    }

    /// Extracts the part from epoch seconds. Weekday counts Monday as 0.
    pub fn extract(self, epoch: i64) -> f64 {
        let Some(dt) = DateTime::from_timestamp(epoch, 0) else {
            return f64::NAN;
        };
        match self {
            DatePart::Year => dt.year() as f64,
            DatePart::Month => dt.month() as f64,
            DatePart::Day => dt.day() as f64,
            DatePart::Weekday => dt.weekday().num_days_from_monday() as f64,
            DatePart::Hour => dt.hour() as f64,
        }
    }

    pub fn column_name(self, source: &str) -> String {
        format!("{source}__{}", self.suffix())
    }
}

/// Expands parsed timestamps into numeric calendar columns named `<col>__<part>`.
/// Missing timestamps give NaN in every part.
pub fn expand_datetime(name: &str, epochs: &[Option<i64>]) -> Vec<(String, Vec<f64>)> {
    DATE_PARTS
        .iter()
        .map(|&part| {
            let values = epochs
                .iter()
                .map(|e| e.map_or(f64::NAN, |s| part.extract(s)))
                .collect();
            (part.column_name(name), values)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cells(v: &[&str]) -> Vec<Option<String>> {
        v.iter().map(|s| Some(s.to_string())).collect()
    }

    #[test]
    fn expands_calendar_parts() {
        let e = DateFormat::Iso.parse("2021-01-02T00:00").unwrap();
        let parts = expand_datetime("t", &[Some(e)]);
        let got: Vec<(String, f64)> = parts.into_iter().map(|(n, v)| (n, v[0])).collect();
        assert_eq!(
            got,
            vec![
                ("t__year".to_string(), 2021.0),
                ("t__month".to_string(), 1.0),
                ("t__day".to_string(), 2.0),
                ("t__weekday".to_string(), 5.0),
                ("t__hour".to_string(), 0.0),
            ]
        );
    }

    #[test]
    fn equal_timestamps_expand_identically() {
        let e = DateFormat::Iso.parse("2020-06-30 13:45:00").unwrap();
        let parts = expand_datetime("t", &[Some(e), Some(e), None]);
        for (_, v) in &parts {
            assert_eq!(v[0], v[1]);
            assert!(v[2].is_nan());
        }
        assert_eq!(parts[4].1[0], 13.0);
    }

    #[test]
    fn formats_are_distinguished() {
        assert_eq!(
            detect_format(&cells(&["2021-01-02", "2021-02-03"]), &DETECT_FORMATS, 0.99),
            Some(DateFormat::Iso)
        );
        assert_eq!(
            detect_format(&cells(&["2021/01/02"]), &DETECT_FORMATS, 0.99),
            Some(DateFormat::YearSlash)
        );
        assert_eq!(
            detect_format(&cells(&["31.12.2020", "01.01.2021"]), &DETECT_FORMATS, 0.99),
            Some(DateFormat::DayDot)
        );
        assert_eq!(
            detect_format(&cells(&["12/31/2020"]), &DETECT_FORMATS, 0.99),
            Some(DateFormat::MonthSlash)
        );
        assert_eq!(detect_format(&cells(&["x", "y"]), &DETECT_FORMATS, 0.99), None);
    }

    #[test]
    fn mixed_formats_below_threshold_are_rejected() {
        let mut v: Vec<&str> = vec!["2021-01-02"; 90];
        v.extend(vec!["02.01.2021"; 10]);
        assert_eq!(detect_format(&cells(&v), &DETECT_FORMATS, 0.99), None);
    }

    #[test]
    fn epoch_seconds_range() {
        assert_eq!(DateFormat::EpochSeconds.parse("1600000000"), Some(1_600_000_000));
        assert_eq!(DateFormat::EpochSeconds.parse("12"), None);
    }
}
