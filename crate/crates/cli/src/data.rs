//! Price-series ingestion and segmentation.
//!
//! The input format is a two-column CSV — timestamp, price — with an
//! optional header, UTF-8 encoded, LF or CRLF line endings. Timestamps are
//! either plain integers (kept as given) or ISO-8601 dates/datetimes
//! (converted to Unix seconds). Rows are validated as they are read:
//! non-positive prices and out-of-order timestamps are rejected with their
//! line number — nothing is silently dropped or sorted.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use gpvol::returns::PriceSeries;
use gpvol::{Error, Result};

/// Read and validate a `timestamp,price` CSV.
pub fn ingest_csv(path: &Path) -> Result<PriceSeries> {
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(BufReader::new(file));

    let mut timestamps: Vec<i64> = Vec::new();
    let mut prices: Vec<f64> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            line: row + 1,
            message: e.to_string(),
        })?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(row + 1);
        if record.len() != 2 {
            return Err(Error::Csv {
                line,
                message: format!("expected 2 columns (timestamp, price), got {}", record.len()),
            });
        }
        let ts_field = record[0].trim();
        let price_field = record[1].trim();
        let ts = parse_timestamp(ts_field);
        let price = price_field.parse::<f64>().ok();
        // A single leading header row is allowed: both fields must fail to
        // parse, so a malformed data row cannot masquerade as one.
        if row == 0 && ts.is_none() && price.is_none() {
            continue;
        }
        let ts = ts.ok_or_else(|| Error::Csv {
            line,
            message: format!("unrecognized timestamp '{ts_field}' (integer or ISO-8601 expected)"),
        })?;
        let price = price.ok_or_else(|| Error::Csv {
            line,
            message: format!("unparsable price '{price_field}'"),
        })?;
        if !(price.is_finite() && price > 0.0) {
            return Err(Error::Csv {
                line,
                message: format!("price must be positive and finite, got {price_field}"),
            });
        }
        if let Some(&prev) = timestamps.last() {
            if ts <= prev {
                return Err(Error::Csv {
                    line,
                    message: format!(
                        "timestamps must be strictly increasing ({ts} follows {prev}); \
                         refusing to sort input"
                    ),
                });
            }
        }
        timestamps.push(ts);
        prices.push(price);
    }
    if timestamps.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} contains no data rows",
            path.display()
        )));
    }
    Ok(PriceSeries { timestamps, prices })
}

/// Integer timestamps pass through; ISO-8601 datetimes (RFC 3339, `T` or
/// space separated, or bare dates) become Unix seconds.
fn parse_timestamp(field: &str) -> Option<i64> {
    if let Ok(v) = field.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(field) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(field, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(field, "%Y-%m-%d") {
        return Some(d.and_hms_opt(0, 0, 0)?.and_utc().timestamp());
    }
    None
}

/// A consecutive slice of an ingested price series.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Zero-based position within the input.
    pub index: usize,
    /// True when this is a trailing remainder shorter than the segment
    /// length.
    pub partial: bool,
    pub prices: PriceSeries,
}

/// Split a series into consecutive non-overlapping segments of
/// `segment_len` points; a trailing remainder is kept as a flagged partial
/// segment, as is an input shorter than one full segment.
pub fn split_segments(series: &PriceSeries, segment_len: usize) -> Result<Vec<Segment>> {
    if segment_len < 2 {
        return Err(Error::InvalidInput(format!(
            "segment length must be at least 2 points, got {segment_len}"
        )));
    }
    let segments = series
        .timestamps
        .chunks(segment_len)
        .zip(series.prices.chunks(segment_len))
        .enumerate()
        .map(|(index, (ts, ps))| Segment {
            index,
            partial: ts.len() < segment_len,
            prices: PriceSeries {
                timestamps: ts.to_vec(),
                prices: ps.to_vec(),
            },
        })
        .collect();
    Ok(segments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_two_row_file_without_header() {
        let f = write_temp("1,100.5\n2,101.25\n");
        let series = ingest_csv(f.path()).unwrap();
        assert_eq!(series.timestamps, vec![1, 2]);
        assert_eq!(series.prices, vec![100.5, 101.25]);
    }

    #[test]
    fn skips_a_single_header_row() {
        let f = write_temp("timestamp,price\r\n10,99.0\r\n20,99.5\r\n");
        let series = ingest_csv(f.path()).unwrap();
        assert_eq!(series.timestamps, vec![10, 20]);
    }

    #[test]
    fn parses_iso_8601_timestamps() {
        let f = write_temp(
            "2004-01-02T00:00:00,100.0\n2004-01-02T00:30:00,100.2\n2004-01-02 01:00:00,100.1\n",
        );
        let series = ingest_csv(f.path()).unwrap();
        assert_eq!(series.timestamps[1] - series.timestamps[0], 1800);
        assert_eq!(series.timestamps[2] - series.timestamps[1], 1800);

        let dates = write_temp("2004-01-02,100.0\n2004-01-03,100.2\n");
        let series = ingest_csv(dates.path()).unwrap();
        assert_eq!(series.timestamps[1] - series.timestamps[0], 86_400);

        let rfc = write_temp("2004-01-02T00:00:00Z,100.0\n2004-01-02T01:00:00+01:00,100.2\n");
        assert!(ingest_csv(rfc.path()).is_err(), "offset makes these simultaneous");
    }

    #[test]
    fn names_the_line_of_a_bad_price() {
        let f = write_temp("1,100.0\n2,0\n3,101.0\n");
        match ingest_csv(f.path()) {
            Err(Error::Csv { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("positive"), "{message}");
            }
            other => panic!("expected a line-numbered csv error, got {other:?}"),
        }
        let g = write_temp("timestamp,price\n1,100.0\n2,abc\n");
        match ingest_csv(g.path()) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected a line-numbered csv error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_out_of_order_timestamps() {
        let f = write_temp("1,100.0\n3,100.5\n2,101.0\n");
        match ingest_csv(f.path()) {
            Err(Error::Csv { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("increasing"), "{message}");
            }
            other => panic!("expected an ordering error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_and_header_only_files() {
        let empty = write_temp("");
        assert!(matches!(ingest_csv(empty.path()), Err(Error::InvalidInput(_))));
        let header_only = write_temp("timestamp,price\n");
        assert!(matches!(ingest_csv(header_only.path()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn rejects_wrong_column_count() {
        let f = write_temp("1,100.0\n2,100.5,extra\n");
        match ingest_csv(f.path()) {
            Err(Error::Csv { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("2 columns"), "{message}");
            }
            other => panic!("expected a column-count error, got {other:?}"),
        }
    }

    fn series_of(n: usize) -> PriceSeries {
        PriceSeries {
            timestamps: (0..n as i64).collect(),
            prices: vec![100.0; n],
        }
    }

    #[test]
    fn exact_multiple_splits_into_full_segments() {
        let segments = split_segments(&series_of(6280), 3140).unwrap();
        assert_eq!(segments.len(), 2);
        assert!(segments.iter().all(|s| !s.partial && s.prices.timestamps.len() == 3140));
        assert_eq!(segments[1].index, 1);
        assert_eq!(segments[1].prices.timestamps[0], 3140);
    }

    #[test]
    fn remainder_becomes_a_flagged_partial() {
        let segments = split_segments(&series_of(3200), 3140).unwrap();
        assert_eq!(segments.len(), 2);
        assert!(!segments[0].partial);
        assert!(segments[1].partial);
        assert_eq!(segments[1].prices.timestamps.len(), 60);
    }

    #[test]
    fn full_dataset_size_splits_into_eight() {
        let segments = split_segments(&series_of(25_120), 3140).unwrap();
        assert_eq!(segments.len(), 8);
        assert!(segments.iter().all(|s| !s.partial));
    }

    #[test]
    fn short_input_is_a_single_partial() {
        let segments = split_segments(&series_of(500), 3140).unwrap();
        assert_eq!(segments.len(), 1);
        assert!(segments[0].partial);
        assert!(split_segments(&series_of(10), 1).is_err());
    }
}
