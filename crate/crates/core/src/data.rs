//! Ingestion of the three data formats: CSV tables, text corpora and
//! time-series CSV files.

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use crate::error::{CoreError, Result};
use crate::model::DataFormat;
use crate::sample::SeriesPoint;

/// A header plus string records, as read from an RFC-4180 CSV file.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    /// Splits off the column `name`, returning the remaining table and the column values.
    pub fn split_column(&self, name: &str) -> Result<(RawTable, Vec<String>)> {
        let idx = self
            .column_index(name)
            .ok_or_else(|| CoreError::Data(format!("missing column {name}")))?;
        let mut headers = self.headers.clone();
        headers.remove(idx);
        let mut column = Vec::with_capacity(self.rows.len());
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                column.push(r.remove(idx));
                r
            })
            .collect();
        Ok((RawTable { headers, rows }, column))
    }
}

pub fn parse_csv_table(content: &[u8]) -> Result<RawTable> {
    let text = std::str::from_utf8(content)
        .map_err(|_| CoreError::Data("CSV data is not valid UTF-8".into()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CoreError::Data(format!("bad CSV header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(CoreError::Data("CSV has no header".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for h in &headers {
        if h.is_empty() || !seen.insert(h.as_str()) {
            return Err(CoreError::Data(format!("empty or duplicate column name {h:?}")));
        }
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CoreError::Data(format!("CSV row {}: {e}", i + 2)))?;
        rows.push(record.iter().map(|v| v.trim().to_string()).collect());
    }
    if rows.is_empty() {
        return Err(CoreError::Data("empty training data".into()));
    }
    Ok(RawTable { headers, rows })
}

/// A corpus line with an optional tab-separated gold label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextRow {
    pub text: String,
    pub label: Option<String>,
}

pub fn parse_text_lines(content: &[u8]) -> Result<Vec<TextRow>> {
    let text = std::str::from_utf8(content)
        .map_err(|_| CoreError::Data("text corpus is not valid UTF-8".into()))?;
    let rows: Vec<TextRow> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| match l.split_once('\t') {
            Some((text, label)) => TextRow {
                text: text.to_string(),
                label: Some(label.trim().to_string()),
            },
            None => TextRow {
                text: l.to_string(),
                label: None,
            },
        })
        .collect();
    if rows.is_empty() {
        return Err(CoreError::Data("empty training data".into()));
    }
    Ok(rows)
}

/// Parses an ISO-8601 timestamp or epoch seconds into epoch seconds.
pub fn parse_timestamp(raw: &str) -> Result<i64> {
    let raw = raw.trim();
    if let Ok(secs) = raw.parse::<i64>() {
        return Ok(secs);
    }
    if let Ok(secs) = raw.parse::<f64>() {
        if secs.is_finite() {
            return Ok(secs.round() as i64);
        }
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        if let Some(dt) = d.and_hms_opt(0, 0, 0) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    Err(CoreError::Data(format!("unparseable timestamp {raw:?}")))
}

/// Reads a `timestamp,value` CSV; the result is sorted by timestamp.
pub fn parse_timeseries(content: &[u8]) -> Result<Vec<SeriesPoint>> {
    let table = parse_csv_table(content)?;
    let t = table
        .column_index("timestamp")
        .ok_or_else(|| CoreError::Data("time-series CSV needs a timestamp column".into()))?;
    let v = table
        .column_index("value")
        .ok_or_else(|| CoreError::Data("time-series CSV needs a value column".into()))?;
    let mut points = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let ts = parse_timestamp(&row[t])?;
        let value: f64 = row[v]
            .parse()
            .map_err(|_| CoreError::Data(format!("non-numeric value {:?}", row[v])))?;
        if !value.is_finite() {
            return Err(CoreError::Data("non-finite value".into()));
        }
        points.push((ts, value));
    }
    points.sort_by_key(|p| p.0);
    if points.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(CoreError::Data("duplicate timestamps".into()));
    }
    Ok(points)
}

/// Parses `content` under `format` and returns (row count, column names).
pub fn sniff(format: DataFormat, content: &[u8]) -> Result<(u64, Vec<String>)> {
    match format {
        DataFormat::CsvTable => {
            let t = parse_csv_table(content)?;
            Ok((t.rows.len() as u64, t.headers))
        }
        DataFormat::TextLines => {
            let rows = parse_text_lines(content)?;
            Ok((rows.len() as u64, vec!["text".into()]))
        }
        DataFormat::TimeseriesCsv => {
            let pts = parse_timeseries(content)?;
            Ok((pts.len() as u64, vec!["timestamp".into(), "value".into()]))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_quoting() {
        let t = parse_csv_table(b"a,b,\"c,d\"\n1,\"x,y\",3\n").unwrap();
        assert_eq!(t.headers, vec!["a", "b", "c,d"]);
        assert_eq!(t.rows[0], vec!["1", "x,y", "3"]);
    }

    #[test]
    fn header_only_is_empty_training_data() {
        let err = parse_csv_table(b"a,b,c\n").unwrap_err();
        assert!(err.to_string().contains("empty training data"));
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(parse_csv_table(b"a,b\n1,2\n3\n").is_err());
    }

    #[test]
    fn text_lines_with_optional_labels() {
        let rows = parse_text_lines(b"good day\tpositive\n\nbad\n").unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].label.as_deref(), Some("positive"));
        assert_eq!(rows[1].label, None);
    }

    #[test]
    fn timestamps_iso_and_epoch() {
        assert_eq!(parse_timestamp("0").unwrap(), 0);
        assert_eq!(parse_timestamp("1970-01-02").unwrap(), 86_400);
        assert_eq!(parse_timestamp("1970-01-01T00:01:00Z").unwrap(), 60);
        let pts = parse_timeseries(b"timestamp,value\n20,2\n10,1\n").unwrap();
        assert_eq!(pts, vec![(10, 1.0), (20, 2.0)]);
        assert!(parse_timeseries(b"timestamp,value\n1,1\n1,2\n").is_err());
    }
}
