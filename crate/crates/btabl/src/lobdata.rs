//! FI-2010-format parsing, feature selection, window construction and the
//! chronological train/validation/test splits.
//!
//! Each event in the dataset is a 144-dimensional feature vector plus five
//! movement labels, one per prediction horizon (10/20/30/50/100 events).
//! Raw labels are 1=up, 2=stationary, 3=down; internally we reorder to
//! 0=stationary, 1=up, 2=down so that class index 0 is the dominant
//! stationary class in every report. The mapping is carried explicitly in
//! [`DatasetSplit`] and can be overridden.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

pub const FEATURES_PER_EVENT: usize = 144;
pub const LABELS_PER_EVENT: usize = 5;
pub const VALUES_PER_EVENT: usize = FEATURES_PER_EVENT + LABELS_PER_EVENT;
pub const HORIZONS: [u32; LABELS_PER_EVENT] = [10, 20, 30, 50, 100];

/// Feature indices used by default: the first 40 dimensions (raw prices
/// and quantities of the ten book levels).
pub fn default_feature_dims() -> Vec<usize> {
    (0..40).collect()
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}, value {col}: malformed number {token:?}")]
    Parse { line: usize, col: usize, token: String },
    #[error("line {line}: expected {expected} values per event, found {got}")]
    Arity { line: usize, expected: usize, got: usize },
    #[error("line {line}: unknown label value {value} (expected 1, 2 or 3)")]
    Label { line: usize, value: f64 },
    #[error("feature index {index} out of range [0,{len})")]
    FeatureIndex { index: usize, len: usize },
    #[error("horizon {0} is not one of 10/20/30/50/100")]
    Horizon(u32),
    #[error("events must come from a single (stock, day) stream; saw ({0},{1}) and ({2},{3})")]
    MixedStream(u32, u32, u32, u32),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// How events are laid out in a file: one event per line, or one event per
/// column (both layouts circulate publicly).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    EventsAsRows,
    EventsAsColumns,
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Orientation::EventsAsRows => write!(f, "events_as_rows"),
            Orientation::EventsAsColumns => write!(f, "events_as_columns"),
        }
    }
}

/// One book update: z-scored features plus the five horizon labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LobEvent {
    pub features: Vec<f64>,
    /// Raw labels in {1,2,3}, one per horizon, in [`HORIZONS`] order.
    /// `None` for feature-only files (prediction on unlabeled data).
    pub labels: Option<[u8; LABELS_PER_EVENT]>,
    pub stock_id: u32,
    pub day: u32,
    pub event_index: u64,
}

/// One D x T input window with its (remapped) class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LobWindow {
    pub x: Matrix,
    /// Internal class index in [0,C); `None` when the source events were
    /// unlabeled.
    pub label: Option<usize>,
    pub stock_id: u32,
    pub day: u32,
    pub anchor_event_index: u64,
}

/// Raw-label -> internal-index bijection plus report names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMapping {
    /// `(raw, internal)` pairs; raw labels are the dataset's {1,2,3}.
    pub pairs: Vec<(u8, usize)>,
    pub class_names: Vec<String>,
}

impl Default for LabelMapping {
    fn default() -> Self {
        LabelMapping {
            pairs: vec![(1, 1), (2, 0), (3, 2)],
            class_names: vec!["stationary".into(), "up".into(), "down".into()],
        }
    }
}

impl LabelMapping {
    pub fn internal(&self, raw: u8) -> Option<usize> {
        self.pairs.iter().find(|(r, _)| *r == raw).map(|(_, i)| *i)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let c = self.class_names.len();
        if self.pairs.len() != c {
            return Err(DataError::Config("label mapping and class names disagree on class count".into()));
        }
        let mut seen = vec![false; c];
        for &(_, internal) in &self.pairs {
            if internal >= c || seen[internal] {
                return Err(DataError::Config("label mapping must be a bijection onto 0..C".into()));
            }
            seen[internal] = true;
        }
        Ok(())
    }
}

/// Chronological split with per-stock grouping preserved.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<LobWindow>,
    pub validation: Vec<LobWindow>,
    pub test: Vec<LobWindow>,
    pub mapping: LabelMapping,
    /// Windows between the train and validation segments that the split
    /// fractions leave unused.
    pub discarded: usize,
}

fn tokens(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty())
}

fn parse_cell(token: &str, line: usize, col: usize) -> Result<f64, DataError> {
    token
        .parse::<f64>()
        .map_err(|_| DataError::Parse { line, col, token: token.to_string() })
        .and_then(|v| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(DataError::Parse { line, col, token: token.to_string() })
            }
        })
}

fn label_from(value: f64, line: usize) -> Result<u8, DataError> {
    if value.fract() == 0.0 && (1.0..=3.0).contains(&value) {
        Ok(value as u8)
    } else {
        Err(DataError::Label { line, value })
    }
}

fn read_numeric_table(path: &Path) -> Result<Vec<Vec<f64>>, DataError> {
    let text = fs::read_to_string(path)
        .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if tokens(line).next().is_none() {
            continue; // blank line
        }
        let mut row = Vec::new();
        for (j, tok) in tokens(line).enumerate() {
            row.push(parse_cell(tok, i + 1, j + 1)?);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn events_from_rows(
    rows: Vec<Vec<f64>>,
    values_per_event: usize,
    labeled: bool,
    stock_id: u32,
    day: u32,
) -> Result<Vec<LobEvent>, DataError> {
    let mut events = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        if row.len() != values_per_event {
            return Err(DataError::Arity { line: i + 1, expected: values_per_event, got: row.len() });
        }
        let labels = if labeled {
            let mut l = [0u8; LABELS_PER_EVENT];
            for (k, &v) in row[FEATURES_PER_EVENT..].iter().enumerate() {
                l[k] = label_from(v, i + 1)?;
            }
            Some(l)
        } else {
            None
        };
        events.push(LobEvent {
            features: row[..FEATURES_PER_EVENT].to_vec(),
            labels,
            stock_id,
            day,
            event_index: i as u64,
        });
    }
    Ok(events)
}

fn transpose_table(rows: Vec<Vec<f64>>, expected_rows: usize) -> Result<Vec<Vec<f64>>, DataError> {
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    if rows.len() != expected_rows {
        return Err(DataError::Arity { line: rows.len(), expected: expected_rows, got: rows.len() });
    }
    let n_events = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n_events {
            return Err(DataError::Arity { line: i + 1, expected: n_events, got: row.len() });
        }
    }
    Ok((0..n_events).map(|e| rows.iter().map(|r| r[e]).collect()).collect())
}

/// Parse one FI-2010 file (144 features + 5 labels per event) into events
/// in file order, stamped with the given stock and day.
pub fn parse_fi2010_with_ids(
    path: &Path,
    orientation: Orientation,
    stock_id: u32,
    day: u32,
) -> Result<Vec<LobEvent>, DataError> {
    let table = read_numeric_table(path)?;
    let rows = match orientation {
        Orientation::EventsAsRows => table,
        Orientation::EventsAsColumns => transpose_table(table, VALUES_PER_EVENT)?,
    };
    events_from_rows(rows, VALUES_PER_EVENT, true, stock_id, day)
}

/// [`parse_fi2010_with_ids`] with stock 1, day 1.
pub fn parse_fi2010(path: &Path, orientation: Orientation) -> Result<Vec<LobEvent>, DataError> {
    parse_fi2010_with_ids(path, orientation, 1, 1)
}

/// Parse a feature-only file (144 values per event, no labels); windows
/// built from these carry `label = None` and evaluation degrades to
/// uncertainty-only outputs.
pub fn parse_features_only(
    path: &Path,
    orientation: Orientation,
    stock_id: u32,
    day: u32,
) -> Result<Vec<LobEvent>, DataError> {
    let table = read_numeric_table(path)?;
    let rows = match orientation {
        Orientation::EventsAsRows => table,
        Orientation::EventsAsColumns => transpose_table(table, FEATURES_PER_EVENT)?,
    };
    events_from_rows(rows, FEATURES_PER_EVENT, false, stock_id, day)
}

/// Ordered feature subvector; `dims` defaults to the first 40 dimensions.
pub fn select_features(event: &LobEvent, dims: &[usize]) -> Result<Vec<f64>, DataError> {
    let mut out = Vec::with_capacity(dims.len());
    for &d in dims {
        if d >= event.features.len() {
            return Err(DataError::FeatureIndex { index: d, len: event.features.len() });
        }
        out.push(event.features[d]);
    }
    Ok(out)
}

fn horizon_slot(horizon: u32) -> Result<usize, DataError> {
    HORIZONS.iter().position(|&h| h == horizon).ok_or(DataError::Horizon(horizon))
}

/// Sliding windows over a single (stock, day) event stream.
///
/// One window per anchor index `t >= T-1`; columns are events
/// `t-T+1 ..= t`, oldest first, and the label is the anchor event's label
/// at the chosen horizon remapped through `mapping`. Streams shorter than
/// `T` yield no windows.
pub fn build_windows(
    events: &[LobEvent],
    t_len: usize,
    horizon: u32,
    dims: &[usize],
    mapping: &LabelMapping,
) -> Result<Vec<LobWindow>, DataError> {
    assert!(t_len >= 1, "window length must be positive");
    let slot = horizon_slot(horizon)?;
    if let Some(first) = events.first() {
        for e in events {
            if (e.stock_id, e.day) != (first.stock_id, first.day) {
                return Err(DataError::MixedStream(first.stock_id, first.day, e.stock_id, e.day));
            }
        }
    }
    if events.len() < t_len {
        return Ok(Vec::new());
    }
    let d = dims.len();
    let mut windows = Vec::with_capacity(events.len() - t_len + 1);
    for anchor in (t_len - 1)..events.len() {
        let mut x = Matrix::zeros(d, t_len);
        for (col, event) in events[anchor + 1 - t_len..=anchor].iter().enumerate() {
            let feats = select_features(event, dims)?;
            for (row, v) in feats.into_iter().enumerate() {
                x.set(row, col, v);
            }
        }
        let anchor_event = &events[anchor];
        let label = match anchor_event.labels {
            Some(raw) => Some(mapping.internal(raw[slot]).ok_or(DataError::Label {
                line: anchor + 1,
                value: raw[slot] as f64,
            })?),
            None => None,
        };
        windows.push(LobWindow {
            x,
            label,
            stock_id: anchor_event.stock_id,
            day: anchor_event.day,
            anchor_event_index: anchor_event.event_index,
        });
    }
    Ok(windows)
}

/// Chronological split. Per stock: windows of the last `test_days` days go
/// to test; of the remaining windows (in day/event order), the first
/// `floor(train_frac*n)` go to train and the last `floor(val_frac*n)` to
/// validation. Any middle gap is discarded and counted.
pub fn make_splits(
    windows: &[LobWindow],
    train_frac: f64,
    val_frac: f64,
    test_days: usize,
    mapping: &LabelMapping,
) -> Result<DatasetSplit, DataError> {
    if !(0.0..=1.0).contains(&train_frac) || !(0.0..=1.0).contains(&val_frac) || train_frac + val_frac > 1.0 + 1e-12 {
        return Err(DataError::Config(format!(
            "invalid split fractions train={train_frac} val={val_frac}"
        )));
    }
    let mut by_stock: BTreeMap<u32, Vec<&LobWindow>> = BTreeMap::new();
    for w in windows {
        by_stock.entry(w.stock_id).or_default().push(w);
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        mapping: mapping.clone(),
        discarded: 0,
    };
    for (_stock, mut ws) in by_stock {
        ws.sort_by_key(|w| (w.day, w.anchor_event_index));
        let mut days: Vec<u32> = ws.iter().map(|w| w.day).collect();
        days.dedup();
        if days.len() < test_days {
            return Err(DataError::Config(format!(
                "stock has {} distinct days but test_days={}",
                days.len(),
                test_days
            )));
        }
        let first_test_day = if test_days == 0 { None } else { Some(days[days.len() - test_days]) };
        let (rest, test): (Vec<&LobWindow>, Vec<&LobWindow>) = ws
            .into_iter()
            .partition(|w| first_test_day.map_or(true, |d| w.day < d));
        split.test.extend(test.into_iter().cloned());
        let n = rest.len();
        let n_train = (train_frac * n as f64).floor() as usize;
        let n_val = (val_frac * n as f64).floor() as usize;
        split.train.extend(rest[..n_train].iter().map(|w| (*w).clone()));
        split.validation.extend(rest[n - n_val..].iter().map(|w| (*w).clone()));
        split.discarded += n - n_train - n_val;
    }
    Ok(split)
}

/// Per-feature-row mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-8;

/// Fit per-feature statistics on the training windows only.
pub fn zscore_fit(train: &[LobWindow]) -> FeatureStats {
    assert!(!train.is_empty(), "zscore_fit needs at least one window");
    let d = train[0].x.rows();
    let mut mean = vec![0.0; d];
    let mut count = 0u64;
    for w in train {
        for r in 0..d {
            for &v in w.x.row(r) {
                mean[r] += v;
            }
        }
        count += w.x.cols() as u64;
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = vec![0.0; d];
    for w in train {
        for r in 0..d {
            for &v in w.x.row(r) {
                var[r] += (v - mean[r]) * (v - mean[r]);
            }
        }
    }
    let std = var.iter().map(|v| (v / count as f64).sqrt().max(STD_FLOOR)).collect();
    FeatureStats { mean, std }
}

pub fn zscore_apply(windows: &[LobWindow], stats: &FeatureStats) -> Vec<LobWindow> {
    windows
        .iter()
        .map(|w| {
            let mut x = w.x.clone();
            for r in 0..x.rows() {
                for c in 0..x.cols() {
                    x.set(r, c, (x.get(r, c) - stats.mean[r]) / stats.std[r]);
                }
            }
            LobWindow { x, ..w.clone() }
        })
        .collect()
}

/// Fit on `train`, normalize both window sets, and return the statistics.
pub fn zscore_fit_apply(
    train: &[LobWindow],
    other: &[LobWindow],
) -> (Vec<LobWindow>, Vec<LobWindow>, FeatureStats) {
    let stats = zscore_fit(train);
    (zscore_apply(train, &stats), zscore_apply(other, &stats), stats)
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

    fn event_line(base: f64, labels: [u8; 5]) -> String {
        let mut vals: Vec<String> = (0..FEATURES_PER_EVENT).map(|i| format!("{}", base + i as f64)).collect();
        vals.extend(labels.iter().map(|l| format!("{l}")));
        vals.join(" ")
    }

    fn synthetic_events(n: usize, stock: u32, day: u32, labels: [u8; 5]) -> Vec<LobEvent> {
        (0..n)
            .map(|i| LobEvent {
                features: (0..FEATURES_PER_EVENT).map(|d| (i * 1000 + d) as f64).collect(),
                labels: Some(labels),
                stock_id: stock,
                day,
                event_index: i as u64,
            })
            .collect()
    }

    #[test]
    fn parses_two_event_fixture() {
        let text = format!("{}\n{}\n", event_line(0.5, [1, 2, 3, 1, 2]), event_line(10.0, [3, 3, 3, 3, 3]));
        let f = write_temp(&text);
        let events = parse_fi2010(f.path(), Orientation::EventsAsRows).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].features[0], 0.5);
        assert_eq!(events[0].features[143], 143.5);
        assert_eq!(events[0].labels, Some([1, 2, 3, 1, 2]));
        assert_eq!(events[1].labels, Some([3, 3, 3, 3, 3]));
        assert_eq!(events[1].event_index, 1);
    }

    #[test]
    fn empty_file_gives_empty_sequence() {
        let f = write_temp("");
        assert!(parse_fi2010(f.path(), Orientation::EventsAsRows).unwrap().is_empty());
        assert!(parse_fi2010(f.path(), Orientation::EventsAsColumns).unwrap().is_empty());
    }

    #[test]
    fn transposed_fixture_matches_row_oriented() {
        let line_a = event_line(1.0, [1, 1, 1, 1, 1]);
        let line_b = event_line(-3.25, [2, 2, 2, 2, 2]);
        let f_rows = write_temp(&format!("{line_a}\n{line_b}\n"));
        let by_rows = parse_fi2010(f_rows.path(), Orientation::EventsAsRows).unwrap();

        // transpose oracle: value r of event e becomes row r, column e
        let a: Vec<&str> = line_a.split(' ').collect();
        let b: Vec<&str> = line_b.split(' ').collect();
        let transposed: String =
            (0..VALUES_PER_EVENT).map(|r| format!("{} {}\n", a[r], b[r])).collect();
        let f_cols = write_temp(&transposed);
        let by_cols = parse_fi2010(f_cols.path(), Orientation::EventsAsColumns).unwrap();
        assert_eq!(by_rows, by_cols);
    }

    #[test]
    fn malformed_number_names_line_and_column() {
        let mut line = event_line(0.0, [1, 1, 1, 1, 1]);
        line = line.replacen("3 4", "3 oops", 1);
        let f = write_temp(&line);
        match parse_fi2010(f.path(), Orientation::EventsAsRows) {
            Err(DataError::Parse { line: 1, col, token }) => {
                assert_eq!(token, "oops");
                assert_eq!(col, 5);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_arity_is_a_format_error() {
        let f = write_temp("1 2 3\n");
        match parse_fi2010(f.path(), Orientation::EventsAsRows) {
            Err(DataError::Arity { line: 1, expected, got: 3 }) => assert_eq!(expected, VALUES_PER_EVENT),
            other => panic!("expected arity error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_label_is_rejected() {
        let line = event_line(0.0, [1, 1, 1, 1, 1]).replace(" 1 1 1 1 1", " 1 1 7 1 1");
        let f = write_temp(&line);
        match parse_fi2010(f.path(), Orientation::EventsAsRows) {
            Err(DataError::Label { line: 1, value }) => assert_eq!(value, 7.0),
            other => panic!("expected label error, got {other:?}"),
        }
    }

    #[test]
    fn select_features_identity_and_single() {
        let events = synthetic_events(1, 1, 1, [1; 5]);
        let all: Vec<usize> = (0..FEATURES_PER_EVENT).collect();
        assert_eq!(select_features(&events[0], &all).unwrap(), events[0].features);
        let mut e = events[0].clone();
        e.features[0] = 1.5;
        assert_eq!(select_features(&e, &[0]).unwrap(), vec![1.5]);
    }

    #[test]
    fn select_features_matches_slice() {
        let events = synthetic_events(1, 1, 1, [1; 5]);
        let dims = default_feature_dims();
        assert_eq!(select_features(&events[0], &dims).unwrap(), events[0].features[..40].to_vec());
        assert!(matches!(
            select_features(&events[0], &[144]),
            Err(DataError::FeatureIndex { index: 144, .. })
        ));
    }

    #[test]
    fn one_window_at_exact_length() {
        let events = synthetic_events(10, 1, 1, [1, 2, 3, 1, 2]);
        let dims = default_feature_dims();
        let ws = build_windows(&events, 10, 10, &dims, &LabelMapping::default()).unwrap();
        assert_eq!(ws.len(), 1);
        let last_col: Vec<f64> = (0..40).map(|r| ws[0].x.get(r, 9)).collect();
        assert_eq!(last_col, select_features(&events[9], &dims).unwrap());
        // raw label 1 (up) remaps to internal 1
        assert_eq!(ws[0].label, Some(1));
        assert_eq!(ws[0].anchor_event_index, 9);
    }

    #[test]
    fn window_count_and_anchors() {
        let events = synthetic_events(12, 1, 1, [2; 5]);
        let ws = build_windows(&events, 10, 10, &default_feature_dims(), &LabelMapping::default()).unwrap();
        assert_eq!(ws.len(), 3);
        let anchors: Vec<u64> = ws.iter().map(|w| w.anchor_event_index).collect();
        assert_eq!(anchors, vec![9, 10, 11]);
        // short stream: no windows, no error
        assert!(build_windows(&events[..5], 10, 10, &default_feature_dims(), &LabelMapping::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn windows_match_double_loop_oracle() {
        let events = synthetic_events(8, 2, 3, [3; 5]);
        let dims: Vec<usize> = vec![0, 5, 17];
        let t_len = 4;
        let ws = build_windows(&events, t_len, 20, &dims, &LabelMapping::default()).unwrap();
        assert_eq!(ws.len(), 5);
        // brute-force windowing oracle
        for (wi, w) in ws.iter().enumerate() {
            let anchor = wi + t_len - 1;
            for (di, &d) in dims.iter().enumerate() {
                for c in 0..t_len {
                    let expect = events[anchor + 1 - t_len + c].features[d];
                    assert_eq!(w.x.get(di, c), expect);
                }
            }
            assert_eq!(w.label, Some(2)); // raw 3 (down) -> internal 2
        }
    }

    #[test]
    fn mixed_stream_is_rejected() {
        let mut events = synthetic_events(12, 1, 1, [1; 5]);
        events[6].day = 2;
        assert!(matches!(
            build_windows(&events, 3, 10, &[0], &LabelMapping::default()),
            Err(DataError::MixedStream(..))
        ));
    }

    fn windows_over_days(stock: u32, days: usize, per_day: usize) -> Vec<LobWindow> {
        let mut out = Vec::new();
        for day in 1..=days {
            for i in 0..per_day {
                out.push(LobWindow {
                    x: Matrix::zeros(2, 2),
                    label: Some(i % 3),
                    stock_id: stock,
                    day: day as u32,
                    anchor_event_index: i as u64,
                });
            }
        }
        out
    }

    #[test]
    fn splits_follow_stated_rounding_rule() {
        // 100 windows over 10 days: last 3 days (30 windows) -> test; of the
        // remaining 70, floor(0.75*70)=52 train, floor(0.15*70)=10 val,
        // 8 discarded.
        let ws = windows_over_days(1, 10, 10);
        let split = make_splits(&ws, 0.75, 0.15, 3, &LabelMapping::default()).unwrap();
        assert_eq!(split.train.len(), 52);
        assert_eq!(split.validation.len(), 10);
        assert_eq!(split.discarded, 8);
        assert_eq!(split.test.len(), 30);
        assert!(split.test.iter().all(|w| w.day >= 8));
        assert!(split.train.iter().chain(&split.validation).all(|w| w.day <= 7));
    }

    #[test]
    fn everything_in_train_when_asked() {
        let ws = windows_over_days(1, 4, 5);
        let split = make_splits(&ws, 1.0, 0.0, 0, &LabelMapping::default()).unwrap();
        assert_eq!(split.train.len(), 20);
        assert!(split.validation.is_empty() && split.test.is_empty());
        assert_eq!(split.discarded, 0);
    }

    #[test]
    fn per_stock_splits_concatenate() {
        let mut ws = windows_over_days(1, 10, 10);
        ws.extend(windows_over_days(2, 10, 10));
        let split = make_splits(&ws, 0.75, 0.15, 3, &LabelMapping::default()).unwrap();
        assert_eq!(split.train.len(), 104);
        assert_eq!(split.test.len(), 60);
        for part in [&split.train, &split.validation, &split.test] {
            assert!(part.iter().any(|w| w.stock_id == 1));
            assert!(part.iter().any(|w| w.stock_id == 2));
        }
    }

    #[test]
    fn too_few_days_is_a_configuration_error() {
        let ws = windows_over_days(1, 2, 5);
        assert!(matches!(
            make_splits(&ws, 0.75, 0.15, 3, &LabelMapping::default()),
            Err(DataError::Config(_))
        ));
    }

    #[test]
    fn window_count_property() {
        for n in 0..30usize {
            for t in 1..6usize {
                let events = synthetic_events(n, 1, 1, [1; 5]);
                let ws = build_windows(&events, t, 10, &[0, 1], &LabelMapping::default()).unwrap();
                assert_eq!(ws.len(), n.saturating_sub(t - 1));
            }
        }
    }

    #[test]
    fn splits_are_deterministic() {
        let ws = windows_over_days(1, 10, 7);
        let a = make_splits(&ws, 0.75, 0.15, 3, &LabelMapping::default()).unwrap();
        let b = make_splits(&ws, 0.75, 0.15, 3, &LabelMapping::default()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.validation, b.validation);
        assert_eq!(a.test, b.test);
    }

    fn const_window(vals: &[f64]) -> LobWindow {
        LobWindow {
            x: Matrix::from_rows(&vals.iter().map(|&v| vec![v, v, v]).collect::<Vec<_>>()),
            label: Some(0),
            stock_id: 1,
            day: 1,
            anchor_event_index: 0,
        }
    }

    #[test]
    fn zscore_leaves_standardized_data_unchanged() {
        // two windows whose row values are -1 and +1: mean 0, std 1 already
        let w1 = const_window(&[-1.0, -1.0]);
        let w2 = const_window(&[1.0, 1.0]);
        let (train, _, stats) = zscore_fit_apply(&[w1.clone(), w2.clone()], &[]);
        assert!((stats.mean[0]).abs() < 1e-12 && (stats.std[0] - 1.0).abs() < 1e-12);
        for (orig, normed) in [w1, w2].iter().zip(&train) {
            for (a, b) in orig.x.data().iter().zip(normed.x.data()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_feature_maps_to_zero() {
        let w = const_window(&[5.0, 5.0]);
        let (train, _, stats) = zscore_fit_apply(&[w], &[]);
        assert_eq!(stats.std[0], STD_FLOOR);
        assert!(train[0].x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn train_statistics_are_unit_after_transform() {
        let mut rng = crate::seed::rng_for(5, &[1]);
        use rand::Rng;
        let windows: Vec<LobWindow> = (0..50)
            .map(|i| LobWindow {
                x: Matrix::from_vec(4, 6, (0..24).map(|_| rng.random_range(-3.0..7.0)).collect()),
                label: Some(0),
                stock_id: 1,
                day: 1,
                anchor_event_index: i,
            })
            .collect();
        let (train, _, _) = zscore_fit_apply(&windows, &[]);
        // recompute statistics post-transform
        let stats = zscore_fit(&train);
        for r in 0..4 {
            assert!(stats.mean[r].abs() < 1e-9, "mean {}", stats.mean[r]);
            assert!((stats.std[r] - 1.0).abs() < 1e-9, "std {}", stats.std[r]);
        }
    }
}
