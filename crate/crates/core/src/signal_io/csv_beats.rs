use std::collections::HashMap;
use std::path::Path;

use super::{io_err, Result, SignalIoError, BEAT_SYMBOLS};
use crate::BEAT_LEN;

/// External label (e.g. a SNOMED CT code) to MIT-BIH beat symbol.
pub type LabelMap = HashMap<String, char>;

/// A labeled beat read from a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvBeat {
    /// 1-based row number in the source file.
    pub row: usize,
    pub label: char,
    pub samples: Vec<f64>,
    /// Set when the row length differs from the model input width and must be resampled.
    pub needs_resample: bool,
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file))
}

/// Reads a two-column `external_label,symbol` mapping file.
pub fn read_label_map(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let mut map = LabelMap::new();
    for (i, rec) in csv_reader(path)?.records().enumerate() {
        let rec = rec.map_err(|e| SignalIoError::Csv(e.to_string()))?;
        let row = i + 1;
        if rec.len() != 2 {
            return Err(SignalIoError::RaggedRow {
                row,
                expected: 2,
                found: rec.len(),
            });
        }
        let symbol = rec[1].to_string();
        let mut chars = symbol.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) if BEAT_SYMBOLS.contains(&c) => {
                map.insert(rec[0].to_string(), c);
            }
            _ => return Err(SignalIoError::UnknownLabel { row, label: symbol }),
        }
    }
    Ok(map)
}

/// Reads `label,s0,s1,...,sN` rows. All rows must have the same number of sample
/// columns. Labels are resolved through `label_map` first, then accepted verbatim
/// if they are a single MIT-BIH beat symbol.
pub fn read_csv_beats(
    csv_path: impl AsRef<Path>,
    label_map: Option<&LabelMap>,
) -> Result<Vec<CsvBeat>> {
    let path = csv_path.as_ref();
    let mut beats = Vec::new();
    let mut width: Option<usize> = None;
    for (i, rec) in csv_reader(path)?.records().enumerate() {
        let rec = rec.map_err(|e| SignalIoError::Csv(e.to_string()))?;
        let row = i + 1;
        if row == 1 && rec.get(0).is_some_and(|c| c.eq_ignore_ascii_case("label")) {
            continue;
        }
        let found = rec.len().saturating_sub(1);
        match width {
            None => width = Some(found),
            Some(w) if w != found => {
                return Err(SignalIoError::RaggedRow {
                    row,
                    expected: w,
                    found,
                })
            }
            _ => {}
        }
        if found == 0 {
            return Err(SignalIoError::RaggedRow {
                row,
                expected: 1,
                found: 0,
            });
        }

        let raw_label = &rec[0];
        let label =
            resolve_label(raw_label, label_map).ok_or_else(|| SignalIoError::UnknownLabel {
                row,
                label: raw_label.to_string(),
            })?;

        let samples = rec
            .iter()
            .enumerate()
            .skip(1)
            .map(|(column, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| SignalIoError::NonNumeric {
                        row,
                        column,
                        value: cell.to_string(),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;

        beats.push(CsvBeat {
            row,
            label,
            needs_resample: samples.len() != BEAT_LEN,
            samples,
        });
    }
    Ok(beats)
}

fn resolve_label(label: &str, map: Option<&LabelMap>) -> Option<char> {
    if let Some(&c) = map.and_then(|m| m.get(label)) {
        return Some(c);
    }
    let mut chars = label.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if BEAT_SYMBOLS.contains(&c) => Some(c),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fmt::Write as _;

    fn write(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("beats.csv");
        std::fs::write(&p, content).unwrap();
        (dir, p)
    }

    fn row(label: &str, n: usize) -> String {
        let mut s = label.to_string();
        for _ in 0..n {
            s.push_str(",0.0");
        }
        s.push('\n');
        s
    }

    #[test]
    fn zero_beat_row() {
        let (_d, p) = write(&row("N", 216));
        let beats = read_csv_beats(&p, None).unwrap();
        assert_eq!(beats.len(), 1);
        assert_eq!(beats[0].label, 'N');
        assert_eq!(beats[0].samples, vec![0.0; 216]);
        assert!(!beats[0].needs_resample);
    }

    #[test]
    fn ragged_rows_report_row_number() {
        let (_d, p) = write(&format!(
            "{}{}{}",
            row("N", 216),
            row("V", 216),
            row("N", 215)
        ));
        match read_csv_beats(&p, None).unwrap_err() {
            SignalIoError::RaggedRow {
                row,
                expected,
                found,
            } => {
                assert_eq!((row, expected, found), (3, 216, 215));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn long_rows_are_flagged_for_resampling() {
        let mut s = String::from("V");
        for i in 0..500 {
            write!(s, ",{}", i as f64 * 0.01).unwrap();
        }
        let (_d, p) = write(&s);
        let beats = read_csv_beats(&p, None).unwrap();
        assert_eq!(beats[0].samples.len(), 500);
        assert!(beats[0].needs_resample);
    }

    #[test]
    fn non_numeric_and_unknown_labels() {
        let (_d, p) = write("N,0.1,abc\n");
        assert!(matches!(
            read_csv_beats(&p, None).unwrap_err(),
            SignalIoError::NonNumeric {
                row: 1,
                column: 2,
                ..
            }
        ));
        let (_d, p) = write("164889003,0.1,0.2\n");
        assert!(matches!(
            read_csv_beats(&p, None).unwrap_err(),
            SignalIoError::UnknownLabel { row: 1, .. }
        ));
    }

    #[test]
    fn label_map_resolves_external_codes() {
        let dir = tempfile::tempdir().unwrap();
        let map_path = dir.path().join("map.csv");
        std::fs::write(&map_path, "# snomed,symbol\n427172004,V\n164909002,L\n").unwrap();
        let map = read_label_map(&map_path).unwrap();
        let (_d, p) = write("label,s0,s1\n427172004,0.1,0.2\nN,0.0,0.0\n");
        let beats = read_csv_beats(&p, Some(&map)).unwrap();
        assert_eq!(
            beats.iter().map(|b| b.label).collect::<Vec<_>>(),
            vec!['V', 'N']
        );
        assert_eq!(beats[0].row, 2);
    }
}
