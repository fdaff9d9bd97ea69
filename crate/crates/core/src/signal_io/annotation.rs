use std::fs;
use std::path::Path;

use super::{io_err, EcgRecord, Result, SignalIoError};

/// Annotation symbols indexed by MIT annotation code (0..=41).
const CODE_SYMBOLS: [&str; 42] = [
    " ", "N", "L", "R", "a", "V", "F", "J", "A", "S", "E", "j", "/", "Q", "~", "", "|", "", "s",
    "T", "*", "D", "\"", "=", "p", "B", "^", "t", "+", "u", "?", "!", "[", "]", "e", "n", "@", "x",
    "f", "(", ")", "r",
];

/// Annotation codes that label a heartbeat. Everything else (rhythm changes, noise,
/// comments, waveform markers) is dropped when reading beats.
pub const BEAT_SYMBOLS: [char; 18] = [
    'N', 'L', 'R', 'B', 'A', 'a', 'J', 'S', 'V', 'r', 'F', 'e', 'j', 'n', 'E', '/', 'f', 'Q',
];

const SKIP: u16 = 59;
const NUM: u16 = 60;
const SUB: u16 = 61;
const CHN: u16 = 62;
const AUX: u16 = 63;
const MAX_CODE: u16 = 49;

/// Symbol for an MIT annotation code, if the code is assigned.
pub fn symbol_for_code(code: u16) -> Option<char> {
    CODE_SYMBOLS
        .get(code as usize)
        .and_then(|s| s.chars().next())
        .filter(|c| *c != ' ')
}

fn code_for_symbol(symbol: char) -> Option<u16> {
    CODE_SYMBOLS
        .iter()
        .position(|s| s.starts_with(symbol) && symbol != ' ')
        .map(|p| p as u16)
}

/// A labeled heartbeat position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeatAnnotation {
    pub sample_index: usize,
    pub symbol: char,
}

/// Any annotation in an MIT annotation stream, beat or not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationEntry {
    pub sample_index: usize,
    /// MIT annotation code (1..=49).
    pub code: u16,
    pub aux: Option<Vec<u8>>,
}

impl AnnotationEntry {
    pub fn new(sample_index: usize, symbol: char) -> Self {
        Self {
            sample_index,
            code: code_for_symbol(symbol).unwrap_or(0),
            aux: None,
        }
    }

    pub fn symbol(&self) -> Option<char> {
        symbol_for_code(self.code)
    }

    pub fn is_beat(&self) -> bool {
        self.symbol().is_some_and(|s| BEAT_SYMBOLS.contains(&s))
    }
}

/// Decodes a complete MIT-format annotation stream (all annotation types).
pub fn decode_annotations(bytes: &[u8]) -> Result<Vec<AnnotationEntry>> {
    let malformed = |offset: usize, msg: &str| SignalIoError::MalformedAnnotation {
        offset,
        msg: msg.to_string(),
    };
    let mut out: Vec<AnnotationEntry> = Vec::new();
    let mut time: i64 = 0;
    let mut pos = 0;
    loop {
        if pos + 2 > bytes.len() {
            if pos == bytes.len() {
                // Missing end-of-file marker; accept what was read.
                break;
            }
            return Err(malformed(pos, "odd trailing byte"));
        }
        let word = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]);
        let code = word >> 10;
        let value = word & 0x03FF;
        let at = pos;
        pos += 2;
        match code {
            0 if value == 0 => break,
            0 => return Err(malformed(at, "annotation code 0 with non-zero interval")),
            SKIP => {
                let b = bytes
                    .get(pos..pos + 4)
                    .ok_or_else(|| malformed(at, "truncated SKIP interval"))?;
                // PDP-11 long: high 16-bit word first, each word little-endian.
                let hi = u16::from_le_bytes([b[0], b[1]]) as u32;
                let lo = u16::from_le_bytes([b[2], b[3]]) as u32;
                time += i64::from(((hi << 16) | lo) as i32);
                pos += 4;
            }
            NUM | SUB | CHN => {
                if out.is_empty() {
                    return Err(malformed(at, "field modifier before any annotation"));
                }
            }
            AUX => {
                let len = value as usize;
                let data = bytes
                    .get(pos..pos + len)
                    .ok_or_else(|| malformed(at, "truncated AUX string"))?;
                if let Some(last) = out.last_mut() {
                    last.aux = Some(data.to_vec());
                }
                pos += (len + 1) & !1;
            }
            c if c <= MAX_CODE => {
                time += i64::from(value);
                if time < 0 {
                    return Err(malformed(at, "negative annotation time"));
                }
                out.push(AnnotationEntry {
                    sample_index: time as usize,
                    code: c,
                    aux: None,
                });
            }
            _ => return Err(malformed(at, "reserved annotation code")),
        }
    }
    Ok(out)
}

/// Encodes annotations (sorted by sample index) as an MIT-format stream.
pub fn encode_annotations(entries: &[AnnotationEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut prev = 0usize;
    for e in entries {
        let delta = e.sample_index - prev;
        if delta > 0x03FF {
            out.extend_from_slice(&(SKIP << 10).to_le_bytes());
            let d = delta as u32;
            out.extend_from_slice(&((d >> 16) as u16).to_le_bytes());
            out.extend_from_slice(&((d & 0xFFFF) as u16).to_le_bytes());
            out.extend_from_slice(&(e.code << 10).to_le_bytes());
        } else {
            out.extend_from_slice(&((e.code << 10) | delta as u16).to_le_bytes());
        }
        if let Some(aux) = &e.aux {
            out.extend_from_slice(&((AUX << 10) | aux.len() as u16).to_le_bytes());
            out.extend_from_slice(aux);
            if aux.len() % 2 == 1 {
                out.push(0);
            }
        }
        prev = e.sample_index;
    }
    out.extend_from_slice(&[0, 0]);
    out
}

/// Reads beat annotations for `record`, dropping non-beat annotations.
pub fn read_wfdb_annotations(
    annotation_path: impl AsRef<Path>,
    record: &EcgRecord,
) -> Result<Vec<BeatAnnotation>> {
    let path = annotation_path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    let len = record.len();
    let mut beats: Vec<BeatAnnotation> = Vec::new();
    for e in decode_annotations(&bytes)? {
        if e.sample_index >= len {
            return Err(SignalIoError::AnnotationOutOfRange {
                index: e.sample_index,
                len,
            });
        }
        if !e.is_beat() {
            continue;
        }
        if let Some(prev) = beats.last() {
            if e.sample_index <= prev.sample_index {
                return Err(SignalIoError::MalformedAnnotation {
                    offset: 0,
                    msg: format!(
                        "beat annotations not strictly increasing ({} after {})",
                        e.sample_index, prev.sample_index
                    ),
                });
            }
        }
        beats.push(BeatAnnotation {
            sample_index: e.sample_index,
            symbol: e.symbol().expect("beat symbols are assigned"),
        });
    }
    Ok(beats)
}

pub fn write_wfdb_annotations(path: impl AsRef<Path>, entries: &[AnnotationEntry]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_annotations(entries)).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::Channel;

    fn record(len: usize) -> EcgRecord {
        EcgRecord::new(
            "t",
            360,
            vec![Channel::from_adc("MLII", 200.0, 0, vec![0; len])],
        )
        .unwrap()
    }

    fn atom(code: u16, delta: u16) -> [u8; 2] {
        ((code << 10) | delta).to_le_bytes()
    }

    #[test]
    fn accumulates_deltas() {
        let mut bytes = Vec::new();
        bytes.extend(atom(1, 370));
        bytes.extend(atom(1, 360));
        bytes.extend([0, 0]);
        let entries = decode_annotations(&bytes).unwrap();
        let idx: Vec<usize> = entries.iter().map(|e| e.sample_index).collect();
        assert_eq!(idx, vec![370, 730]);
    }

    #[test]
    fn drops_rhythm_annotations() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.atr");
        let mut rhythm = AnnotationEntry::new(10, '+');
        rhythm.aux = Some(b"(N".to_vec());
        write_wfdb_annotations(
            &path,
            &[
                rhythm,
                AnnotationEntry::new(370, 'N'),
                AnnotationEntry::new(730, 'V'),
            ],
        )
        .unwrap();
        let beats = read_wfdb_annotations(&path, &record(1000)).unwrap();
        assert_eq!(
            beats,
            vec![
                BeatAnnotation {
                    sample_index: 370,
                    symbol: 'N'
                },
                BeatAnnotation {
                    sample_index: 730,
                    symbol: 'V'
                },
            ]
        );
    }

    #[test]
    fn long_gaps_use_skip() {
        let entries = vec![
            AnnotationEntry::new(5, 'N'),
            AnnotationEntry::new(200_000, 'A'),
        ];
        let decoded = decode_annotations(&encode_annotations(&entries)).unwrap();
        assert_eq!(decoded, entries);
    }

    #[test]
    fn out_of_range_index_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.atr");
        write_wfdb_annotations(&path, &[AnnotationEntry::new(2000, 'N')]).unwrap();
        let err = read_wfdb_annotations(&path, &record(1000)).unwrap_err();
        assert!(matches!(
            err,
            SignalIoError::AnnotationOutOfRange {
                index: 2000,
                len: 1000
            }
        ));
    }

    #[test]
    fn malformed_streams() {
        assert!(decode_annotations(&[0x01]).is_err());
        assert!(decode_annotations(&atom(55, 1)).is_err());
        // AUX length longer than the remaining bytes.
        let mut b = atom(1, 1).to_vec();
        b.extend(atom(AUX, 10));
        b.extend(b"xy");
        assert!(decode_annotations(&b).is_err());
        assert!(decode_annotations(&atom(NUM, 1)).is_err());
    }

    #[test]
    fn symbol_table() {
        assert_eq!(symbol_for_code(1), Some('N'));
        assert_eq!(symbol_for_code(12), Some('/'));
        assert_eq!(symbol_for_code(28), Some('+'));
        assert_eq!(symbol_for_code(15), None);
        assert_eq!(code_for_symbol('V'), Some(5));
        assert_eq!(code_for_symbol('r'), Some(41));
    }
}
