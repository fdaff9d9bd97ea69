use std::fs;
use std::path::{Path, PathBuf};

use super::{io_err, Channel, EcgRecord, Result, SignalIoError};

/// WFDB default gain (ADC units per physical unit) used when the header leaves it at 0.
const DEFAULT_GAIN: f64 = 200.0;

/// Parsed WFDB header (single-segment records only).
#[derive(Debug, Clone, PartialEq)]
pub struct WfdbHeader {
    pub record_name: String,
    pub sampling_rate_hz: u32,
    /// Samples per signal; `None` when the header omits it.
    pub num_samples: Option<usize>,
    pub signals: Vec<SignalSpec>,
}

/// One per-signal line of a WFDB header.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub file_name: String,
    pub format: u32,
    pub byte_offset: u64,
    pub gain: f64,
    pub baseline: i32,
    pub units: String,
    pub adc_resolution: u32,
    pub adc_zero: i32,
    pub initial_value: Option<i32>,
    pub checksum: Option<i32>,
    pub description: String,
}

/// Parses header text. `path` is only used in error messages.
pub fn parse_header(text: &str, path: &Path) -> Result<WfdbHeader> {
    let herr = |line: usize, msg: String| SignalIoError::Header {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (rec_line_no, rec_line) = lines
        .next()
        .ok_or_else(|| herr(1, "missing record line".into()))?;
    let fields: Vec<&str> = rec_line.split_whitespace().collect();
    if fields.len() < 2 {
        return Err(herr(
            rec_line_no,
            "record line needs at least a name and signal count".into(),
        ));
    }
    let record_name = fields[0].to_string();
    if record_name.contains('/') {
        return Err(herr(
            rec_line_no,
            "multi-segment records are not supported".into(),
        ));
    }
    let num_signals: usize = fields[1]
        .parse()
        .map_err(|_| herr(rec_line_no, format!("bad signal count '{}'", fields[1])))?;

    let sampling_rate_hz = match fields.get(2) {
        None => 250,
        Some(f) => {
            // "360", "360/720(0)" etc.: only the leading frequency matters here.
            let head = f.split(['/', '(']).next().unwrap_or(f);
            let fs: f64 = head
                .parse()
                .map_err(|_| herr(rec_line_no, format!("bad sampling frequency '{f}'")))?;
            if !(fs > 0.0) || fs.fract() != 0.0 || fs > f64::from(u32::MAX) {
                return Err(herr(
                    rec_line_no,
                    format!("sampling frequency must be a positive integer, got '{f}'"),
                ));
            }
            fs as u32
        }
    };
    let num_samples = match fields.get(3) {
        None => None,
        Some(n) => Some(
            n.parse::<usize>()
                .map_err(|_| herr(rec_line_no, format!("bad sample count '{n}'")))?,
        ),
    };

    let mut signals = Vec::with_capacity(num_signals);
    for (line_no, line) in lines.take(num_signals) {
        signals.push(parse_signal_line(line).map_err(|msg| herr(line_no, msg))?);
    }
    if signals.len() != num_signals {
        return Err(herr(
            rec_line_no,
            format!(
                "header declares {num_signals} signals but lists {}",
                signals.len()
            ),
        ));
    }

    Ok(WfdbHeader {
        record_name,
        sampling_rate_hz,
        num_samples,
        signals,
    })
}

fn parse_signal_line(line: &str) -> std::result::Result<SignalSpec, String> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() < 2 {
        return Err("signal line needs a file name and format".into());
    }
    let file_name = tokens[0].to_string();

    // format[xsamp][:skew][+offset]
    let fmt_tok = tokens[1];
    let (fmt_part, byte_offset) = match fmt_tok.split_once('+') {
        Some((f, off)) => (
            f,
            off.parse::<u64>()
                .map_err(|_| format!("bad byte offset in '{fmt_tok}'"))?,
        ),
        None => (fmt_tok, 0),
    };
    if fmt_part.contains('x') || fmt_part.contains(':') {
        return Err(format!(
            "multi-frequency or skewed signals are not supported ('{fmt_tok}')"
        ));
    }
    let format: u32 = fmt_part
        .parse()
        .map_err(|_| format!("bad format '{fmt_tok}'"))?;

    // gain[(baseline)][/units]
    let mut gain = DEFAULT_GAIN;
    let mut explicit_baseline = None;
    let mut units = String::from("mV");
    if let Some(tok) = tokens.get(2) {
        let (gain_base, unit_part) = match tok.split_once('/') {
            Some((g, u)) => (g, Some(u)),
            None => (*tok, None),
        };
        if let Some(u) = unit_part {
            units = u.to_string();
        }
        let gain_str = match gain_base.split_once('(') {
            Some((g, rest)) => {
                let b = rest
                    .strip_suffix(')')
                    .ok_or_else(|| format!("unterminated baseline in '{tok}'"))?;
                explicit_baseline = Some(
                    b.parse::<i32>()
                        .map_err(|_| format!("bad baseline in '{tok}'"))?,
                );
                g
            }
            None => gain_base,
        };
        let g: f64 = gain_str
            .parse()
            .map_err(|_| format!("bad gain in '{tok}'"))?;
        if g < 0.0 || !g.is_finite() {
            return Err(format!("gain must be non-negative, got '{tok}'"));
        }
        if g != 0.0 {
            gain = g;
        }
    }

    let int_field = |i: usize, name: &str| -> std::result::Result<Option<i32>, String> {
        tokens
            .get(i)
            .map(|t| t.parse::<i32>().map_err(|_| format!("bad {name} '{t}'")))
            .transpose()
    };
    let adc_resolution = int_field(3, "ADC resolution")?.unwrap_or(12).max(0) as u32;
    let adc_zero = int_field(4, "ADC zero")?.unwrap_or(0);
    let initial_value = int_field(5, "initial value")?;
    let checksum = int_field(6, "checksum")?;
    // tokens[7] is the block size; unused for format 212.
    let description = tokens.get(8..).map(|d| d.join(" ")).unwrap_or_default();

    Ok(SignalSpec {
        file_name,
        format,
        byte_offset,
        gain,
        // WFDB: an absent baseline defaults to the ADC zero.
        baseline: explicit_baseline.unwrap_or(adc_zero),
        units,
        adc_resolution,
        adc_zero,
        initial_value,
        checksum,
        description,
    })
}

/// Unpacks `count` format-212 samples: two 12-bit two's-complement values per 3 bytes.
///
/// The first sample is the low byte plus the low nibble of the middle byte; the second
/// is the high nibble of the middle byte plus the third byte.
pub fn decode_format212(bytes: &[u8], count: usize) -> Option<Vec<i16>> {
    if bytes.len() < bytes_for_212(count) {
        return None;
    }
    let sign_extend = |v: u16| -> i16 { ((v << 4) as i16) >> 4 };
    let mut out = Vec::with_capacity(count);
    for chunk in bytes.chunks(3) {
        if out.len() == count {
            break;
        }
        let b0 = u16::from(chunk[0]);
        let b1 = u16::from(chunk[1]);
        out.push(sign_extend(b0 | ((b1 & 0x0F) << 8)));
        if out.len() == count {
            break;
        }
        let b2 = u16::from(chunk[2]);
        out.push(sign_extend(b2 | ((b1 & 0xF0) << 4)));
    }
    Some(out)
}

/// Packs samples into format 212. Values are truncated to 12 bits.
pub fn encode_format212(values: &[i16]) -> Vec<u8> {
    let mut out = Vec::with_capacity(bytes_for_212(values.len()));
    for pair in values.chunks(2) {
        let a = (pair[0] as u16) & 0x0FFF;
        let b = pair.get(1).map_or(0, |&v| (v as u16) & 0x0FFF);
        out.push((a & 0xFF) as u8);
        out.push((((b >> 8) << 4) | (a >> 8)) as u8);
        if pair.len() == 2 {
            out.push((b & 0xFF) as u8);
        }
    }
    out
}

fn bytes_for_212(count: usize) -> usize {
    // Every complete pair takes 3 bytes; a trailing odd sample takes 2.
    (count / 2) * 3 + (count % 2) * 2
}

/// Reads a WFDB record from its header path, decoding every signal to millivolts.
pub fn read_wfdb_record(header_path: impl AsRef<Path>) -> Result<EcgRecord> {
    let header_path = header_path.as_ref();
    let text = fs::read_to_string(header_path).map_err(io_err(header_path))?;
    let header = parse_header(&text, header_path)?;
    let dir = header_path.parent().unwrap_or(Path::new("."));

    for (i, s) in header.signals.iter().enumerate() {
        if s.format != 212 {
            return Err(SignalIoError::UnsupportedFormat {
                signal: i,
                format: s.format.to_string(),
            });
        }
    }

    let mut channels: Vec<Option<Channel>> = vec![None; header.signals.len()];
    // Signals stored in the same file are consecutive in the header and interleaved
    // frame by frame in the file.
    let mut start = 0;
    while start < header.signals.len() {
        let file = &header.signals[start].file_name;
        let offset = header.signals[start].byte_offset;
        let mut end = start + 1;
        while end < header.signals.len() && header.signals[end].file_name == *file {
            end += 1;
        }
        let group = end - start;
        let path = dir.join(file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let payload = bytes.get(offset as usize..).unwrap_or(&[]);

        let frames = match header.num_samples {
            Some(n) => n,
            None => payload.len() * 2 / 3 / group,
        };
        let total = frames * group;
        let expected = bytes_for_212(total) as u64;
        let actual = payload.len() as u64;
        // A single trailing pad byte is tolerated; anything else is inconsistent.
        if actual < expected || actual > expected + 1 {
            return Err(SignalIoError::Truncated {
                path: path.clone(),
                expected,
                actual,
            });
        }
        let values = decode_format212(payload, total).ok_or_else(|| SignalIoError::Truncated {
            path: path.clone(),
            expected,
            actual,
        })?;

        for (k, sig_idx) in (start..end).enumerate() {
            let spec = &header.signals[sig_idx];
            let adc: Vec<i16> = values.iter().skip(k).step_by(group).copied().collect();
            if let Some(expected_sum) = spec.checksum {
                let sum = adc.iter().fold(0i16, |acc, &v| acc.wrapping_add(v));
                if (i32::from(sum) - expected_sum).rem_euclid(65536) != 0 {
                    log::warn!(
                        "{}: checksum mismatch for signal {sig_idx} (header {expected_sum}, data {sum})",
                        path.display()
                    );
                }
            }
            let lead = if spec.description.is_empty() {
                format!("signal{sig_idx}")
            } else {
                spec.description.clone()
            };
            channels[sig_idx] = Some(Channel::from_adc(lead, spec.gain, spec.baseline, adc));
        }
        start = end;
    }

    let channels = channels
        .into_iter()
        .map(|c| c.expect("all groups decoded"))
        .collect();
    EcgRecord::new(header.record_name, header.sampling_rate_hz, channels)
}

/// Writes `record` as `<dir>/<record_id>.hea` plus a single interleaved format-212
/// `.dat` file. Returns the header path.
pub fn write_wfdb_record(dir: impl AsRef<Path>, record: &EcgRecord) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let dat_name = format!("{}.dat", record.record_id);
    let hea_path = dir.join(format!("{}.hea", record.record_id));
    let n = record.len();

    let mut interleaved = Vec::with_capacity(n * record.channels.len());
    for t in 0..n {
        for ch in &record.channels {
            interleaved.push(ch.adc[t]);
        }
    }
    let dat_path = dir.join(&dat_name);
    fs::write(&dat_path, encode_format212(&interleaved)).map_err(io_err(&dat_path))?;

    let mut text = format!(
        "{} {} {} {}\n",
        record.record_id,
        record.channels.len(),
        record.sampling_rate_hz,
        n
    );
    for ch in &record.channels {
        let checksum = ch.adc.iter().fold(0i16, |acc, &v| acc.wrapping_add(v));
        let first = ch.adc.first().copied().unwrap_or(0);
        text.push_str(&format!(
            "{dat_name} 212 {}({})/mV 11 {} {first} {checksum} 0 {}\n",
            fmt_gain(ch.gain),
            ch.baseline,
            ch.baseline,
            ch.lead
        ));
    }
    fs::write(&hea_path, text).map_err(io_err(&hea_path))?;
    Ok(hea_path)
}

fn fmt_gain(g: f64) -> String {
    if g.fract() == 0.0 {
        format!("{}", g as i64)
    } else {
        format!("{g}")
    }
}
