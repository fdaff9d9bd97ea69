use std::path::PathBuf;

use ecg_xai::signal_io::{
    read_csv_beats, read_wfdb_annotations, read_wfdb_record, write_wfdb_annotations,
    write_wfdb_record, BeatAnnotation, SignalIoError,
};
use ecg_xai::synth::{synth_record, SynthConfig};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Rows of `adc_ch0 adc_ch1 mv_ch0 mv_ch1` decoded by the reference WFDB implementation.
fn expected() -> Vec<(i16, i16, f64, f64)> {
    std::fs::read_to_string(fixture("ref_expected.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (
                f[0].parse().unwrap(),
                f[1].parse().unwrap(),
                f[2].parse().unwrap(),
                f[3].parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn format_212_matches_reference_decoder() {
    let rec = read_wfdb_record(fixture("ref.hea")).unwrap();
    assert_eq!(rec.record_id, "ref");
    assert_eq!(rec.sampling_rate_hz, 360);
    assert_eq!(rec.channels.len(), 2);
    assert_eq!(rec.channels[0].lead, "MLII");
    assert_eq!(rec.channels[1].lead, "V1");
    let exp = expected();
    assert_eq!(rec.len(), exp.len());
    for (i, (a0, a1, m0, m1)) in exp.into_iter().enumerate() {
        assert_eq!(rec.channels[0].adc[i], a0, "sample {i}");
        assert_eq!(rec.channels[1].adc[i], a1, "sample {i}");
        assert!((rec.channels[0].samples[i] - m0).abs() < 1e-9);
        assert!((rec.channels[1].samples[i] - m1).abs() < 1e-9);
    }
}

#[test]
fn annotations_keep_only_beats() {
    let rec = read_wfdb_record(fixture("ref.hea")).unwrap();
    let beats = read_wfdb_annotations(fixture("ref.atr"), &rec).unwrap();
    // The file also holds a rhythm change ('+' with aux text) and a noise marker ('~').
    let expected = [(20, 'N'), (40, 'A'), (77, 'V'), (100, '/')];
    let got: Vec<(usize, char)> = beats.iter().map(|b| (b.sample_index, b.symbol)).collect();
    assert_eq!(got, expected);
}

#[test]
fn synthetic_record_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (rec, ann) = synth_record(
        "syn",
        &SynthConfig {
            classes: vec!['N', 'V', 'L', 'R', 'A', '/'],
            duration_s: 30.0,
            seed: 4,
            ..Default::default()
        },
    );
    let hea = write_wfdb_record(dir.path(), &rec).unwrap();
    write_wfdb_annotations(dir.path().join("syn.atr"), &ann).unwrap();
    let back = read_wfdb_record(&hea).unwrap();
    assert_eq!(back.channels[0].adc, rec.channels[0].adc);
    assert_eq!(back.channels[0].samples, rec.channels[0].samples);
    let beats = read_wfdb_annotations(dir.path().join("syn.atr"), &back).unwrap();
    let expected: Vec<BeatAnnotation> = ann
        .iter()
        .map(|a| BeatAnnotation {
            sample_index: a.sample_index,
            symbol: a.symbol().unwrap(),
        })
        .collect();
    assert_eq!(beats, expected);
}

#[test]
fn csv_beats_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("beats.csv");
    let row = |label: &str, n: usize| {
        let values: Vec<String> = (0..n).map(|i| format!("{}", i as f64 * 0.5)).collect();
        format!("{label},{}\n", values.join(","))
    };
    std::fs::write(&path, row("N", 216) + &row("V", 216)).unwrap();
    let beats = read_csv_beats(&path, None).unwrap();
    assert_eq!(beats.len(), 2);
    assert_eq!((beats[0].label, beats[0].needs_resample), ('N', false));
    assert_eq!(beats[1].label, 'V');

    std::fs::write(&path, row("N", 300) + &row("V", 300)).unwrap();
    let beats = read_csv_beats(&path, None).unwrap();
    assert!(beats.iter().all(|b| b.needs_resample));
    assert_eq!(beats[1].samples[299], 149.5);

    std::fs::write(&path, row("N", 216) + &row("V", 300)).unwrap();
    assert!(matches!(
        read_csv_beats(&path, None),
        Err(SignalIoError::RaggedRow { row: 2, .. })
    ));

    assert!(matches!(
        read_wfdb_record(dir.path().join("absent.hea")),
        Err(SignalIoError::MissingFile(_))
    ));
}
