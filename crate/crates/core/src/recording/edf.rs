//! Minimal EDF (European Data Format) reader and writer.
//!
//! Layout: a 256-byte fixed header, then `ns` 256-byte signal headers stored
//! field-by-field, then data records of little-endian 16-bit two's-complement
//! samples. EDF+ annotation signals are not supported.
//!
//! Reference: <https://www.edfplus.info/specs/edf.html>

use std::fs;
use std::path::Path;

use super::{ChannelSignal, Recording, RecordingError};

const FIXED_HEADER: usize = 256;
const SIGNAL_HEADER: usize = 256;
const DIGITAL_MIN: i32 = -32768;
const DIGITAL_MAX: i32 = 32767;

#[derive(Debug, Clone)]
struct SignalHeader {
    label: String,
    phys_min: f64,
    phys_max: f64,
    dig_min: i32,
    dig_max: i32,
    samples_per_record: usize,
}

impl SignalHeader {
    fn gain(&self) -> f64 {
        (self.phys_max - self.phys_min) / (self.dig_max - self.dig_min) as f64
    }

    fn to_physical(&self, d: i16) -> f64 {
        (d as i32 - self.dig_min) as f64 * self.gain() + self.phys_min
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn field(&mut self, len: usize, name: &str) -> Result<&'a str, RecordingError> {
        let end = self.pos + len;
        let raw = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| RecordingError::MalformedHeader(format!("truncated at field {name}")))?;
        self.pos = end;
        std::str::from_utf8(raw)
            .map(str::trim)
            .map_err(|_| RecordingError::MalformedHeader(format!("field {name} is not ASCII")))
    }

    fn number<T: std::str::FromStr>(&mut self, len: usize, name: &str) -> Result<T, RecordingError> {
        let s = self.field(len, name)?;
        s.parse::<T>()
            .map_err(|_| RecordingError::MalformedHeader(format!("field {name} = {s:?} is not a number")))
    }
}

/// Read an EDF file. The subject id is the first token of the patient field,
/// falling back to the file stem.
pub fn read_edf(path: impl AsRef<Path>) -> Result<Recording, RecordingError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_edf(&bytes, &stem)
}

/// Parse an in-memory EDF image.
pub fn parse_edf(bytes: &[u8], fallback_subject: &str) -> Result<Recording, RecordingError> {
    let mut c = Cursor { bytes, pos: 0 };
    let version = c.field(8, "version")?;
    if version != "0" {
        return Err(RecordingError::MalformedHeader(format!(
            "version {version:?}, expected \"0\""
        )));
    }
    let patient = c.field(80, "patient")?;
    let _recording_id = c.field(80, "recording")?;
    let _start_date = c.field(8, "startdate")?;
    let _start_time = c.field(8, "starttime")?;
    let header_bytes: usize = c.number(8, "header bytes")?;
    let _reserved = c.field(44, "reserved")?;
    let n_records: i64 = c.number(8, "number of records")?;
    let record_duration: f64 = c.number(8, "record duration")?;
    let ns: usize = c.number(4, "number of signals")?;

    if header_bytes != FIXED_HEADER + ns * SIGNAL_HEADER {
        return Err(RecordingError::MalformedHeader(format!(
            "header length {header_bytes} does not match {ns} signals"
        )));
    }
    if bytes.len() < header_bytes {
        return Err(RecordingError::MalformedHeader(format!(
            "file is {} bytes, header claims {header_bytes}",
            bytes.len()
        )));
    }
    if !(record_duration > 0.0) {
        return Err(RecordingError::MalformedHeader(format!(
            "record duration {record_duration}"
        )));
    }

    // Signal header fields are stored column-wise: all labels, then all
    // transducers, and so on.
    let mut per_signal = |len: usize, name: &str| -> Result<Vec<&str>, RecordingError> {
        (0..ns).map(|_| c.field(len, name)).collect()
    };
    let labels = per_signal(16, "label")?;
    let _transducer = per_signal(80, "transducer")?;
    let _dimension = per_signal(8, "physical dimension")?;
    let phys_min = per_signal(8, "physical minimum")?;
    let phys_max = per_signal(8, "physical maximum")?;
    let dig_min = per_signal(8, "digital minimum")?;
    let dig_max = per_signal(8, "digital maximum")?;
    let _prefilter = per_signal(80, "prefiltering")?;
    let spr = per_signal(8, "samples per record")?;
    let _reserved = per_signal(32, "signal reserved")?;

    let parse_f = |s: &str, name: &str| -> Result<f64, RecordingError> {
        s.parse::<f64>()
            .map_err(|_| RecordingError::MalformedHeader(format!("{name} {s:?} is not a number")))
    };
    let parse_i = |s: &str, name: &str| -> Result<i64, RecordingError> {
        s.parse::<i64>()
            .map_err(|_| RecordingError::MalformedHeader(format!("{name} {s:?} is not an integer")))
    };

    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        if labels[i].eq_ignore_ascii_case("EDF Annotations") {
            return Err(RecordingError::UnsupportedTransducer(labels[i].to_string()));
        }
        let h = SignalHeader {
            label: labels[i].to_string(),
            phys_min: parse_f(phys_min[i], "physical minimum")?,
            phys_max: parse_f(phys_max[i], "physical maximum")?,
            dig_min: parse_i(dig_min[i], "digital minimum")? as i32,
            dig_max: parse_i(dig_max[i], "digital maximum")? as i32,
            samples_per_record: parse_i(spr[i], "samples per record")?.max(0) as usize,
        };
        if h.dig_max <= h.dig_min || h.phys_max == h.phys_min {
            return Err(RecordingError::UnsupportedTransducer(format!(
                "{}: degenerate digital/physical range",
                h.label
            )));
        }
        if h.samples_per_record == 0 {
            return Err(RecordingError::MalformedHeader(format!(
                "{}: zero samples per record",
                h.label
            )));
        }
        signals.push(h);
    }

    let record_samples: usize = signals.iter().map(|s| s.samples_per_record).sum();
    let record_bytes = record_samples * 2;
    let data = &bytes[header_bytes..];
    let n_records = if n_records < 0 {
        // -1 means "unknown" while recording; infer from the file size.
        if record_bytes == 0 || data.len() % record_bytes != 0 {
            return Err(RecordingError::InconsistentRecordLength {
                expected: record_bytes,
                actual: data.len(),
            });
        }
        data.len() / record_bytes
    } else {
        n_records as usize
    };
    let expected = n_records * record_bytes;
    if data.len() != expected {
        return Err(RecordingError::InconsistentRecordLength {
            expected,
            actual: data.len(),
        });
    }

    let mut channels: Vec<ChannelSignal> = signals
        .iter()
        .map(|s| {
            ChannelSignal::new(
                s.label.clone(),
                s.samples_per_record as f64 / record_duration,
                Vec::with_capacity(n_records * s.samples_per_record),
            )
        })
        .collect();
    let mut words = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]));
    for _ in 0..n_records {
        for (sig, ch) in signals.iter().zip(channels.iter_mut()) {
            ch.samples
                .extend(words.by_ref().take(sig.samples_per_record).map(|d| sig.to_physical(d)));
        }
    }

    let subject_id = patient
        .split_whitespace()
        .next()
        .filter(|s| *s != "X")
        .unwrap_or(fallback_subject)
        .to_string();
    Recording::new(subject_id, n_records as f64 * record_duration, channels)
}

fn put(buf: &mut Vec<u8>, value: &str, len: usize) -> Result<(), RecordingError> {
    if value.len() > len || !value.is_ascii() {
        return Err(RecordingError::Unwritable(format!(
            "value {value:?} does not fit a {len}-byte ASCII field"
        )));
    }
    buf.extend_from_slice(value.as_bytes());
    buf.extend(std::iter::repeat_n(b' ', len - value.len()));
    Ok(())
}

/// Symmetric integer physical range covering the channel, at least +/-1 uV.
fn physical_limit(samples: &[f64]) -> f64 {
    samples
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .ceil()
        .max(1.0)
}

/// Write a recording as EDF with one-second data records.
///
/// Every channel rate must be a whole number of Hz. Samples are quantized to
/// 16 bits over a symmetric physical range; the header carries no wall-clock
/// time so output is byte-reproducible.
pub fn write_edf(path: impl AsRef<Path>, rec: &Recording) -> Result<(), RecordingError> {
    fs::write(path, encode_edf(rec)?)?;
    Ok(())
}

pub(crate) fn encode_edf(rec: &Recording) -> Result<Vec<u8>, RecordingError> {
    let ns = rec.channels.len();
    let mut spr = Vec::with_capacity(ns);
    for ch in &rec.channels {
        if ch.fs.fract() != 0.0 {
            return Err(RecordingError::Unwritable(format!(
                "channel {} rate {} Hz is not integral",
                ch.label, ch.fs
            )));
        }
        spr.push(ch.fs as usize);
    }
    let n_records = rec.duration_s.ceil() as usize;
    let limits: Vec<f64> = rec.channels.iter().map(|c| physical_limit(&c.samples)).collect();

    let mut buf = Vec::with_capacity(FIXED_HEADER * (ns + 1));
    put(&mut buf, "0", 8)?;
    put(&mut buf, &format!("{} X X X", rec.subject_id), 80)?;
    put(&mut buf, "Startdate X X X X", 80)?;
    put(&mut buf, "01.01.00", 8)?;
    put(&mut buf, "00.00.00", 8)?;
    put(&mut buf, &(FIXED_HEADER + ns * SIGNAL_HEADER).to_string(), 8)?;
    put(&mut buf, "", 44)?;
    put(&mut buf, &n_records.to_string(), 8)?;
    put(&mut buf, "1", 8)?;
    put(&mut buf, &ns.to_string(), 4)?;
    for ch in &rec.channels {
        put(&mut buf, &ch.label, 16)?;
    }
    for _ in 0..ns {
        put(&mut buf, "AgAgCl electrode", 80)?;
    }
    for _ in 0..ns {
        put(&mut buf, "uV", 8)?;
    }
    for l in &limits {
        put(&mut buf, &format!("{}", -l), 8)?;
    }
    for l in &limits {
        put(&mut buf, &format!("{l}"), 8)?;
    }
    for _ in 0..ns {
        put(&mut buf, &DIGITAL_MIN.to_string(), 8)?;
    }
    for _ in 0..ns {
        put(&mut buf, &DIGITAL_MAX.to_string(), 8)?;
    }
    for _ in 0..ns {
        put(&mut buf, "", 80)?;
    }
    for s in &spr {
        put(&mut buf, &s.to_string(), 8)?;
    }
    for _ in 0..ns {
        put(&mut buf, "", 32)?;
    }

    let span = (DIGITAL_MAX - DIGITAL_MIN) as f64;
    for r in 0..n_records {
        for ((ch, &n), &limit) in rec.channels.iter().zip(&spr).zip(&limits) {
            for i in r * n..(r + 1) * n {
                // The final record is zero-padded when the duration is fractional.
                let v = ch.samples.get(i).copied().unwrap_or(0.0);
                let d = ((v + limit) / (2.0 * limit) * span + DIGITAL_MIN as f64).round();
                let d = d.clamp(DIGITAL_MIN as f64, DIGITAL_MAX as f64) as i16;
                buf.extend_from_slice(&d.to_le_bytes());
            }
        }
    }
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Byte-level fixture assembled field by field, independent of `encode_edf`.
    struct Fixture {
        header_bytes_override: Option<usize>,
        signals: Vec<(&'static str, f64, f64, i32, i32, usize)>,
        n_records: i64,
        record_duration: &'static str,
        data: Vec<i16>,
    }

    fn pad(s: &str, n: usize) -> Vec<u8> {
        let mut v = s.as_bytes().to_vec();
        v.resize(n, b' ');
        v
    }

    impl Fixture {
        fn bytes(&self) -> Vec<u8> {
            let ns = self.signals.len();
            let mut b = Vec::new();
            b.extend(pad("0", 8));
            b.extend(pad("subj01 M 01-JAN-2000 X", 80));
            b.extend(pad("Startdate 01-JAN-2000 X X X", 80));
            b.extend(pad("01.01.00", 8));
            b.extend(pad("10.00.00", 8));
            let hb = self.header_bytes_override.unwrap_or(256 * (ns + 1));
            b.extend(pad(&hb.to_string(), 8));
            b.extend(pad("", 44));
            b.extend(pad(&self.n_records.to_string(), 8));
            b.extend(pad(self.record_duration, 8));
            b.extend(pad(&ns.to_string(), 4));
            for s in &self.signals {
                b.extend(pad(s.0, 16));
            }
            for _ in &self.signals {
                b.extend(pad("AgAgCl", 80));
            }
            for _ in &self.signals {
                b.extend(pad("uV", 8));
            }
            for s in &self.signals {
                b.extend(pad(&s.1.to_string(), 8));
            }
            for s in &self.signals {
                b.extend(pad(&s.2.to_string(), 8));
            }
            for s in &self.signals {
                b.extend(pad(&s.3.to_string(), 8));
            }
            for s in &self.signals {
                b.extend(pad(&s.4.to_string(), 8));
            }
            for _ in &self.signals {
                b.extend(pad("HP:0.1Hz", 80));
            }
            for s in &self.signals {
                b.extend(pad(&s.5.to_string(), 8));
            }
            for _ in &self.signals {
                b.extend(pad("", 32));
            }
            for d in &self.data {
                b.extend(d.to_le_bytes());
            }
            b
        }
    }

    #[test]
    fn constant_channel_scales_to_physical() {
        // Physical [-100, 100] over digital [-2000, 2000]: gain 0.05 uV/bit,
        // so digital 250 maps to 12.5 uV.
        let fx = Fixture {
            header_bytes_override: None,
            signals: vec![("EEG Fp1", -100.0, 100.0, -2000, 2000, 256)],
            n_records: 10,
            record_duration: "1",
            data: vec![250; 2560],
        };
        let rec = parse_edf(&fx.bytes(), "fallback").unwrap();
        assert_eq!(rec.subject_id, "subj01");
        assert_eq!(rec.channels.len(), 1);
        let ch = &rec.channels[0];
        assert_eq!(ch.label, "EEG Fp1");
        assert_eq!(ch.fs, 256.0);
        assert_eq!(ch.samples.len(), 2560);
        assert!(ch.samples.iter().all(|&v| (v - 12.5).abs() < 1e-12));
        assert_eq!(rec.duration_s, 10.0);
    }

    #[test]
    fn header_length_mismatch_is_malformed() {
        let fx = Fixture {
            header_bytes_override: Some(256 * 3),
            signals: vec![("A", -1.0, 1.0, -10, 10, 4)],
            n_records: 1,
            record_duration: "1",
            data: vec![0; 4],
        };
        assert!(matches!(
            parse_edf(&fx.bytes(), "x"),
            Err(RecordingError::MalformedHeader(_))
        ));
    }

    #[test]
    fn truncated_data_is_inconsistent() {
        let fx = Fixture {
            header_bytes_override: None,
            signals: vec![("A", -1.0, 1.0, -10, 10, 4)],
            n_records: 3,
            record_duration: "1",
            data: vec![0; 10],
        };
        assert!(matches!(
            parse_edf(&fx.bytes(), "x"),
            Err(RecordingError::InconsistentRecordLength {
                expected: 24,
                actual: 20
            })
        ));
    }

    #[test]
    fn annotation_signal_is_unsupported() {
        let fx = Fixture {
            header_bytes_override: None,
            signals: vec![("EDF Annotations", -1.0, 1.0, -32768, 32767, 4)],
            n_records: 1,
            record_duration: "1",
            data: vec![0; 4],
        };
        assert!(matches!(
            parse_edf(&fx.bytes(), "x"),
            Err(RecordingError::UnsupportedTransducer(_))
        ));
    }

    #[test]
    fn mixed_rates_parse_per_channel() {
        // Records of 2 s: channel A 8 samples (4 Hz), channel B 2 samples (1 Hz).
        let mut data = Vec::new();
        for r in 0..3i16 {
            data.extend((0..8).map(|i| r * 8 + i));
            data.extend([100 + r, 200 + r]);
        }
        let fx = Fixture {
            header_bytes_override: None,
            signals: vec![
                ("A", -32768.0, 32767.0, -32768, 32767, 8),
                ("B", -32768.0, 32767.0, -32768, 32767, 2),
            ],
            n_records: 3,
            record_duration: "2",
            data,
        };
        let rec = parse_edf(&fx.bytes(), "x").unwrap();
        assert_eq!(rec.channels[0].fs, 4.0);
        assert_eq!(rec.channels[1].fs, 1.0);
        assert_eq!(rec.fs(), None);
        assert_eq!(rec.channels[0].samples, (0..24).map(f64::from).collect::<Vec<_>>());
        assert_eq!(rec.channels[1].samples, vec![100.0, 200.0, 101.0, 201.0, 102.0, 202.0]);
    }

    #[test]
    fn unknown_record_count_is_inferred() {
        let fx = Fixture {
            header_bytes_override: None,
            signals: vec![("A", -10.0, 10.0, -10, 10, 2)],
            n_records: -1,
            record_duration: "1",
            data: vec![1, 2, 3, 4],
        };
        let rec = parse_edf(&fx.bytes(), "x").unwrap();
        assert_eq!(rec.channels[0].samples, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn bad_version_is_malformed() {
        let mut bytes = Fixture {
            header_bytes_override: None,
            signals: vec![("A", -1.0, 1.0, -10, 10, 1)],
            n_records: 1,
            record_duration: "1",
            data: vec![0],
        }
        .bytes();
        bytes[0] = b'1';
        assert!(matches!(
            parse_edf(&bytes, "x"),
            Err(RecordingError::MalformedHeader(_))
        ));
    }

    #[test]
    fn fallback_subject_when_patient_unknown() {
        let rec = Recording::new("X", 1.0, vec![ChannelSignal::new("A", 2.0, vec![0.5, -0.5])]).unwrap();
        let back = parse_edf(&encode_edf(&rec).unwrap(), "stem").unwrap();
        assert_eq!(back.subject_id, "stem");
    }

    #[test]
    fn fractional_rate_is_unwritable() {
        let rec = Recording::new("s", 2.0, vec![ChannelSignal::new("A", 2.5, vec![0.0; 5])]).unwrap();
        assert!(matches!(encode_edf(&rec), Err(RecordingError::Unwritable(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn round_trip_within_one_quantization_step(
                secs in 1usize..4,
                fs in prop::sample::select(vec![4usize, 16, 64]),
                seed in prop::collection::vec(-300.0f64..300.0, 1..8),
            ) {
                let n = secs * fs;
                let a: Vec<f64> = (0..n).map(|i| seed[i % seed.len()] * ((i as f64) * 0.37).sin()).collect();
                let b: Vec<f64> = a.iter().rev().map(|v| v * 0.25 + 3.0).collect();
                let rec = Recording::new(
                    "p01",
                    secs as f64,
                    vec![ChannelSignal::new("F3", fs as f64, a), ChannelSignal::new("P3", fs as f64, b)],
                ).unwrap();
                let back = parse_edf(&encode_edf(&rec).unwrap(), "x").unwrap();
                prop_assert_eq!(&back.subject_id, "p01");
                for (orig, got) in rec.channels.iter().zip(&back.channels) {
                    let step = 2.0 * physical_limit(&orig.samples) / 65535.0;
                    prop_assert_eq!(orig.samples.len(), got.samples.len());
                    for (x, y) in orig.samples.iter().zip(&got.samples) {
                        prop_assert!((x - y).abs() <= step, "{x} vs {y} (step {step})");
                    }
                }
            }
        }
    }
}
