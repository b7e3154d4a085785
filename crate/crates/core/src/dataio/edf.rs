//! EDF / EDF+ reading and a minimal EDF+C writer.
//!
//! Only what the motor-imagery recordings need: 16-bit data records, one
//! sampling rate across data channels, and an `EDF Annotations` channel with
//! time-stamped annotation lists (TALs).

use ndarray::Array2;

use super::{Annotation, AnnotationCode, DataError, Recording, Result};

const ANNOTATION_LABEL: &str = "EDF Annotations";
const FIXED_HEADER: usize = 256;
const SIGNAL_HEADER: usize = 256;

fn ascii_field(bytes: &[u8], what: &str) -> Result<String> {
    std::str::from_utf8(bytes)
        .map(|s| s.trim().to_string())
        .map_err(|_| DataError::Parse(format!("{what}: not ASCII")))
}

fn int_field(bytes: &[u8], what: &str) -> Result<i64> {
    let s = ascii_field(bytes, what)?;
    s.parse::<i64>().map_err(|_| DataError::Parse(format!("{what}: '{s}' is not an integer")))
}

fn float_field(bytes: &[u8], what: &str) -> Result<f64> {
    let s = ascii_field(bytes, what)?;
    s.parse::<f64>().map_err(|_| DataError::Parse(format!("{what}: '{s}' is not a number")))
}

#[derive(Debug, Clone)]
struct SignalHeader {
    label: String,
    dimension: String,
    physical_min: f64,
    physical_max: f64,
    digital_min: f64,
    digital_max: f64,
    samples_per_record: usize,
}

impl SignalHeader {
    fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)
    }

    /// Multiplier taking the declared physical unit to microvolts.
    fn to_microvolts(&self) -> f64 {
        match self.dimension.as_str() {
            "V" => 1e6,
            "mV" => 1e3,
            "nV" => 1e-3,
            _ => 1.0,
        }
    }
}

/// Parses an EDF or EDF+ byte stream.
///
/// Identity fields of the returned recording are left empty; see
/// [`Recording::with_identity`].
pub fn parse_edf(raw: &[u8]) -> Result<Recording> {
    if raw.len() < FIXED_HEADER {
        return Err(DataError::Parse(format!("file is {} bytes, shorter than the fixed header", raw.len())));
    }
    if ascii_field(&raw[0..8], "version")? != "0" {
        return Err(DataError::Parse("bad version field (expected \"0\")".into()));
    }
    let header_bytes = int_field(&raw[184..192], "header size")?;
    let n_records = int_field(&raw[236..244], "record count")?;
    let record_duration = float_field(&raw[244..252], "record duration")?;
    let ns = int_field(&raw[252..256], "signal count")?;
    if ns <= 0 {
        return Err(DataError::Parse(format!("signal count {ns}")));
    }
    let ns = ns as usize;
    if header_bytes != (FIXED_HEADER + ns * SIGNAL_HEADER) as i64 {
        return Err(DataError::Parse(format!("header size {header_bytes} inconsistent with {ns} signals")));
    }
    let header_bytes = header_bytes as usize;
    if raw.len() < header_bytes {
        return Err(DataError::Truncation(format!("header needs {header_bytes} bytes, file has {}", raw.len())));
    }
    if !(record_duration > 0.0) {
        return Err(DataError::Parse(format!("record duration {record_duration}")));
    }

    let sig = &raw[FIXED_HEADER..header_bytes];
    let field = |offset: usize, width: usize, i: usize| {
        let start = offset * ns + i * width;
        &sig[start..start + width]
    };
    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        signals.push(SignalHeader {
            label: ascii_field(field(0, 16, i), "label")?,
            dimension: ascii_field(field(96, 8, i), "physical dimension")?,
            physical_min: float_field(field(104, 8, i), "physical minimum")?,
            physical_max: float_field(field(112, 8, i), "physical maximum")?,
            digital_min: float_field(field(120, 8, i), "digital minimum")?,
            digital_max: float_field(field(128, 8, i), "digital maximum")?,
            samples_per_record: {
                let n = int_field(field(216, 8, i), "samples per record")?;
                usize::try_from(n).map_err(|_| DataError::Parse(format!("samples per record {n}")))?
            },
        });
    }
    for s in &signals {
        if s.digital_max <= s.digital_min {
            return Err(DataError::Parse(format!("signal '{}': digital range is empty", s.label)));
        }
    }

    let record_samples: usize = signals.iter().map(|s| s.samples_per_record).sum();
    let record_bytes = record_samples * 2;
    let data_bytes = raw.len() - header_bytes;
    let n_records = if n_records < 0 {
        if record_bytes == 0 || !data_bytes.is_multiple_of(record_bytes) {
            return Err(DataError::Truncation(format!("{data_bytes} data bytes is not a whole number of records")));
        }
        data_bytes / record_bytes
    } else {
        n_records as usize
    };
    if n_records * record_bytes != data_bytes {
        return Err(DataError::Truncation(format!(
            "{n_records} records of {record_bytes} bytes need {} bytes, file has {data_bytes}",
            n_records * record_bytes
        )));
    }

    let annot_idx = signals
        .iter()
        .position(|s| s.label == ANNOTATION_LABEL)
        .ok_or_else(|| DataError::Annotation("no 'EDF Annotations' channel".into()))?;
    let data_idx: Vec<usize> = (0..ns).filter(|&i| i != annot_idx && signals[i].label != ANNOTATION_LABEL).collect();
    let per_record = data_idx.first().map_or(0, |&i| signals[i].samples_per_record);
    if let Some(&i) = data_idx.iter().find(|&&i| signals[i].samples_per_record != per_record) {
        return Err(DataError::Parse(format!("signal '{}' has a different sampling rate", signals[i].label)));
    }

    let mut offsets = Vec::with_capacity(ns);
    let mut acc = 0;
    for s in &signals {
        offsets.push(acc);
        acc += s.samples_per_record * 2;
    }

    let total = n_records * per_record;
    let mut out = Array2::<f64>::zeros((data_idx.len(), total));
    let mut tal_bytes = Vec::new();
    for r in 0..n_records {
        let rec = &raw[header_bytes + r * record_bytes..header_bytes + (r + 1) * record_bytes];
        for (row, &si) in data_idx.iter().enumerate() {
            let s = &signals[si];
            let gain = s.gain();
            let unit = s.to_microvolts();
            let bytes = &rec[offsets[si]..offsets[si] + per_record * 2];
            for (k, pair) in bytes.chunks_exact(2).enumerate() {
                let d = i16::from_le_bytes([pair[0], pair[1]]) as f64;
                out[[row, r * per_record + k]] = (s.physical_min + (d - s.digital_min) * gain) * unit;
            }
        }
        let a = &signals[annot_idx];
        tal_bytes.push(&rec[offsets[annot_idx]..offsets[annot_idx] + a.samples_per_record * 2]);
    }

    let sample_rate = per_record as f64 / record_duration;
    let duration = n_records as f64 * record_duration;
    let mut annotations = Vec::new();
    for block in tal_bytes {
        parse_tal_block(block, &mut annotations)?;
    }
    annotations.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    if let Some(a) = annotations.iter().find(|a| a.onset < 0.0 || a.onset > duration) {
        return Err(DataError::Annotation(format!("onset {} outside recording of {duration} s", a.onset)));
    }

    Ok(Recording {
        subject_id: String::new(),
        run_id: 0,
        signals: out,
        sample_rate,
        channel_names: data_idx.iter().map(|&i| signals[i].label.clone()).collect(),
        annotations,
    })
}

/// Decodes the TALs of one annotation-channel record. Entries whose text is
/// not a T0/T1/T2 code, including the time-keeping TAL, are skipped.
fn parse_tal_block(block: &[u8], out: &mut Vec<Annotation>) -> Result<()> {
    for tal in block.split(|&b| b == 0).filter(|t| !t.is_empty()) {
        let mut parts = tal.split(|&b| b == 0x14);
        let head = parts.next().unwrap_or_default();
        let mut time = head.split(|&b| b == 0x15);
        let onset_s = std::str::from_utf8(time.next().unwrap_or_default())
            .map_err(|_| DataError::Annotation("non-ASCII onset".into()))?;
        if !(onset_s.starts_with('+') || onset_s.starts_with('-')) {
            return Err(DataError::Annotation(format!("TAL onset '{onset_s}' lacks a sign")));
        }
        let onset: f64 = onset_s.parse().map_err(|_| DataError::Annotation(format!("bad onset '{onset_s}'")))?;
        let duration = match time.next() {
            Some(d) if !d.is_empty() => {
                let d = std::str::from_utf8(d).map_err(|_| DataError::Annotation("non-ASCII duration".into()))?;
                d.parse().map_err(|_| DataError::Annotation(format!("bad duration '{d}'")))?
            }
            _ => 0.0,
        };
        for text in parts {
            let text = String::from_utf8_lossy(text);
            if let Some(code) = AnnotationCode::parse(&text) {
                out.push(Annotation { onset, duration, code });
            }
        }
    }
    Ok(())
}

/// Everything needed to emit an EDF+C file.
#[derive(Clone, Debug)]
pub struct EdfSpec<'a> {
    /// `channels × samples` in microvolts.
    pub signals: &'a Array2<f64>,
    pub channel_names: &'a [String],
    pub sample_rate: f64,
    pub record_duration: f64,
    pub annotations: &'a [Annotation],
    /// Symmetric physical range `[-limit, limit]` µV; values are clipped to it.
    pub physical_limit: f64,
}

fn put(buf: &mut Vec<u8>, text: &str, width: usize) {
    let mut bytes = text.as_bytes().to_vec();
    bytes.truncate(width);
    bytes.resize(width, b' ');
    buf.extend_from_slice(&bytes);
}

/// Short decimal rendering that fits the 8-character numeric fields.
fn num8(v: f64) -> String {
    let mut s = format!("{v}");
    if s.len() > 8 {
        s = format!("{v:.6}");
        s.truncate(8);
        s = s.trim_end_matches('.').to_string();
    }
    s
}

/// Writes an EDF+C file with 16-bit samples and one annotation channel.
///
/// The sample count must be a whole number of records.
pub fn write_edf(spec: &EdfSpec<'_>) -> Result<Vec<u8>> {
    let (channels, samples) = spec.signals.dim();
    if spec.channel_names.len() != channels {
        return Err(DataError::Shape("channel_names length differs from signal rows".into()));
    }
    let per_record_f = spec.sample_rate * spec.record_duration;
    let per_record = per_record_f.round() as usize;
    if per_record == 0 || (per_record_f - per_record as f64).abs() > 1e-9 || samples % per_record != 0 {
        return Err(DataError::Shape(format!("{samples} samples do not fill records of {per_record_f}")));
    }
    let n_records = samples / per_record;

    // TALs go into the record that contains their onset.
    let mut tals: Vec<Vec<u8>> = (0..n_records)
        .map(|r| format!("+{}\x14\x14\0", num_onset(r as f64 * spec.record_duration)).into_bytes())
        .collect();
    for a in spec.annotations {
        let r = ((a.onset / spec.record_duration).floor() as usize).min(n_records.saturating_sub(1));
        if let Some(t) = tals.get_mut(r) {
            t.extend_from_slice(
                format!("+{}\x15{}\x14{}\x14\0", num_onset(a.onset), num_onset(a.duration), a.code.as_str()).as_bytes(),
            );
        }
    }
    let annot_samples = tals.iter().map(|t| t.len().div_ceil(2)).max().unwrap_or(0).max(8);

    let ns = channels + 1;
    let mut buf = Vec::with_capacity(FIXED_HEADER * (ns + 1) + n_records * (channels * per_record + annot_samples) * 2);
    put(&mut buf, "0", 8);
    put(&mut buf, "X X X X", 80);
    put(&mut buf, "Startdate 01-JAN-2009 X X X", 80);
    put(&mut buf, "01.01.09", 8);
    put(&mut buf, "00.00.00", 8);
    put(&mut buf, &(FIXED_HEADER * (ns + 1)).to_string(), 8);
    put(&mut buf, "EDF+C", 44);
    put(&mut buf, &n_records.to_string(), 8);
    put(&mut buf, &num8(spec.record_duration), 8);
    put(&mut buf, &ns.to_string(), 4);

    let labels: Vec<&str> = spec.channel_names.iter().map(String::as_str).chain([ANNOTATION_LABEL]).collect();
    let lim = num8(spec.physical_limit);
    let neg = num8(-spec.physical_limit);
    for l in &labels {
        put(&mut buf, l, 16);
    }
    for _ in 0..ns {
        put(&mut buf, "", 80);
    }
    for i in 0..ns {
        put(&mut buf, if i < channels { "uV" } else { "" }, 8);
    }
    for i in 0..ns {
        put(&mut buf, if i < channels { &neg } else { "-1" }, 8);
    }
    for i in 0..ns {
        put(&mut buf, if i < channels { &lim } else { "1" }, 8);
    }
    for _ in 0..ns {
        put(&mut buf, "-32768", 8);
    }
    for _ in 0..ns {
        put(&mut buf, "32767", 8);
    }
    for _ in 0..ns {
        put(&mut buf, "", 80);
    }
    for i in 0..ns {
        put(&mut buf, &(if i < channels { per_record } else { annot_samples }).to_string(), 8);
    }
    for _ in 0..ns {
        put(&mut buf, "", 32);
    }

    // Physical limits as actually written (the header text is what a reader sees).
    let pmax: f64 = lim.parse().expect("formatted number");
    let pmin: f64 = neg.parse().expect("formatted number");
    let gain = (pmax - pmin) / 65535.0;
    for (r, tal) in tals.iter().enumerate() {
        for c in 0..channels {
            for k in 0..per_record {
                let v = spec.signals[[c, r * per_record + k]].clamp(pmin, pmax);
                let d = ((v - pmin) / gain - 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                buf.extend_from_slice(&d.to_le_bytes());
            }
        }
        let mut block = tal.clone();
        block.resize(annot_samples * 2, 0);
        buf.extend_from_slice(&block);
    }
    Ok(buf)
}

fn num_onset(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() { "0".into() } else { s.to_string() }
}
